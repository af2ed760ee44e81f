import csv
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from anisoppa import cli
from anisoppa.exceptions import NonConvergence, ResolventFailure

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _read_csv(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return rows[0], rows[1:]


def _summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


def test_run_skew_example(tmp_path):
    assert cli.main(["run", "--config", str(CONFIGS / "skew_fejer.ini"), "--out", str(tmp_path)]) == 0
    header, rows = _read_csv(tmp_path / "trace.csv")
    d = np.array([float(r[header.index("bregman_to_zero")]) for r in rows])
    assert np.all(np.diff(d) <= 1e-12 * d[:-1])
    s = _summary(tmp_path / "summary.txt")
    assert int(s["iterations"]) == len(rows) == 200
    assert not list(tmp_path.glob(".staging-*"))


def test_run_euclidean_growth_rate(tmp_path):
    assert cli.main(["run", "--config", str(CONFIGS / "growth_euclidean.ini"), "--out", str(tmp_path)]) == 0
    s = _summary(tmp_path / "summary.txt")
    assert float(s["q_factor_2"]) <= 2 / np.sqrt(5) + 0.02
    assert float(s["order_2"]) == pytest.approx(1.0, abs=0.02)
    assert float(s["wall_time_s"]) >= 0


def test_run_alm(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nkind = alm_run\n[problem]\nproblem = game:n=6,m=7,seed=3\n"
                           "[kernel]\nprimal = sep_power:p=3\n[solver]\nmax_outer = 300\ngap_tol = 1e-7\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    header, rows = _read_csv(out / "trace.csv")
    s = _summary(out / "summary.txt")
    assert int(s["rows"]) == len(rows) == int(s["iterations"]) + 1
    assert float(s["final_gap"]) <= 1e-7
    assert header[-4:] == ["primal_value", "dual_value", "gap", "kkt_residual"]


def test_paper_scale_flag(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nkind = alm_run\n[problem]\nproblem = game:n=6,m=7\n"
                           "[solver]\nmax_outer = 1\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--paper-scale"]) == 0
    s = _summary(out / "summary.txt")
    assert (s["n"], s["m"]) == ("150", "160")


@pytest.mark.parametrize("text", [
    "[experiment]\nkind = nonsense\n",
    "[experiment]\nkind = ppa_run\n[problem]\noperator = skew2\n",  # no kernel
    "[experiment]\nkind = ppa_run\n[problem]\noperator = skew2\n[kernel]\nspec = sep_power:p=0.5\n",
    "[experiment]\nkind = ppa_run\n[problem]\noperator = skew2\nx0 = 1,2,3\n[kernel]\nspec = cosh\n",
    "[experiment]\nkind = ppa_run\n[problem]\noperator = skew2\n[kernel]\nspec = cosh\nlam = 2\n",
    "[experiment]\nkind = alm_run\n[problem]\nproblem = game:n=x\n",
    "[experiment]\nkind = rate_study\n[problem]\noperator = skew2\n[solver]\nmax_outer = many\n",
    "not an ini file",
])
def test_malformed_config_writes_nothing(tmp_path, text, capsys):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "configuration error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 2


def test_solve_failure_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise ResolventFailure(0, None, NonConvergence("stalled", 1.0, 1))

    monkeypatch.setattr(cli, "run_ppa", boom)
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(CONFIGS / "growth_euclidean.ini"), "--out", str(out)])
    assert code == 3
    assert not list(out.glob("*.csv"))


def test_determinism(tmp_path):
    for cfg in ("growth_anisotropic.ini", "game_quad.ini"):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert cli.main(["run", "--config", str(CONFIGS / cfg), "--out", str(d), "--seed", "4"]) == 0
        la = (a / "trace.csv").read_bytes().split(b"\n", 1)
        lb = (b / "trace.csv").read_bytes().split(b"\n", 1)
        assert la[0].startswith(b"# generated") and la[1] == lb[1]


def test_random_start_depends_on_seed(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nkind = ppa_run\n[problem]\noperator = growth_linear\n"
                           "x0 = random\n[kernel]\nspec = sep_power:p=3\n")
    rows = []
    for seed in ("1", "1", "2"):
        out = tmp_path / f"o{len(rows)}"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", seed]) == 0
        rows.append(_read_csv(out / "trace.csv")[1][0])
    assert rows[0] == rows[1] != rows[2]


# -- verify ----------------------------------------------------------------------


def test_verify_subset_passes(capsys):
    assert cli.main(["verify", "--suites", "three_point,enlargement,dfirm"]) == 0
    out = capsys.readouterr().out
    assert "three_point" in out and "FAIL" not in out


def test_verify_detects_injected_fault(capsys):
    code = cli.main(["verify", "--suites", "moreau", "--points", "5", "--inject-fault", "grad-star-sign"])
    assert code == 1
    captured = capsys.readouterr()
    assert "FAILED: moreau" in captured.err and "FAIL" in captured.out


def test_verify_tight_tolerance_fails(capsys):
    assert cli.main(["verify", "--suites", "moreau,relaxation", "--points", "5", "--tol", "1e-15"]) == 1
    assert "FAILED" in capsys.readouterr().err


def test_verify_unknown_suite():
    assert cli.main(["verify", "--suites", "moreau,bogus"]) == 2


def test_verify_from_config_writes_table(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nkind = verify_identities\nsuites = enlargement\n")
    assert cli.main(["verify", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 0
    assert "enlargement" in (tmp_path / "v" / "verify.txt").read_text()


def test_config_kind_must_match_command(tmp_path):
    assert cli.main(["verify", "--config", str(CONFIGS / "skew_fejer.ini")]) == 2


# -- rate study ------------------------------------------------------------------


def test_rate_study_growth_grid(tmp_path):
    code = cli.main(["rate-study", "--kernels", "iso_power:p=2;sep_power:p=3", "--out", str(tmp_path)])
    assert code == 0
    header, rows = _read_csv(tmp_path / "rate_study.csv")
    assert len(rows) == 2
    iso, sep = (dict(zip(header, r)) for r in rows)
    assert float(iso["order_2"]) == pytest.approx(1.0, abs=0.05)
    assert float(iso["q_factor_2"]) <= 2 / np.sqrt(5) + 0.02
    assert float(sep["order_p"]) >= 1.9 and np.isfinite(float(sep["rate_p"]))
    for i, r in enumerate(rows):
        _, cell = _read_csv(tmp_path / f"cell_{i:03d}.csv")
        assert len(cell) == int(dict(zip(header, r))["iterations"])


def test_rate_study_identity_halving(tmp_path):
    code = cli.main(["rate-study", "--operator", "identity:n=2", "--kernels", "sep_power:p=2",
                     "--x0", "1,1", "--out", str(tmp_path)])
    assert code == 0
    header, rows = _read_csv(tmp_path / "rate_study.csv")
    row = dict(zip(header, rows[0]))
    assert float(row["order_2"]) == pytest.approx(1.0, abs=1e-6)
    assert float(row["rate_2"]) == pytest.approx(0.5, rel=1e-6)


def test_rate_study_empty_grid(tmp_path, capsys):
    assert cli.main(["rate-study", "--kernels", "", "--out", str(tmp_path)]) == 0
    header, rows = _read_csv(tmp_path / "rate_study.csv")
    assert header == cli.RATE_COLUMNS and rows == []


def test_rate_study_thread_cap(tmp_path, monkeypatch):
    tables = []
    for n in ("1", "3"):
        monkeypatch.setenv(cli.THREADS_ENV, n)
        out = tmp_path / n
        assert cli.main(["rate-study", "--config", str(CONFIGS / "rate_study.ini"), "--out", str(out)]) == 0
        tables.append((out / "rate_study.csv").read_text().split("\n", 1)[1])
    assert tables[0] == tables[1]
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert cli.main(["rate-study", "--kernels", "cosh", "--out", str(tmp_path / "bad")]) == 2


def test_rate_study_flags_insufficient_data(tmp_path):
    # Starting at the zero leaves no error pairs to fit.
    code = cli.main(["rate-study", "--kernels", "sep_power:p=3", "--x0", "2,-2", "--out", str(tmp_path)])
    assert code == 0
    header, rows = _read_csv(tmp_path / "rate_study.csv")
    assert dict(zip(header, rows[0]))["status"].startswith("insufficient data")


def test_console_script(tmp_path):
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    res = subprocess.run([sys.executable, "-m", "anisoppa.cli", "verify", "--suites", "enlargement"],
                         capture_output=True, text=True, env=env, timeout=120)
    assert res.returncode == 0 and "PASS" in res.stdout
