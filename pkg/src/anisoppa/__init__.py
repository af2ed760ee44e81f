"""Anisotropic (dual-space preconditioned) proximal point methods.

The package provides Legendre kernels (:mod:`anisoppa.prox`), monotone
operators (:mod:`anisoppa.operators`), resolvent solvers and identity checks
(:mod:`anisoppa.resolvents`), smooth inner solvers (:mod:`anisoppa.inner_opt`),
the relaxed proximal point driver (:mod:`anisoppa.ppa`), the proximal
augmented Lagrangian method (:mod:`anisoppa.alm`) and a command line harness
(:mod:`anisoppa.cli`).
"""

from .alm import (AlmConfig, SaddleProblem, aug_lagrangian, build_equality_qp, build_l1_regression,
                  build_zero_sum_game, parse_problem, primal_dual_gap, run_alm)
from .estimators import AnisotropicPPA, AnisotropicProximalALM, AnisotropicResolvent
from .exceptions import (InsufficientData, NonConvergence, NotAffine, ResolventFailure, SetValuedError,
                         SpecParseError, UnsupportedGStar)
from .inner_opt import Box, Simplex, SmoothProblem, minimize, project_box, project_simplex, sup_separable_concave
from .operators import (AffineOperator, DiagonalOperator, EnlargementQuery, InverseOperator, SaddleOperator,
                        SubdifferentialOperator, YosidaOperator, check_enlargement_member,
                        coercivity_profile, growth_instance_linear, identity_operator, parse_operator,
                        probe_nonmonotonicity, skew2, zero_operator)
from .ppa import (IterateTrace, PpaConfig, estimate_order, fejer_report, halfspace_report, q_factor, run_ppa,
                  uniform_monotone_suite)
from .prox import (Cosh, ExpPenalty, IsotropicPower, ProxKernel, SeparablePower, bregman_div, bregman_div_star,
                   eval_phi, grad_phi, grad_phi_star, parse_kernel, three_point_residual)
from .resolvents import (ResolventResult, SolverTolerances, anisotropic_resolvent, bregman_resolvent,
                         dfirm_violation, moreau_residual, relaxation_absorption_residual)

__version__ = "0.1.0"
