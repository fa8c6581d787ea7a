"""Margin dynamics toolkit for near-homogeneous networks under exponential loss.

Modules:
    poly        nonnegative-coefficient polynomial arithmetic and p_a offsets
    orders      homogeneity-order calculus and envelope verification
    engine      network blocks, hand-derived gradients, log-safe loss
    dynamics    gradient descent / gradient flow drivers with trajectory logs
    margins     margin and link-function diagnostics
    homogenize  radial-limit homogenization and error certificates
    kkt         approximate-KKT residuals for the max-margin problem
    toy         two-layer toy model and its balanced reduced flow
    cli         experiment harness and command-line interface
"""

from .poly import (NonnegPoly, PiecewisePoly, build_pa_gd, build_pa_gf,
                   check_pa_inequality)
from .orders import (BlockKind, OrderDescriptor, catalog_order, compose_orders,
                     network_order, sum_orders, tensor_orders,
                     verify_dual_homogeneity, verify_near_homogeneity)
from . import margins
from .engine import (Dataset, LossEval, NetworkModel, ScalarPowerModel,
                     ToyTwoLayerModel, loss, loss_grad)
from .dynamics import DynamicsConfig, Trajectory, run_gd, run_gf
from .homogenize import (blockwise_homogenize, check_error_bound, estimate_fM,
                         estimate_gradM, separability_scale)
from .kkt import KktReport, kkt_diagnostics
from .toy import ToyConfig, gen_symmetric_dataset, run_reduced_ode
from .cli import ExperimentConfig, RateFit, fit_rates, run_experiment

__version__ = "0.1.0"
