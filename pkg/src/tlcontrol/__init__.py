"""Taylor-Lagrange safety and stability control for control-affine systems."""
from .certificates import (ClassKSpec, ComplexRootPair, HalfspaceRow, LieDerivativeChain, Sense,
                           clf_row, complex_roots, finite_diff_chain_check, hocbf_row, psi1_trace,
                           verify_taylor_identity, zoh_tlc_row, zoh_tls_row)
from .controller import ControllerConfig, MethodKind, MethodSelector, time_driven_policy
from .dynamics import (ControlAffineSystem, ControlBox, ControllerFault, SimulationLog,
                       integrate_zoh_step, run_closed_loop)
from .event_trigger import StateBox, detect_exit, event_triggered_policy, robust_bounds
from .qp import QPStatus, QuadraticProgram, kkt_residual, solve
from .scenarios import ACCParams, RobotParams, default_configs, make_acc, make_robot, make_scenario

__version__ = "0.1.0"
