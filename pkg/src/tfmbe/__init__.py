"""Variable-step L1 solver for the time-fractional MBE equation with slope selection.

Subpackages by responsibility: `timemesh` (nonuniform grids), `kernels`
(L1/DOC/DCC convolution kernels, Mittag-Leffler, step bounds), `spectral`
(Fourier pseudo-spectral operators), `model` (flux, chemical potential,
energies), `stepper` (implicit schemes, adaptive control, runs), `harness`
(convergence studies, coarsening experiments, CSV/JSON emission) and `cli`.
"""

from .kernels import (
    KernelSet,
    StepBounds,
    consistency_bound,
    error_envelope,
    mittag_leffler,
    rl_weight,
    step_bounds,
)
from .model import (
    ModelParams,
    chemical_potential,
    free_energy,
    l2_stability_margin,
    nonlinear_flux,
    variational_energy,
)
from .spectral import SpectralGrid
from .stepper import (
    AdaptiveConfig,
    HistoryBuffer,
    Problem,
    RunAborted,
    RunRecord,
    SolverConfig,
    StepBoundError,
    StepConvergenceError,
    adaptive_tau,
    load_checkpoint,
    run,
    save_checkpoint,
    step_backward_euler,
    step_convex_splitting,
    step_l1,
)
from .timemesh import (
    TimeMesh,
    build_graded,
    build_graded_random,
    build_random,
    build_uniform,
    check_AG,
    min_ratio,
)

__version__ = "0.1.0"
