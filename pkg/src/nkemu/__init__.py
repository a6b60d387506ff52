"""Newton-Kantorovich solvers with learned inverse-Cholesky factors."""

from .errors import (ConfigError, EmptyDataset, ForcingExceedsOne, KantorovichViolated,
                     NkemuError, NumericalError, ValidationError)
from .grid import Grid
from .problems import (ProblemSpec, burgers_problem, darcy_problem, elliptic_problem,
                       gordon_problem, jacobian, residual)
from .calderon import calderon_problem, simulate_observations
from .sampling import KernelSpec, inv_laplacian_kernel, periodic_kernel, sample_gp
from .nk import Dataset, Draw, default_draws, generate_training_data, nk_solve, reference_march
from .surrogate import ExpertEnsemble, SurrogateModel, fit, fit_arrays, pooled_scale
from .inference import (ExactFactorModel, ScheduleState, chonknoris_solve, emulated_march,
                        fonknoris_solve)
from .config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EmptyDataset", "ForcingExceedsOne", "KantorovichViolated", "NkemuError",
    "NumericalError", "ValidationError", "Grid", "ProblemSpec", "burgers_problem",
    "darcy_problem", "elliptic_problem", "gordon_problem", "jacobian", "residual",
    "calderon_problem", "simulate_observations", "KernelSpec", "inv_laplacian_kernel",
    "periodic_kernel", "sample_gp", "Dataset", "Draw", "default_draws",
    "generate_training_data", "nk_solve", "reference_march", "ExpertEnsemble",
    "SurrogateModel", "fit", "fit_arrays", "pooled_scale", "ExactFactorModel", "ScheduleState",
    "chonknoris_solve", "emulated_march", "fonknoris_solve", "RunConfig",
]
