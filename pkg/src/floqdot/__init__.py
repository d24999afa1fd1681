"""Transport through periodically driven quantum dots.

Floquet NEGF (sideband-column and full-matrix variants), an interacting
equation-of-motion extension, and Floquet quantum master equations in the
Hilbert and Floquet spaces, with a common model layer and experiment
drivers.
"""

__version__ = "0.1.0"

from .model import (
    FourierHamiltonian,
    Lead,
    SpinfulModel,
    build_cosine_model,
    build_circular_model,
    build_spinful_model,
    fermi,
)
from .floquet_matrix import (
    FloquetMatrix,
    QuasiEnergyGrid,
    bounded_grid,
    build_floquet_hamiltonian,
    window_grid,
)
from .negf import (
    NegfSweepKernel,
    avg_current_mnegf,
    avg_current_vnegf,
    avg_number_mnegf,
    avg_number_vnegf,
    landauer_current_mnegf,
    lesser_central_vnegf,
    lesser_mnegf,
    solve_mnegf,
    solve_vnegf,
    transmission_mnegf,
)
from .interacting import (
    ConvergenceError,
    InteractingConfig,
    avg_current_finegf,
    avg_number_finegf,
    interacting_averages,
    self_consistent_occupations,
    solve_interacting_floquet,
    solve_interacting_static,
    spin_resolved_averages,
    static_support_grid,
)
from .qme import (
    FloquetSpaceQme,
    HilbertSpaceQme,
    SteadyStateError,
)
from .experiments import (
    ComparisonReport,
    ConfigError,
    ExperimentConfig,
    SweepResult,
    compare_methods,
    config_from_ini,
    detect_onsets,
    figure_panels,
    load_config,
    plateau_levels,
    reproduce_figure,
    run_sweep,
)
