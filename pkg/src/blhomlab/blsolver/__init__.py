"""Boundary-layer solvers: exact Laplacian series, strip and regularized lifted grids, rectangle sweeps."""

from .data import (
    BoundaryLayerField,
    FieldRangeError,
    FourierBoundaryData,
    GridField,
    SeriesField,
    evaluate,
    solve_series_laplacian,
)
from .rect import (
    RectSolution,
    SweepResult,
    bump_source,
    dirichlet_rect_solver,
    homogenization_error_sweep,
)
from .layer import (
    EnergyResult,
    LayerSolverError,
    check_max_principle,
    solve_quasiperiodic_regularized,
    solve_rational_strip,
    st_venant_energy,
)

__all__ = [
    "BoundaryLayerField",
    "RectSolution",
    "SweepResult",
    "bump_source",
    "dirichlet_rect_solver",
    "homogenization_error_sweep",
    "EnergyResult",
    "FieldRangeError",
    "FourierBoundaryData",
    "GridField",
    "LayerSolverError",
    "SeriesField",
    "check_max_principle",
    "evaluate",
    "solve_quasiperiodic_regularized",
    "solve_rational_strip",
    "solve_series_laplacian",
    "st_venant_energy",
]
