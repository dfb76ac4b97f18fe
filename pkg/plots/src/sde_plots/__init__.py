"""Figure rendering for bounded-sde benchmark outputs."""

from .figures import (
    ConvergenceSeries,
    FigureInputError,
    FigureSpec,
    TrajectorySeries,
    build_figure,
    read_convergence_csv,
    read_trajectory_csv,
    render,
)

__all__ = [
    "ConvergenceSeries",
    "FigureInputError",
    "FigureSpec",
    "TrajectorySeries",
    "build_figure",
    "read_convergence_csv",
    "read_trajectory_csv",
    "render",
]
