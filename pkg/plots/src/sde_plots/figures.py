"""Render benchmark CSV outputs as figures.

Three figure kinds cover the benchmark's reporting needs:

* ``convergence``  log2-log2 RMSE against dt, one series per input CSV,
  with dashed reference-slope guides anchored at the first series' largest
  dt point;
* ``paths``        the first solution component against time, one series
  per trajectory CSV;
* ``maxtrace``     the maximum over components against time, with
  horizontal lines at the domain bounds read from the trajectory sidecar.

Inputs follow the CSV/JSON contract of the bounded-sde CLI: convergence
CSVs carry columns (dt, rmse, stderr, realizations), trajectory CSVs carry
(t, y_1..y_d, tag_1..tag_d), and each CSV may sit next to a .json sidecar
holding the scheme name and, for trajectories, the domain bounds.  Plotted
values are the CSV values after a log transform at most; nothing is
smoothed or refitted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib
import numpy as np
from matplotlib.figure import Figure

# deterministic ids inside SVG output
matplotlib.rcParams["svg.hashsalt"] = "sde-plots"

_FIGSIZE = (7.0, 5.0)


class FigureInputError(ValueError):
    """An input file is missing, malformed, or inconsistent with the rest."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input files, figure kind, guides, and output path."""

    inputs: tuple[Path, ...]
    out: Path
    kind: str = "convergence"
    slope_guides: tuple[float, ...] = (0.5, 1.0)
    labels: Optional[tuple[str, ...]] = None
    title: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "out", Path(self.out))
        if self.kind not in ("convergence", "paths", "maxtrace"):
            raise FigureInputError(
                f"unknown figure kind '{self.kind}'; use convergence, paths or maxtrace"
            )
        if not self.inputs:
            raise FigureInputError("at least one input file is required")
        if self.labels is not None and len(self.labels) != len(self.inputs):
            raise FigureInputError("need exactly one label per input file")


@dataclass(frozen=True)
class ConvergenceSeries:
    label: str
    dt: np.ndarray
    rmse: np.ndarray


@dataclass(frozen=True)
class TrajectorySeries:
    label: str
    t: np.ndarray
    states: np.ndarray          # (rows, d)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None


def _sidecar(path: Path) -> dict:
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        try:
            return json.loads(sidecar.read_text())
        except json.JSONDecodeError:
            return {}
    return {}


def _label_for(path: Path, override: Optional[str]) -> str:
    if override:
        return override
    meta = _sidecar(path)
    return meta.get("scheme") or path.stem


def read_convergence_csv(path: Path, label: Optional[str] = None) -> ConvergenceSeries:
    """Parse one (dt, rmse, stderr, realizations) table."""
    path = Path(path)
    if not path.exists():
        raise FigureInputError(f"input file not found: {path}")
    dts: list[float] = []
    rmses: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "dt" not in reader.fieldnames or "rmse" not in reader.fieldnames:
            raise FigureInputError(f"{path}: expected columns dt,rmse,stderr,realizations")
        for row in reader:
            dts.append(float(row["dt"]))
            rmses.append(float(row["rmse"]))
    if not dts:
        raise FigureInputError(f"{path}: contains no data rows")
    return ConvergenceSeries(_label_for(path, label), np.asarray(dts), np.asarray(rmses))


def read_trajectory_csv(path: Path, label: Optional[str] = None) -> TrajectorySeries:
    """Parse one (t, y_1..y_d, tag_1..tag_d) trajectory table."""
    path = Path(path)
    if not path.exists():
        raise FigureInputError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise FigureInputError(f"{path}: expected a trajectory header starting with 't'")
        d = sum(1 for name in header if name.startswith("y_"))
        if d == 0:
            raise FigureInputError(f"{path}: no state columns found")
        times: list[float] = []
        states: list[list[float]] = []
        for row in reader:
            times.append(float(row[0]))
            states.append([float(v) for v in row[1 : 1 + d]])
    if not times:
        raise FigureInputError(f"{path}: contains no data rows")
    meta = _sidecar(path)
    lower = np.asarray(meta["L"], dtype=float) if "L" in meta else None
    upper = np.asarray(meta["R"], dtype=float) if "R" in meta else None
    return TrajectorySeries(
        _label_for(path, label), np.asarray(times), np.asarray(states), lower, upper
    )


def _convergence_figure(spec: FigureSpec) -> Figure:
    labels = spec.labels or (None,) * len(spec.inputs)
    series = [read_convergence_csv(p, lab) for p, lab in zip(spec.inputs, labels)]
    base = series[0]
    for s, path in zip(series, spec.inputs):
        if s.dt.shape != base.dt.shape or not np.array_equal(s.dt, base.dt):
            raise FigureInputError(f"{path}: dt grid differs from {spec.inputs[0]}")

    fig = Figure(figsize=_FIGSIZE)
    ax = fig.add_subplot(111)
    for s in series:
        ax.plot(np.log2(s.dt), np.log2(s.rmse), marker="o", label=s.label)
    # guides anchored at the largest-dt point of the first series
    x = np.log2(base.dt)
    x0 = float(np.log2(base.dt.max()))
    y0 = float(np.log2(base.rmse[np.argmax(base.dt)]))
    for slope in spec.slope_guides:
        ax.plot(x, y0 + slope * (x - x0), linestyle="--", color="grey",
                linewidth=1.0, label=f"slope {slope:g}")
    ax.set_xlabel("log2(dt)")
    ax.set_ylabel("log2(RMSE)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    if spec.title:
        ax.set_title(spec.title)
    return fig


def _paths_figure(spec: FigureSpec) -> Figure:
    labels = spec.labels or (None,) * len(spec.inputs)
    series = [read_trajectory_csv(p, lab) for p, lab in zip(spec.inputs, labels)]
    fig = Figure(figsize=_FIGSIZE)
    ax = fig.add_subplot(111)
    for s in series:
        ax.plot(s.t, s.states[:, 0], label=s.label)
    ax.set_xlabel("t")
    ax.set_ylabel("y_1")
    ax.legend()
    ax.grid(True, alpha=0.3)
    if spec.title:
        ax.set_title(spec.title)
    return fig


def _maxtrace_figure(spec: FigureSpec) -> Figure:
    labels = spec.labels or (None,) * len(spec.inputs)
    series = [read_trajectory_csv(p, lab) for p, lab in zip(spec.inputs, labels)]
    fig = Figure(figsize=_FIGSIZE)
    ax = fig.add_subplot(111)
    for s in series:
        ax.plot(s.t, s.states.max(axis=1), label=s.label)
    first = series[0]
    if first.lower is not None:
        ax.axhline(float(first.lower.max()), linestyle=":", color="black", label="L")
    if first.upper is not None:
        ax.axhline(float(first.upper.min()), linestyle=":", color="black", label="R")
    ax.set_xlabel("t")
    ax.set_ylabel("max over components")
    ax.legend()
    ax.grid(True, alpha=0.3)
    if spec.title:
        ax.set_title(spec.title)
    return fig


def build_figure(spec: FigureSpec) -> Figure:
    """Assemble the matplotlib figure without touching the filesystem output."""
    builders = {
        "convergence": _convergence_figure,
        "paths": _paths_figure,
        "maxtrace": _maxtrace_figure,
    }
    return builders[spec.kind](spec)


def render(spec: FigureSpec) -> Path:
    """Build the figure and write the image; returns the output path.

    Output format follows the file suffix and defaults to SVG.  Rendering is
    deterministic: fixed figure size, salted SVG ids, no embedded dates.
    No file is written when the inputs fail to parse.
    """
    fig = build_figure(spec)
    out = spec.out
    fmt = out.suffix.lstrip(".").lower() or "svg"
    if not out.suffix:
        out = out.with_suffix(".svg")
    fig.savefig(out, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
    return out
