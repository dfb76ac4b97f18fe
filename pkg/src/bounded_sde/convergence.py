"""Monte Carlo strong-error estimation on coupled Brownian lattices.

A lattice holds each realization's Wiener increments at the finest
resolution an experiment needs; coarser grids reuse the same randomness by
summing consecutive increments, so every step size (and the fine-grid
reference) sees the same Brownian path.  Lattices are a pure function of
(seed, realization index), which makes every report reproducible bit for
bit regardless of how work is distributed over threads.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .core import BoundedSdeModel, Error, TimeGrid
from .integrators import (
    Scheme,
    SchemeConfig,
    _advance_state,
    simulate_batch_final,
)

SPEC_VERSION = 1

# Realizations processed per work item; fixed so results cannot depend on
# the worker count.  Scaled down when a single realization is large.
_CHUNK_TARGET_BYTES = 1 << 28
_CHUNK_MAX = 1024


@dataclass(frozen=True)
class BrownianLattice:
    """Wiener increments of one realization at the finest grid resolution."""

    d: int
    n_fine: int
    dt_fine: float
    increments: np.ndarray      # (d, n_fine), i.i.d. Normal(0, dt_fine)
    seed: int
    realization_index: int


def generate_lattice(d: int, grid_fine: TimeGrid, seed: int, realization_index: int) -> BrownianLattice:
    """Draw a lattice deterministically from (seed, realization_index).

    The same inputs always give bit-identical increments; distinct
    realization indices give statistically independent streams.
    """
    if grid_fine.N < 1:
        raise ValueError("the fine grid needs at least one step")
    if seed < 0 or realization_index < 0:
        raise ValueError("seed and realization_index must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, realization_index]))
    dt = grid_fine.dt
    increments = rng.normal(0.0, math.sqrt(dt), size=(d, grid_fine.N))
    increments.flags.writeable = False
    return BrownianLattice(
        d=d,
        n_fine=grid_fine.N,
        dt_fine=dt,
        increments=increments,
        seed=seed,
        realization_index=realization_index,
    )


def coarsen(lattice: BrownianLattice, factor: int) -> BrownianLattice:
    """Sum blocks of ``factor`` consecutive increments onto a coarser grid."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if lattice.n_fine % factor:
        raise ValueError(f"factor {factor} does not divide n_fine={lattice.n_fine}")
    if factor == 1:
        return lattice
    n = lattice.n_fine // factor
    coarse = lattice.increments.reshape(lattice.d, n, factor).sum(axis=2)
    coarse.flags.writeable = False
    return BrownianLattice(
        d=lattice.d,
        n_fine=n,
        dt_fine=lattice.dt_fine * factor,
        increments=coarse,
        seed=lattice.seed,
        realization_index=lattice.realization_index,
    )


@dataclass(frozen=True)
class ExactReference:
    """Final-time reference from a closed-form solution of the SDE.

    ``solution(y0, t, w)`` maps the initial state, the time, and the
    Brownian values W(t) (shape (..., d)) to the solution (same shape).
    """

    solution: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    description: str = "exact solution"


@dataclass(frozen=True)
class SchemeReference:
    """Reference computed by a scheme on a finer grid of step dt_ref."""

    config: SchemeConfig
    dt_ref: float

    @property
    def description(self) -> str:
        return f"{self.config.scheme.value} at dt={self.dt_ref:g}"


Reference = Union[ExactReference, SchemeReference]


def rmse_from_squared_errors(sq_errors: np.ndarray) -> float:
    """Root mean square of per-realization squared errors."""
    return float(np.sqrt(np.mean(np.asarray(sq_errors, dtype=float))))


def rmse_standard_error(sq_errors: np.ndarray) -> float:
    """Delta-method standard error of the RMSE estimate."""
    sq = np.asarray(sq_errors, dtype=float)
    rmse = rmse_from_squared_errors(sq)
    if rmse == 0.0 or sq.size < 2:
        return 0.0
    return float(np.std(sq, ddof=1) / np.sqrt(sq.size) / (2.0 * rmse))


def fit_order(dt_list, rmse_list) -> tuple[float, float]:
    """Least-squares slope and intercept of log2(rmse) against log2(dt)."""
    dts = np.asarray(dt_list, dtype=float)
    rmses = np.asarray(rmse_list, dtype=float)
    if dts.size < 2:
        raise ValueError("need at least two points to fit an order")
    slope, intercept = np.polyfit(np.log2(dts), np.log2(rmses), 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class ConvergenceReport:
    """(dt, RMSE) table with the fitted empirical order and full replay data."""

    model_label: str
    scheme: str
    T: float
    y0: tuple[float, ...]
    dt_list: tuple[float, ...]
    rmse_list: tuple[float, ...]
    stderr_list: tuple[float, ...]
    fitted_order: float
    fit_intercept: float
    realizations: int
    seed: int
    reference: str
    excluded_dts: tuple[float, ...] = ()
    error_at: str = "final"
    config: dict = field(default_factory=dict)
    spec_version: int = SPEC_VERSION

    def to_dict(self) -> dict:
        return {
            "spec_version": self.spec_version,
            "kind": "convergence",
            "model": self.model_label,
            "scheme": self.scheme,
            "T": self.T,
            "y0": list(self.y0),
            "dt_list": list(self.dt_list),
            "rmse_list": list(self.rmse_list),
            "stderr_list": list(self.stderr_list),
            "fitted_order": self.fitted_order,
            "fit_intercept": self.fit_intercept,
            "realizations": self.realizations,
            "seed": self.seed,
            "reference": self.reference,
            "excluded_dts": list(self.excluded_dts),
            "error_at": self.error_at,
            "config": self.config,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("dt,rmse,stderr,realizations\n")
            for dt, rmse, se in zip(self.dt_list, self.rmse_list, self.stderr_list):
                fh.write(f"{_fmt(dt)},{_fmt(rmse)},{_fmt(se)},{self.realizations}\n")

    def write_json(self, path) -> None:
        _write_json(self.to_dict(), path)


@dataclass(frozen=True)
class ProbeReport:
    """Mean-square one-step error against dt, with the fitted exponent."""

    model_label: str
    scheme: str
    y0: tuple[float, ...]
    dt_list: tuple[float, ...]
    mean_sq_list: tuple[float, ...]
    fitted_exponent: float
    realizations: int
    seed: int
    substeps: int
    reference: str
    config: dict = field(default_factory=dict)
    spec_version: int = SPEC_VERSION

    def to_dict(self) -> dict:
        return {
            "spec_version": self.spec_version,
            "kind": "local-error-probe",
            "model": self.model_label,
            "scheme": self.scheme,
            "y0": list(self.y0),
            "dt_list": list(self.dt_list),
            "mean_sq_list": list(self.mean_sq_list),
            "fitted_exponent": self.fitted_exponent,
            "realizations": self.realizations,
            "seed": self.seed,
            "substeps": self.substeps,
            "reference": self.reference,
            "config": self.config,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("dt,mean_sq_error,realizations\n")
            for dt, msq in zip(self.dt_list, self.mean_sq_list):
                fh.write(f"{_fmt(dt)},{_fmt(msq)},{self.realizations}\n")

    def write_json(self, path) -> None:
        _write_json(self.to_dict(), path)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_json(payload: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def worker_count() -> int:
    """Thread cap: BOUNDED_SDE_THREADS when set, else up to 8 CPUs."""
    env = os.environ.get("BOUNDED_SDE_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("BOUNDED_SDE_THREADS must be a positive integer")
        return n
    return min(8, os.cpu_count() or 1)


def _steps_for(T: float, dt: float, what: str) -> int:
    n = T / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)) or round(n) < 1:
        raise ValueError(f"{what}={dt!r} does not divide T={T!r} into a whole number of steps")
    return int(round(n))


def _run_chunks(realizations: int, bytes_per_realization: int, task: Callable[[int, int], None]) -> None:
    """Execute ``task(start, stop)`` over fixed-size chunks of realizations.

    The chunk size depends only on problem dimensions, never on the worker
    count, so the floating-point results are schedule-independent.
    """
    chunk = max(1, min(_CHUNK_MAX, _CHUNK_TARGET_BYTES // max(1, bytes_per_realization)))
    spans = [(s, min(s + chunk, realizations)) for s in range(0, realizations, chunk)]
    workers = min(worker_count(), len(spans))
    if workers <= 1:
        for s, e in spans:
            task(s, e)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task, s, e) for s, e in spans]
        for fut in futures:
            fut.result()


def _with_replay_context(task: Callable[[int, int], None], seed: int) -> Callable[[int, int], None]:
    """Tag evaluation failures with the realization span and seed for replay."""

    def wrapped(start: int, stop: int) -> None:
        try:
            task(start, stop)
        except Error as exc:
            raise type(exc)(
                f"{exc} (realizations [{start}, {stop}) of seed {seed})"
            ) from exc

    return wrapped


def _batch_states(model, config, y0b, grid: TimeGrid, increments) -> np.ndarray:
    """All intermediate states of a batch run, shape (B, N + 1, d)."""
    y = np.array(y0b, dtype=float)
    out = np.empty((y.shape[0], grid.N + 1, y.shape[-1]))
    out[:, 0] = y
    for n in range(grid.N):
        y = _advance_state(model, config, y, grid.dt, increments[..., n])
        out[:, n + 1] = y
    return out


def _exact_states(reference: ExactReference, y0, grid: TimeGrid, increments) -> np.ndarray:
    """Closed-form solution at every grid time, shape (B, N + 1, d)."""
    w = np.cumsum(increments, axis=-1)
    batch = increments.shape[0]
    out = np.empty((batch, grid.N + 1, increments.shape[1]))
    out[:, 0] = reference.solution(y0, 0.0, np.zeros_like(increments[..., 0]))
    for n in range(grid.N):
        out[:, n + 1] = reference.solution(y0, (n + 1) * grid.dt, w[..., n])
    return out


def rmse_experiment(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y0,
    T: float,
    dt_list,
    realizations: int,
    seed: int,
    reference: Reference,
    sup_error: bool = False,
) -> ConvergenceReport:
    """Estimate the strong error of ``config`` on ``model`` at several step sizes.

    For each realization one fine lattice is generated and coarsened both to
    every tested dt and to the reference grid, so all approximations share
    the Brownian path.  Errors are measured at the final time in the
    Euclidean norm (``sup_error`` switches to the supremum over each level's
    grid, a diagnostic mode); RMSE(dt) is the root mean square over
    realizations, and the empirical order is the least-squares slope of
    log2 RMSE against log2 dt.  Points whose RMSE sits below ten times the
    estimated reference error floor are excluded from the fit and reported.

    The report is a deterministic function of the inputs: realizations are
    chunked by index and reduced in fixed order regardless of thread count.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (model.d,):
        raise ValueError(f"y0 must have shape ({model.d},)")
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    dts = sorted({float(dt) for dt in dt_list}, reverse=True)
    if not dts:
        raise ValueError("dt_list must not be empty")
    levels = [(dt, _steps_for(T, dt, "dt")) for dt in dts]

    n_values = [n for _, n in levels]
    if isinstance(reference, SchemeReference):
        if reference.dt_ref >= min(dts):
            raise ValueError("the reference step must be finer than every tested dt")
        n_ref = _steps_for(T, reference.dt_ref, "dt_ref")
        if sup_error and any(n_ref % n for n in n_values):
            raise ValueError("sup-error mode needs every tested grid nested in the reference grid")
        n_values = n_values + [n_ref]
    else:
        n_ref = 0
    n_fine = math.lcm(*n_values)
    grid_fine = TimeGrid(T, n_fine)

    sqerr = np.empty((realizations, len(levels)))

    def task(start: int, stop: int) -> None:
        lats = [generate_lattice(model.d, grid_fine, seed, m) for m in range(start, stop)]
        batch = stop - start
        y0b = np.broadcast_to(y0, (batch, model.d)).copy()
        if isinstance(reference, ExactReference):
            ref_final = None
            ref_states = None
            if not sup_error:
                w_final = np.stack([lat.increments.sum(axis=-1) for lat in lats])
                ref_final = np.asarray(reference.solution(y0, T, w_final), dtype=float)
        else:
            ref_inc = np.stack(
                [coarsen(lat, n_fine // n_ref).increments for lat in lats]
            )
            ref_grid = TimeGrid(T, n_ref)
            if sup_error:
                ref_states = _batch_states(model, reference.config, y0b, ref_grid, ref_inc)
                ref_final = ref_states[:, -1]
            else:
                ref_states = None
                ref_final = simulate_batch_final(model, reference.config, y0b, ref_grid, ref_inc)
        for k, (dt, n_steps) in enumerate(levels):
            inc = np.stack([coarsen(lat, n_fine // n_steps).increments for lat in lats])
            grid = TimeGrid(T, n_steps)
            if sup_error:
                states = _batch_states(model, config, y0b, grid, inc)
                if isinstance(reference, ExactReference):
                    ref_at = _exact_states(reference, y0, grid, inc)
                else:
                    ref_at = ref_states[:, :: n_ref // n_steps]
                dist_sq = ((ref_at - states) ** 2).sum(axis=-1)
                sqerr[start:stop, k] = dist_sq.max(axis=-1)
            else:
                final = simulate_batch_final(model, config, y0b, grid, inc)
                sqerr[start:stop, k] = ((ref_final - final) ** 2).sum(axis=-1)

    per_real = model.d * n_fine * 8 * (4 if not sup_error else 8)
    _run_chunks(realizations, per_real, _with_replay_context(task, seed))

    rmse = np.sqrt(sqerr.mean(axis=0))
    stderr = np.array([rmse_standard_error(sqerr[:, k]) for k in range(len(levels))])

    excluded, order, intercept = _fit_with_floor(dts, rmse, reference)
    return ConvergenceReport(
        model_label=model.label,
        scheme=config.scheme.value,
        T=float(T),
        y0=tuple(float(v) for v in y0),
        dt_list=tuple(dts),
        rmse_list=tuple(float(v) for v in rmse),
        stderr_list=tuple(float(v) for v in stderr),
        fitted_order=order,
        fit_intercept=intercept,
        realizations=realizations,
        seed=seed,
        reference=reference.description,
        excluded_dts=tuple(excluded),
        error_at="sup" if sup_error else "final",
        config=_config_dict(config),
    )


def _config_dict(config: SchemeConfig) -> dict:
    return {
        "scheme": config.scheme.value,
        "theta_fixed": config.theta_fixed,
        "theta_clamp": list(config.theta_clamp),
        "drift_shift": config.drift_shift,
        "drift_shift_size": config.drift_shift_size,
        "float_guard": config.float_guard,
    }


def _fit_with_floor(dts, rmse, reference: Reference) -> tuple[list[float], float, float]:
    """Order fit excluding points drowned by the reference's own error.

    The floor is estimated from the smallest-dt RMSE scaled down to the
    reference grid by the reference scheme's nominal strong order (1 for
    Milstein-type, 1/2 for Euler-type); an exact reference has no floor.
    Points with RMSE below ten times the floor, and points with zero RMSE
    (fully coupled degenerate runs), are excluded.  The two coarsest usable
    levels are always retained so an order can be fitted.
    """
    dts = np.asarray(dts, dtype=float)
    rmse = np.asarray(rmse, dtype=float)
    floor = 0.0
    if isinstance(reference, SchemeReference) and rmse[-1] > 0:
        p = 1.0 if reference.config.scheme in (Scheme.MIL_MEAN, Scheme.PROJ_MIL) else 0.5
        floor = float(rmse[-1]) * (reference.dt_ref / float(dts[-1])) ** p
    pos = rmse > 0.0
    keep = pos & (rmse > 10.0 * floor)
    if keep.sum() < 2:
        keep[np.nonzero(pos)[0][:2]] = True
    excluded = [float(dt) for dt, k in zip(dts, keep) if not k]
    if keep.sum() >= 2:
        order, intercept = fit_order(dts[keep], rmse[keep])
    else:
        order, intercept = float("nan"), float("nan")
    return excluded, order, intercept


def local_error_probe(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y0,
    dt_list,
    realizations: int,
    seed: int,
    substeps: int = 1000,
) -> ProbeReport:
    """Mean-square error of a single step against a fine-substep reference.

    For each dt, one step of the configured scheme from ``y0`` is compared
    with a ``substeps``-step reference run over the same Brownian bridge
    (the substep increments sum to the one-step increment).  The reference
    uses the Milstein combination when the model carries a diffusion-factor
    derivative and the Euler combination otherwise.  Realizations share
    random numbers across dt levels, which only steadies the fitted
    exponent of E[error^2] against dt.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (model.d,):
        raise ValueError(f"y0 must have shape ({model.d},)")
    dts = sorted({float(dt) for dt in dt_list}, reverse=True)
    if len(dts) < 2:
        raise ValueError("need at least two dt values to fit an exponent")
    if substeps < 2:
        raise ValueError("substeps must be >= 2")
    if model.diffusion_factor_deriv is not None:
        ref_config = SchemeConfig(scheme=Scheme.MIL_MEAN)
    else:
        ref_config = SchemeConfig(scheme=Scheme.EM_MEAN)

    sq = np.empty((realizations, len(dts)))

    def task(start: int, stop: int) -> None:
        batch = stop - start
        y0b = np.broadcast_to(y0, (batch, model.d)).copy()
        for k, dt in enumerate(dts):
            fine_grid = TimeGrid(dt, substeps)
            lats = [generate_lattice(model.d, fine_grid, seed, m) for m in range(start, stop)]
            inc_fine = np.stack([lat.increments for lat in lats])
            inc_one = np.stack([coarsen(lat, substeps).increments for lat in lats])
            ref = simulate_batch_final(model, ref_config, y0b, fine_grid, inc_fine)
            one = simulate_batch_final(model, config, y0b, TimeGrid(dt, 1), inc_one)
            sq[start:stop, k] = ((ref - one) ** 2).sum(axis=-1)

    _run_chunks(realizations, model.d * substeps * 8 * 3, _with_replay_context(task, seed))

    msq = sq.mean(axis=0)
    exponent, _ = fit_order(dts, np.sqrt(msq))
    return ProbeReport(
        model_label=model.label,
        scheme=config.scheme.value,
        y0=tuple(float(v) for v in y0),
        dt_list=tuple(dts),
        mean_sq_list=tuple(float(v) for v in msq),
        fitted_exponent=2.0 * exponent,
        realizations=realizations,
        seed=seed,
        substeps=substeps,
        reference=f"{ref_config.scheme.value} with {substeps} substeps",
        config=_config_dict(config),
    )
