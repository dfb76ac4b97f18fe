"""Model definition and scalar building blocks for SDEs confined to a box.

The systems handled here have the componentwise form

    dX_i = f_i(X) dt + g_i(X) (X_i - L_i) (R_i - X_i) dW_i,

whose solutions stay in the open box D = prod_i (L_i, R_i) provided the
drift points inward on each face: f_i >= 0 where X_i = L_i and f_i <= 0
where X_i = R_i.  This module houses the model container, the component
projection, the boundary difference quotients of the drift, and the
alpha/beta/gamma coefficients that the one-step flows in
:mod:`bounded_sde.integrators` are built from.

All coefficient functions are vectorised: state arrays may carry arbitrary
leading batch axes, with the component axis last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# Relative distance from a boundary below which the drift difference
# quotient switches to a one-sided difference (the quotient's 0/0 limit).
BOUNDARY_GUARD = 1e-10

# Absolute slack admitted when checking the boundary sign conditions, so
# that models satisfying them with equality validate cleanly.
VALIDATE_TOL = 1e-12


class Error(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(Error):
    """A scheme was configured with inputs the model cannot support."""


class EvaluationError(Error):
    """A model callback or flow produced a non-finite value.

    Carries the offending state in the ``state`` attribute when available.
    """

    def __init__(self, message: str, state: Optional[np.ndarray] = None):
        super().__init__(message)
        self.state = state


class DomainError(Error):
    """An iterate left the domain by more than rounding slack."""


class FlowTag:
    """Per-component record of which one-step flow produced an iterate.

    ``LEFT``/``RIGHT`` mark the degenerate cases where one flow exited the
    box and the other was selected; ``THETA`` marks the usual convex
    combination of the two flows.
    """

    LEFT = np.int8(0)
    RIGHT = np.int8(1)
    THETA = np.int8(2)

    LETTERS = {0: "L", 1: "R", 2: "T"}


def _as_bound_array(x, d: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ValueError(f"{name} must have shape ({d},), got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class BoundedSdeModel:
    """An SDE system on the box prod_i (L_i, R_i).

    ``drift`` and ``diffusion_factor`` map a state array of shape
    ``(..., d)`` to an array of the same shape; ``diffusion_factor`` is the
    bounded factor g_i, so the full noise coefficient is
    ``g_i(y) * (y_i - L_i) * (R_i - y_i)``.

    ``diffusion_factor_deriv`` is the derivative of g_i with respect to its
    own component and is required only by the Milstein flows and the
    weighted theta policy; supplying it asserts that g_i depends on y_i
    alone.

    ``drift_projected(y, s)`` optionally evaluates, for every i at once,
    f_i with the i-th component replaced by s_i (s a vector of d values).
    It is a fast path for high-dimensional models; when omitted a generic
    fallback builds the d projected states explicitly.  ``drift_bundle(y)``
    optionally fuses (f(y), f at lower projections, f at upper projections)
    for models whose three values share intermediate terms.
    """

    d: int
    L: np.ndarray
    R: np.ndarray
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion_factor: Callable[[np.ndarray], np.ndarray]
    diffusion_factor_deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "model"
    drift_projected: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    drift_bundle: Optional[Callable[[np.ndarray], tuple]] = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        object.__setattr__(self, "L", _as_bound_array(self.L, self.d, "L"))
        object.__setattr__(self, "R", _as_bound_array(self.R, self.d, "R"))
        if not np.all(self.R > self.L):
            raise ValueError("upper bounds must satisfy R_i > L_i for all i")

    @property
    def span(self) -> np.ndarray:
        return self.R - self.L

    def diffusion(self, y: np.ndarray) -> np.ndarray:
        """Full noise coefficient G_i(y) = g_i(y)(y_i - L_i)(R_i - y_i)."""
        y = np.asarray(y, dtype=float)
        return self.diffusion_factor(y) * (y - self.L) * (self.R - y)

    def boundary_drift_lower(self, y: np.ndarray) -> np.ndarray:
        """f_i evaluated with the i-th component projected onto L_i, all i."""
        if self.drift_projected is not None:
            return self.drift_projected(np.asarray(y, dtype=float), self.L)
        return _projected_drift(self, y, self.L)

    def boundary_drift_upper(self, y: np.ndarray) -> np.ndarray:
        """f_i evaluated with the i-th component projected onto R_i, all i."""
        if self.drift_projected is not None:
            return self.drift_projected(np.asarray(y, dtype=float), self.R)
        return _projected_drift(self, y, self.R)

    def drift_with_boundaries(self, y: np.ndarray) -> tuple:
        """(f(y), lower projections, upper projections) in one call."""
        if self.drift_bundle is not None:
            return self.drift_bundle(y)
        return self.drift(y), self.boundary_drift_lower(y), self.boundary_drift_upper(y)

    def contains(self, y: np.ndarray, strict: bool = True) -> bool:
        y = np.asarray(y, dtype=float)
        if strict:
            return bool(np.all(y > self.L) and np.all(y < self.R))
        return bool(np.all(y >= self.L) and np.all(y <= self.R))


@dataclass(frozen=True)
class State:
    """A point of the domain together with the current time."""

    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", arr)
        if self.t < 0:
            raise ValueError("time must be nonnegative")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps of size dt = T/N.

    N = 0 is admitted for the degenerate "initial state only" run.
    """

    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("final time T must be positive")
        if self.N < 0:
            raise ValueError("step count N must be nonnegative")

    @property
    def dt(self) -> float:
        return self.T / self.N if self.N > 0 else 0.0

    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt if self.N else np.array([0.0])


def project_component(y: Sequence[float] | np.ndarray, i: int, s: float) -> np.ndarray:
    """Return a copy of ``y`` with component ``i`` (0-based) replaced by ``s``."""
    arr = np.array(y, dtype=float)
    d = arr.shape[-1]
    if not 0 <= i < d:
        raise IndexError(f"component index {i} out of range for dimension {d}")
    arr[..., i] = s
    return arr


def _projected_drift(model: BoundedSdeModel, y: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Generic evaluation of f_i at the i-th-component projection, for all i.

    Builds d projected copies of the state; O(d) drift evaluations. Models
    with structure should supply ``drift_lower``/``drift_upper`` instead.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    for i in range(model.d):
        yp = np.array(y, copy=True)
        yp[..., i] = bounds[i]
        out[..., i] = model.drift(yp)[..., i]
    return out


def _boundary_quotient(
    model: BoundedSdeModel,
    y: np.ndarray,
    f_y: np.ndarray,
    f_bd: np.ndarray,
    lower: bool,
) -> np.ndarray:
    """Difference quotient of the drift relative to one face of the box.

    Lower face:  (f_i(y) - f_bd_i) / (y_i - L_i); upper face uses (y_i - R_i).
    Within BOUNDARY_GUARD of the face the quotient is replaced by a one-sided
    difference of the drift across the face, which approximates its 0/0
    limit (the own-component drift derivative at the boundary).
    """
    bound = model.L if lower else model.R
    h = BOUNDARY_GUARD * (model.R - model.L)
    den = y - bound
    # inside the box den > 0 below and den < 0 above, so one-sided compares do
    guard = (den < h) if lower else (den > -h)
    if not np.any(guard):
        with np.errstate(invalid="ignore"):
            return (f_y - f_bd) / den
    signed_h = h if lower else -h
    with np.errstate(invalid="ignore"):
        q = (f_y - f_bd) / np.where(guard, 1.0, den)
    # re-evaluate the drift just inside the face, only where flagged
    d = model.d
    flat_y = np.ascontiguousarray(y).reshape(-1, d)
    flat_guard = guard.reshape(-1, d)
    flat_fbd = np.ascontiguousarray(np.broadcast_to(f_bd, guard.shape)).reshape(-1, d)
    flat_q = q.reshape(-1, d)
    rows, comps = np.nonzero(flat_guard)
    if model.drift_projected is not None:
        lanes, inv = np.unique(rows, return_inverse=True)
        f_h = model.drift_projected(flat_y[lanes], bound + signed_h)[inv, comps]
    else:
        # one projected state per flagged pair, batched into one drift call
        yp = flat_y[rows]
        idx = np.arange(rows.size)
        yp[idx, comps] = bound[comps] + signed_h[comps]
        f_h = model.drift(yp)[idx, comps]
    flat_q[rows, comps] = (f_h - flat_fbd[rows, comps]) / signed_h[comps]
    return flat_q.reshape(q.shape)


def _check_finite_drift(model: BoundedSdeModel, y: np.ndarray, *values: np.ndarray) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise EvaluationError(
                f"model '{model.label}' produced a non-finite drift value", state=np.asarray(y)
            )


def newton_quotient_left(model: BoundedSdeModel, y, i: int) -> float:
    """Drift difference quotient relative to the lower face, component ``i``."""
    y = np.asarray(y, dtype=float)
    f_y = model.drift(y)
    f_bd = model.boundary_drift_lower(y)
    _check_finite_drift(model, y, f_y, f_bd)
    return float(_boundary_quotient(model, y, f_y, f_bd, lower=True)[..., i])


def newton_quotient_right(model: BoundedSdeModel, y, i: int) -> float:
    """Drift difference quotient relative to the upper face, component ``i``."""
    y = np.asarray(y, dtype=float)
    f_y = model.drift(y)
    f_bd = model.boundary_drift_upper(y)
    _check_finite_drift(model, y, f_y, f_bd)
    return float(_boundary_quotient(model, y, f_y, f_bd, lower=False)[..., i])


def coefficients_left(model: BoundedSdeModel, y, i: int) -> tuple[float, float]:
    """Exponent coefficients (alpha, beta) of the lower-boundary flow.

    alpha = F^L_i - (g_i (R_i - y_i))^2 / 2,  beta = g_i (R_i - y_i).
    """
    y = np.asarray(y, dtype=float)
    g = model.diffusion_factor(y)[..., i]
    beta = g * (model.R[i] - y[..., i])
    alpha = newton_quotient_left(model, y, i) - 0.5 * beta**2
    return float(alpha), float(beta)


def coefficients_right(model: BoundedSdeModel, y, i: int) -> tuple[float, float]:
    """Exponent coefficients (alpha, beta) of the upper-boundary flow.

    alpha = F^R_i - (g_i (y_i - L_i))^2 / 2,  beta = -g_i (y_i - L_i).
    """
    y = np.asarray(y, dtype=float)
    g = model.diffusion_factor(y)[..., i]
    beta = -g * (y[..., i] - model.L[i])
    alpha = newton_quotient_right(model, y, i) - 0.5 * (g * (y[..., i] - model.L[i])) ** 2
    return float(alpha), float(beta)


def _require_deriv(model: BoundedSdeModel) -> Callable[[np.ndarray], np.ndarray]:
    if model.diffusion_factor_deriv is None:
        raise ConfigurationError(
            f"model '{model.label}' has no diffusion_factor_deriv; supply the "
            "own-component derivative of g or use an Euler scheme"
        )
    return model.diffusion_factor_deriv


def _gammas(model: BoundedSdeModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second-order exponent coefficients of the Milstein flows, all components."""
    deriv = _require_deriv(model)
    g = model.diffusion_factor(y)
    gd = deriv(y)
    lo = y - model.L
    hi = model.R - y
    common = 0.5 * g * hi * lo
    return common * (gd * hi - g), -common * (gd * lo + g)


def gamma_left(model: BoundedSdeModel, y, i: int) -> float:
    """Milstein correction coefficient of the lower-boundary flow."""
    y = np.asarray(y, dtype=float)
    return float(_gammas(model, y)[0][..., i])


def gamma_right(model: BoundedSdeModel, y, i: int) -> float:
    """Milstein correction coefficient of the upper-boundary flow."""
    y = np.asarray(y, dtype=float)
    return float(_gammas(model, y)[1][..., i])


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of randomized boundary-condition checks on a model."""

    model_label: str
    passed: bool
    samples: int
    seed: int
    tol: float
    # Most negative value of f_i at a lower-face projection (want >= -tol)
    worst_lower: float
    # Most positive value of f_i at an upper-face projection (want <= tol)
    worst_upper: float
    worst_lower_state: np.ndarray | None = None
    worst_upper_state: np.ndarray | None = None
    finite: bool = True
    messages: tuple[str, ...] = field(default_factory=tuple)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"{status}: model '{self.model_label}' boundary conditions "
            f"({self.samples} samples, seed {self.seed})",
            f"  min f_i at lower faces: {self.worst_lower:.6e} (tolerance {-self.tol:.1e})",
            f"  max f_i at upper faces: {self.worst_upper:.6e} (tolerance {self.tol:.1e})",
        ]
        lines.extend("  " + m for m in self.messages)
        return "\n".join(lines)


def validate_model(model: BoundedSdeModel, samples: int = 10_000, seed: int = 0) -> ValidationReport:
    """Check the inward-drift boundary conditions by uniform sampling of D.

    Draws ``samples`` points uniformly in the open box and verifies, for
    every component, that the drift at the lower-face projection is
    >= -VALIDATE_TOL, at the upper-face projection <= VALIDATE_TOL, and that
    drift and diffusion factor are finite.  When the model supplies fast
    boundary-drift evaluators they are cross-checked against the generic
    projection on a small subsample.  Failures are reported, not raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    worst_lower = np.inf
    worst_upper = -np.inf
    worst_lower_state = None
    worst_upper_state = None
    finite = True
    messages: list[str] = []

    chunk = max(1, min(samples, (1 << 22) // max(model.d, 1)))
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        y = rng.uniform(model.L, model.R, size=(n, model.d))
        f = model.drift(y)
        g = model.diffusion_factor(y)
        f_lo = model.boundary_drift_lower(y)
        f_up = model.boundary_drift_upper(y)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))
                and np.all(np.isfinite(f_lo)) and np.all(np.isfinite(f_up))):
            finite = False
            messages.append("non-finite drift or diffusion factor encountered")
        k = np.unravel_index(np.argmin(f_lo), f_lo.shape)
        if f_lo[k] < worst_lower:
            worst_lower = float(f_lo[k])
            worst_lower_state = y[k[0]].copy()
        k = np.unravel_index(np.argmax(f_up), f_up.shape)
        if f_up[k] > worst_upper:
            worst_upper = float(f_up[k])
            worst_upper_state = y[k[0]].copy()
        done += n

    if model.drift_projected is not None or model.drift_bundle is not None:
        y = rng.uniform(model.L, model.R, size=(min(samples, 128), model.d))
        ref_lo = _projected_drift(model, y, model.L)
        ref_up = _projected_drift(model, y, model.R)
        if model.drift_projected is not None:
            if not (
                np.allclose(model.drift_projected(y, model.L), ref_lo, rtol=1e-10, atol=1e-12)
                and np.allclose(model.drift_projected(y, model.R), ref_up, rtol=1e-10, atol=1e-12)
            ):
                messages.append("drift_projected fast path disagrees with generic projection")
        if model.drift_bundle is not None:
            f, lo, up = model.drift_bundle(y)
            if not (
                np.allclose(f, model.drift(y), rtol=1e-10, atol=1e-12)
                and np.allclose(lo, ref_lo, rtol=1e-10, atol=1e-12)
                and np.allclose(up, ref_up, rtol=1e-10, atol=1e-12)
            ):
                messages.append("drift_bundle fast path disagrees with unfused evaluation")

    passed = (
        finite
        and not messages
        and worst_lower >= -VALIDATE_TOL
        and worst_upper <= VALIDATE_TOL
    )
    if worst_lower < -VALIDATE_TOL:
        messages.append("drift points outward at a lower face")
    if worst_upper > VALIDATE_TOL:
        messages.append("drift points outward at an upper face")
    return ValidationReport(
        model_label=model.label,
        passed=passed,
        samples=samples,
        seed=seed,
        tol=VALIDATE_TOL,
        worst_lower=worst_lower,
        worst_upper=worst_upper,
        worst_lower_state=worst_lower_state,
        worst_upper_state=worst_upper_state,
        finite=finite,
        messages=tuple(messages),
    )
