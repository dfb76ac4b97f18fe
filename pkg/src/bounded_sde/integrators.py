"""Time-stepping schemes that keep iterates inside the box.

The boundary-preserving schemes advance each component through two
auxiliary flows, one anchored at each face of the box:

    Y^L_i = L_i + exp(alpha^L_i dt + beta^L_i dW_i [+ gamma^L_i (dW_i^2 - dt)])
                  * (Y_i + f_i(lower proj) dt - L_i)
    Y^R_i = R_i - exp(alpha^R_i dt + beta^R_i dW_i [+ gamma^R_i (dW_i^2 - dt)])
                  * (R_i - Y_i - f_i(upper proj) dt)

so Y^L_i > L_i and Y^R_i < R_i hold pathwise.  The update selects, per
component, Y^L when Y^R fell below the box, Y^R when Y^L rose above it,
and otherwise the convex combination (1 - theta) Y^L + theta Y^R; the two
degenerate cases cannot occur together, so the result stays inside.

Projected Euler/Milstein baselines (classical update clamped into the
closed box) are provided for comparison.

All steppers are pure functions and accept state arrays with arbitrary
leading batch axes (component axis last); Brownian increments follow the
same convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    BoundedSdeModel,
    ConfigurationError,
    DomainError,
    EvaluationError,
    FlowTag,
    State,
    TimeGrid,
    _boundary_quotient,
    _gammas,
    _require_deriv,
)

# Boundary drift values smaller than this trigger the optional
# stabilising shift (see SchemeConfig.drift_shift).
DRIFT_SHIFT_TRIGGER = 1e-8

# Iterates may round onto a face; anything farther outside than this
# relative slack is treated as a genuine domain violation.
GUARD_SLACK = 1e-13


class Scheme(Enum):
    """Available time-stepping schemes."""

    EM_MEAN = "em-mean"
    EM_WEIGHTED = "em-weighted"
    MIL_MEAN = "mil-mean"
    PROJ_EM = "proj-em"
    PROJ_MIL = "proj-mil"

    @classmethod
    def from_name(cls, name: str) -> "Scheme":
        try:
            return cls(name)
        except ValueError:
            options = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scheme '{name}'; available schemes: {options}") from None


_COMBINING = {Scheme.EM_MEAN, Scheme.EM_WEIGHTED, Scheme.MIL_MEAN}
_MILSTEIN = {Scheme.MIL_MEAN, Scheme.PROJ_MIL}


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme selection plus the knobs shared by the stepping routines.

    ``theta_fixed`` is the combination weight of the mean policies and the
    fallback of the weighted policy; ``theta_clamp`` is the interval the
    weighted theta is clamped into (clamp events are counted per step).
    ``drift_shift`` enables a stabilisation that adds a constant
    ``drift_shift_size`` to near-zero boundary drift values and compensates
    inside the difference quotient, leaving the scheme consistent.
    ``float_guard`` nudges iterates that round exactly onto a face back to
    the nearest interior float; values beyond rounding slack still raise.
    """

    scheme: Scheme = Scheme.EM_MEAN
    theta_fixed: float = 0.5
    theta_clamp: tuple[float, float] = (0.0, 1.0)
    drift_shift: bool = False
    drift_shift_size: float = 1.0
    float_guard: bool = True

    def __post_init__(self):
        if isinstance(self.scheme, str):
            object.__setattr__(self, "scheme", Scheme.from_name(self.scheme))
        if not 0.0 < self.theta_fixed < 1.0:
            raise ValueError("theta_fixed must lie in (0, 1)")
        lo, hi = self.theta_clamp
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("theta_clamp must be a subinterval of [0, 1]")
        if self.drift_shift and self.drift_shift_size <= 0:
            raise ValueError("drift_shift_size must be positive")


@dataclass(frozen=True)
class StepResult:
    """One-step output: the iterate plus per-component diagnostics.

    ``theta_used`` holds the combination weight where ``tags`` is THETA and
    NaN elsewhere.  ``y_left``/``y_right`` retain the intermediate flows
    (for the projected schemes both hold the raw unclamped update).
    """

    y_next: np.ndarray
    tags: np.ndarray
    theta_used: np.ndarray
    y_left: np.ndarray
    y_right: np.ndarray
    theta_clamped: np.ndarray


def exp_euler_positive_step(a, b, v, dt: float, dw) -> np.ndarray:
    """Positivity-preserving exponential Euler step for dU_i = a_i U_i dt + b_i U_i dW_i.

    Returns v_i * exp((a_i(v) - b_i(v)^2 / 2) dt + b_i(v) dW_i), which is
    strictly positive whenever v is.
    """
    v = np.asarray(v, dtype=float)
    av, bv = np.asarray(a(v), dtype=float), np.asarray(b(v), dtype=float)
    if not (np.all(np.isfinite(av)) and np.all(np.isfinite(bv))):
        raise EvaluationError("non-finite coefficient in exponential Euler step", state=v)
    return v * np.exp((av - 0.5 * bv**2) * dt + bv * np.asarray(dw, dtype=float))


def exp_milstein_positive_step(a, b, b_deriv, v, dt: float, dw) -> np.ndarray:
    """Exponential Milstein step for diagonal noise (b_i depends on v_i only).

    Augments the exponential Euler exponent by
    b_i(v) v_i b_i'(v) (dW_i^2 - dt) / 2.
    """
    v = np.asarray(v, dtype=float)
    dw = np.asarray(dw, dtype=float)
    av, bv = np.asarray(a(v), dtype=float), np.asarray(b(v), dtype=float)
    bdv = np.asarray(b_deriv(v), dtype=float)
    if not (np.all(np.isfinite(av)) and np.all(np.isfinite(bv)) and np.all(np.isfinite(bdv))):
        raise EvaluationError("non-finite coefficient in exponential Milstein step", state=v)
    exponent = (av - 0.5 * bv**2) * dt + bv * dw + 0.5 * bv * v * bdv * (dw**2 - dt)
    return v * np.exp(exponent)


def _flow_pair(
    model: BoundedSdeModel,
    y: np.ndarray,
    dt: float,
    dw: np.ndarray,
    milstein: bool,
    config: Optional[SchemeConfig] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Both boundary-anchored flows, vectorised over leading axes of ``y``."""
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    f_y, f_lo, f_up = model.drift_with_boundaries(y)
    if config is not None and config.drift_shift:
        c = config.drift_shift_size
        f_lo = np.where(np.abs(f_lo) < DRIFT_SHIFT_TRIGGER, f_lo + c, f_lo)
        f_up = np.where(np.abs(f_up) < DRIFT_SHIFT_TRIGGER, f_up - c, f_up)
    g = model.diffusion_factor(y)
    lo_gap = y - model.L
    hi_gap = model.R - y

    q_lo = _boundary_quotient(model, y, f_y, f_lo, lower=True)
    q_up = _boundary_quotient(model, y, f_y, f_up, lower=False)
    beta_l = g * hi_gap
    beta_r = -g * lo_gap
    with np.errstate(over="ignore", invalid="ignore"):
        exp_l = (q_lo - 0.5 * beta_l**2) * dt + beta_l * dw
        exp_r = (q_up - 0.5 * beta_r**2) * dt + beta_r * dw
        if milstein:
            gam_l, gam_r = _gammas(model, y)
            w2 = dw**2 - dt
            exp_l = exp_l + gam_l * w2
            exp_r = exp_r + gam_r * w2
        if not np.all(np.isfinite(exp_l + exp_r)):
            bad = np.nonzero(~(np.isfinite(exp_l) & np.isfinite(exp_r)))[-1]
            raise EvaluationError(
                f"non-finite flow exponent for component(s) {sorted(set(bad.tolist()))} "
                f"of model '{model.label}'",
                state=y,
            )
        y_left = model.L + np.exp(exp_l) * (lo_gap + f_lo * dt)
        y_right = model.R - np.exp(exp_r) * (hi_gap - f_up * dt)
    return y_left, y_right


def euler_left_flow(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Lower-boundary exponential Euler flow; output is always above L."""
    return _flow_pair(model, y, dt, dw, milstein=False)[0]


def euler_right_flow(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Upper-boundary exponential Euler flow; output is always below R."""
    return _flow_pair(model, y, dt, dw, milstein=False)[1]


def milstein_left_flow(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Lower-boundary flow with the second-order exponent correction."""
    return _flow_pair(model, y, dt, dw, milstein=True)[0]


def milstein_right_flow(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Upper-boundary flow with the second-order exponent correction."""
    return _flow_pair(model, y, dt, dw, milstein=True)[1]


def _weighted_thetas(
    config: SchemeConfig, model: BoundedSdeModel, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Error-cancelling combination weights and a mask of clamp events."""
    deriv = _require_deriv(model)
    g = model.diffusion_factor(y)
    gd = deriv(y)
    frac = (y - model.L) / (model.R - model.L)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = frac * (1.0 - (gd / g) * (model.R - y))
    theta = np.where(np.abs(g) < 1e-14, config.theta_fixed, theta)
    lo, hi = config.theta_clamp
    clamped = (theta < lo) | (theta > hi)
    return np.clip(theta, lo, hi), clamped


def theta_weight(config: SchemeConfig, model: BoundedSdeModel, y, i: int) -> float:
    """Combination weight for component ``i`` under the configured policy.

    Mean policies return ``theta_fixed``.  The weighted policy returns
    ((y_i - L_i)/(R_i - L_i)) * (1 - (g_i'/g_i)(R_i - y_i)), clamped into
    ``theta_clamp``, falling back to ``theta_fixed`` where g_i vanishes.
    """
    if config.scheme is not Scheme.EM_WEIGHTED:
        return config.theta_fixed
    y = np.asarray(y, dtype=float)
    return float(_weighted_thetas(config, model, y)[0][..., i])


@dataclass(frozen=True)
class _StepArrays:
    y_next: np.ndarray
    tags: np.ndarray
    theta_used: np.ndarray
    y_left: np.ndarray
    y_right: np.ndarray
    theta_clamped: np.ndarray


def _guard_into_open_box(model: BoundedSdeModel, y_next: np.ndarray) -> np.ndarray:
    """Nudge rounding casualties back inside; raise on real violations."""
    lo = np.nextafter(model.L, model.R)
    hi = np.nextafter(model.R, model.L)
    clipped = np.clip(y_next, lo, hi)
    if clipped is y_next or np.array_equal(clipped, y_next):
        return clipped
    slack = GUARD_SLACK * (model.R - model.L)
    ok = (y_next > model.L - slack) & (y_next < model.R + slack)
    if not np.all(ok):
        bad = sorted(set(np.nonzero(~ok)[-1].tolist()))
        raise DomainError(
            f"iterate left the domain beyond rounding slack in component(s) {bad} "
            f"of model '{model.label}'"
        )
    return clipped


def _combine_arrays(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y: np.ndarray,
    dt: float,
    dw: np.ndarray,
    diagnostics: bool = True,
):
    """Flow pair, convex combination and indicator selection.

    With ``diagnostics`` a full :class:`_StepArrays` is returned; without, only
    the next state (the batch simulation fast path).
    """
    milstein = config.scheme in _MILSTEIN
    y_left, y_right = _flow_pair(model, y, dt, dw, milstein=milstein, config=config)
    if config.scheme is Scheme.EM_WEIGHTED:
        theta, clamped = _weighted_thetas(config, model, y)
    else:
        theta, clamped = config.theta_fixed, None
    with np.errstate(invalid="ignore"):
        y_theta = (1.0 - theta) * y_left + theta * y_right
    pick_left = y_right <= model.L
    pick_right = y_left >= model.R
    degenerate = np.any(pick_left) or np.any(pick_right)
    if degenerate:
        if np.any(pick_left & pick_right):
            raise EvaluationError(
                "both flows left the domain simultaneously; the model violates "
                "the inward-drift boundary conditions",
                state=np.asarray(y),
            )
        y_next = np.where(pick_left, y_left, np.where(pick_right, y_right, y_theta))
    else:
        y_next = y_theta
    if config.float_guard:
        y_next = _guard_into_open_box(model, y_next)
    if not diagnostics:
        return y_next
    tags = np.where(
        pick_left, FlowTag.LEFT, np.where(pick_right, FlowTag.RIGHT, FlowTag.THETA)
    ).astype(np.int8)
    is_theta = tags == FlowTag.THETA
    theta_used = np.where(is_theta, theta, np.nan)
    clamp_mask = (clamped & is_theta) if clamped is not None else np.zeros_like(is_theta)
    return _StepArrays(y_next, tags, theta_used, y_left, y_right, clamp_mask)


def _projected_arrays(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y: np.ndarray,
    dt: float,
    dw: np.ndarray,
    diagnostics: bool = True,
):
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    G = model.diffusion(y)
    update = y + model.drift(y) * dt + G * dw
    if config.scheme is Scheme.PROJ_MIL:
        deriv = _require_deriv(model)
        g = model.diffusion_factor(y)
        gd = deriv(y)
        # dG_i/dy_i for diagonal noise
        G_prime = gd * (y - model.L) * (model.R - y) + g * (model.R + model.L - 2.0 * y)
        update = update + 0.5 * G * G_prime * (dw**2 - dt)
    if not np.all(np.isfinite(update)):
        raise EvaluationError("non-finite projected update", state=y)
    y_next = np.clip(update, model.L, model.R)
    if not diagnostics:
        return y_next
    tags = np.where(
        update < model.L, FlowTag.LEFT, np.where(update > model.R, FlowTag.RIGHT, FlowTag.THETA)
    ).astype(np.int8)
    nan = np.full_like(y_next, np.nan)
    return _StepArrays(y_next, tags, nan, update, update, np.zeros_like(tags, dtype=bool))


def _advance(
    model: BoundedSdeModel, config: SchemeConfig, y: np.ndarray, dt: float, dw: np.ndarray
) -> _StepArrays:
    if config.scheme in _COMBINING:
        return _combine_arrays(model, config, y, dt, dw)
    return _projected_arrays(model, config, y, dt, dw)


def _advance_state(
    model: BoundedSdeModel, config: SchemeConfig, y: np.ndarray, dt: float, dw: np.ndarray
) -> np.ndarray:
    """Next state only, skipping per-component diagnostics."""
    if config.scheme in _COMBINING:
        return _combine_arrays(model, config, y, dt, dw, diagnostics=False)
    return _projected_arrays(model, config, y, dt, dw, diagnostics=False)


def combine_step(
    model: BoundedSdeModel, config: SchemeConfig, y, dt: float, dw
) -> StepResult:
    """One step of the configured flow-combination scheme from state ``y``."""
    if config.scheme not in _COMBINING:
        raise ConfigurationError(f"combine_step does not apply to scheme {config.scheme.value}")
    res = _combine_arrays(model, config, np.asarray(y, dtype=float), dt, np.asarray(dw, dtype=float))
    return StepResult(res.y_next, res.tags, res.theta_used, res.y_left, res.y_right, res.theta_clamped)


def projected_euler_step(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Classical Euler update clamped componentwise into the closed box."""
    cfg = SchemeConfig(scheme=Scheme.PROJ_EM)
    return _projected_arrays(model, cfg, y, dt, dw).y_next


def projected_milstein_step(model: BoundedSdeModel, y, dt: float, dw) -> np.ndarray:
    """Classical diagonal-noise Milstein update clamped into the closed box."""
    cfg = SchemeConfig(scheme=Scheme.PROJ_MIL)
    return _projected_arrays(model, cfg, y, dt, dw).y_next


def step(model: BoundedSdeModel, config: SchemeConfig, state: State, dt: float, dw) -> StepResult:
    """Dispatch one step of the configured scheme from ``state``."""
    y = np.asarray(state.y, dtype=float)
    strict = config.scheme in _COMBINING
    if not model.contains(y, strict=strict):
        raise ValueError("state lies outside the model domain")
    res = _advance(model, config, y, dt, np.asarray(dw, dtype=float))
    return StepResult(res.y_next, res.tags, res.theta_used, res.y_left, res.y_right, res.theta_clamped)


@dataclass
class Trajectory:
    """A simulated path: states at all grid times plus per-step flow tags."""

    times: np.ndarray
    states: np.ndarray          # (N + 1, d)
    tags: np.ndarray            # (N, d) FlowTag codes
    theta_used: np.ndarray      # (N, d), NaN where the tag is not THETA
    theta_clamp_events: int
    model_label: str
    scheme: str

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def simulate_path(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y0,
    grid: TimeGrid,
    increments: np.ndarray,
) -> Trajectory:
    """Thread the one-step scheme over the grid, recording states and tags.

    ``increments`` holds the Wiener increments with shape (d, N), matching
    the grid.
    """
    y = np.asarray(y0, dtype=float)
    if y.shape != (model.d,):
        raise ValueError(f"y0 must have shape ({model.d},)")
    strict = config.scheme in _COMBINING
    if not model.contains(y, strict=strict):
        raise ValueError("initial state lies outside the model domain")
    increments = np.asarray(increments, dtype=float)
    if grid.N > 0 and increments.shape != (model.d, grid.N):
        raise ValueError(f"increments must have shape ({model.d}, {grid.N})")

    states = np.empty((grid.N + 1, model.d))
    tags = np.empty((grid.N, model.d), dtype=np.int8)
    theta_used = np.empty((grid.N, model.d))
    states[0] = y
    clamps = 0
    dt = grid.dt
    for n in range(grid.N):
        res = _advance(model, config, y, dt, increments[:, n])
        y = res.y_next
        states[n + 1] = y
        tags[n] = res.tags
        theta_used[n] = res.theta_used
        clamps += int(np.count_nonzero(res.theta_clamped))
    return Trajectory(
        times=grid.times(),
        states=states,
        tags=tags,
        theta_used=theta_used,
        theta_clamp_events=clamps,
        model_label=model.label,
        scheme=config.scheme.value,
    )


def simulate_batch_final(
    model: BoundedSdeModel,
    config: SchemeConfig,
    y0: np.ndarray,
    grid: TimeGrid,
    increments: np.ndarray,
    check_domain: bool = False,
) -> np.ndarray:
    """Advance a batch of paths and return only the final states.

    ``y0`` has shape (..., d) and ``increments`` (..., d, N).  With
    ``check_domain`` every intermediate iterate is verified to lie in the
    open box (closed box for the projected schemes); a violation raises
    DomainError naming the step.
    """
    y = np.array(y0, dtype=float)
    increments = np.asarray(increments, dtype=float)
    strict = config.scheme in _COMBINING
    dt = grid.dt
    for n in range(grid.N):
        y = _advance_state(model, config, y, dt, increments[..., n])
        if check_domain:
            if strict:
                inside = np.all(y > model.L) and np.all(y < model.R)
            else:
                inside = np.all(y >= model.L) and np.all(y <= model.R)
            if not inside:
                raise DomainError(f"domain violated at step {n + 1} of {grid.N}")
    return y
