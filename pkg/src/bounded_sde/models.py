"""Benchmark model instances and the closed-form oracle for the first one.

The four built-in problems exercise the schemes on increasingly awkward
inputs: a scalar SDE with a known solution on (-1, 1); a scalar SDE whose
trigonometric diffusion hides removable singularities of the bounded
factor at 0 and 1; a stochastic SIS epidemic on (0, N) in two parameter
regimes; and a 128-node finite-difference Nagumo reaction-diffusion system
on (-1/2, 1)^128 driven by independent noise per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .core import BoundedSdeModel

# Series window for the removable singularities of the trigonometric model.
_TRIG_GUARD = 1e-6


def example1_model(beta: float = 2.0) -> BoundedSdeModel:
    """Scalar SDE dX = -beta^2 X (1 - X^2) dt + beta (1 - X^2) dW on (-1, 1).

    The bounded diffusion factor is the constant beta, since
    beta (1 - x^2) = beta (x + 1)(1 - x).
    """
    b2 = beta * beta

    def drift(y):
        return -b2 * y * (1.0 - y * y)

    def drift_projected(y, s):
        return np.broadcast_to(drift(np.asarray(s, dtype=float)), np.shape(y))

    return BoundedSdeModel(
        d=1,
        L=[-1.0],
        R=[1.0],
        drift=drift,
        diffusion_factor=lambda y: np.full_like(np.asarray(y, dtype=float), beta),
        diffusion_factor_deriv=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        label=f"exact1(beta={beta:g})",
        drift_projected=drift_projected,   # f(-1) = f(+1) = 0
    )


def example1_exact(beta: float, x0: float, w) -> np.ndarray | float:
    """Closed-form solution of the first benchmark as a function of W(t).

    X(t) = ((1 + X0) e^{2 beta W} + X0 - 1) / ((1 + X0) e^{2 beta W} + 1 - X0),
    evaluated in a form that stays stable for large |W|.  Accepts scalar or
    array ``w``; the output lies in (-1, 1) up to rounding at extreme ``w``.
    """
    if not -1.0 < x0 < 1.0:
        raise ValueError("x0 must lie in (-1, 1)")
    w = np.asarray(w, dtype=float)
    a = 1.0 + x0
    c = 1.0 - x0
    with np.errstate(over="ignore"):
        e = np.exp(2.0 * beta * w)
        inv = np.exp(-2.0 * beta * w)
        direct = (a * e - c) / (a * e + c)
        flipped = (a - c * inv) / (a + c * inv)
    out = np.where(w > 0, flipped, direct)
    return float(out) if out.ndim == 0 else out


def example2_model() -> BoundedSdeModel:
    """Scalar SDE dX = X (1 - X) dt + sin(pi X) dW on (0, 1).

    The bounded factor g(x) = sin(pi x) / (x (1 - x)) has removable
    singularities at both endpoints with limit pi; inside a window of
    width 1e-6 around each endpoint, g and g' are evaluated by fourth-order
    series expansions.
    """
    pi = math.pi
    c2 = pi - pi**3 / 6.0
    c4 = pi - pi**3 / 6.0 + pi**5 / 120.0

    def series(u):
        return pi + u * (pi + u * (c2 + u * (c2 + u * c4)))

    def series_deriv(u):
        return pi + u * (2.0 * c2 + u * (3.0 * c2 + u * 4.0 * c4))

    def gbar(y):
        y = np.asarray(y, dtype=float)
        near0 = np.abs(y) < _TRIG_GUARD
        near1 = np.abs(1.0 - y) < _TRIG_GUARD
        safe = np.where(near0 | near1, 0.5, y)
        interior = np.sin(pi * safe) / (safe * (1.0 - safe))
        return np.where(near0, series(y), np.where(near1, series(1.0 - y), interior))

    def gbar_deriv(y):
        y = np.asarray(y, dtype=float)
        near0 = np.abs(y) < _TRIG_GUARD
        near1 = np.abs(1.0 - y) < _TRIG_GUARD
        safe = np.where(near0 | near1, 0.5, y)
        q = safe * (1.0 - safe)
        interior = (pi * np.cos(pi * safe) * q - np.sin(pi * safe) * (1.0 - 2.0 * safe)) / q**2
        return np.where(near0, series_deriv(y), np.where(near1, -series_deriv(1.0 - y), interior))

    def drift(y):
        return y * (1.0 - y)

    def drift_projected(y, s):
        return np.broadcast_to(drift(np.asarray(s, dtype=float)), np.shape(y))

    return BoundedSdeModel(
        d=1,
        L=[0.0],
        R=[1.0],
        drift=drift,
        diffusion_factor=gbar,
        diffusion_factor_deriv=gbar_deriv,
        label="trig2",
        drift_projected=drift_projected,   # f(0) = f(1) = 0
    )


def example3_model(eta: float, beta: float, sigma: float, N: float) -> BoundedSdeModel:
    """Stochastic SIS infection count on (0, N).

    dI = (eta I - beta I^2) dt + sigma (N - I) I dW; the bounded factor is
    the constant sigma.  Requires eta <= beta N so the drift points inward
    at I = N.
    """

    def drift(y):
        return eta * y - beta * y * y

    def drift_projected(y, s):
        return np.broadcast_to(drift(np.asarray(s, dtype=float)), np.shape(y))

    return BoundedSdeModel(
        d=1,
        L=[0.0],
        R=[float(N)],
        drift=drift,
        diffusion_factor=lambda y: np.full_like(np.asarray(y, dtype=float), sigma),
        diffusion_factor_deriv=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        label=f"sis(eta={eta:g},beta={beta:g},sigma={sigma:g},N={N:g})",
        drift_projected=drift_projected,   # f(0) = 0, f(N) = eta N - beta N^2
    )


class NoiseScaling(Enum):
    """How the per-node Wiener increments of the Nagumo system are scaled."""

    PER_NODE = "per-node"
    WHITE_IN_SPACE = "white-in-space"


@dataclass(frozen=True)
class NagumoDiscretization:
    """Spatial finite-difference grid of the Nagumo reaction-diffusion model."""

    nodes: int = 128
    x_min: float = 0.0
    x_max: float = 20.0
    nu: float = 0.001
    noise_scaling: NoiseScaling = NoiseScaling.PER_NODE

    def __post_init__(self):
        if self.nodes < 3:
            raise ValueError("need at least 3 spatial nodes")
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nodes - 1)

    def grid(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nodes)


def _neighbor_sum(y: np.ndarray) -> np.ndarray:
    """y_{i-1} + y_{i+1} with mirrored ghost nodes at both ends."""
    ns = np.empty_like(y)
    ns[..., 1:-1] = y[..., :-2] + y[..., 2:]
    ns[..., 0] = 2.0 * y[..., 1]
    ns[..., -1] = 2.0 * y[..., -2]
    return ns


def nagumo_initial_profile(x) -> np.ndarray | float:
    """Travelling-front initial condition 1 / (1 + exp(-(2 - x)/sqrt(2)))."""
    x = np.asarray(x, dtype=float)
    out = 1.0 / (1.0 + np.exp(-(2.0 - x) / math.sqrt(2.0)))
    return float(out) if out.ndim == 0 else out


def example4_model(disc: NagumoDiscretization = NagumoDiscretization()) -> BoundedSdeModel:
    """Finite-difference Nagumo system on (-1/2, 1)^nodes.

    drift_i = nu (y_{i-1} - 2 y_i + y_{i+1}) / dx^2 + y_i (1 - y_i)(y_i + 1/2)
    with Neumann (mirrored ghost node) ends; the bounded diffusion factor is
    the constant 2, optionally scaled by 1/sqrt(dx) for space-time white
    noise.
    """
    d = disc.nodes
    inv_dx2 = 1.0 / disc.dx**2
    nu = disc.nu
    gval = 2.0
    if disc.noise_scaling is NoiseScaling.WHITE_IN_SPACE:
        gval = 2.0 / math.sqrt(disc.dx)

    def drift(y):
        y = np.asarray(y, dtype=float)
        return nu * (_neighbor_sum(y) - 2.0 * y) * inv_dx2 + y * (1.0 - y) * (y + 0.5)

    def drift_projected(y, s):
        # projecting component i leaves the neighbours in its stencil alone
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        return nu * (_neighbor_sum(y) - 2.0 * s) * inv_dx2 + s * (1.0 - s) * (s + 0.5)

    def drift_bundle(y):
        # shares the neighbour sum; each formula matches its standalone
        # counterpart exactly so the face sign guarantees survive rounding
        y = np.asarray(y, dtype=float)
        ns = _neighbor_sum(y)
        return (
            nu * (ns - 2.0 * y) * inv_dx2 + y * (1.0 - y) * (y + 0.5),
            nu * (ns + 1.0) * inv_dx2,
            nu * (ns - 2.0) * inv_dx2,
        )

    return BoundedSdeModel(
        d=d,
        L=np.full(d, -0.5),
        R=np.full(d, 1.0),
        drift=drift,
        diffusion_factor=lambda y: np.full_like(np.asarray(y, dtype=float), gval),
        diffusion_factor_deriv=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        label=f"nagumo(nodes={d},{disc.noise_scaling.value})",
        drift_projected=drift_projected,
        drift_bundle=drift_bundle,
    )


@dataclass(frozen=True)
class BenchmarkCase:
    """A named model instance plus the defaults its experiments use."""

    name: str
    model: BoundedSdeModel
    x0: np.ndarray
    horizon: float
    realizations: int
    # Closed-form final-time solution as a function of (y0, t, W(t)), or None
    exact_solution: Optional[Callable[[np.ndarray, float, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))


def _exact1_solution(beta: float):
    def solution(y0: np.ndarray, t: float, w: np.ndarray) -> np.ndarray:
        x0 = float(np.asarray(y0)[..., 0])
        vals = example1_exact(beta, x0, np.asarray(w)[..., 0])
        return np.asarray(vals)[..., np.newaxis]

    return solution


def _builtin_cases() -> dict[str, Callable[[], BenchmarkCase]]:
    return {
        "exact1": lambda: BenchmarkCase(
            name="exact1",
            model=example1_model(beta=2.0),
            x0=[0.9],
            horizon=4.0,
            realizations=2000,
            exact_solution=_exact1_solution(2.0),
        ),
        "trig2": lambda: BenchmarkCase(
            name="trig2",
            model=example2_model(),
            x0=[0.95],
            horizon=1.0,
            realizations=2000,
        ),
        "sis3a": lambda: BenchmarkCase(
            name="sis3a",
            model=example3_model(eta=8.0, beta=1.0, sigma=0.1, N=10.0),
            x0=[9.99],
            horizon=4.0,
            realizations=2000,
        ),
        "sis3b": lambda: BenchmarkCase(
            name="sis3b",
            model=example3_model(eta=1.0, beta=1.0, sigma=2.0, N=1.0),
            x0=[0.95],
            horizon=4.0,
            realizations=2000,
        ),
        "nagumo4": lambda: BenchmarkCase(
            name="nagumo4",
            model=example4_model(),
            x0=nagumo_initial_profile(NagumoDiscretization().grid()),
            horizon=1.0,
            realizations=1000,
        ),
    }


_REGISTRY: dict[str, Callable[[], BenchmarkCase]] = _builtin_cases()


def available_models() -> list[str]:
    return sorted(_REGISTRY)


def register_benchmark(name: str, factory: Callable[[], BenchmarkCase]) -> None:
    """Add a user-defined case to the registry used by the CLI."""
    _REGISTRY[name] = factory


def benchmark_case(name: str) -> BenchmarkCase:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        options = ", ".join(available_models())
        raise ValueError(f"unknown model '{name}'; available models: {options}") from None
    return factory()
