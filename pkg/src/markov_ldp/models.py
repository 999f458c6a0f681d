"""Benchmark chains: canned small kernels and a truncated Gaussian AR(1) chain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .drift import DriftCertificate, dv3_from_lyapunov, minimal_drift_set
from .markov_core import TransitionKernel
from .spectral import nonlinear_generator


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.points < 3:
            raise ValueError("grid needs at least 3 points")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.points - 1)


class GridTooNarrowError(ValueError):
    pass


EPS0_SCAN = tuple(2.0**-k for k in range(10, 0, -1))


@dataclass(frozen=True)
class OUModel:
    P: TransitionKernel
    V: np.ndarray
    W: np.ndarray
    eps0: float
    C: tuple
    certificate: DriftCertificate
    grid: GridSpec
    mass_loss: float

    def __iter__(self):
        return iter((self.P, self.V, self.W))


def ou_kernel(delta: float, sigma: float, grid: GridSpec, max_mass_loss: float = 0.01):
    """Rows integrate N((1 - delta) x, sigma^2) over grid cells, then renormalize.

    Returns (kernel, worst row mass lost to truncation).
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = grid.x
    h = grid.h
    edges = np.concatenate([[x[0] - h / 2], 0.5 * (x[1:] + x[:-1]), [x[-1] + h / 2]])
    mean = (1 - delta) * x
    z = (edges[None, :] - mean[:, None]) / sigma
    # upper-tail cells use survival differences so tiny masses stay positive
    lower = np.diff(ndtr(z), axis=1)
    upper = -np.diff(ndtr(-z), axis=1)
    mass = np.where(z[:, :-1] > 0, upper, lower)
    loss = float(1 - mass.sum(axis=1).min())
    if loss > max_mass_loss:
        raise GridTooNarrowError(
            f"boundary rows lose {loss:.3%} of their mass (limit {max_mass_loss:.1%}); widen the grid"
        )
    P = TransitionKernel(mass / mass.sum(axis=1, keepdims=True))
    return P, loss


def ou_default_grid(delta: float, sigma: float, points: int = 201) -> GridSpec:
    """Symmetric grid wide enough for the 1% truncation rule: half-width max(8, 3 sigma / delta)."""
    half = max(8.0, math.ceil(3 * sigma / delta))
    return GridSpec(-half, half, points)


def ou_grid(delta: float, sigma: float, grid: Optional[GridSpec] = None, max_mass_loss: float = 0.01) -> OUModel:
    """Truncated AR(1) chain with a fitted (DV3) pair V = 1 + eps0 x^2, W.

    eps0 is the largest value in 2^-10 .. 2^-1 for which the drift of V is
    negative outside a sublevel set contained in the inner half of the grid.
    """
    grid = grid if grid is not None else ou_default_grid(delta, sigma)
    P, loss = ou_kernel(delta, sigma, grid, max_mass_loss)
    x = grid.x
    inner = np.abs(x - 0.5 * (grid.lo + grid.hi)) <= 0.25 * (grid.hi - grid.lo)
    best = None
    for eps in EPS0_SCAN:
        V = 1 + eps * x * x
        C = minimal_drift_set(V, nonlinear_generator(P, V))
        if C is None or not inner[list(C)].all():
            continue
        fit = dv3_from_lyapunov(P, V, C)
        if fit is None or not fit[1].holds:
            continue
        best = (eps, V, fit[0], C, fit[1])
    if best is None:
        raise ValueError("no eps0 in the scan yields a (DV3) certificate; widen the grid")
    eps, V, W, C, cert = best
    return OUModel(P, V, W, eps, C, cert, grid, loss)


def smoluchowski_generator_formula(u_x: float, u_xx: float, sigma: float) -> float:
    """Nonlinear generator of V = 1 + u / sigma^2 for the Langevin diffusion: -u_x^2 / (2 sigma^2) + u_xx / 2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return -0.5 * u_x * u_x / (sigma * sigma) + 0.5 * u_xx


# ---------------------------------------------------------------------------
# canned chains


def two_state(p: float, q: float) -> TransitionKernel:
    return TransitionKernel([[1 - p, p], [q, 1 - q]])


def cycle(n: int) -> TransitionKernel:
    return TransitionKernel(np.roll(np.eye(n), 1, axis=1))


def iid_rows(pi) -> TransitionKernel:
    pi = np.asarray(pi, dtype=float)
    return TransitionKernel(np.tile(pi / pi.sum(), (len(pi), 1)))


def random_chain(n: int, density: float = 0.5, seed: int = 0, eps: float = 0.05) -> TransitionKernel:
    """Sparse random kernel made irreducible by a Hamilton cycle and aperiodic by eps * I."""
    rng = np.random.default_rng(seed)
    M = rng.random((n, n)) * (rng.random((n, n)) < density)
    perm = rng.permutation(n)
    M[perm, np.roll(perm, -1)] += rng.uniform(0.1, 1.0, n)
    M = M / M.sum(axis=1, keepdims=True)
    return TransitionKernel((1 - eps) * M + eps * np.eye(n))


def two_cluster(n: int = 6, leak: float = 0.05, seed: int = 0) -> TransitionKernel:
    """Two dense blocks joined by a small leak: one real subdominant eigenvalue near 1 - 2 leak."""
    rng = np.random.default_rng(seed)
    k = n // 2
    M = np.zeros((n, n))
    blocks = (slice(0, k), slice(k, n))
    for i, blk in enumerate(blocks):
        other = blocks[1 - i]
        size = blk.stop - blk.start
        B = rng.uniform(0.5, 1.5, (size, size))
        M[blk, blk] = (1 - leak) * B / B.sum(axis=1, keepdims=True)
        osize = other.stop - other.start
        M[blk, other] = leak / osize
    return TransitionKernel(M)


def coboundary_example(n: int = 4, seed: int = 0):
    """(P, F, F_plus, G) with F = F_plus + F0 and F0 a pathwise coboundary.

    States split into halves A and B, and every row is supported on a
    single half chosen per state.  With G constant on each half,
    F0(x) = G(x) - G(next) holds along every path, so S_n(F) - S_n(F_plus)
    = G(Phi(0)) - G(Phi(n)) is bounded: F and F_plus share Lambda, F_max
    and the rate function, and F0 has zero asymptotic variance.
    """
    if n < 4:
        raise ValueError("coboundary_example needs n >= 4")
    rng = np.random.default_rng(seed)
    m = n // 2
    half = np.array([0] * m + [1] * (n - m))
    target = rng.integers(0, 2, n)
    # A -> A and A -> B from the first two states, B -> A from the first of B
    target[0], target[1], target[m] = 0, 1, 0
    M = np.zeros((n, n))
    for x in range(n):
        cols = np.flatnonzero(half == target[x])
        M[x, cols] = rng.uniform(0.2, 1.0, len(cols))
    P = TransitionKernel(M / M.sum(axis=1, keepdims=True))
    g = rng.normal(size=2)
    G = g[half]
    F_plus = np.zeros(n)
    F_plus[0] = 1.0
    F = F_plus + G - g[target]
    return P, F, F_plus, G


@dataclass(frozen=True)
class ModelEntry:
    builder: Callable
    params: dict
    doc: str


MODELS: dict[str, ModelEntry] = {
    "coboundary_example": ModelEntry(
        lambda n=4, seed=0: coboundary_example(n, seed)[0],
        {"n": 4, "seed": 0},
        "random chain used for the coboundary rate-invariance check",
    ),
    "cycle": ModelEntry(cycle, {"n": 3}, "deterministic n-cycle (period n)"),
    "iid_rows": ModelEntry(iid_rows, {"pi": [0.5, 0.5]}, "every row equal to pi"),
    "ou_grid": ModelEntry(
        lambda delta=0.5, sigma=1.0, lo=None, hi=None, points=201: ou_grid(
            delta, sigma, None if lo is None else GridSpec(lo, hi, points)
        ).P,
        {"delta": 0.5, "sigma": 1.0, "lo": None, "hi": None, "points": 201},
        "truncated Gaussian AR(1) chain on a uniform grid",
    ),
    "random_chain": ModelEntry(random_chain, {"n": 5, "density": 0.5, "seed": 0}, "irreducible aperiodic random kernel"),
    "two_cluster": ModelEntry(two_cluster, {"n": 6, "leak": 0.05, "seed": 0}, "two weakly coupled dense blocks"),
    "two_state": ModelEntry(two_state, {"p": 0.1, "q": 0.2}, "[[1-p, p], [q, 1-q]]"),
}


def canned_chains() -> dict[str, ModelEntry]:
    return dict(sorted(MODELS.items()))


def build_model(name: str, params: Optional[dict] = None) -> TransitionKernel:
    if name not in MODELS:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}")
    entry = MODELS[name]
    params = dict(params or {})
    unknown = set(params) - set(entry.params)
    if unknown:
        raise TypeError(f"model {name!r} got unknown parameters {sorted(unknown)}")
    return entry.builder(**params)
