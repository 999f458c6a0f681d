"""Finite-state Markov chains: structure, stationary analysis, Poisson equation.

Functionals and measures are plain 1-D numpy arrays indexed in kernel state
order; pair measures are n x n arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-12


class ChainStructureError(ValueError):
    """Raised when an operation needs an irreducible (and aperiodic) chain."""


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic matrix with state labels."""

    rows: np.ndarray
    states: tuple = ()

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise ValueError(f"transition matrix must be square and non-empty, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("transition matrix has non-finite entries")
        if np.any(rows < 0):
            raise ValueError("transition matrix has negative entries")
        dev = np.abs(rows.sum(axis=1) - 1.0)
        if dev.max() > ROW_SUM_TOL:
            bad = int(dev.argmax())
            raise ValueError(f"row {bad} sums to {rows[bad].sum()!r}, not 1 within {ROW_SUM_TOL}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        states = tuple(self.states) if self.states else tuple(range(rows.shape[0]))
        if len(states) != rows.shape[0]:
            raise ValueError("number of state labels does not match matrix size")
        object.__setattr__(self, "states", states)

    @classmethod
    def from_rows(cls, rows, states: Sequence = (), renormalize: bool = False) -> "TransitionKernel":
        rows = np.array(rows, dtype=float)
        if renormalize:
            s = rows.sum(axis=1, keepdims=True)
            if np.any(s <= 0):
                raise ValueError("cannot renormalize a zero row")
            rows = rows / s
        return cls(rows, tuple(states))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def power(self, t: int) -> np.ndarray:
        return np.linalg.matrix_power(self.rows, t)

    def index(self, label) -> int:
        return self.states.index(label)

    def to_dict(self) -> dict:
        return {"states": list(self.states), "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionKernel":
        return cls.from_rows(d["rows"], d.get("states", ()))


@dataclass(frozen=True)
class StructureReport:
    irreducible: bool
    period: int
    classes: tuple
    aperiodic: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "aperiodic", self.period == 1)


def _class_period(adj: np.ndarray, members: np.ndarray) -> int:
    # BFS levels inside one class; period = gcd of level(u) + 1 - level(v) over class edges
    sub = adj[np.ix_(members, members)]
    level = -np.ones(len(members), dtype=int)
    level[0] = 0
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in np.flatnonzero(sub[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    g = 0
    for u, v in zip(*np.nonzero(sub)):
        g = math.gcd(g, abs(int(level[u]) + 1 - int(level[v])))
    return g


def structure_check(P: TransitionKernel) -> StructureReport:
    """Communicating classes, irreducibility and period via graph reachability.

    For a reducible chain the reported period is that of the class containing
    state 0 (classes without internal edges have no cycles and report 0).
    """
    adj = P.rows > 0
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    classes = tuple(tuple(int(i) for i in np.flatnonzero(labels == c)) for c in range(ncomp))
    classes = tuple(sorted(classes))
    members = np.flatnonzero(labels == labels[0])
    period = _class_period(adj, members)
    return StructureReport(irreducible=ncomp == 1, period=period, classes=classes)


def require_irreducible(P: TransitionKernel, aperiodic: bool = False) -> StructureReport:
    rep = structure_check(P)
    if not rep.irreducible:
        named = [[P.states[i] for i in c] for c in rep.classes]
        raise ChainStructureError(f"chain is reducible; communicating classes: {named}")
    if aperiodic and not rep.aperiodic:
        raise ChainStructureError(f"chain is periodic with period {rep.period}")
    return rep


def stationary(P: TransitionKernel) -> np.ndarray:
    """Unique invariant probability vector of an irreducible chain."""
    require_irreducible(P)
    n = P.n
    A = np.eye(n) - P.rows.T
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    # one step of iterative refinement keeps the residual at rounding level
    r = rhs - A @ pi
    pi = pi + np.linalg.solve(A, r)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def fundamental_kernel(P: TransitionKernel, pi: Optional[np.ndarray] = None) -> np.ndarray:
    """Z = [I - P + 1 (x) pi]^{-1}; requires an irreducible aperiodic chain."""
    require_irreducible(P, aperiodic=True)
    if pi is None:
        pi = stationary(P)
    n = P.n
    return np.linalg.inv(np.eye(n) - P.rows + np.outer(np.ones(n), pi))


def solve_poisson(P: TransitionKernel, F, pi: Optional[np.ndarray] = None) -> np.ndarray:
    """Solution F_hat of P F_hat - F_hat = -F + pi(F), normalized so pi(F_hat) = 0."""
    require_irreducible(P, aperiodic=True)
    F = np.asarray(F, dtype=float)
    if pi is None:
        pi = stationary(P)
    n = P.n
    A = np.eye(n) - P.rows + np.outer(np.ones(n), pi)
    rhs = F - pi @ F
    Fh = np.linalg.solve(A, rhs)
    Fh = Fh + np.linalg.solve(A, rhs - A @ Fh)
    return Fh - pi @ Fh


def quadratic_form(Prows: np.ndarray, G: np.ndarray, H: Optional[np.ndarray] = None) -> np.ndarray:
    """<<G, H>> = P(GH) - (PG)(PH); the conditional one-step covariance."""
    if H is None:
        H = G
    return Prows @ (G * H) - (Prows @ G) * (Prows @ H)


def asymptotic_variance(P: TransitionKernel, F, pi: Optional[np.ndarray] = None) -> float:
    """CLT variance sigma^2(F) = pi(Q(Z F))."""
    if pi is None:
        pi = stationary(P)
    Fh = solve_poisson(P, F, pi)
    return max(float(pi @ quadratic_form(P.rows, Fh)), 0.0)


def weighted_norm(g, v) -> float:
    """sup_x |g(x)| / v(x)."""
    g = np.asarray(g)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("weight function must be strictly positive")
    return float(np.max(np.abs(g) / v))


def operator_norm(K, v) -> float:
    """Induced v-weighted operator norm, max_x (|K| v)(x) / v(x)."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("weight function must be strictly positive")
    return float(np.max((np.abs(np.asarray(K)) @ v) / v))


def perron_root(K) -> float:
    K = np.asarray(K, dtype=float)
    if K.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(K))))


def spectral_radius(K, v=None, check: bool = True) -> float:
    """Perron root of a nonnegative matrix.

    With ``check`` the eigenvalue route is compared against the v-norm power
    route  lim ||K^n||_v^{1/n}, evaluated by repeated squaring with
    rescaling; the two must agree to 1e-8 relative.
    """
    K = np.asarray(K, dtype=float)
    if np.any(K < 0):
        raise ValueError("spectral_radius expects a nonnegative matrix")
    rho = perron_root(K)
    if check and rho > 0:
        v = np.ones(K.shape[0]) if v is None else np.asarray(v, dtype=float)
        norm_route = _norm_power_radius(K, v)
        if abs(norm_route - rho) > 1e-8 * rho:
            raise ArithmeticError(
                f"spectral radius routes disagree: eigen {rho!r} vs norm-power {norm_route!r}"
            )
    return rho


def _norm_power_radius(K: np.ndarray, v: np.ndarray, squarings: int = 60) -> float:
    # ||K^(2^k)||_v^(2^-k) with K rescaled each squaring; log scale tracked separately
    M = K.copy()
    log_scale = 0.0
    est = operator_norm(M, v)
    for k in range(1, squarings + 1):
        s = np.abs(M).max()
        if s == 0:
            return 0.0
        M = M / s
        log_scale = 2.0 * (log_scale + math.log(s))
        M = M @ M
        nrm = operator_norm(M, v)
        if nrm == 0:
            return 0.0
        new = math.exp((log_scale + math.log(nrm)) / 2.0**k)
        if abs(new - est) <= 1e-15 * new and k > 8:
            return new
        est = new
    return est


@dataclass(frozen=True)
class SmallSetCertificate:
    t: int
    epsilon: float
    nu: np.ndarray


def small_set_certificate(P: TransitionKernel, C, t_max: int) -> Optional[SmallSetCertificate]:
    """Smallest t <= t_max with P^t(x, .) >= epsilon nu(.) for all x in C."""
    C = sorted(set(int(c) for c in C))
    if not C:
        raise ValueError("small set must be nonempty")
    Pt = np.eye(P.n)
    for t in range(1, t_max + 1):
        Pt = Pt @ P.rows
        floor = Pt[C].min(axis=0)
        eps = float(floor.sum())
        if eps > 0:
            return SmallSetCertificate(t=t, epsilon=eps, nu=floor / eps)
    return None
