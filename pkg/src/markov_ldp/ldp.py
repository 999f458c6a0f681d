"""Log-moment generating functional, convex duality, rate functions and exact tail asymptotics.

Lambda(aF) is the log Perron root of exp(aF)P.  Its derivatives come from
the twisted chain: Lambda'(a) = pi_a(F) and Lambda''(a) is the asymptotic
variance of F under the twisted kernel.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
from scipy.special import logsumexp

from .markov_core import (
    TransitionKernel,
    asymptotic_variance,
    quadratic_form,
    require_irreducible,
    stationary,
)
from .spectral import principal_eigen, scale_kernel, tilted_chain

log = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_REL_TOL = 1e-6
DUAL_GRAD_TOL = 1e-8
LATTICE_TOL = 1e-9
MAX_LATTICE_MULTIPLE = 10**6
DP_MAX_CELLS = 10**6


class ConsistencyError(ArithmeticError):
    """Two routes to the same quantity disagree beyond tolerance."""


class SuperexponentialRegime(ValueError):
    """Threshold at or above F_max: the tail decays faster than exponentially."""


# ---------------------------------------------------------------------------
# Lambda and its derivatives


def lambda_of(P: TransitionKernel, F, a: float) -> float:
    if a == 0:
        return 0.0
    return math.log(principal_eigen(scale_kernel(P, F, a)).lam)


def _lambda_fd(P, F, a, h=FD_STEP):
    d1 = (lambda_of(P, F, a + h) - lambda_of(P, F, a - h)) / (2 * h)
    # 5-point stencil at a wider step: the 3-point rule at h=1e-5 has
    # rounding error ~eps/h^2 ~ 1e-6, too close to the tolerance
    g = 1e-3
    vals = [lambda_of(P, F, a + k * g) for k in (-2, -1, 0, 1, 2)]
    d2 = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * g * g)
    return d1, d2


def lambda_derivatives(P: TransitionKernel, F, a: float, check: bool = True) -> tuple[float, float]:
    """(Lambda'(a), Lambda''(a)) from the twisted invariant law and twisted asymptotic variance."""
    require_irreducible(P, aperiodic=True)
    F = np.asarray(F, dtype=float)
    _, tw = tilted_chain(P, F, a)
    d1 = float(tw.pi_twisted @ F)
    d2 = asymptotic_variance(tw.kernel, F, tw.pi_twisted)
    if check:
        f1, f2 = _lambda_fd(P, F, a)
        scale = max(np.ptp(F), 1e-12)
        if abs(f1 - d1) > FD_REL_TOL * max(abs(d1), scale):
            raise ConsistencyError(f"Lambda'({a}) analytic {d1!r} vs finite difference {f1!r}")
        # the stencil cannot resolve below ~eps |Lambda| / g^2; floor the tolerance there
        floor = 1e-8 * max(1.0, abs(lambda_of(P, F, a)))
        if abs(f2 - d2) > max(FD_REL_TOL * abs(d2), floor):
            raise ConsistencyError(f"Lambda''({a}) analytic {d2!r} vs finite difference {f2!r}")
    return d1, d2


@dataclass(frozen=True)
class LambdaCurve:
    F: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    twisted_measures: np.ndarray

    def rows(self):
        return [
            {"a": a, "Lambda": v, "d1": g1, "d2": g2}
            for a, v, g1, g2 in zip(self.grid, self.values, self.d1, self.d2)
        ]


def lambda_curve(P: TransitionKernel, F, grid: Sequence[float], check: bool = False) -> LambdaCurve:
    F = np.asarray(F, dtype=float)
    grid = np.asarray(sorted(grid), dtype=float)
    vals, d1s, d2s, pis = [], [], [], []
    for a in grid:
        trip, tw = tilted_chain(P, F, a)
        vals.append(math.log(trip.lam))
        g1, g2 = lambda_derivatives(P, F, a, check=check)
        d1s.append(g1)
        d2s.append(g2)
        pis.append(tw.pi_twisted)
    return LambdaCurve(F, grid, np.array(vals), np.array(d1s), np.array(d2s), np.array(pis))


# ---------------------------------------------------------------------------
# F_max and the scalar rate function


def fmax(P: TransitionKernel, F) -> float:
    """Maximum mean weight of F over directed cycles of the transition graph (Karp).

    This is lim_{a -> inf} d/da Lambda(aF) on a finite irreducible chain.
    """
    F = np.asarray(F, dtype=float)
    n = P.n
    adj = P.rows > 0
    # D[k, v] = max weight of a k-edge walk ending at v, edge u->v weighted F(u)
    D = np.full((n + 1, n), -np.inf)
    D[0] = 0.0
    cand = np.where(adj, F[:, None], -np.inf)
    for k in range(1, n + 1):
        D[k] = np.max(D[k - 1][:, None] + cand, axis=0)
    best = -np.inf
    for v in range(n):
        if not np.isfinite(D[n, v]):
            continue
        worst = np.inf
        for k in range(n):
            if np.isfinite(D[k, v]):
                worst = min(worst, (D[n, v] - D[k, v]) / (n - k))
        best = max(best, worst)
    return float(best)


@dataclass(frozen=True)
class RatePoint:
    c: float
    a: float
    J: float
    sigma2: float
    check_f_at: np.ndarray
    Lambda: float


def solve_rate_point(P: TransitionKernel, F, c: float, tol: float = 1e-10) -> RatePoint:
    """Solve Lambda'(a) = c for the upper tail, then J(c) = a c - Lambda(aF)."""
    F = np.asarray(F, dtype=float)
    require_irreducible(P, aperiodic=True)
    pi = stationary(P)
    mean = float(pi @ F)
    top = fmax(P, F)
    if c >= top - 1e-12:
        raise SuperexponentialRegime(f"c={c!r} is not below F_max={top!r}")
    if c < mean - 1e-12:
        raise ValueError(f"c={c!r} is below the mean {mean!r}; negate F for the lower tail")

    def d(a):
        return lambda_derivatives(P, F, a, check=False)

    a = 0.0
    g1, g2 = d(0.0)
    if abs(g1 - c) > tol:
        lo, hi = 0.0, 1.0
        while d(hi)[0] < c:
            lo, hi = hi, 2 * hi
            if hi > 1e6:
                raise ArithmeticError("could not bracket the saddle point")
        a = 0.5 * (lo + hi)
        for _ in range(200):
            g1, g2 = d(a)
            r = g1 - c
            if abs(r) <= tol:
                break
            if r > 0:
                hi = a
            else:
                lo = a
            step = a - r / g2 if g2 > 0 else None
            a = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        else:
            raise ArithmeticError("saddle point iteration did not converge")
    trip = principal_eigen(scale_kernel(P, F, a))
    Lam = math.log(trip.lam) if a != 0 else 0.0
    _, g2 = d(a)
    return RatePoint(c, a, a * c - Lam, g2, trip.check_f, Lam)


# ---------------------------------------------------------------------------
# Convex duals over measures


def _invariant_kernel_feasible(P: TransitionKernel, nu: np.ndarray) -> bool:
    """Is there a pair measure on the edges of P with both marginals equal to nu?"""
    edges = np.argwhere(P.rows > 0)
    m = len(edges)
    n = P.n
    A = np.zeros((2 * n, m))
    A[edges[:, 0], np.arange(m)] = 1.0
    A[n + edges[:, 1], np.arange(m)] = 1.0
    b = np.concatenate([nu, nu])
    res = scipy.optimize.linprog(np.zeros(m), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    return res.status == 0


def _check_probability(nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < -1e-15) or abs(nu.sum() - 1.0) > 1e-10:
        raise ValueError("expected a probability vector")
    return np.clip(nu, 0.0, None)


def _covariance_matrix(tw) -> np.ndarray:
    """Asymptotic covariance of the indicator functionals under a twisted chain (Hessian of Lambda)."""
    Pt = tw.kernel.rows
    pi = tw.pi_twisted
    n = len(pi)
    A = np.eye(n) - Pt + np.outer(np.ones(n), pi)
    Zh = np.linalg.solve(A, np.eye(n) - np.outer(np.ones(n), pi))
    PZ = Pt @ Zh
    return Zh.T @ (pi[:, None] * Zh) - PZ.T @ (pi[:, None] * PZ)


def legendre_dual_measure(P: TransitionKernel, nu, max_iter: int = 500) -> float:
    """Lambda*(nu) = sup_F [nu(F) - Lambda(F)].

    Ascent in F-space with exact gradient nu - pi_F (the twisted invariant
    law), preconditioned by the exact Hessian and safeguarded by a
    backtracking line search.  F(0) is pinned to 0 to remove the constant
    direction.  Returns +inf when nu is not invariant for any kernel
    supported on the edges of P.
    """
    nu = _check_probability(nu)
    require_irreducible(P, aperiodic=True)
    if not _invariant_kernel_feasible(P, nu):
        return math.inf

    def evaluate(F):
        try:
            trip, tw = tilted_chain(P, F, 1.0)
        except (ValueError, ArithmeticError):
            # eigenvector underflow on an overlong step; the line search backs off
            return -math.inf, None, None
        return float(nu @ F - math.log(trip.lam)), nu - tw.pi_twisted, tw

    F = np.zeros(P.n)
    val, grad, tw = evaluate(F)
    for _ in range(max_iter):
        if np.max(np.abs(grad)) <= DUAL_GRAD_TOL:
            return val
        g = grad[1:]
        H = _covariance_matrix(tw)[1:, 1:]
        try:
            step = np.linalg.solve(H, g)
            if not np.all(np.isfinite(step)) or step @ g <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        while True:
            Fn = F.copy()
            Fn[1:] += t * step
            vn, gn, twn = evaluate(Fn)
            if vn >= val + 1e-4 * t * (step @ g) or t < 1e-12:
                break
            t *= 0.5
        if vn < val:
            break
        F, val, grad, tw = Fn, vn, gn, twn
    if np.max(np.abs(grad)) > DUAL_GRAD_TOL:
        warnings.warn(
            f"Legendre ascent stopped with gradient {np.max(np.abs(grad)):.3g}; "
            "the supremum may sit on the boundary",
            RuntimeWarning,
        )
    return val


def entropy_rate_pair(P: TransitionKernel, Gamma, marginal_tol: float = 1e-10) -> float:
    """H(Gamma || pi_check (.) P) with pi_check the first marginal; +inf if marginals differ."""
    G = np.asarray(Gamma, dtype=float)
    if np.any(G < 0) or abs(G.sum() - 1.0) > 1e-10:
        raise ValueError("Gamma must be a probability pair measure")
    m1 = G.sum(axis=1)
    m2 = G.sum(axis=0)
    if np.max(np.abs(m1 - m2)) > marginal_tol:
        return math.inf
    ref = m1[:, None] * P.rows
    pos = G > 0
    if np.any(pos & (ref <= 0)):
        return math.inf
    return float(np.sum(G[pos] * np.log(G[pos] / ref[pos])))


@dataclass(frozen=True)
class EntropyMinimizer:
    value: float
    kernel: Optional[np.ndarray]
    residual: float


def entropy_minimizer(P: TransitionKernel, nu, max_iter: int = 500) -> EntropyMinimizer:
    """inf over kernels Q with nu Q = nu of sum_x nu(x) KL(Q(x,.) || P(x,.)).

    The invariance constraint is handled by Lagrangian dual ascent: for a
    multiplier g the row-wise minimizer is the twist Q_g(x,y) ~ P(x,y) e^{g(y)},
    and the dual function is -nu(H(g)).  Newton steps on g (g(0) pinned)
    drive the constraint residual nu - nu Q_g to zero.
    """
    nu = _check_probability(nu)
    if not _invariant_kernel_feasible(P, nu):
        return EntropyMinimizer(math.inf, None, math.inf)
    logP = np.where(P.rows > 0, np.log(np.where(P.rows > 0, P.rows, 1.0)), -np.inf)

    def evaluate(g):
        Z = logP + g[None, :]
        lse = logsumexp(Z, axis=1)
        Q = np.exp(Z - lse[:, None])
        dual = float(nu @ (g - lse))
        resid = nu - nu @ Q
        return dual, resid, Q

    g = np.zeros(P.n)
    dual, resid, Q = evaluate(g)
    prev = -math.inf
    for _ in range(max_iter):
        if np.max(np.abs(resid)) <= 1e-12 or (np.max(np.abs(resid)) <= 1e-8 and abs(dual - prev) <= 1e-14):
            break
        H = np.zeros((P.n, P.n))
        for x in np.flatnonzero(nu > 0):
            q = Q[x]
            H += nu[x] * (np.diag(q) - np.outer(q, q))
        r = resid[1:]
        try:
            step = np.linalg.solve(H[1:, 1:], r)
            if not np.all(np.isfinite(step)) or step @ r <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = r
        t = 1.0
        while True:
            gn = g.copy()
            gn[1:] += t * step
            dn, rn, Qn = evaluate(gn)
            if dn >= dual + 1e-4 * t * (step @ r) or t < 1e-12:
                break
            t *= 0.5
        if dn < dual:
            break
        prev = dual
        g, dual, resid, Q = gn, dn, rn, Qn
    pos = (nu[:, None] * Q) > 0
    G = nu[:, None] * Q
    primal = float(np.sum(G[pos] * np.log(Q[pos] / P.rows[pos])))
    return EntropyMinimizer(primal, Q, float(np.max(np.abs(resid))))


def entropy_rate_measure(P: TransitionKernel, nu) -> float:
    return entropy_minimizer(P, nu).value


@dataclass(frozen=True)
class DualPairRecord:
    Gamma: np.ndarray
    M: np.ndarray
    lambda_val: float
    entropy: float
    identity_residual: float
    similarity_residual: float

    @property
    def verified(self) -> bool:
        return self.identity_residual <= 1e-9 and self.similarity_residual <= 1e-9


def dual_pair_check(P: TransitionKernel, F, a: float) -> DualPairRecord:
    """Gamma = pi_a (.) P_check_a against the bivariate tilt M(x, y) = a F(x)."""
    require_irreducible(P, aperiodic=True)
    F = np.asarray(F, dtype=float)
    trip, tw = tilted_chain(P, F, a)
    Lam = math.log(trip.lam) if a != 0 else 0.0
    Gamma = tw.pi_twisted[:, None] * tw.kernel.rows
    M = np.repeat((a * F)[:, None], P.n, axis=1)
    H = entropy_rate_pair(P, Gamma)
    ident = abs(H - (a * float(tw.pi_twisted @ F) - Lam))
    Fc = np.log(trip.check_f)
    supp = Gamma > 0
    M0 = np.log(tw.kernel.rows[supp] / P.rows[supp])
    expected = (M - Lam - Fc[:, None] + Fc[None, :])[supp]
    sim = float(np.max(np.abs(M0 - expected))) if supp.any() else 0.0
    return DualPairRecord(Gamma, M, Lam, H, ident, sim)


# ---------------------------------------------------------------------------
# Lattice structure, moment generating functions


@dataclass(frozen=True)
class LatticeInfo:
    kind: str
    span: float
    offset: float

    @property
    def is_lattice(self) -> bool:
        return self.kind == "lattice"


def _real_gcd(a: float, b: float, tol: float) -> float:
    a, b = abs(a), abs(b)
    while b > tol:
        r = math.fmod(a, b)
        if r < tol or b - r < tol:
            r = 0.0
        a, b = b, r
    return a


def lattice_span(F, tol: float = LATTICE_TOL, P: Optional[TransitionKernel] = None) -> LatticeInfo:
    """Maximal span h and offset d with every F(x) in d + hZ, or a nonlattice verdict.

    The real gcd is taken by Euclid's algorithm with cutoff ``tol``; it is
    declared collapsed (nonlattice) when the values would need lattice
    multiples beyond 10^6.  When P is given, a nonlattice F is probed for
    near-periodicity of the twisted characteristic kernel (almost-lattice
    behaviour), which is reported as a warning.
    """
    F = np.asarray(F, dtype=float)
    vals = np.unique(F)
    if len(vals) == 1:
        return LatticeInfo("lattice", 0.0, float(vals[0]))
    diffs = vals[1:] - vals[0]
    h = diffs[0]
    for d in diffs[1:]:
        h = _real_gcd(h, d, tol)
    span_range = vals[-1] - vals[0]
    ok = h > tol and span_range / h <= MAX_LATTICE_MULTIPLE
    if ok:
        k = diffs / h
        ok = bool(np.all(np.abs(k - np.round(k)) * h <= tol * max(1.0, span_range)))
    if not ok:
        if P is not None:
            _almost_lattice_probe(P, F)
        return LatticeInfo("nonlattice", math.nan, math.nan)
    offset = float(vals[0] - h * math.floor(vals[0] / h + tol))
    if offset >= h - tol:
        offset = 0.0
    return LatticeInfo("lattice", float(h), offset)


def _almost_lattice_probe(P: TransitionKernel, F, omegas=None, tol: float = 1e-6):
    if omegas is None:
        omegas = np.linspace(0.05, 4 * math.pi / max(np.ptp(F), 1e-12), 400)
    worst = 0.0
    for w in omegas:
        E = np.exp(1j * w * F)[:, None] * P.rows
        worst = max(worst, float(np.max(np.abs(np.linalg.eigvals(E)))))
    if worst > 1 - tol:
        warnings.warn(
            "functional is value-nonlattice but its characteristic kernel has spectral radius "
            f"{worst:.9f} ~ 1: treat as almost-lattice",
            RuntimeWarning,
        )
    return worst


def lattice_indices(F, info: LatticeInfo) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return np.round((F - info.offset) / info.span).astype(np.int64)


def mgf(P: TransitionKernel, F, alpha, x: int, n: int) -> complex:
    """m_n(alpha) = E_x[exp(alpha S_n)] = (P_f^n 1)(x), with a log-scale accumulator."""
    if n > 10_000:
        raise ValueError("n is capped at 10^4")
    K = scale_kernel(P, F, alpha)
    v = np.ones(P.n, dtype=complex)
    log_scale = 0.0
    for _ in range(n):
        v = K.entries @ v
        s = np.max(np.abs(v))
        if s == 0:
            return 0j
        v = v / s
        log_scale += math.log(s)
    return complex(v[x] * math.exp(log_scale))


def mgf_decay_scan(P: TransitionKernel, F, a: float, omega_grid, x: int, n: int) -> np.ndarray:
    """|m_k(a + i omega)| exp(-k Lambda(aF)) for each omega and k = 1..n (shape len(grid) x n)."""
    F = np.asarray(F, dtype=float)
    lam = principal_eigen(scale_kernel(P, F, a)).lam
    out = np.empty((len(omega_grid), n))
    for j, w in enumerate(omega_grid):
        A = scale_kernel(P, F, complex(a, w)).entries / lam
        v = np.ones(P.n, dtype=complex)
        for k in range(n):
            v = A @ v
            out[j, k] = abs(v[x])
    return out


def characteristic_ratio(P: TransitionKernel, F, a: float, omega: float) -> float:
    """Spectral radius of exp((a + i omega)F)P over lambda(aF): the per-step decay factor."""
    lam = principal_eigen(scale_kernel(P, F, a)).lam
    E = scale_kernel(P, F, complex(a, omega)).entries
    return float(np.max(np.abs(np.linalg.eigvals(E))) / lam)


# ---------------------------------------------------------------------------
# Exact distribution of S_n for lattice functionals


def _dp_setup(P, F, n):
    info = lattice_span(F)
    if not info.is_lattice:
        raise ValueError("exact DP needs a lattice functional")
    if info.span == 0:
        return info, np.zeros(P.n, dtype=np.int64), 0
    k = lattice_indices(F, info)
    kmin = int(k.min())
    k = k - kmin
    kr = int(k.max())
    cells = n * kr + 1
    if n * kr > DP_MAX_CELLS:
        raise ValueError(f"DP table of {cells} lattice cells exceeds the 10^6 cap")
    return info, k, kmin


def exact_sum_distribution(P: TransitionKernel, F, x: int, n: int):
    """Exact law of S_n = sum_{t<n} F(Phi(t)) from Phi(0) = x on its lattice.

    Returns (values, probabilities) as float and long-double arrays.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    F = np.asarray(F, dtype=float)
    info, k, kmin = _dp_setup(P, F, n)
    width = n * int(k.max()) + 1
    Pl = P.rows.astype(np.longdouble)
    dist = np.zeros((P.n, width), dtype=np.longdouble)
    dist[x, k[x]] = 1
    for _ in range(n - 1):
        moved = Pl.T @ dist
        new = np.zeros_like(dist)
        for y in range(P.n):
            if k[y]:
                new[y, k[y]:] = moved[y, : width - k[y]]
            else:
                new[y] = moved[y]
        dist = new
    probs = dist.sum(axis=0)
    K = np.arange(width) + n * kmin
    values = n * info.offset + info.span * K
    return values, probs


def sum_support(P: TransitionKernel, F, x: int, n: int) -> np.ndarray:
    """Achievable values of S_n from x (boolean reachability, no probabilities)."""
    F = np.asarray(F, dtype=float)
    info, k, kmin = _dp_setup(P, F, n)
    width = n * int(k.max()) + 1
    adj = (P.rows > 0).astype(np.int64)
    reach = np.zeros((P.n, width), dtype=bool)
    reach[x, k[x]] = True
    for _ in range(n - 1):
        moved = (adj.T @ reach.astype(np.int64)) > 0
        new = np.zeros_like(reach)
        for y in range(P.n):
            if k[y]:
                new[y, k[y]:] = moved[y, : width - k[y]]
            else:
                new[y] = moved[y]
        reach = new
    K = np.flatnonzero(reach.any(axis=0)) + n * kmin
    return n * info.offset + info.span * K


def exact_tail_dp(P: TransitionKernel, F, x: int, c: float, n: int) -> float:
    """P_x{S_n >= n c} by dynamic programming over (state, lattice sum)."""
    values, probs = exact_sum_distribution(P, F, x, n)
    scale = max(1.0, abs(n * c))
    mask = values >= n * c - 1e-9 * scale
    return float(np.sum(probs[mask]))


# ---------------------------------------------------------------------------
# Bahadur-Ranga Rao asymptotics


@dataclass(frozen=True)
class TailAsymptotic:
    n: int
    c: float
    predicted: float
    method: str
    prefactor: float
    exponent: float
    a: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "c": self.c,
            "predicted": self.predicted,
            "method": self.method,
            "components": {"prefactor": self.prefactor, "exponent": self.exponent},
            "a": self.a,
        }


def bahadur_rao_nonlattice(P: TransitionKernel, F, x: int, c: float, n: int,
                           rate: Optional[RatePoint] = None) -> TailAsymptotic:
    """f_check_a(x) / (a sqrt(2 pi n sigma_a^2)) exp(-n J(c))."""
    F = np.asarray(F, dtype=float)
    if lattice_span(F, P=P).is_lattice:
        raise ValueError("F is lattice; use bahadur_rao_lattice")
    rp = rate if rate is not None else solve_rate_point(P, F, c)
    if rp.a <= 0:
        raise ValueError("threshold must lie strictly above the mean")
    pref = rp.check_f_at[x] / (rp.a * math.sqrt(2 * math.pi * n * rp.sigma2))
    return TailAsymptotic(n, c, pref * math.exp(-n * rp.J), "nonlattice_BR", float(pref), rp.J, rp.a)


def finite_n_log_mgf(P: TransitionKernel, F, x: int, n: int, a: float) -> tuple[float, float, float]:
    """(Lambda_n, Lambda_n', Lambda_n'') with Lambda_n(a) = (1/n) log E_x[exp(a S_n)].

    Exact forward-mode differentiation of the matrix-power recursion
    v <- e^{aF} P v, renormalized each step.
    """
    F = np.asarray(F, dtype=float)
    m = float(F.max())
    Ft = F - m
    f = np.exp(a * Ft)
    v = np.ones(P.n)
    v1 = np.zeros(P.n)
    v2 = np.zeros(P.n)
    log_scale = 0.0
    R = P.rows
    for _ in range(n):
        u, u1, u2 = R @ v, R @ v1, R @ v2
        v = f * u
        v1 = f * (Ft * u + u1)
        v2 = f * (Ft * Ft * u + 2 * Ft * u1 + u2)
        s = v.max()
        v, v1, v2 = v / s, v1 / s, v2 / s
        log_scale += math.log(s)
    r1 = v1[x] / v[x]
    r2 = v2[x] / v[x]
    L = (math.log(v[x]) + log_scale) / n + a * m
    return L, r1 / n + m, (r2 - r1 * r1) / n


def snap_to_support(P: TransitionKernel, F, x: int, c: float, n: int) -> float:
    """Smallest achievable value of S_n/n that is >= c."""
    sup = sum_support(P, F, x, n)
    scale = max(1.0, abs(n * c))
    ok = sup[sup >= n * c - 1e-9 * scale]
    if len(ok) == 0:
        raise ValueError(f"c={c!r} is outside the achievable range of S_n/n")
    return float(ok.min() / n)


def bahadur_rao_lattice(P: TransitionKernel, F, x: int, c: float, n: int) -> TailAsymptotic:
    """h / ((1 - e^{-h a_n}) sqrt(2 pi n Lambda_n''(a_n))) exp(-n J_n(c_n)).

    c is first snapped up to the support of S_n / n; a_n solves
    Lambda_n'(a) = c_n and J_n = a_n c_n - Lambda_n(a_n).
    """
    F = np.asarray(F, dtype=float)
    info = lattice_span(F)
    if not info.is_lattice or info.span == 0:
        raise ValueError("bahadur_rao_lattice needs a nonconstant lattice functional")
    h = info.span
    cn = snap_to_support(P, F, x, c, n)
    sup = sum_support(P, F, x, n)
    if n * cn >= sup.max() - 1e-9 * max(1.0, abs(n * cn)):
        raise ValueError("c_n sits at the top of the support; no saddle point exists")

    def g(a):
        return finite_n_log_mgf(P, F, x, n, a)[1] - cn

    if g(0.0) >= 0:
        raise ValueError("c_n must exceed the finite-n mean of S_n / n")
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise ArithmeticError("could not bracket a_n")
    an = scipy.optimize.brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-14)
    L, _, L2 = finite_n_log_mgf(P, F, x, n, an)
    Jn = an * cn - L
    pref = h / ((1 - math.exp(-h * an)) * math.sqrt(2 * math.pi * n * L2))
    return TailAsymptotic(n, cn, pref * math.exp(-n * Jn), "lattice_BR", float(pref), float(Jn), float(an))


def bahadur_rao_lattice_limit(P: TransitionKernel, F, x: int, c: float, n: int) -> TailAsymptotic:
    """Limit form h f_check_a(x) / ((1 - e^{-ha}) sqrt(2 pi n sigma_a^2)) exp(-n J(c))."""
    info = lattice_span(F)
    rp = solve_rate_point(P, F, c)
    h = info.span
    pref = h * rp.check_f_at[x] / ((1 - math.exp(-h * rp.a)) * math.sqrt(2 * math.pi * n * rp.sigma2))
    return TailAsymptotic(n, c, pref * math.exp(-n * rp.J), "lattice_BR", float(pref), rp.J, rp.a)
