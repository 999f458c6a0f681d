"""Scaled kernels, principal eigen-triples and the nonlinear generator.

The scaled kernel for a functional F and complex tilt alpha has rows
exp(alpha F(x)) P(x, .).  Its Perron data (lambda, f_check, mu_check)
solve the multiplicative Poisson equation H(F_check) = -F + Lambda with
F_check = log f_check and Lambda = log lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .markov_core import (
    TransitionKernel,
    perron_root,
    require_irreducible,
    spectral_radius,
    stationary,
)

GAP_TIE_TOL = 1e-8
FEASIBLE_RADIUS = 1.0 - 1e-12


class GapUnresolvedError(ArithmeticError):
    """Two leading eigenvalue moduli are numerically tied."""


@dataclass(frozen=True)
class ScaledKernel:
    base: TransitionKernel
    F: np.ndarray
    alpha: complex
    entries: np.ndarray

    @property
    def is_real(self) -> bool:
        return np.isrealobj(self.entries)


def scale_kernel(P: TransitionKernel, F, alpha=1.0) -> ScaledKernel:
    F = np.asarray(F, dtype=float)
    if F.shape != (P.n,):
        raise ValueError(f"functional has shape {F.shape}, kernel has {P.n} states")
    if alpha == 0:
        return ScaledKernel(P, F, alpha, P.rows)
    if np.iscomplexobj(alpha) and complex(alpha).imag != 0:
        entries = np.exp(complex(alpha) * F)[:, None] * P.rows
    else:
        alpha = float(np.real(alpha))
        # overflow gives inf; structural zeros stay zero instead of 0 * inf
        with np.errstate(over="ignore", invalid="ignore"):
            entries = np.where(P.rows > 0, np.exp(alpha * F)[:, None] * P.rows, 0.0)
    return ScaledKernel(P, F, alpha, entries)


@dataclass(frozen=True)
class EigenTriple:
    lam: complex
    check_f: np.ndarray
    check_mu: np.ndarray
    residual_f: float
    residual_mu: float

    @property
    def Lambda(self):
        return np.log(self.lam)

    def to_dict(self) -> dict:
        def enc(z):
            z = np.asarray(z)
            if np.iscomplexobj(z):
                return {"re": np.real(z).tolist(), "im": np.imag(z).tolist()}
            return z.tolist()

        return {
            "lambda": enc(self.lam),
            "check_f": enc(self.check_f),
            "check_mu": enc(self.check_mu),
            "residuals": {"f": self.residual_f, "mu": self.residual_mu},
        }


def _refine_small(A: np.ndarray, rho: float, v: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    # entries far below max(v) carry only absolute accuracy from the dense solve;
    # recover them from (rho I - A_SS) v_S = A_SL v_L, a nonsingular M-matrix system
    small = v < rel * v.max()
    if not small.any():
        return v
    S, L = np.flatnonzero(small), np.flatnonzero(~small)
    M = rho * np.eye(len(S)) - A[np.ix_(S, S)]
    rhs = A[np.ix_(S, L)] @ v[L]
    d = np.diag(M).copy()
    if np.any(d <= 0):
        return v
    vs = np.linalg.solve(M / d[:, None], rhs / d)
    if not np.all(np.isfinite(vs)) or np.any(vs < 0):
        return v
    out = v.copy()
    out[S] = vs
    return out


def principal_eigen(K: ScaledKernel) -> EigenTriple:
    """Maximal eigenvalue with its right and left eigenvectors.

    Normalized so that mu_check(X) = mu_check(f_check) = 1.  Rows are
    rescaled by exp(-max Re(alpha F)) before the dense solve; this is a
    scalar multiple of the kernel and leaves the eigenvectors unchanged.
    """
    require_irreducible(K.base)
    if K.alpha == 0:
        shift, A = 0.0, K.entries
    else:
        expo = K.alpha * K.F
        shift = float(np.max(np.real(expo)))
        A = np.exp(expo - shift)[:, None] * K.base.rows
    w, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    mod = np.abs(w)
    top = mod.max()
    if K.is_real:
        # Perron root: the real positive eigenvalue of maximal modulus
        cand = np.flatnonzero(mod >= top * (1 - 1e-10))
        i = cand[np.argmax(w[cand].real)]
        lam = float(w[i].real) * math.exp(shift)
        rho = float(w[i].real)
        f = _refine_small(A, rho, np.abs(np.real(vr[:, i])))
        mu = _refine_small(A.T, rho, np.abs(np.real(vl[:, i])))
    else:
        order = np.argsort(-mod)
        if len(w) > 1 and mod[order[0]] - mod[order[1]] <= GAP_TIE_TOL * max(mod[order[0]], 1e-300):
            raise GapUnresolvedError(
                f"gap unresolved: leading moduli {mod[order[0]]!r} and {mod[order[1]]!r}"
            )
        i = order[0]
        lam = complex(w[i]) * math.exp(shift)
        f = vr[:, i]
        mu = vl[:, i].conj()
    mu = mu / mu.sum()
    f = f / (mu @ f)
    # residuals in the shifted frame, scaled back; inf if the scale overflows
    rho = float(w[i].real) if K.is_real else complex(w[i])
    with np.errstate(over="ignore"):
        scale = np.exp(np.float64(shift))
        res_f = float(np.max(np.abs(A @ f - rho * f)) / np.max(np.abs(f)) * scale)
        res_mu = float(np.sum(np.abs(mu @ A - rho * mu)) * scale)
    return EigenTriple(lam, f, mu, res_f, res_mu)


def power_iteration(K, tol: float = 1e-10, max_iter: int = 200_000) -> float:
    """Perron root of a nonnegative primitive matrix by power iteration.

    Starts from the all-ones vector; stops when the Collatz-Wielandt bounds
    min (Kv)/v <= rho <= max (Kv)/v agree to ``tol`` relative.
    """
    K = np.asarray(K, dtype=float)
    v = np.ones(K.shape[0])
    for _ in range(max_iter):
        w = K @ v
        ratio = w / v
        lo, hi = ratio.min(), ratio.max()
        if hi - lo <= tol * hi:
            return float(0.5 * (lo + hi))
        v = w / w.max()
    raise ArithmeticError("power iteration did not converge")


def nonlinear_generator(P: TransitionKernel, G) -> np.ndarray:
    """H(G)(x) = log sum_y P(x,y) exp(G(y)) - G(x), log-sum-exp stabilized."""
    G = np.asarray(G, dtype=float)
    with np.errstate(divide="ignore"):
        logP = np.log(P.rows)
    return logsumexp(logP + G[None, :], axis=1) - G


def mult_poisson_solve(P: TransitionKernel, F) -> tuple[float, np.ndarray]:
    """Return (Lambda(F), F_check) with H(F_check) = -F + Lambda(F)."""
    require_irreducible(P, aperiodic=True)
    trip = principal_eigen(scale_kernel(P, F, 1.0))
    return math.log(trip.lam), np.log(trip.check_f)


@dataclass(frozen=True)
class TwistedChain:
    kernel: TransitionKernel
    h: np.ndarray
    pi_twisted: np.ndarray


def twisted_kernel(P: TransitionKernel, h, pi_twisted: Optional[np.ndarray] = None) -> TwistedChain:
    """Doob-type transform P(x,y) h(y) / (P h)(x)."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise ValueError("twisting function must be finite and strictly positive")
    hs = h / h.max()
    M = P.rows * hs[None, :]
    M = M / M.sum(axis=1, keepdims=True)
    kern = TransitionKernel(M, P.states)
    if pi_twisted is None:
        pi_twisted = stationary(kern)
    return TwistedChain(kern, h, pi_twisted)


def tilted_chain(P: TransitionKernel, F, a: float) -> tuple[EigenTriple, TwistedChain]:
    """Eigen-triple of exp(aF)P and the twisted chain built from its f_check.

    The twisted invariant law is mu_check * f_check, which sums to one by the
    eigen-triple normalization.
    """
    trip = principal_eigen(scale_kernel(P, F, a))
    pi_a = trip.check_mu * trip.check_f
    pi_a = pi_a / pi_a.sum()
    return trip, twisted_kernel(P, trip.check_f, pi_a)


def resolvent_eigenfunction(K: ScaledKernel, lambda_shift: float, s, nu) -> np.ndarray:
    """h = [I gamma - (R - s nu)]^{-1} s with R = [I lambda - K]^{-1}, gamma = 1/(lambda - xi)."""
    E = np.asarray(K.entries, dtype=float)
    xi = perron_root(E)
    if lambda_shift <= xi:
        raise ArithmeticError(
            f"lambda_shift {lambda_shift!r} is inside the spectrum (radius {xi!r}); resolvent is singular"
        )
    n = E.shape[0]
    s = np.asarray(s, dtype=float)
    nu = np.asarray(nu, dtype=float)
    R = np.linalg.inv(lambda_shift * np.eye(n) - E)
    gamma = 1.0 / (lambda_shift - xi)
    h = np.linalg.solve(gamma * np.eye(n) - (R - np.outer(s, nu)), s)
    return np.real(h)


def subdominant_ratio(E) -> float:
    """|lambda_2| / |lambda_1| for the eigenvalues of E sorted by modulus."""
    mod = np.sort(np.abs(np.linalg.eigvals(np.asarray(E))))[::-1]
    if len(mod) < 2:
        return 0.0
    return float(mod[1] / mod[0])


@dataclass(frozen=True)
class MMETCurve:
    n: np.ndarray
    E: np.ndarray
    deviation: np.ndarray
    target: complex
    predicted_slope: float

    def fitted_slope(self, n_min: int = 20, n_max: int = 200, floor: float = 1e-12) -> float:
        """Least-squares slope of log deviation over n in [n_min, n_max].

        Points at or below ``floor`` (relative to |target|) are rounding noise
        and are excluded.
        """
        scale = max(abs(self.target), 1.0)
        m = (self.n >= n_min) & (self.n <= n_max) & (self.deviation > floor * scale)
        if m.sum() < 3:
            raise ArithmeticError("too few resolvable deviations to fit a decay rate")
        slope, _ = np.polyfit(self.n[m], np.log(self.deviation[m]), 1)
        return float(slope)


def mmet_exact_curve(P: TransitionKernel, F, alpha, x: int, N: int) -> MMETCurve:
    """E_n = exp(-n Lambda(alpha F)) (P_f^n 1)(x) for n = 1..N and its distance to f_check(x)."""
    if N > 10_000:
        raise ValueError("N is capped at 10^4")
    K = scale_kernel(P, F, alpha)
    trip = principal_eigen(K)
    A = K.entries / trip.lam
    v = np.ones(P.n, dtype=A.dtype)
    E = np.empty(N, dtype=A.dtype)
    for k in range(N):
        v = A @ v
        E[k] = v[x]
    target = trip.check_f[x]
    dev = np.abs(E - target)
    pred = math.log(subdominant_ratio(K.entries)) if P.n > 1 else -math.inf
    return MMETCurve(np.arange(1, N + 1), E, dev, target, pred)


@dataclass(frozen=True)
class TabooSolve:
    eta: float
    A: tuple
    U: Optional[np.ndarray]
    feasible: bool
    radius: float


def _complement(n: int, A) -> tuple[np.ndarray, np.ndarray]:
    A = np.array(sorted(set(int(a) for a in A)), dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[A] = False
    return A, np.flatnonzero(mask)


def taboo_radius(P: TransitionKernel, W, A, eta: float) -> float:
    A, Ac = _complement(P.n, A)
    if len(Ac) == 0:
        return 0.0
    W = np.asarray(W, dtype=float)
    top = float(eta * W[Ac].max())
    M = np.exp(eta * W[Ac] - top)[:, None] * P.rows[np.ix_(Ac, Ac)]
    rho = perron_root(M)
    if rho == 0.0:
        return 0.0
    log_r = math.log(rho) + top
    return math.exp(log_r) if log_r < 700 else math.inf


def taboo_exp_functional(P: TransitionKernel, W, A, eta: float) -> TabooSolve:
    """U(x) = E_x[exp(eta sum_{t < tau_A} W(Phi(t)))] with tau_A the first hit at t >= 1."""
    Aidx, Ac = _complement(P.n, A)
    if len(Aidx) == 0:
        raise ValueError("taboo set must be nonempty")
    W = np.asarray(W, dtype=float)
    radius = taboo_radius(P, W, Aidx, eta)
    if radius >= FEASIBLE_RADIUS:
        return TabooSolve(eta, tuple(Aidx), None, False, radius)
    d = np.exp(eta * W)
    hitA = P.rows[:, Aidx].sum(axis=1)
    U = np.empty(P.n)
    if len(Ac):
        Pcc = P.rows[np.ix_(Ac, Ac)]
        # rows divided by exp(eta W): an M-matrix whose entries stay in [0, 1]
        lhs = np.diag(1.0 / d[Ac]) - Pcc
        U[Ac] = scipy.linalg.lu_solve(scipy.linalg.lu_factor(lhs), hitA[Ac])
        U[Aidx] = d[Aidx] * (hitA[Aidx] + P.rows[np.ix_(Aidx, Ac)] @ U[Ac])
    else:
        U[:] = d * hitA
    return TabooSolve(eta, tuple(Aidx), U, True, radius)


def max_regularity_eta(P: TransitionKernel, W, A, tol: float = 1e-9) -> float:
    """Supremum of eta with taboo radius < 1 (bisection); +inf if never reached."""
    Aidx, Ac = _complement(P.n, A)
    if len(Ac) == 0:
        return math.inf
    W = np.asarray(W, dtype=float)
    if taboo_radius(P, W, Aidx, 0.0) >= FEASIBLE_RADIUS:
        return 0.0
    if perron_root(P.rows[np.ix_(Ac, Ac)]) == 0.0:
        return math.inf
    lo, hi = 0.0, 1.0
    while taboo_radius(P, W, Aidx, hi) < FEASIBLE_RADIUS:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if taboo_radius(P, W, Aidx, mid) < FEASIBLE_RADIUS:
            lo = mid
        else:
            hi = mid
    return lo


def build_v4_from_dv2(P: TransitionKernel, V, A, eta: float):
    """Lyapunov function V*(x) = E_x[sum_{k=0}^{sigma_A} exp(eta V(Phi(k)) + eta k / 2)].

    sigma_A is the first hitting time of A at k >= 0.  The series is summed
    exactly by a linear solve on the complement of A.  Returns V* together
    with a (V4) certificate PV* <= exp(-eta/2) V* + b' 1_A, expressed with
    delta = 1 - exp(-eta/2).
    """
    from .drift import check_drift

    Aidx, Ac = _complement(P.n, A)
    if len(Aidx) == 0:
        raise ValueError("set A must be nonempty")
    V = np.asarray(V, dtype=float)
    g = np.exp(eta * V)
    grow = math.exp(0.5 * eta)
    Vs = g.copy()
    if len(Ac):
        Pcc = P.rows[np.ix_(Ac, Ac)]
        rad = grow * perron_root(Pcc)
        if rad >= FEASIBLE_RADIUS:
            raise ValueError(
                f"eta={eta!r} infeasible: exp(eta/2) times the taboo radius is {rad!r} >= 1; use a smaller eta"
            )
        rhs = g[Ac] + grow * P.rows[np.ix_(Ac, Aidx)] @ g[Aidx]
        Vs[Ac] = np.linalg.solve(np.eye(len(Ac)) / grow - Pcc, rhs / grow)
    rho = math.exp(-0.5 * eta)
    excess = P.rows @ Vs - rho * Vs
    b = max(float(excess[Aidx].max()), 0.0)
    cert = check_drift(P, "V4", Vs, None, Aidx, 1.0 - rho, b)
    return Vs, cert
