"""Lyapunov drift conditions (V2)-(V4), (DV2)-(DV4) and Condition (U).

Linear kinds bound the generator PV - V, multiplicative kinds bound the
nonlinear generator H(V) = log(P e^V) - V.  In both cases the right-hand
side is -delta * w + b * 1_C with w equal to 1, W or V for k = 2, 3, 4.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .markov_core import SmallSetCertificate, TransitionKernel, small_set_certificate, stationary
from .spectral import nonlinear_generator

SLACK_TOL = 1e-10
KINDS = ("V2", "V3", "V4", "DV2", "DV3", "DV4")


@dataclass(frozen=True)
class DriftCertificate:
    kind: str
    V: np.ndarray
    W: Optional[np.ndarray]
    C: tuple
    delta: float
    b: float
    slack: np.ndarray
    holds: bool
    small_set: Optional[SmallSetCertificate] = None

    @property
    def violating_states(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.slack < -SLACK_TOL))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "params": {"delta": self.delta, "b": self.b, "C": list(self.C)},
            "V": self.V.tolist(),
            "W": None if self.W is None else self.W.tolist(),
            "slack": self.slack.tolist(),
            "holds": self.holds,
        }
        if self.small_set is not None:
            d["small_set"] = {
                "t": self.small_set.t,
                "epsilon": self.small_set.epsilon,
                "nu": self.small_set.nu.tolist(),
            }
        return d


def _parts(P: TransitionKernel, kind: str, V, W):
    if kind not in KINDS:
        raise ValueError(f"unknown drift kind {kind!r}; expected one of {KINDS}")
    V = np.asarray(V, dtype=float)
    if kind.startswith("DV"):
        lhs = nonlinear_generator(P, V)
    else:
        lhs = P.rows @ V - V
    k = kind[-1]
    if k == "2":
        w = np.ones(P.n)
    elif k == "3":
        if W is None:
            raise ValueError(f"{kind} needs a weight function W")
        w = np.asarray(W, dtype=float)
    else:
        w = V
    return V, lhs, w


def _mask(n: int, C) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[list(C)] = True
    return m


def check_drift(P: TransitionKernel, kind: str, V, W, C, delta: float, b: float) -> DriftCertificate:
    """Evaluate one drift inequality pointwise and attach a small-set certificate for C."""
    V, lhs, w = _parts(P, kind, V, W)
    C = tuple(sorted(set(int(c) for c in C)))
    inC = _mask(P.n, C)
    slack = (-delta * w + b * inC) - lhs
    holds = bool(slack.min() >= -SLACK_TOL)
    ss = small_set_certificate(P, C, 2 * P.n) if C else None
    Wout = None if W is None else np.asarray(W, dtype=float)
    return DriftCertificate(kind, V, Wout, C, float(delta), float(b), slack, holds, ss)


def fit_drift_params(P: TransitionKernel, kind: str, V, W, C) -> Optional[tuple[float, float]]:
    """Tightest (delta, b) for the given V, W, C, or None when no negative drift exists off C.

    delta is capped at 1 when C is the whole space (the inequality is then
    vacuous off C).
    """
    V, lhs, w = _parts(P, kind, V, W)
    inC = _mask(P.n, C)
    if inC.all():
        delta = 1.0
    else:
        delta = float(np.min(-lhs[~inC] / w[~inC]))
        if not delta > 0:
            return None
    b = float(np.max(lhs[inC] + delta * w[inC])) if inC.any() else 0.0
    return delta, max(b, 0.0)


@dataclass(frozen=True)
class ImplicationReport:
    multiplicative: DriftCertificate
    linear: Optional[DriftCertificate]
    asserted: bool

    @property
    def linear_holds(self) -> Optional[bool]:
        return None if self.linear is None else self.linear.holds


def dv_implies_v_check(P: TransitionKernel, V, W, C, delta: float, b: float, k: int) -> ImplicationReport:
    """Recheck a passing (DVk) certificate as (Vk) with the same constants.

    Jensen gives PV <= log P e^V, so the linear inequality must follow.  A
    failing (DVk) instance yields a report that asserts nothing.
    """
    dv = check_drift(P, f"DV{k}", V, W, C, delta, b)
    if not dv.holds:
        return ImplicationReport(dv, None, False)
    lin = check_drift(P, f"V{k}", V, W, C, delta, b)
    if not lin.holds:
        raise AssertionError(f"(DV{k}) holds but (V{k}) fails at states {lin.violating_states}")
    return ImplicationReport(dv, lin, True)


def supermartingale_check(P: TransitionKernel, V, W, C, delta: float, b: float) -> tuple[bool, np.ndarray]:
    """One-step supermartingale inequality log P e^V <= V - delta W + b 1_C, checked in log domain."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    inC = _mask(P.n, C)
    log_pev = nonlinear_generator(P, V) + V
    slack = (V - delta * W + b * inC) - log_pev
    return bool(slack.min() >= -SLACK_TOL), slack


def sublevel_set(W, r: float) -> tuple:
    W = np.asarray(W, dtype=float)
    return tuple(int(i) for i in np.flatnonzero(W <= r))


def dv3_from_lyapunov(P: TransitionKernel, V, C=None):
    """Build a (DV3) weight W >= 1 from the drift of V and certify it.

    Off C the weight is W = max(1, -H(V)/delta_hat) with delta_hat the
    smallest negative drift off C; on C it is 1.  When C is not given the
    smallest sublevel set of V outside of which H(V) < 0 is used.  Returns
    None when no such proper set exists.
    """
    V = np.asarray(V, dtype=float)
    H = nonlinear_generator(P, V)
    if C is None:
        C = minimal_drift_set(V, H)
        if C is None:
            return None
    inC = _mask(P.n, C)
    if inC.all() or np.any(H[~inC] >= 0):
        return None
    delta_hat = float(np.min(-H[~inC]))
    W = np.ones(P.n)
    W[~inC] = np.maximum(1.0, -H[~inC] / delta_hat)
    fit = fit_drift_params(P, "DV3", V, W, C)
    if fit is None:
        return None
    cert = check_drift(P, "DV3", V, W, C, *fit)
    return W, cert


def minimal_drift_set(V, H) -> Optional[tuple]:
    """Smallest sublevel set C_V(r) with H < 0 outside it (None if that is everything)."""
    V = np.asarray(V, dtype=float)
    bad = np.flatnonzero(H >= 0)
    r = V[bad].max() if len(bad) else V.min()
    C = sublevel_set(V, r)
    if len(C) == len(V):
        return None
    return C


@dataclass(frozen=True)
class ConditionUReport:
    T1: int
    T2: int
    b0: float
    doeblin_deltas: np.ndarray
    holds: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "holds", bool(math.isfinite(self.b0)))


def _averaged_powers(P: TransitionKernel, T1: int, T2: int):
    Pt = np.eye(P.n)
    avg = np.zeros((P.n, P.n))
    PT1 = None
    for t in range(1, max(T1, T2) + 1):
        Pt = Pt @ P.rows
        if t <= T2:
            avg += Pt
        if t == T1:
            PT1 = Pt.copy()
    return PT1, avg / T2


def check_condition_U(P: TransitionKernel, T1: int, T2: int, n_max: int = 200) -> ConditionUReport:
    """Smallest b0 with P^T1(x, y') <= b0 (1/T2) sum_{t=1}^{T2} P^t(y, y') over singletons.

    The Doeblin sequence delta_n = max |P^n(x,y') - pi(y')| / pi(y') is
    reported for n = 1..n_max when the chain is irreducible.
    """
    if not 1 <= T1 <= T2:
        raise ValueError("need 1 <= T1 <= T2")
    num, den = _averaged_powers(P, T1, T2)
    b0 = 0.0
    for yp in range(P.n):
        top = num[:, yp].max()
        low = den[:, yp].min()
        if top == 0:
            continue
        if low <= 0:
            b0 = math.inf
            break
        b0 = max(b0, top / low)
    deltas = np.array([])
    try:
        pi = stationary(P)
    except ValueError:
        pi = None
    if pi is not None:
        Pn = np.eye(P.n)
        out = []
        for _ in range(n_max):
            Pn = Pn @ P.rows
            out.append(float(np.max(np.abs(Pn - pi[None, :]) / pi[None, :])))
        deltas = np.array(out)
    return ConditionUReport(T1, T2, b0, deltas)


def condition_U_subset_b0(P: TransitionKernel, T1: int, T2: int) -> float:
    """Exhaustive-subset version of the Condition (U) constant (n <= 8 only)."""
    if P.n > 8:
        raise ValueError("exhaustive subset enumeration limited to n <= 8")
    num, den = _averaged_powers(P, T1, T2)
    b0 = 0.0
    for r in range(1, P.n + 1):
        for A in itertools.combinations(range(P.n), r):
            a_num = num[:, A].sum(axis=1).max()
            a_den = den[:, A].sum(axis=1).min()
            if a_num == 0:
                continue
            if a_den <= 0:
                return math.inf
            b0 = max(b0, a_num / a_den)
    return b0


def condition_U_lyapunov(P: TransitionKernel, V0, T1: int, r: float = 2.0, eps: Optional[float] = None):
    """V = 1 + log E_x[exp(eps sum_{i<T1} r^i V0(Phi(i)))] from the Condition (U) construction.

    eps defaults to half the largest value allowed by both
    eps <= T1^{-1} r^{1-T1} and q r^{T1-1} eps < 1 with q = r/(r-1).
    Returns (V, delta) where delta = 1 - 1/r is the intended (DV4) rate.
    """
    V0 = np.asarray(V0, dtype=float)
    q = r / (r - 1.0)
    if eps is None:
        eps = 0.5 * min(1.0 / (T1 * r ** (T1 - 1)), 1.0 / (q * r ** (T1 - 1)))
    log_acc = np.zeros(P.n)
    # backward recursion h_i = exp(eps r^i V0) P h_{i+1}, carried in log form
    for i in range(T1 - 1, -1, -1):
        if i == T1 - 1:
            log_acc = eps * r**i * V0
        else:
            log_acc = eps * r**i * V0 + nonlinear_generator(P, log_acc) + log_acc
    return 1.0 + log_acc, 1.0 - 1.0 / r
