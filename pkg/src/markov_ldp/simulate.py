"""Path sampling, empirical measures and Monte Carlo tail estimation.

Every replicate draws its uniforms from its own counter-based Philox stream
keyed by ``seed`` with the replicate index in the counter, so results do
not depend on batching or thread count.
"""

from __future__ import annotations

import math
import warnings
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ldp import entropy_rate_pair, mgf, solve_rate_point
from .markov_core import TransitionKernel, require_irreducible
from .spectral import principal_eigen, scale_kernel, tilted_chain

BATCH = 4096


def replicate_stream(seed: int, rep: int) -> np.random.Generator:
    if seed < 0 or rep < 0:
        raise ValueError("seed and replicate index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, rep]))


def _cumulative(rows: np.ndarray) -> np.ndarray:
    cum = np.cumsum(rows, axis=1)
    # everything from the last positive entry onward catches rounding in the total
    for i, r in enumerate(rows):
        last = np.flatnonzero(r > 0)[-1]
        cum[i, last:] = np.inf
    return cum


@dataclass(frozen=True)
class Trajectory:
    start: int
    steps: np.ndarray
    seed: int
    partial_sum_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def path(self) -> np.ndarray:
        return np.concatenate([[self.start], self.steps])

    def partial_sum(self, F, name: Optional[str] = None) -> float:
        """S_n = sum_{t < n} F(Phi(t))."""
        if name is not None and name in self.partial_sum_cache:
            return self.partial_sum_cache[name]
        s = float(np.sum(np.asarray(F, dtype=float)[self.path[:-1]]))
        if name is not None:
            self.partial_sum_cache[name] = s
        return s


def sample_path(P: TransitionKernel, x: int, n: int, seed: int) -> Trajectory:
    """n transitions from x by inverse-CDF sampling over each row in state order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = replicate_stream(seed, 0).random(n)
    cum = [list(r) for r in _cumulative(P.rows)]
    out = np.empty(n, dtype=np.int64)
    cur = int(x)
    for t in range(n):
        cur = bisect_right(cum[cur], u[t])
        out[t] = cur
    return Trajectory(int(x), out, seed)


@dataclass(frozen=True)
class EmpiricalPair:
    counts: np.ndarray
    n_steps: int

    @property
    def measure(self) -> np.ndarray:
        return self.counts / self.n_steps


def empirical_measures(traj: Trajectory) -> tuple[np.ndarray, EmpiricalPair]:
    """Occupation measure of Phi(0..n-1) and pair counts of (Phi(t), Phi(t+1)), t < n."""
    path = traj.path
    m = int(path.max()) + 1
    return _empirical(path, m)


def _empirical(path: np.ndarray, m: int) -> tuple[np.ndarray, EmpiricalPair]:
    n = len(path) - 1
    L = np.bincount(path[:-1], minlength=m) / n
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (path[:-1], path[1:]), 1)
    return L, EmpiricalPair(counts, n)


def symmetrized_pair_rate(P: TransitionKernel, pair: EmpiricalPair) -> float:
    """I_2 of an empirical pair measure after averaging its two marginals.

    The pair measure is rebuilt as pibar (.) Phat with pibar the marginal
    average and Phat the empirical rows (P itself on unvisited rows); its
    first marginal is then the reference used by the entropy rate.
    """
    G = pair.measure
    pibar = 0.5 * (G.sum(axis=1) + G.sum(axis=0))
    tot = pair.counts.sum(axis=1, keepdims=True)
    Phat = np.where(tot > 0, pair.counts / np.maximum(tot, 1), P.rows)
    return entropy_rate_pair(P, pibar[:, None] * Phat, marginal_tol=math.inf)


def pair_rate_convergence(P: TransitionKernel, traj: Trajectory,
                          checkpoints: Optional[Sequence[int]] = None) -> tuple[np.ndarray, np.ndarray]:
    """(checkpoints, I_2 of the symmetrized pair measure over the first k transitions)."""
    require_irreducible(P, aperiodic=True)
    if checkpoints is None:
        checkpoints = [int(10**e) for e in np.arange(2, math.log10(traj.n) + 1e-9, 0.5)]
    path = traj.path
    vals = []
    for k in checkpoints:
        if not 1 <= k <= traj.n:
            raise ValueError(f"checkpoint {k} outside 1..{traj.n}")
        _, pair = _empirical(path[: k + 1], P.n)
        vals.append(symmetrized_pair_rate(P, pair))
    return np.asarray(checkpoints), np.asarray(vals)


# ---------------------------------------------------------------------------
# replicate engine


def _run_block(cum: np.ndarray, F: np.ndarray, x: int, n: int, seed: int, reps: range):
    u = np.stack([replicate_stream(seed, r).random(n) for r in reps])
    cur = np.full(len(reps), x, dtype=np.int64)
    S = np.zeros(len(reps))
    for t in range(n):
        S += F[cur]
        cur = np.argmax(u[:, t, None] < cum[cur], axis=1)
    return S, cur


def simulate_sums(rows: np.ndarray, F, x: int, n: int, reps: int, seed: int,
                  threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """S_n and Phi(n) for ``reps`` independent paths; replicate r uses stream (seed, r)."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    F = np.asarray(F, dtype=float)
    cum = _cumulative(rows)
    blocks = [range(s, min(s + BATCH, reps)) for s in range(0, reps, BATCH)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: _run_block(cum, F, x, n, seed, b), blocks))
    else:
        parts = [_run_block(cum, F, x, n, seed, b) for b in blocks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


@dataclass(frozen=True)
class TailEstimate:
    value: float
    std_error: float
    reps: int
    method: str
    n: int
    c: float
    seed: int
    a: float = 0.0
    weight_mean: float = 1.0
    weight_check: bool = True
    prediction: Optional[float] = None

    @property
    def sample_variance(self) -> float:
        return self.std_error**2 * self.reps

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "reps": self.reps,
            "method": self.method,
            "n": self.n,
            "c": self.c,
            "seed": self.seed,
            "a": self.a,
            "weight_mean": self.weight_mean,
            "weight_check": self.weight_check,
            "prediction": self.prediction,
        }


def _hits(S: np.ndarray, n: int, c: float) -> np.ndarray:
    return S >= n * c - 1e-9 * max(1.0, abs(n * c))


def _summary(w: np.ndarray):
    reps = len(w)
    sd = float(np.std(w, ddof=1)) if reps > 1 else 0.0
    return float(np.mean(w)), sd / math.sqrt(reps)


def tail_estimate_naive(P: TransitionKernel, F, x: int, c: float, n: int, reps: int, seed: int,
                        threads: int = 1) -> TailEstimate:
    S, _ = simulate_sums(P.rows, F, x, n, reps, seed, threads)
    v, se = _summary(_hits(S, n, c).astype(float))
    return TailEstimate(v, se, reps, "naive", n, c, seed)


def tail_estimate_tilted(P: TransitionKernel, F, x: int, c: float, n: int, reps: int, seed: int,
                         a: Optional[float] = None, threads: int = 1) -> TailEstimate:
    """Importance sampling under the twisted kernel with exact eigen data.

    Along a path of n transitions the likelihood ratio is
    lambda^n f_check(x) exp(-a S_n) / f_check(Phi(n)).  The tilt a defaults
    to the saddle point of c; a = 0 reproduces the naive estimator.
    """
    F = np.asarray(F, dtype=float)
    if a is None:
        a = solve_rate_point(P, F, c).a
    trip, tw = tilted_chain(P, F, a)
    lam = float(np.real(trip.lam)) if a != 0 else 1.0
    logf = np.log(trip.check_f)
    S, last = simulate_sums(tw.kernel.rows, F, x, n, reps, seed, threads)
    logw = n * math.log(lam) + logf[x] - a * S - logf[last]
    w = np.exp(logw)
    v, se = _summary(w * _hits(S, n, c))
    wm, wse = _summary(w)
    ok = abs(wm - 1.0) <= 4 * wse or wse == 0 and abs(wm - 1.0) <= 1e-12
    if not ok:
        warnings.warn(f"mean likelihood ratio {wm:.6g} is more than 4 std errors from 1", RuntimeWarning)
    return TailEstimate(v, se, reps, "tilted", n, c, seed, float(a), wm, bool(ok))


@dataclass(frozen=True)
class MMETEstimate:
    estimate: float
    std_error: float
    target: float
    exact: float


def mmet_monte_carlo(P: TransitionKernel, F, a: float, x: int, n: int, reps: int, seed: int,
                     threads: int = 1) -> MMETEstimate:
    """Sample mean of exp(a S_n - n Lambda(aF)) against its limit f_check_a(x) and the exact value."""
    F = np.asarray(F, dtype=float)
    if n * abs(a) * np.ptp(F) > 20:
        warnings.warn("n |a| range(F) exceeds 20; estimator variance will be large", RuntimeWarning)
    trip = principal_eigen(scale_kernel(P, F, a))
    Lam = math.log(trip.lam) if a != 0 else 0.0
    S, _ = simulate_sums(P.rows, F, x, n, reps, seed, threads)
    est, se = _summary(np.exp(a * S - n * Lam))
    exact = float(np.real(mgf(P, F, a, x, n))) * math.exp(-n * Lam)
    return MMETEstimate(est, se, float(trip.check_f[x]), exact)
