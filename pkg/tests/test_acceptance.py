"""Acceptance suite: one PASS/FAIL line per criterion, shown in the pytest terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``, or as a script with
``python3 tests/test_acceptance.py``.
"""

import functools
import math
import sys
import time
import warnings
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
import scipy.optimize

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

from markov_ldp.drift import (
    check_drift,
    dv3_from_lyapunov,
    dv_implies_v_check,
    fit_drift_params,
    minimal_drift_set,
    supermartingale_check,
)
from markov_ldp.ldp import (
    bahadur_rao_lattice,
    entropy_rate_measure,
    entropy_rate_pair,
    exact_tail_dp,
    lambda_derivatives,
    lambda_of,
    legendre_dual_measure,
    mgf_decay_scan,
    solve_rate_point,
)
from markov_ldp.markov_core import perron_root, stationary
from markov_ldp.models import ou_grid, random_chain, smoluchowski_generator_formula, two_cluster, two_state
from markov_ldp.simulate import pair_rate_convergence, sample_path, symmetrized_pair_rate, tail_estimate_tilted
from markov_ldp.spectral import (
    build_v4_from_dv2,
    max_regularity_eta,
    mmet_exact_curve,
    nonlinear_generator,
    principal_eigen,
    scale_kernel,
    taboo_exp_functional,
    tilted_chain,
    _complement,
)


def criterion(k: int, title: str):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as e:
                line = f"FAIL criterion {k}: {title} ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
                ACCEPTANCE_LINES.append(line)
                print(line)
                raise
            line = f"PASS criterion {k}: {title} [{detail}; {time.perf_counter() - t0:.1f}s]"
            ACCEPTANCE_LINES.append(line)
            print(line)

        return wrapper

    return deco


def corpus(count: int, n_lo: int = 2, n_hi: int = 10, seed0: int = 0):
    for s in range(count):
        rng = np.random.default_rng(seed0 + s)
        n = int(rng.integers(n_lo, n_hi + 1))
        yield random_chain(n, float(rng.uniform(0.2, 1.0)), seed=seed0 + s), rng.normal(size=n)


BENCH = (two_state(0.1, 0.2), np.array([0.0, 1.0]))


@criterion(1, "eigen-triple residuals and normalizations on 200 chains")
def test_c01_eigen_identities():
    t0 = time.perf_counter()
    worst = 0.0
    for P, F in corpus(200):
        for a in (-1.0, 0.5, 1.0):
            t = principal_eigen(scale_kernel(P, F, a))
            worst = max(worst, t.residual_f, t.residual_mu,
                        abs(t.check_mu.sum() - 1), abs(t.check_mu @ t.check_f - 1))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-10, worst
    assert elapsed < 10, elapsed
    return f"worst {worst:.2e}"


@criterion(2, "multiplicative Poisson residual on the same corpus")
def test_c02_mult_poisson():
    worst = 0.0
    for P, F in corpus(200):
        for a in (-1.0, 0.5, 1.0):
            t = principal_eigen(scale_kernel(P, F, a))
            r = nonlinear_generator(P, np.log(t.check_f)) + a * F - math.log(t.lam)
            worst = max(worst, float(np.max(np.abs(r))))
    assert worst <= 1e-9, worst
    return f"worst {worst:.2e}"


@criterion(3, "mean ergodic curve decays at log|lambda2/lambda1| (20 chains, 5%)")
def test_c03_mmet_rate():
    worst = 0.0
    for s in range(20):
        P = two_cluster(6, 0.05, seed=s)
        F = np.random.default_rng(s).normal(size=6)
        c = mmet_exact_curve(P, F, 0.5, 0, 200)
        worst = max(worst, abs(c.fitted_slope(20, 200) / c.predicted_slope - 1))
    assert worst <= 0.05, worst
    return f"worst relative slope error {worst:.2e}"


def _mp_lambda(P, F, a, lam0, v0):
    # Newton on (M v = lam v, sum v = 1) from the double-precision pair
    n = P.n
    M = mp.matrix([[mp.exp(a * mp.mpf(F[i])) * mp.mpf(P.rows[i, j]) for j in range(n)] for i in range(n)])
    v = mp.matrix([mp.mpf(x) for x in v0 / v0.sum()])
    lam = mp.mpf(lam0)
    for _ in range(4):
        J = mp.zeros(n + 1, n + 1)
        r = mp.zeros(n + 1, 1)
        Mv = M * v
        for i in range(n):
            for j in range(n):
                J[i, j] = M[i, j] - (lam if i == j else 0)
            J[i, n] = -v[i]
            J[n, i] = 1
            r[i] = Mv[i] - lam * v[i]
        r[n] = sum(v) - 1
        d = mp.lu_solve(J, -r)
        for i in range(n):
            v[i] += d[i]
        lam += d[n]
    return mp.log(lam)


@criterion(4, "Lambda', Lambda'' against 30-digit central differences (1e-6 rel) and Lambda'' > 0")
def test_c04_derivatives():
    mp.mp.dps = 30
    h = mp.mpf("1e-5")
    worst = 0.0
    for P, F in corpus(20, seed0=400):
        for a in np.linspace(-1.0, 1.0, 5):
            d1, d2 = lambda_derivatives(P, F, float(a), check=True)
            vals = []
            for k in (-1, 0, 1):
                ak = mp.mpf(float(a)) + k * h
                t = principal_eigen(scale_kernel(P, F, float(ak)))
                vals.append(_mp_lambda(P, F, ak, t.lam, t.check_f))
            f1 = (vals[2] - vals[0]) / (2 * h)
            f2 = (vals[2] - 2 * vals[1] + vals[0]) / h**2
            e1 = abs(float(f1) - d1) / max(abs(d1), 1e-300)
            e2 = abs(float(f2) - d2) / d2
            worst = max(worst, e1 if abs(d1) > 1e-8 else 0.0, e2)
            assert d2 > 0
    assert worst <= 1e-6, worst
    return f"worst relative error {worst:.2e}"


@criterion(5, "duality triangle at pi_a on 20 chains, a in {+-0.5, +-1}")
def test_c05_duality():
    worst = 0.0
    for P, F in corpus(20, n_hi=8, seed0=500):
        for a in (-1.0, -0.5, 0.5, 1.0):
            trip, tw = tilted_chain(P, F, a)
            leg = legendre_dual_measure(P, tw.pi_twisted)
            ent = entropy_rate_pair(P, tw.pi_twisted[:, None] * tw.kernel.rows)
            ident = a * float(tw.pi_twisted @ F) - math.log(trip.lam)
            worst = max(worst, abs(leg - ent), abs(leg - ident), abs(ent - ident))
    assert worst <= 1e-6, worst
    return f"worst {worst:.2e}"


def _scan_oracle(P, nu):
    def obj(p):
        q = nu[0] * p / nu[1]
        Q = np.array([[1 - p, p], [q, 1 - q]])
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(Q > 0, Q * np.log(Q / P.rows), 0.0)
        return float(nu @ terms.sum(axis=1))

    hi = min(1.0, nu[1] / nu[0])
    grid = np.linspace(hi * 1e-4, hi, 10001)
    vals = np.array([obj(p) for p in grid])
    i = int(np.argmin(vals))
    res = scipy.optimize.minimize_scalar(obj, bounds=(grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]),
                                         method="bounded", options={"xatol": 1e-13})
    return min(res.fun, vals[i])


@criterion(6, "kernel-space entropy minimum vs 1-parameter scan (50 targets, 1e-5)")
def test_c06_entropy_scan():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        P = two_state(*rng.uniform(0.05, 0.95, 2))
        nu1 = rng.uniform(0.02, 0.98)
        nu = np.array([1 - nu1, nu1])
        worst = max(worst, abs(entropy_rate_measure(P, nu) - _scan_oracle(P, nu)))
    assert worst <= 1e-5, worst
    return f"worst {worst:.2e}"


@criterion(7, "lattice Bahadur-Rao on two_state(0.1,0.2), c = 0.7")
def test_c07_lattice_br():
    t0 = time.perf_counter()
    P, F = BENCH
    ratios = [bahadur_rao_lattice(P, F, 1, 0.7, n).predicted / exact_tail_dp(P, F, 1, 0.7, n)
              for n in (50, 100, 200, 400)]
    errs = [abs(r - 1) for r in ratios]
    assert 0.85 <= ratios[-1] <= 1.15, ratios
    assert all(b < a for a, b in zip(errs, errs[1:])), errs
    assert time.perf_counter() - t0 < 30
    return "ratios " + ", ".join(f"{r:.4f}" for r in ratios)


@criterion(8, "tilted Monte Carlo within 3 std errors and >= 100x variance reduction")
# log-weights have sd ~ 4 at this depth, so the weight-mean diagnostic fires while the tail estimate is fine
@pytest.mark.filterwarnings("ignore:mean likelihood ratio:RuntimeWarning")
def test_c08_tilted_mc():
    P, F = BENCH
    exact = exact_tail_dp(P, F, 1, 0.7, 200)
    est = tail_estimate_tilted(P, F, 1, 0.7, 200, 100_000, seed=20240501)
    z = abs(est.value - exact) / est.std_error
    assert z <= 3, z
    J = solve_rate_point(P, F, 0.7).J
    n = round(10 / J)
    p = exact_tail_dp(P, F, 1, 0.7, n)
    tilted = tail_estimate_tilted(P, F, 1, 0.7, n, 20_000, seed=7)
    reduction = p * (1 - p) / tilted.sample_variance
    assert reduction >= 100, reduction
    return f"|z| = {z:.2f}; n = {n}, variance reduction {reduction:.0f}x"


@criterion(9, "(DVk) => (Vk) on 100 fitted instances; supermartingale verdict = DV3 verdict")
def test_c09_drift_hierarchy():
    count = mism = 0
    seed = 3000
    while count < 100:
        rng = np.random.default_rng(seed)
        seed += 1
        n = int(rng.integers(3, 9))
        P = random_chain(n, 0.5, seed=seed)
        V = rng.uniform(0, 3, n)
        k = (2, 3, 4)[count % 3]
        W = rng.uniform(1, 2, n) if k == 3 else None
        C = minimal_drift_set(V, nonlinear_generator(P, V)) or tuple(range(n))
        fit = fit_drift_params(P, f"DV{k}", V, W, C)
        if fit is None:
            continue
        count += 1
        rep = dv_implies_v_check(P, V, W, C, *fit, k)
        assert rep.asserted and rep.linear_holds
        W3 = W if W is not None else np.ones(n)
        for b in (fit[1], 0.5 * fit[1]):
            sm, _ = supermartingale_check(P, V, W3, C, fit[0], b)
            mism += sm != check_drift(P, "DV3", V, W3, C, fit[0], b).holds
    assert mism == 0
    return "100 instances, 0 verdict mismatches"


@criterion(10, "constructed V* passes (V4) with rho = exp(-eta/2) on 20 (DV2) instances")
def test_c10_v4_construction():
    done, seed, worst = 0, 1000, 0.0
    while done < 20:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        P = random_chain(n, 0.5, seed=seed)
        seed += 1
        V = rng.uniform(0, 3, n)
        H = nonlinear_generator(P, V)
        C = tuple(int(i) for i in np.flatnonzero(H >= 0))
        if not 0 < len(C) < n or fit_drift_params(P, "DV2", V, None, C) is None:
            continue
        _, Ac = _complement(n, C)
        rad = perron_root(P.rows[np.ix_(Ac, Ac)])
        eta = min(1.0, 0.5 * (-2 * math.log(rad))) if rad > 0 else 1.0
        Vs, cert = build_v4_from_dv2(P, V, C, eta)
        assert cert.holds and cert.delta == pytest.approx(1 - math.exp(-eta / 2))
        r1 = float(np.max(Vs / np.exp(eta * V)))
        r2 = float(np.max(np.exp(eta * V) / Vs))
        assert math.isfinite(r1) and math.isfinite(r2)
        worst = max(worst, r1, r2)
        done += 1
    return f"largest norm ratio {worst:.3g}"


@criterion(11, "log U_eta <= V + c with finite c (OU grid and 10 random chains)")
def test_c11_regularity():
    cases = []
    m = ou_grid(0.5, 1.0)
    cases.append((m.P, m.V, m.W, m.C))
    seed = 2000
    while len(cases) < 11:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        P = random_chain(n, 0.5, seed=seed)
        seed += 1
        V = rng.uniform(0, 3, n)
        res = dv3_from_lyapunov(P, V)
        if res is None:
            continue
        cases.append((P, V, res[0], res[1].C))
    cs = []
    for P, V, W, C in cases:
        eta_max = max_regularity_eta(P, W, C)
        eta = 0.5 * eta_max if math.isfinite(eta_max) else 1.0
        ts = taboo_exp_functional(P, W, C, eta)
        assert ts.feasible
        c = float(np.max(np.log(ts.U) - V))
        assert math.isfinite(c) and np.all(np.log(ts.U) <= V + c + 1e-12)
        assert c < 10 * V.max()
        cs.append(c)
    return "c in [" + f"{min(cs):.3f}, {max(cs):.3f}]"


@criterion(12, "convexity of H and Lambda, pi(H(h)) >= 0 with equality iff constant (500 trials)")
def test_c12_convexity():
    rng = np.random.default_rng(12)
    violations = 0
    for trial in range(500):
        n = int(rng.integers(2, 9))
        P = random_chain(n, float(rng.uniform(0.2, 1)), seed=10_000 + trial)
        G1, G2 = rng.normal(scale=2, size=(2, n))
        t = rng.uniform()
        mix = nonlinear_generator(P, t * G1 + (1 - t) * G2)
        violations += np.any(mix > t * nonlinear_generator(P, G1) + (1 - t) * nonlinear_generator(P, G2) + 1e-9)
        F = rng.normal(size=n)
        a1, a2 = rng.uniform(-2, 2, 2)
        violations += lambda_of(P, F, t * a1 + (1 - t) * a2) > t * lambda_of(P, F, a1) + (1 - t) * lambda_of(P, F, a2) + 1e-9
        pi = stationary(P)
        violations += pi @ nonlinear_generator(P, G1) < -1e-9
        # strictly positive for nonconstant, zero for constant
        violations += pi @ nonlinear_generator(P, G1) <= 1e-12 and np.ptp(G1) > 1e-3
        violations += abs(pi @ nonlinear_generator(P, np.full(n, G1[0]))) > 1e-9
    assert violations == 0
    return "0 violations"


@criterion(13, "lattice mgf dichotomy: decay off 2pi/h, none at 2pi/h; nonlattice decays everywhere")
def test_c13_mgf_dichotomy():
    P, F = BENCH
    h = 1.0
    a = 0.5
    omegas = np.linspace(0.3, 2 * math.pi / h - 0.3, 25)
    scan = mgf_decay_scan(P, F, a, list(omegas) + [2 * math.pi / h], 1, 200)
    k = np.arange(50, 200)
    slopes = [np.polyfit(k, np.log(row[50:200]), 1)[0] for row in scan[:-1]]
    assert max(slopes) < -1e-3, max(slopes)
    top = scan[-1]
    assert abs(top[-1] / top[99] - 1) < 1e-9 and top[-1] > 0.1
    P3 = random_chain(3, 0.9, seed=1)
    F3 = np.array([0.0, 1.0, math.sqrt(2)])
    om3 = np.linspace(0.3, 4 * math.pi, 60)
    scan3 = mgf_decay_scan(P3, F3, a, om3, 0, 400)
    k3 = np.arange(100, 400)
    slopes3 = [np.polyfit(k3, np.log(row[100:400]), 1)[0] for row in scan3]
    assert max(slopes3) < -1e-3, max(slopes3)
    return f"lattice max slope {max(slopes):.3g}, nonlattice max slope {max(slopes3):.3g}"


@criterion(14, "OU chain passes (DV3) over the 3x3 (delta, sigma) matrix; Smoluchowski formula exact")
def test_c14_ou():
    eps = []
    for d in (0.1, 0.5, 1.0):
        for s in (0.5, 1.0, 2.0):
            m = ou_grid(d, s)
            assert m.certificate.holds and m.eps0 > 0
            eps.append(m.eps0)
            for x in (-3.0, 0.0, 1.5):
                assert smoluchowski_generator_formula(d * x, d, s) == -0.5 * (d * x) ** 2 / s**2 + 0.5 * d
    return "eps0 values " + ",".join(f"2^{int(math.log2(e))}" for e in eps)


@criterion(15, "pair-empirical rate below 1e-3 by n = 1e6; exactly 0 at pi (.) P")
def test_c15_pair_rate():
    P = two_state(0.1, 0.2)
    ks, vals = pair_rate_convergence(P, sample_path(P, 0, 10**6, seed=15))
    assert ks[-1] == 10**6 and vals[-1] < 1e-3 and vals[-1] < vals[0]
    slope = np.polyfit(np.log(ks), np.log(vals), 1)[0]
    assert slope < 0
    G = stationary(P)[:, None] * P.rows
    assert entropy_rate_pair(P, G) == 0.0
    return f"I2 at 1e6 = {vals[-1]:.2e}, log-log slope {slope:.2f}"


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                fn()
            except BaseException:
                failed += 1
    sys.exit(1 if failed else 0)
