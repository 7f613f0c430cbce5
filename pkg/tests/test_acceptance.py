"""Acceptance suite: eight end-to-end checks at their stated tolerances.

Each check prints one ``ACCEPTANCE <k> PASS|FAIL`` line; the lines are also
collected and repeated in the pytest terminal summary.  Run directly with
``python tests/test_acceptance.py`` or through pytest.
"""

import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chaosbound.bounds import BoundSweepConfig, mc_cross_check, ratio_sweep
from chaosbound.cli import main as cli_main
from chaosbound.convergence import (ConvergenceConfig, a_m_coefficient, absolute,
                                    convergence_error, higher_chaos_scaling, polynomial)
from chaosbound.covariance import GaussianVector, gram_matrix
from chaosbound.gaussian import rhs_moment, subtracted_product_expr, wick_moment
from chaosbound.graphs import (build_clusters, enhance_graph, no_singleton_bound,
                               omega_star_member, random_admissible_graph, reduce_graph)

from conftest import random_psd
from test_gaussian import wick_oracle

RESULTS: list[str] = []
JOBS = max(1, os.cpu_count() or 1)


def report(k: int, title: str, ok: bool, detail: str, t0: float) -> None:
    line = f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'} {title}: {detail} ({time.time() - t0:.1f}s)"
    RESULTS.append(line)
    print(line)


def test_criterion_1_pairing_engine():
    t0 = time.time()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(500):
        K = int(rng.integers(1, 5))
        while True:
            n = rng.integers(0, 5, size=K)
            if n.sum() <= 8:
                break
        C = random_psd(rng, K)
        got, want = wick_moment(C, tuple(n)), wick_oracle(C, tuple(n))
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    ok = worst <= 1e-10 and time.time() - t0 < 60
    report(1, "pairing engine vs Hermite-expanded Isserlis", ok,
           f"500 fixtures, max rel error {worst:.2e}", t0)
    assert ok


def test_criterion_2_closed_form_and_monte_carlo():
    t0 = time.time()
    rng = np.random.default_rng(2)
    th = np.linspace(-10, 10, 2001)
    worst = 0.0
    for _ in range(20):
        C = random_psd(rng, 2)
        got = subtracted_product_expr(C, 1, 0)(th)
        want = np.exp(-th**2 * (C[0, 0] + C[1, 1]) / 2) * (np.exp(-th**2 * C[0, 1]) - 1)
        worst = max(worst, float(np.max(np.abs(got - want))))
    C = np.array([[1.0, 0.6], [0.6, 1.3]])
    g = GaussianVector(np.zeros(2), C)
    mc_ok = []
    for theta in (0.3, 1.0, 2.0):
        exact = complex(subtracted_product_expr(C, 1, 0)(theta))
        est = mc_cross_check(g, theta, 1, 0, samples=10**6, seed=17)
        mc_ok.append(est.agrees(exact, 4.0))
    ok = worst <= 1e-10 and all(mc_ok) and time.time() - t0 < 60
    report(2, "closed-form pair and Monte-Carlo", ok,
           f"max abs error {worst:.2e}, MC within 4 se at {sum(mc_ok)}/3 frequencies", t0)
    assert ok


def test_criterion_3_theta_uniform_sweep():
    t0 = time.time()
    cfg = BoundSweepConfig()  # all families, K <= 4, m <= 3, r <= 2, eps 2^-2..2^-8, theta in [0, 50]
    rep = ratio_sweep(cfg, jobs=JOBS)
    sups = [s["fitted_C"] for s in rep.summary]
    change = max(s["rel_change_near_to_full"] for s in rep.summary)
    finite = all(np.isfinite(sups)) and not rep.violations
    ok = finite and change < 1e-6 and time.time() - t0 < 600
    report(3, "sup lhs/rhs over the sweep", ok,
           f"{len(rep.summary)} cells, max sup {max(sups):.3e}, max rel change [0,5]->[0,50] "
           f"{change:.1e}, L={rep.L:g}", t0)
    assert ok


def test_criterion_4_rewrite_soundness(moll_eighth):
    t0 = time.time()
    rng = np.random.default_rng(4)
    eps = 0.125
    pool = np.array([0.0, 0.3, 0.6, 25.0, 25.4, 60.0, 61.0, 61.3, 150.0, 400.0])
    geoms = []
    for _ in range(12):
        K = int(rng.integers(2, 7))
        units = np.sort(rng.choice(pool, size=K, replace=False))
        gv = gram_matrix(moll_eighth, eps * units)
        cl = build_clusters(gv.points, 4, eps)
        geoms.append((gv, cl, {}))
    fails = []
    steps = 0
    for t in range(1000):
        gv, cl, rhs_cache = geoms[t % len(geoms)]
        m = int(rng.integers(0, 4))
        if m not in rhs_cache:
            rhs_cache[m] = rhs_moment(gv, m, leg_cap=64)
        g = random_admissible_graph(rng, gv, cl, m)
        red, c1 = reduce_graph(g, cl, m, 0.5)
        steps += len(c1)
        total = math.prod(c.factor for c in c1)
        if not all(c.holds for c in c1):
            fails.append(f"graph {t}: reduction certificate")
        if not omega_star_member(red, cl, m)[0]:
            fails.append(f"graph {t}: reduced graph not minimal")
        if cl.singletons:
            enh, c2 = enhance_graph(red, cl, m, 0.5)
            total *= math.prod(c.factor for c in c2)
            if not all(c.holds for c in c2):
                fails.append(f"graph {t}: enhancement certificate")
            if not all(d in (m, m + 1) for d in enh.degrees()):
                fails.append(f"graph {t}: degrees {enh.degrees().tolist()}")
        else:
            no_singleton_bound(gv, cl, m, 0.5)
        if not g.value() <= total * rhs_cache[m] * (1 + 1e-12):
            fails.append(f"graph {t}: |G| exceeds C_total * rhs")
    ok = not fails and time.time() - t0 < 120
    report(4, "reduction and enhancement certificates", ok,
           f"1000 graphs, {steps} reduction steps, {len(fails)} failures"
           + (f" (first: {fails[0]})" if fails else ""), t0)
    assert ok


def test_criterion_5_exact_chaos_scaling():
    t0 = time.time()
    rep = higher_chaos_scaling(2, 1, [2.0**-k for k in range(6, 11)], [0.5, 0.25, 0.125], alpha=0.3)
    slopes = rep.eps_slopes
    ok = all(s >= 0.6 for s, _ in slopes) and time.time() - t0 < 60
    txt = ", ".join(f"lambda={l:g}: {s:.3f} +- {se:.3f}" for l, (s, se) in zip(rep.lam_list, slopes))
    report(5, "exact third-chaos eps-slopes >= 0.6", ok, txt, t0)
    assert ok


def test_criterion_6_renormalized_convergence():
    t0 = time.time()
    rep = convergence_error(ConvergenceConfig(), jobs=JOBS)
    reg = rep.regression["x^2"].values()
    reg_ok = all(abs(v - 1) <= 0.05 for v in reg)
    ok = rep.positive and reg_ok and time.time() - t0 < 900
    txt = "; ".join(f"{k}: slope {s['slope']:.3f} CI [{s['ci_low']:.3f}, {s['ci_high']:.3f}]"
                    for k, s in rep.slopes.items())
    report(6, "renormalized error moments decay in eps", ok,
           f"{txt}; x^2 regression slopes in [{min(reg):.4f}, {max(reg):.4f}]", t0)
    assert ok


def laguerre_abs_oracle(m: int) -> float:
    """``E[|X| He_m(X)] / m!`` for standard X via t = x^2/2 and Gauss-Laguerre (exact for even m)."""
    t, w = np.polynomial.laguerre.laggauss(64)
    x = np.sqrt(2 * t)
    he = np.polynomial.hermite_e.hermeval(x, [0] * m + [1])
    return float(2 / math.sqrt(2 * math.pi) * np.dot(w, he)) / math.factorial(m)


def test_criterion_7_chaos_coefficients():
    t0 = time.time()
    a2 = a_m_coefficient(absolute(), 1.0, 2)
    oracle = laguerre_abs_oracle(2)
    abs_ok = abs(a2 - oracle) <= 1e-6 and abs(a2 - 1 / math.sqrt(2 * math.pi)) <= 1e-6
    even_ok = all(abs(a_m_coefficient(absolute(), 1.0, m) - laguerre_abs_oracle(m)) <= 1e-6
                  for m in (0, 4, 6))
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        coeffs = rng.normal(size=int(rng.integers(1, 8)))
        var = float(rng.uniform(0.3, 3.0))
        m = int(rng.integers(0, 8))
        d = np.polynomial.polynomial.polyder(coeffs, m) if m else coeffs
        mom = lambda k: 0.0 if k % 2 else var ** (k // 2) * math.prod(range(k - 1, 0, -2))
        want = sum(c * mom(k) for k, c in enumerate(d)) / math.factorial(m)
        got = a_m_coefficient(polynomial(coeffs), var, m)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    ok = abs_ok and even_ok and worst <= 1e-10
    report(7, "chaos coefficients", ok,
           f"a_2(|x|)={a2:.10f} vs 1/sqrt(2 pi)={1 / math.sqrt(2 * math.pi):.10f}; "
           f"polynomial max rel error {worst:.1e}", t0)
    assert ok


def test_criterion_8_cli_determinism(tmp_path, capsys):
    t0 = time.time()
    outputs = {"bound-sweep": "bound_sweep.csv", "converge": "converge.csv",
               "sandwich-check": "sandwich.csv"}
    same = {}
    for cmd, name in outputs.items():
        blobs = []
        for run in range(2):
            d = tmp_path / f"{cmd}-{run}"
            code = cli_main([cmd, "--seed", "5", "--out", str(d), "--jobs", str(JOBS)])
            blobs.append((code, (d / name).read_bytes()))
        same[cmd] = blobs[0] == blobs[1]
    capsys.readouterr()
    ok = all(same.values())
    report(8, "byte-identical CLI output with fixed seed", ok,
           ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()), t0)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
