"""End-to-end acceptance checks, one test per criterion.

Every test appends a ``criterion k: PASS|FAIL ...`` line that the conftest
hook prints in the terminal summary, then asserts at the stated tolerance.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_reversible_chain
from cwpotts.concentration import (
    annealed_gap_report,
    annealed_reference,
    compute_realizations,
    empirical_tail_report,
)
from cwpotts.disorder import CouplingDistribution, annealed_identity_check, make_rng
from cwpotts.landscape import (
    classify_regime,
    critical_temperatures,
    hessian_index,
    minima,
    saddle_points,
)
from cwpotts.lumped_chain import build_chain, enumerate_lattice
from cwpotts.microscopic import ModelSpec, metastable_sets, metropolis_kernel
from cwpotts.potential_theory import (
    absorption_times,
    dirichlet_bound,
    equilibrium_potential,
    harmonic_flow,
    mean_hitting_time,
    metastability_ratio,
    path_flow,
    thomson_bound,
)

Q, BETA = 3, 2.9
GAUSS = CouplingDistribution.parse("gauss:0.04")
N_REAL = 200
SEED = 1


def record(k: int, ok: bool, msg: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
    assert ok, msg


@pytest.fixture(scope="module")
def random_chains():
    return [random_reversible_chain(seed) for seed in range(100)]


@pytest.fixture(scope="module")
def quenched():
    t0 = time.perf_counter()
    recs = compute_realizations(8, Q, BETA, GAUSS, N_REAL, SEED)
    ref = annealed_reference(8, Q, BETA)
    return recs, ref, time.perf_counter() - t0


def test_criterion_01_lumpability():
    t0 = time.perf_counter()
    N = 6
    model = ModelSpec(N, Q, BETA)
    micro = metropolis_kernel(model)
    sets = metastable_sets(model)
    # fibres of m0,N and m1,N
    cap_micro = (equilibrium_potential(micro, sets.fibres[0], sets.fibres[1]).log_capacity
                 - micro.log_partition)
    lumped = build_chain(N, Q, BETA)
    lat = enumerate_lattice(N, Q)
    sol = equilibrium_potential(lumped, [lat.index(sets.lattice[0])],
                                [lat.index(sets.lattice[1])])
    cap_lumped = sol.log_capacity - lumped.log_partition
    rel = abs(math.expm1(cap_micro - cap_lumped))
    dt = time.perf_counter() - t0
    record(1, rel <= 1e-9 and dt < 10,
           f"lumpability q=3 N=6: {micro.n_states} vs {lumped.n_states} states, "
           f"relative error {rel:.2e}, {dt:.2f} s")


def test_criterion_02_golden_formula(random_chains):
    t0 = time.perf_counter()
    worst = 0.0
    for chain in random_chains:
        A, B = [0, 1, 2], [25, 26, 27]
        ht = mean_hitting_time(chain, A, B)
        direct = float(ht.nu @ absorption_times(chain, B)[ht.A])
        worst = max(worst, abs(ht.time / direct - 1.0))
    dt = time.perf_counter() - t0
    record(2, worst <= 1e-9 and dt < 5,
           f"golden formula on 100 random chains: max relative error {worst:.2e}, {dt:.2f} s")


def test_criterion_03_variational_sandwich(random_chains):
    rng = np.random.default_rng(0)
    sandwich_ok, worst_eq = True, 0.0
    for chain in random_chains:
        A, B = [0, 1], [28, 29]
        sol = equilibrium_potential(chain, A, B)
        cap = sol.capacity
        worst_eq = max(worst_eq,
                       abs(dirichlet_bound(chain, A, B, sol.h) / cap - 1),
                       abs(thomson_bound(chain, A, B, harmonic_flow(chain, sol)) / cap - 1))
        for _ in range(5):
            f = np.clip(sol.h + 0.2 * rng.normal(size=chain.n_states), 0, 1)
            f[A], f[B] = 1.0, 0.0
            sandwich_ok &= dirichlet_bound(chain, A, B, f) >= cap * (1 - 1e-12)
        # A shortest path from A to B gives an admissible unit flow.
        path = _shortest_path(chain, 0, 29)
        sandwich_ok &= thomson_bound(chain, A, B, path_flow(chain, path)) <= cap * (1 + 1e-12)
    record(3, sandwich_ok and worst_eq <= 1e-10,
           f"variational sandwich holds={sandwich_ok}, harmonic attainment error {worst_eq:.2e}")


def _shortest_path(chain, src: int, dst: int) -> list[int]:
    off = chain.off_diagonal()
    prev = {src: -1}
    frontier = [src]
    while dst not in prev:
        nxt = []
        for x in frontier:
            for y in off.indices[off.indptr[x]:off.indptr[x + 1]].tolist():
                if y not in prev:
                    prev[y] = x
                    nxt.append(y)
        frontier = nxt
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def test_criterion_04_landscape_numbers():
    critical_temperatures.cache_clear()
    t0 = time.perf_counter()
    b = critical_temperatures(3)
    errs = {"beta2": abs(b.beta2 - 4 * math.log(2)), "beta3": abs(b.beta3 - 3.0),
            "beta4": abs(b.beta4 - 3.0)}
    beta4_exact = all(critical_temperatures(q).beta4 == q for q in (3, 4, 5))
    points_ok, count = True, 0
    for q in (3, 4, 5):
        c = critical_temperatures(q)
        # one temperature inside every non-degenerate regime above beta1
        grid = {(c.beta1 + c.beta2) / 2, (c.beta2 + c.beta3) / 2, (c.beta3 + c.beta4) / 2,
                q + 0.5}
        for beta in sorted(grid):
            pts = minima(beta, q) + saddle_points(beta, q)
            for p in pts:
                idx, degenerate = hessian_index(p.location, beta)
                want = 1 if p.label.startswith("z") else 0
                points_ok &= p.gradient_norm <= 1e-9 and idx == want and not degenerate
                count += 1
    dt = time.perf_counter() - t0
    ok = beta4_exact and max(errs.values()) <= 1e-8 and points_ok and dt < 2
    record(4, ok, f"q=3 errors {', '.join(f'{k} {v:.1e}' for k, v in errs.items())}; "
                  f"{count} critical points checked ok={points_ok}; {dt:.2f} s")


def test_criterion_05_scaling():
    t0 = time.perf_counter()
    Ns = list(range(50, 201, 25))
    ys = []
    for N in Ns:
        chain = build_chain(N, Q, BETA)
        lat = enumerate_lattice(N, Q)
        sets = metastable_sets(ModelSpec(N, Q, BETA), "from_m0")
        ht = mean_hitting_time(chain, [lat.index(p) for p in sets.A_points],
                               [lat.index(p) for p in sets.B_points])
        ys.append(ht.log_time / (BETA * N))
    slope, intercept = np.polyfit(1.0 / np.array(Ns), ys, 1)
    target = classify_regime(BETA, Q).barrier((0, 1), 0)
    rel = abs(intercept - target) / target
    dt = time.perf_counter() - t0
    record(5, rel <= 0.05 and dt < 120,
           f"extrapolated ln E[tau]/(beta N) = {intercept:.4e} vs c01 - F(m0) = {target:.4e}, "
           f"relative error {rel:.3g}, {dt:.1f} s")


def test_criterion_06_annealed_identity():
    t0 = time.perf_counter()
    v, beta, N = 0.04, 2.9, 8
    sigma = np.array([0, 0, 0, 1, 1, 2, 2, 2])
    chk = annealed_identity_check(GAUSS, N, beta, sigma, 10, 0, q=3)
    closed = math.exp(chk.pairs * v * beta**2 / (2 * N**2))
    gauss_err = abs(chk.exact / closed - 1)
    ber = CouplingDistribution.parse("ber:0.5")
    sig20 = make_rng(SEED, 3).integers(0, 3, size=20)
    mc = annealed_identity_check(ber, 20, 1.0, sig20, 100_000, SEED, q=3)
    dt = time.perf_counter() - t0
    record(6, gauss_err <= 1e-14 and abs(mc.z) <= 3 and dt < 30,
           f"gaussian closed-form error {gauss_err:.1e}; bernoulli z = {mc.z:+.2f}; {dt:.2f} s")


def test_criterion_07_concentration_envelope(quenched):
    recs, ref, dt0 = quenched
    t0 = time.perf_counter()
    rep = empirical_tail_report("log_z_capacity", 8, Q, BETA, GAUSS, N_REAL, SEED,
                                records=recs, annealed=ref)
    dt = dt0 + time.perf_counter() - t0
    gap = max(f - b for f, b in zip(rep.empirical, rep.bound))
    record(7, rep.passed and rep.n_failed == 0 and dt < 600,
           f"ln(Z cap) tail: max(empirical - bound) = {gap:+.3f}, min bound {min(rep.bound):.3f}, "
           f"violations {rep.violations}; {dt:.0f} s")


def test_criterion_08_annealed_gap(quenched):
    recs, ref, dt0 = quenched
    t0 = time.perf_counter()
    gap = annealed_gap_report(8, Q, BETA, GAUSS, N_REAL, SEED, records=recs, annealed=ref)
    dt = dt0 + time.perf_counter() - t0
    record(8, gap.within and dt < 600,
           f"mean ln E[tau] - ln E~[tau~] = {gap.gap:+.4f} in [{gap.window[0]:.4f}, "
           f"{gap.window[1]:.4f}]; {dt:.0f} s")


def test_criterion_09_localization(quenched):
    recs, ref, _ = quenched
    gap = annealed_gap_report(8, Q, BETA, GAUSS, N_REAL, SEED, records=recs, annealed=ref)
    lo, hi = gap.localization_range
    record(9, gap.localization_within,
           f"harmonic sum / mu[S_A] over {gap.n_xi} realizations with Xi: [{lo:.4f}, {hi:.4f}] "
           f"vs [0.95, 1.05]")


def test_criterion_10_metastability_trend():
    Ns = list(range(20, 81, 10))
    vals = []
    for N in Ns:
        chain = build_chain(N, Q, BETA)
        lat = enumerate_lattice(N, Q)
        sets = metastable_sets(ModelSpec(N, Q, BETA))
        M = [[lat.index(p)] for p in sets.lattice.values()]
        vals.append(math.log(metastability_ratio(chain, M)) / N)
    c = -max(vals)
    trend = np.polyfit(Ns, vals, 1)[0]
    record(10, c > 0 and trend < 0,
           f"log(ratio)/N from {vals[0]:+.4f} (N={Ns[0]}) to {vals[-1]:+.4f} (N={Ns[-1]}); "
           f"fitted c = {c:+.4f}, trend slope {trend:+.2e}")
