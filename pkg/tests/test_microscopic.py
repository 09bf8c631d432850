from __future__ import annotations

import math

import numpy as np
import pytest

from cwpotts.disorder import CouplingDistribution, sample_couplings
from cwpotts.errors import ArgumentError, SizeGuardError
from cwpotts.lumped_chain import build_chain, enumerate_lattice
from cwpotts.microscopic import (
    ModelSpec,
    all_configurations,
    empirical_measure,
    hamiltonian,
    metastable_sets,
    metropolis_kernel,
    simulate_hitting_time,
)
from cwpotts.potential_theory import equilibrium_potential, mean_hitting_time


def test_configuration_order():
    c = all_configurations(2, 3)
    assert c.shape == (9, 2)
    assert c[5].tolist() == [1, 2]


def test_size_guard():
    with pytest.raises(SizeGuardError):
        all_configurations(13, 3)


def test_hamiltonian_small_cases():
    m = ModelSpec(2, 3, 1.0)
    assert hamiltonian(m, np.array([1, 1])) == pytest.approx(-0.5)
    assert hamiltonian(m, np.array([0, 2])) == 0.0
    assert hamiltonian(ModelSpec(1, 3, 1.0), np.array([2])) == 0.0


def test_annealed_hamiltonian_equals_pair_sum():
    N, q = 5, 3
    configs = all_configurations(N, q)
    direct = np.array([-sum(s[i] == s[j] for i in range(N) for j in range(i + 1, N)) / N
                       for s in configs])
    assert np.allclose(hamiltonian(ModelSpec(N, q, 1.0), configs), direct, atol=1e-14)


def test_quenched_one_matches_annealed():
    N, q = 5, 3
    J = sample_couplings(CouplingDistribution.parse("one"), N, 0)
    configs = all_configurations(N, q)
    assert np.allclose(hamiltonian(ModelSpec(N, q, 1.0, J), configs),
                       hamiltonian(ModelSpec(N, q, 1.0), configs), atol=1e-14)


def test_lipschitz_in_one_coupling():
    N, q = 6, 3
    J = sample_couplings(CouplingDistribution.parse("gauss:1"), N, 4)
    configs = all_configurations(N, q)
    base = hamiltonian(ModelSpec(N, q, 1.0, J), configs)
    J.entries[3] += 0.7
    moved = hamiltonian(ModelSpec(N, q, 1.0, J), configs)
    assert np.max(np.abs(moved - base)) <= 0.7 / N + 1e-14


def test_empirical_measure():
    assert empirical_measure([0, 2, 2, 1], 3).counts == (1, 1, 2)


def test_kernel_reversible():
    for model in (ModelSpec(5, 3, 2.0),
                  ModelSpec(5, 3, 2.0, sample_couplings(CouplingDistribution.parse("pois:0.5"), 5, 1))):
        chain = metropolis_kernel(model)
        assert chain.reversible_check
        assert chain.row_sum_error() <= 1e-12


def test_single_site_kernel():
    chain = metropolis_kernel(ModelSpec(1, 3, 1.0))
    assert np.allclose(chain.kernel.toarray(), np.full((3, 3), 1 / 3))


def test_metastable_sets_from_m0():
    sets = metastable_sets(ModelSpec(6, 3, 2.9))
    assert sets.transition == "from_m0"
    assert sets.A_points[0].counts == (2, 2, 2)
    assert sorted(p.counts for p in sets.B_points) == [(1, 1, 4), (1, 4, 1), (4, 1, 1)]
    assert sets.A.size == math.factorial(6) // 8


def test_metastable_sets_reject_high_temperature():
    with pytest.raises(ArgumentError):
        metastable_sets(ModelSpec(6, 3, 1.0))


def test_lumpability_and_fibre_constant_potential():
    N, q, beta = 6, 3, 2.9
    model = ModelSpec(N, q, beta)
    micro = metropolis_kernel(model)
    sets = metastable_sets(model)
    sol = equilibrium_potential(micro, sets.A, sets.B)
    lumped = build_chain(N, q, beta)
    lat = enumerate_lattice(N, q)
    lsol = equilibrium_potential(lumped, [lat.index(p) for p in sets.A_points],
                                 [lat.index(p) for p in sets.B_points])
    norm_micro = sol.log_capacity - micro.log_partition
    norm_lumped = lsol.log_capacity - lumped.log_partition
    assert norm_micro == pytest.approx(norm_lumped, abs=1e-9)
    counts = np.stack([(micro.states == c).sum(axis=1) for c in range(q)], axis=1)
    h_lumped = lsol.h[lat.index(counts)]
    assert np.allclose(sol.h, h_lumped, atol=1e-10)


def test_simulation_agrees_with_exact():
    model = ModelSpec(6, 3, 2.9)
    chain = metropolis_kernel(model)
    sets = metastable_sets(model)
    ht = mean_hitting_time(chain, sets.A, sets.B)
    summ = simulate_hitting_time(model, (chain.states[ht.A], ht.nu), sets.B_points, 11, 2000)
    assert abs(summ.mean - ht.time) <= 3 * summ.se
    assert summ.censored_count == 0


def test_simulation_index_target_matches_fibre_target():
    model = ModelSpec(5, 3, 2.9)
    sets = metastable_sets(model, "from_m0")
    start = np.array([0, 0, 1, 1, 2])
    a = simulate_hitting_time(model, start, sets.B_points, 3, 50)
    b = simulate_hitting_time(model, start, sets.B, 3, 50)
    assert np.array_equal(a.samples, b.samples)


def test_simulation_reproducible_across_workers():
    model = ModelSpec(6, 3, 2.9)
    sets = metastable_sets(model)
    start = np.array([0, 0, 1, 1, 2, 2])
    one = simulate_hitting_time(model, start, sets.B_points, 5, 40)
    two = simulate_hitting_time(model, start, sets.B_points, 5, 40, workers=2)
    assert np.array_equal(one.samples, two.samples)


def test_step_cap_censors():
    model = ModelSpec(6, 3, 2.9)
    sets = metastable_sets(model)
    summ = simulate_hitting_time(model, np.array([0, 0, 1, 1, 2, 2]), sets.B_points, 5, 20,
                                 step_cap=1)
    assert summ.partial and summ.censored_count + int(np.sum(summ.samples < 1)) >= 1


def test_start_in_target_is_zero():
    model = ModelSpec(6, 3, 2.9)
    sets = metastable_sets(model)
    summ = simulate_hitting_time(model, np.array([0, 0, 0, 0, 1, 2]), sets.B_points, 5, 3)
    assert summ.mean == 0.0


def test_quenched_simulation_runs_at_large_N():
    N = 60
    J = sample_couplings(CouplingDistribution.parse("gauss:0.04"), N, 2)
    model = ModelSpec(N, 3, 2.9, J)
    sets = metastable_sets(model)
    start = np.repeat(np.arange(3), sets.A_points[0].counts)
    summ = simulate_hitting_time(model, start, sets.B_points, 9, 3, step_cap=20_000)
    assert summ.n == 3
