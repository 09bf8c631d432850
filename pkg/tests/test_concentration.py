from __future__ import annotations

import math

import numpy as np
import pytest

from cwpotts.concentration import (
    FUNCTIONALS,
    annealed_gap_report,
    annealed_reference,
    chernoff_tail_bound,
    compute_realizations,
    empirical_tail_report,
    fit_subgaussian_envelope,
    legendre,
    symmetrized_cgf,
)
from cwpotts.disorder import CouplingDistribution
from cwpotts.errors import ArgumentError, DomainError

GAUSS = CouplingDistribution.parse("gauss:0.04")


def _legendre_grid(dist, t):
    lam = np.linspace(0.0, 50.0, 2_000_001)
    return float(np.max(t * lam - symmetrized_cgf(dist, lam)))


class TestLegendre:
    def test_gaussian_closed_form(self):
        for t in (0.01, 0.3, 2.0):
            assert legendre(GAUSS, t) == pytest.approx(t * t / (4 * 0.04), rel=1e-10)

    @pytest.mark.parametrize("text,t", [("ber:0.5", 0.4), ("ber:0.2", 1.0), ("pois:0.5", 0.7),
                                        ("pois:1", 2.5)])
    def test_against_grid_oracle(self, text, t):
        d = CouplingDistribution.parse(text)
        assert legendre(d, t) == pytest.approx(_legendre_grid(d, t), rel=1e-6)

    @pytest.mark.parametrize("text", ["ber:0.5", "pois:0.3", "gauss:2"])
    def test_convex_nonnegative(self, text):
        d = CouplingDistribution.parse(text)
        ts = np.linspace(0, 2, 81)
        vals = np.array([legendre(d, t) for t in ts])
        assert vals[0] == 0.0 and np.all(vals >= 0)
        assert np.min(vals[2:] - 2 * vals[1:-1] + vals[:-2]) >= -1e-9

    def test_small_t_is_gaussian(self):
        d = CouplingDistribution.parse("ber:0.5")
        t = 1e-3
        assert legendre(d, t) / (t * t / (4 * d.variance)) == pytest.approx(1.0, rel=1e-5)

    def test_deterministic_law(self):
        assert legendre(CouplingDistribution.parse("one"), 0.1) == math.inf

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            legendre(GAUSS, -0.1)


class TestChernoff:
    def test_leading_order_example(self):
        N = 20_000
        d = CouplingDistribution.parse("gauss:1")
        b = chernoff_tail_bound(d, N * (N - 1) // 2, 1.0 / N, 2.0, sides=2)
        assert b.gaussian_approx.bound == pytest.approx(2 * math.exp(-2), rel=1e-3)
        assert b.legendre_exact.bound == pytest.approx(b.gaussian_approx.bound, rel=1e-12)

    def test_zero_t_vacuous(self):
        b = chernoff_tail_bound(GAUSS, 28, 0.3, 0.0)
        assert b.legendre_exact.bound == 1.0 and b.gaussian_approx.bound == 1.0

    @pytest.mark.parametrize("text", ["ber:0.3", "pois:0.5", "gauss:0.5"])
    def test_monotone_and_capped(self, text):
        d = CouplingDistribution.parse(text)
        vals = [chernoff_tail_bound(d, 45, 0.2, t, sides=2).legendre_exact.bound
                for t in np.linspace(0, 3, 31)]
        assert all(v <= 1.0 for v in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_gaussian_form_dominates_outside_small_t(self):
        d = CouplingDistribution.parse("ber:0.2")
        for t in (0.05, 0.5, 1.0):
            b = chernoff_tail_bound(d, 45, 0.3, t)
            # exact Legendre transform is tighter than its quadratic proxy for this skewed law
            assert b.legendre_exact.bound <= b.gaussian_approx.bound * 1.5

    def test_rejects_bad_arguments(self):
        with pytest.raises(ArgumentError):
            chernoff_tail_bound(GAUSS, 0, 1.0, 0.1)


class TestHarness:
    def test_deterministic_law_has_no_spread(self):
        d = CouplingDistribution.parse("one")
        recs = compute_realizations(5, 3, 2.9, d, 3, 0)
        assert len({r.log_z_capacity for r in recs}) == 1
        rep = empirical_tail_report("log_z_capacity", 5, 3, 2.9, d, 3, 0, records=recs)
        assert rep.passed and max(rep.empirical) == 0.0
        gap = annealed_gap_report(5, 3, 2.9, d, 3, 0, records=recs)
        assert gap.gap == pytest.approx(0.0, abs=1e-12)

    def test_records_reproducible(self):
        a = compute_realizations(5, 3, 2.9, GAUSS, 3, 4)
        b = compute_realizations(5, 3, 2.9, GAUSS, 3, 4, workers=2)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_annealed_reference_matches_unit_couplings(self):
        ref = annealed_reference(5, 3, 2.9)
        rec = compute_realizations(5, 3, 2.9, CouplingDistribution.parse("one"), 1, 0)[0]
        assert rec.log_hitting_time == pytest.approx(ref["log_hitting_time"], abs=1e-12)

    def test_tail_report_shapes(self):
        recs = compute_realizations(5, 3, 2.9, GAUSS, 6, 1)
        for f in FUNCTIONALS:
            rep = empirical_tail_report(f, 5, 3, 2.9, GAUSS, 6, 1, records=recs)
            assert len(rep.empirical) == len(rep.bound) == 10
            assert rep.n_used == 6 and rep.n_failed == 0
        rep = empirical_tail_report("log_hitting_time", 5, 3, 2.9, GAUSS, 6, 1, records=recs)
        assert rep.lipschitz == pytest.approx(2 * 2.9 / 5)

    def test_unknown_functional(self):
        with pytest.raises(ArgumentError):
            empirical_tail_report("log_z", 5, 3, 2.9, GAUSS, 1, 0, records=[])


class TestEnvelope:
    def test_gaussian_sample(self):
        x = np.random.default_rng(0).normal(0, 0.5, size=20_000)
        fit = fit_subgaussian_envelope(x)
        # Gaussian tail with variance 1/4 decays like exp(-2 s^2)
        assert fit["c4"] > 0 and 1.0 <= fit["c4"] <= 4.0
        assert fit["c3"] >= 1.0

    def test_degenerate_sample(self):
        assert fit_subgaussian_envelope(np.zeros(5))["c4"] == math.inf
