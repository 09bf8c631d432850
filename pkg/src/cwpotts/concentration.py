"""Chernoff bounds for Lipschitz functions of the couplings, and the empirical harness.

A functional that changes by at most ``C`` when one of ``n`` independent
couplings is resampled obeys

    P[|f - E f| > t] <= sides * exp(-n phi1*(t / (C n))),

where ``phi1(l) = phi(l) + phi(-l)`` is the symmetrised cgf.  Near ``t = 0``
this behaves like ``exp(-t^2 / (4 v C^2 n))``.

For the quenched microscopic chain every extensive functional is computed
exactly per realization: log capacity, log harmonic sum and log mean
hitting time.  The harness compares their empirical spread with these
bounds.  Each realization ``r`` draws couplings from stream ``r`` of the
master seed, so a report does not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .disorder import CouplingDistribution, Kind, cgf, sample_couplings, xi_bound, xi_event
from .errors import ArgumentError, CwpError, DomainError
from .microscopic import ModelSpec, metastable_sets, metropolis_kernel
from .potential_theory import (equilibrium_potential, mean_hitting_time,
                               metastable_partition)

__all__ = [
    "BoundForm",
    "ConcentrationBound",
    "TailBounds",
    "symmetrized_cgf",
    "legendre",
    "chernoff_tail_bound",
    "FUNCTIONALS",
    "RealizationRecord",
    "compute_realizations",
    "annealed_reference",
    "TailReport",
    "empirical_tail_report",
    "GapReport",
    "annealed_gap_report",
    "fit_subgaussian_envelope",
]

LEGENDRE_TOL = 1e-12


def _cgf_d1(dist: CouplingDistribution, t: float) -> float:
    p = dist.param
    if dist.kind is Kind.ONE:
        return 0.0
    if dist.kind is Kind.BERNOULLI:
        w = float(expit(t / p + math.log(p / (1 - p)))) if p < 1 else 1.0
        return w / p - 1.0
    if dist.kind is Kind.POISSON:
        return math.expm1(t / p)
    return p * t


def _cgf_d2(dist: CouplingDistribution, t: float) -> float:
    p = dist.param
    if dist.kind is Kind.ONE:
        return 0.0
    if dist.kind is Kind.BERNOULLI:
        w = float(expit(t / p + math.log(p / (1 - p)))) if p < 1 else 1.0
        return w * (1 - w) / p**2
    if dist.kind is Kind.POISSON:
        return math.exp(t / p) / p
    return p


def symmetrized_cgf(dist: CouplingDistribution, lam: float | np.ndarray) -> float | np.ndarray:
    """``phi(lam) + phi(-lam)`` for the centred coupling."""
    return cgf(dist, lam) + cgf(dist, -np.asarray(lam, dtype=float))


def legendre(dist: CouplingDistribution, t: float) -> float:
    """``sup_{lam >= 0} (t lam - phi1(lam))``.

    Bounded search on a bracket where the slope changes sign, then Newton
    on the stationarity condition.  The deterministic law has
    ``phi1 = 0`` and returns ``inf`` for ``t > 0``.
    """
    if not (math.isfinite(t) and t >= 0):
        raise DomainError("t must be finite and non-negative", t=t)
    if t == 0:
        return 0.0
    if dist.kind is Kind.ONE:
        return math.inf

    def slope(lam: float) -> float:
        return t - (_cgf_d1(dist, lam) - _cgf_d1(dist, -lam))

    hi = t / (2 * dist.variance)
    best = 0.0
    while slope(hi) >= 0:
        best = max(best, t * hi - float(symmetrized_cgf(dist, hi)))
        if hi > 1e7:
            # Bernoulli has slope at most 1/p; from there on the supremum is only
            # approached as lam grows.  Past 1e7 rounding would dominate.
            return best
        hi *= 2.0

    def neg(lam: float) -> float:
        return -(t * lam - float(symmetrized_cgf(dist, lam)))

    res = minimize_scalar(neg, bracket=(0.0, hi), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-12 * max(hi, 1e-300)})
    lam = float(res.x)
    for _ in range(50):
        curv = _cgf_d2(dist, lam) + _cgf_d2(dist, -lam)
        step = slope(lam) / curv
        lam = min(max(lam + step, 0.0), hi)
        if abs(step) <= LEGENDRE_TOL * max(lam, 1e-300):
            break
    return max(t * lam - float(symmetrized_cgf(dist, lam)), 0.0)


class BoundForm(str, Enum):
    LEGENDRE = "legendre_exact"
    GAUSSIAN = "gaussian_approx"


@dataclass(frozen=True)
class ConcentrationBound:
    t: float
    n: int
    lipschitz: float
    bound: float
    form: BoundForm


@dataclass(frozen=True)
class TailBounds:
    legendre_exact: ConcentrationBound
    gaussian_approx: ConcentrationBound


def chernoff_tail_bound(dist: CouplingDistribution, n: int, C: float, t: float,
                        sides: float = 1.0) -> TailBounds:
    """Both forms of the Chernoff bound, each multiplied by ``sides`` and capped at 1."""
    if n < 1 or C <= 0 or t < 0:
        raise ArgumentError("need n >= 1, C > 0, t >= 0", n=n, C=C, t=t)
    exact = math.exp(-n * legendre(dist, t / (C * n))) if t > 0 else 1.0
    v = dist.variance
    if t == 0:
        gauss = 1.0
    elif v == 0:
        gauss = 0.0
    else:
        gauss = math.exp(-t * t / (4 * v * C * C * n))
    return TailBounds(
        ConcentrationBound(t, n, C, min(1.0, sides * exact), BoundForm.LEGENDRE),
        ConcentrationBound(t, n, C, min(1.0, sides * gauss), BoundForm.GAUSSIAN),
    )


# ----------------------------------------------------------------------
# Per-realization exact computations
# ----------------------------------------------------------------------
# functional -> (Lipschitz multiplier of beta/N, two-sided prefactor, includes Xi term)
FUNCTIONALS: dict[str, tuple[float, float, bool]] = {
    "log_z_capacity": (1.0, 2.0, False),
    "log_harmonic_sum": (1.0, 2.0, True),
    "log_hitting_time": (2.0, 4.0, True),
}


@dataclass
class RealizationRecord:
    realization: int
    seed: int
    log_z_capacity: float = math.nan
    log_harmonic_sum: float = math.nan
    log_hitting_time: float = math.nan
    localization: float = math.nan
    xi_holds: bool = False
    max_abs_delta: float = math.nan
    residual: float = math.nan
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _quantities(model: ModelSpec, transition: str) -> dict[str, float]:
    chain = metropolis_kernel(model)
    sets = metastable_sets(model, transition)
    ht = mean_hitting_time(chain, sets.A, sets.B)
    sol = ht.solution
    keys = sorted(sets.fibres)
    part = metastable_partition(chain, [sets.fibres[k] for k in keys])
    a_valleys = [keys.index(k) for k, p in sets.lattice.items() if p in sets.A_points]
    s_a = np.flatnonzero(np.isin(part.assignment, a_valleys))
    log_sa = float(np.logaddexp.reduce(chain.log_weights[s_a]))
    return {
        "log_z_capacity": sol.log_capacity,
        "log_harmonic_sum": sol.log_harmonic_sum,
        "log_hitting_time": ht.log_time,
        "localization": math.exp(sol.log_harmonic_sum - log_sa),
        "residual": sol.residual,
    }


def _one_realization(args: tuple) -> RealizationRecord:
    N, q, beta, dist, seed, r, a, transition = args
    rec = RealizationRecord(r, seed)
    try:
        couplings = sample_couplings(dist, N, seed, stream=r)
        model = ModelSpec(N, q, beta, couplings)
        for k, v in _quantities(model, transition).items():
            setattr(rec, k, v)
        xi = xi_event(model, a)
        rec.xi_holds, rec.max_abs_delta = xi.holds, xi.max_abs_delta
    except (CwpError, np.linalg.LinAlgError, RuntimeError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def default_xi_level(dist: CouplingDistribution, q: int) -> float:
    """``a = 2 sqrt(v ln q)``, safely above the threshold ``sqrt(v ln q)``."""
    return 2.0 * math.sqrt(dist.variance * math.log(q))


def compute_realizations(N: int, q: int, beta: float, dist: CouplingDistribution,
                         n_realizations: int, seed: int, *, a: float | None = None,
                         transition: str = "auto", workers: int = 1) -> list[RealizationRecord]:
    """Exact quenched functionals for ``n_realizations`` coupling draws."""
    if n_realizations < 1:
        raise ArgumentError("n_realizations must be >= 1")
    level = default_xi_level(dist, q) if a is None else a
    jobs = [(N, q, beta, dist, seed, r, level, transition) for r in range(n_realizations)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_realization, jobs, chunksize=4))
    return [_one_realization(j) for j in jobs]


def annealed_reference(N: int, q: int, beta: float, transition: str = "auto") -> dict[str, float]:
    """The same functionals for ``J = 1``."""
    return _quantities(ModelSpec(N, q, beta), transition)


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------
@dataclass
class TailReport:
    functional: str
    n_edges: int
    lipschitz: float
    sides: float
    xi_term: float
    t_grid: list[float]
    empirical: list[float]
    bound: list[float]
    binomial_se: list[float]
    violations: list[float]
    n_used: int
    n_failed: int
    annealed_moments: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def empirical_tail_report(functional: str, N: int, q: int, beta: float,
                          dist: CouplingDistribution, n_realizations: int, seed: int, *,
                          t_grid: Sequence[float] = tuple(np.round(np.arange(0.05, 0.501, 0.05), 10)),
                          records: list[RealizationRecord] | None = None,
                          annealed: dict[str, float] | None = None,
                          eps: float = 0.15, a: float | None = None,
                          workers: int = 1) -> TailReport:
    """Empirical two-sided tail of the centred functional against its Chernoff bound.

    The centring uses the sample mean.  A grid point counts as a violation
    when the empirical frequency exceeds the bound plus three binomial
    standard errors (evaluated at the bound).  For ``log_z_capacity`` the
    report also carries the annealed moment ratios
    ``E[Z cap] / (Z~ cap~)`` and ``1 / (E[(Z cap)^-1] Z~ cap~)`` with their
    window ``exp(+-beta^2 v / 4 (1 + eps))``.
    """
    if functional not in FUNCTIONALS:
        raise ArgumentError("unknown functional", functional=functional)
    if records is None:
        records = compute_realizations(N, q, beta, dist, n_realizations, seed, a=a,
                                       workers=workers)
    ok = [r for r in records if r.error is None]
    x = np.array([getattr(r, functional) for r in ok])
    mult, sides, with_xi = FUNCTIONALS[functional]
    n_edges = N * (N - 1) // 2
    C = mult * beta / N
    level = default_xi_level(dist, q) if a is None else a
    xi_term = xi_bound(N, q, level, dist.variance) if with_xi else 0.0
    dev = np.abs(x - x.mean()) if x.size else x
    emp, bnd, ses, bad = [], [], [], []
    for t in t_grid:
        b = min(1.0, chernoff_tail_bound(dist, n_edges, C, float(t), sides).legendre_exact.bound
                + xi_term) if dist.variance > 0 else 0.0
        f = float(np.mean(dev > t)) if x.size else 0.0
        se = math.sqrt(b * (1 - b) / max(len(x), 1))
        emp.append(f)
        bnd.append(b)
        ses.append(se)
        if f > b + 3 * se + 1e-15:
            bad.append(float(t))
    report = TailReport(functional, n_edges, C, sides, xi_term, [float(t) for t in t_grid],
                        emp, bnd, ses, bad, len(ok), len(records) - len(ok))
    if functional == "log_z_capacity" and x.size:
        ref = annealed if annealed is not None else annealed_reference(N, q, beta)
        base = ref["log_z_capacity"]
        up = float(np.logaddexp.reduce(x) - math.log(x.size)) - base
        down = -(float(np.logaddexp.reduce(-x) - math.log(x.size))) - base
        half = beta**2 * dist.variance / 4 * (1 + eps)
        report.annealed_moments = {
            "log_ratio_mean": up,
            "log_ratio_inverse_mean": down,
            "window": half,
            "within": bool(abs(up) <= half and abs(down) <= half),
        }
    return report


@dataclass
class GapReport:
    mean_log_time: float
    annealed_log_time: float
    gap: float
    window: tuple[float, float]
    within: bool
    n_used: int
    n_failed: int
    n_xi: int
    localization_range: tuple[float, float]
    localization_within: bool
    delta: float
    envelope: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def fit_subgaussian_envelope(samples: np.ndarray, n_grid: int = 20) -> dict[str, float]:
    """Fit ``P[|X| >= s] <= c3 exp(-c4 s^2)`` to an empirical sample.

    ``c4`` is the least-squares slope of the log tail against ``s^2``;
    ``c3`` is then the smallest constant dominating every grid point.
    """
    x = np.abs(np.asarray(samples, dtype=float))
    if x.size < 2 or np.all(x == 0):
        return {"c3": 1.0, "c4": math.inf, "points": 0}
    grid = np.linspace(0.0, float(x.max()), n_grid + 1)[:-1]
    tail = np.array([np.mean(x >= s) for s in grid])
    keep = tail > 0
    s2, lt = grid[keep] ** 2, np.log(tail[keep])
    if np.ptp(s2) == 0:
        return {"c3": 1.0, "c4": math.inf, "points": int(keep.sum())}
    slope = np.polyfit(s2, lt, 1)[0]
    c4 = float(-slope)
    c3 = float(np.max(tail[keep] * np.exp(c4 * s2)))
    return {"c3": c3, "c4": c4, "points": int(keep.sum())}


def annealed_gap_report(N: int, q: int, beta: float, dist: CouplingDistribution,
                        n_realizations: int, seed: int, *, eps: float = 0.15,
                        delta: float = 0.05, a: float | None = None,
                        records: list[RealizationRecord] | None = None,
                        annealed: dict[str, float] | None = None,
                        workers: int = 1) -> GapReport:
    """Average quenched log hitting time versus the annealed one.

    The window is ``[-v beta^2 / 4 - eps, v beta^2 / 2 + eps]``.  Also
    reports harmonic-sum localisation on realizations where the event
    ``Xi_N(a)`` holds, and a sub-Gaussian envelope fitted to
    ``ln(E_nu[tau] / E~[tau~])``.
    """
    if records is None:
        records = compute_realizations(N, q, beta, dist, n_realizations, seed, a=a,
                                       workers=workers)
    ref = annealed if annealed is not None else annealed_reference(N, q, beta)
    ok = [r for r in records if r.error is None]
    logs = np.array([r.log_hitting_time for r in ok])
    mean_log = float(logs.mean()) if logs.size else math.nan
    gap = mean_log - ref["log_hitting_time"]
    v = dist.variance
    lo, hi = -v * beta**2 / 4 - eps, v * beta**2 / 2 + eps
    loc = np.array([r.localization for r in ok if r.xi_holds])
    loc_range = (float(loc.min()), float(loc.max())) if loc.size else (math.nan, math.nan)
    loc_ok = bool(loc.size and loc_range[0] >= 1 - delta and loc_range[1] <= 1 + delta)
    env = fit_subgaussian_envelope(logs - ref["log_hitting_time"])
    return GapReport(mean_log, ref["log_hitting_time"], gap, (lo, hi), bool(lo <= gap <= hi),
                     len(ok), len(records) - len(ok), int(loc.size), loc_range, loc_ok,
                     delta, env)
