"""Spin configurations, Metropolis dynamics and hitting times.

Colours are ``0 .. q-1``.  Configuration ``sigma`` has index
``sum_k sigma_k q^(N-1-k)`` (base ``q``, site 0 most significant), matching
``numpy.ravel_multi_index`` with shape ``(q,) * N``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .disorder import CouplingArray, make_rng
from .errors import ArgumentError, NumericError, SizeGuardError
from .landscape import closest_lattice_point, critical_temperatures, minima
from .lumped_chain import ChainSpec, LatticePoint

__all__ = [
    "ModelSpec",
    "MAX_MICRO_STATES",
    "all_configurations",
    "hamiltonian",
    "empirical_measure",
    "metropolis_kernel",
    "MetastableSets",
    "metastable_sets",
    "SimulationSummary",
    "simulate_hitting_time",
]

MAX_MICRO_STATES = 10**6
DEFAULT_STEP_CAP = 10**9
ENERGY_CHECK_EVERY = 10**4


@dataclass
class ModelSpec:
    """Potts model on the complete graph; ``couplings=None`` means ``J = 1``."""

    N: int
    q: int
    beta: float
    couplings: CouplingArray | None = None

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ArgumentError("N must be a positive integer", N=self.N)
        if int(self.q) != self.q or self.q < 2:
            raise ArgumentError("q must be an integer >= 2", q=self.q)
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ArgumentError("beta must be finite and non-negative", beta=self.beta)
        if self.couplings is not None and self.couplings.N != self.N:
            raise ArgumentError("coupling array size does not match N")

    @property
    def annealed(self) -> bool:
        return self.couplings is None

    def coupling_matrix(self) -> np.ndarray:
        if self.couplings is None:
            return 1.0 - np.eye(self.N)
        return self.couplings.matrix()

    def check(self, sigma: np.ndarray) -> np.ndarray:
        s = np.asarray(sigma)
        if s.shape[-1] != self.N or np.any(s < 0) or np.any(s >= self.q):
            raise ArgumentError("configuration out of range", N=self.N, q=self.q)
        return s


def all_configurations(N: int, q: int) -> np.ndarray:
    """Every configuration, row ``i`` being the one with index ``i``."""
    if q**N > MAX_MICRO_STATES:
        raise SizeGuardError("configuration space too large", N=N, q=q, size=q**N,
                             limit=MAX_MICRO_STATES)
    idx = np.arange(q**N)
    return np.stack(np.unravel_index(idx, (q,) * N), axis=1).astype(np.int8)


def _colour_counts(sigma: np.ndarray, q: int) -> np.ndarray:
    s = np.atleast_2d(sigma)
    return np.stack([(s == c).sum(axis=1) for c in range(q)], axis=1)


def hamiltonian(model: ModelSpec, sigma: np.ndarray) -> float | np.ndarray:
    """Energy of one configuration or of each row of a 2-D array."""
    s = model.check(sigma)
    single = s.ndim == 1
    s2 = np.atleast_2d(s)
    if model.annealed:
        n = _colour_counts(s2, model.q).astype(float)
        out = -(n**2).sum(axis=1) / (2 * model.N) + 0.5
    else:
        J = model.couplings.matrix()  # type: ignore[union-attr]
        out = np.zeros(s2.shape[0])
        for i in range(model.N - 1):
            out += (s2[:, i + 1:] == s2[:, i:i + 1]) @ J[i, i + 1:]
        out *= -1.0 / model.N
    return float(out[0]) if single else out


def empirical_measure(sigma: Sequence[int] | np.ndarray, q: int) -> LatticePoint:
    """Colour counts of ``sigma``; divide by ``N`` for frequencies."""
    s = np.asarray(sigma)
    return LatticePoint(tuple(int(c) for c in np.bincount(s, minlength=q)[:q]))


def metropolis_kernel(model: ModelSpec) -> ChainSpec:
    """Full single-site Metropolis chain on ``{0..q-1}^N`` (tiny ``N`` only)."""
    N, q, beta = model.N, model.q, model.beta
    configs = all_configurations(N, q)
    n = configs.shape[0]
    H = hamiltonian(model, configs)
    idx = np.arange(n)
    rows, cols, vals = [], [], []
    for k in range(N):
        place = q ** (N - 1 - k)
        old = configs[:, k].astype(np.int64)
        for shift in range(1, q):
            new = (old + shift) % q
            nb = idx + (new - old) * place
            rows.append(idx)
            cols.append(nb)
            vals.append(np.exp(-beta * np.maximum(H[nb] - H, 0.0)) / (N * q))
    off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    hold = 1.0 - np.asarray(off.sum(axis=1)).ravel()
    kernel = (off + sp.diags(hold)).tocsr()
    chain = ChainSpec(configs, -beta * H, kernel,
                      meta={"model": "micro", "N": N, "q": q, "beta": beta,
                            "quenched": not model.annealed}).verify()
    return chain


# ----------------------------------------------------------------------
# Metastable sets
# ----------------------------------------------------------------------
@dataclass
class MetastableSets:
    """Fibres of the lattice minima and the ``(A, B)`` pair of one transition.

    ``lattice[i]`` is ``m_{i,N}`` (``i = 0`` is ``m0`` when present);
    ``fibres[i]`` holds configuration indices when enumeration is allowed.
    """

    lattice: dict[int, LatticePoint]
    A_points: list[LatticePoint]
    B_points: list[LatticePoint]
    transition: str
    fibres: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def A(self) -> np.ndarray:
        return self._union(self.A_points)

    @property
    def B(self) -> np.ndarray:
        return self._union(self.B_points)

    def _union(self, pts: list[LatticePoint]) -> np.ndarray:
        if not self.fibres:
            raise SizeGuardError("configuration indices unavailable for this N")
        keys = {p: i for i, p in self.lattice.items()}
        return np.sort(np.concatenate([self.fibres[keys[p]] for p in pts]))


TRANSITIONS = ("auto", "to_m0", "from_m0", "tunnelling")


def metastable_sets(model: ModelSpec, transition: str = "auto") -> MetastableSets:
    """Pre-images of the lattice approximations of the free-energy minima.

    ``to_m0``: ``A`` = union of ``M_i``, ``B = M_0`` (needs ``beta1 < beta <= beta2``).
    ``from_m0``: ``A = M_0``, ``B`` = union of ``M_i`` (needs ``beta2 < beta < q``).
    ``tunnelling``: ``A = M_1``, ``B`` = union of ``M_i, i >= 2`` (needs ``beta > beta2``).
    ``auto`` picks the first two by regime and ``tunnelling`` for ``beta >= q``.
    """
    if transition not in TRANSITIONS:
        raise ArgumentError("unknown transition", transition=transition)
    N, q, beta = model.N, model.q, model.beta
    betas = critical_temperatures(q)
    if beta <= betas.beta1:
        raise ArgumentError("no metastable sets at or below beta1", beta=beta,
                            beta1=betas.beta1)
    if transition == "auto":
        if q == 2:
            transition = "tunnelling"
        elif beta <= betas.beta2:
            transition = "to_m0"
        elif beta < q:
            transition = "from_m0"
        else:
            transition = "tunnelling"
    if transition == "to_m0" and not beta <= betas.beta2:
        raise ArgumentError("M_0 is not the stable set above beta2", beta=beta)
    if transition == "from_m0" and not (betas.beta2 < beta < q):
        raise ArgumentError("M_0 is not metastable at this beta", beta=beta)
    if transition == "tunnelling" and not beta > betas.beta2:
        raise ArgumentError("tunnelling needs beta > beta2", beta=beta)

    lattice: dict[int, LatticePoint] = {}
    for p in minima(beta, q):
        i = 0 if p.label == "m0" else int(p.label.split("_")[1])
        lattice[i] = closest_lattice_point(p.location, N)
    if transition in ("to_m0", "from_m0") and 0 not in lattice:
        raise ArgumentError("m0 is not a minimum at this beta", beta=beta)
    others = [lattice[i] for i in range(1, q + 1)]
    if transition == "to_m0":
        A_pts, B_pts = others, [lattice[0]]
    elif transition == "from_m0":
        A_pts, B_pts = [lattice[0]], others
    else:
        A_pts, B_pts = [lattice[1]], others[1:]
    if len(set(A_pts) | set(B_pts)) != len(A_pts) + len(B_pts):
        raise ArgumentError("lattice minima coincide; N too small", N=N)

    fibres: dict[int, np.ndarray] = {}
    if q**N <= MAX_MICRO_STATES:
        counts = _colour_counts(all_configurations(N, q), q)
        for i, pt in lattice.items():
            fibres[i] = np.flatnonzero(np.all(counts == np.asarray(pt.counts), axis=1))
    return MetastableSets(lattice, A_pts, B_pts, transition, fibres)


# ----------------------------------------------------------------------
# Monte Carlo hitting times
# ----------------------------------------------------------------------
@dataclass
class SimulationSummary:
    seed: int
    n: int
    mean: float
    se: float
    q05: float
    q50: float
    q95: float
    censored_count: int
    samples: np.ndarray = field(repr=False)

    @property
    def partial(self) -> bool:
        return self.censored_count > 0

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "n": self.n, "mean": self.mean, "se": self.se,
                "q05": self.q05, "q50": self.q50, "q95": self.q95,
                "censored_count": self.censored_count}


class _Target:
    """Membership test on either lattice fibres or explicit configuration indices."""

    def __init__(self, target: Any, N: int, q: int) -> None:
        self.counts: set[tuple[int, ...]] | None = None
        self.mask: np.ndarray | None = None
        items = list(target) if not isinstance(target, np.ndarray) else None
        if items and isinstance(items[0], (LatticePoint, tuple)):
            self.counts = {p.counts if isinstance(p, LatticePoint) else tuple(p) for p in items}
        else:
            if q**N > 10 * MAX_MICRO_STATES:
                raise SizeGuardError("index targets need q^N <= 1e7; pass lattice points")
            self.mask = np.zeros(q**N, dtype=bool)
            self.mask[np.asarray(target, dtype=np.int64)] = True

    def __contains__(self, state: tuple[int, tuple[int, ...]]) -> bool:
        idx, counts = state
        if self.counts is not None:
            return counts in self.counts
        return bool(self.mask[idx])  # type: ignore[index]


def _run_one(model: ModelSpec, J: np.ndarray, start: np.ndarray, target: _Target,
             rng: np.random.Generator, step_cap: int) -> tuple[int, bool]:
    """One trajectory; returns ``(steps, censored)``."""
    N, q, beta = model.N, model.q, model.beta
    sigma = start.astype(np.int64).copy()
    # The configuration index is only tracked for index targets (it overflows int64 at large N).
    track = target.mask is not None
    places = q ** (N - 1 - np.arange(N)) if track else np.zeros(N, dtype=np.int64)
    idx = int(sigma @ places)
    counts = np.bincount(sigma, minlength=q)
    if (idx, tuple(counts.tolist())) in target:
        return 0, False
    # field[k, c] = sum_j J[k, j] 1{sigma_j = c}
    field = np.zeros((N, q))
    for c in range(q):
        field[:, c] = J[:, sigma == c].sum(axis=1)
    energy = float(hamiltonian(model, sigma))
    inv_n = 1.0 / N
    block = min(4096, ENERGY_CHECK_EVERY)
    steps = 0
    while steps < step_cap:
        m = min(block, step_cap - steps)
        sites = rng.integers(0, N, size=m)
        cols = rng.integers(0, q, size=m)
        us = rng.random(m)
        for k, c, u in zip(sites.tolist(), cols.tolist(), us.tolist()):
            steps += 1
            old = int(sigma[k])
            if c == old:
                continue
            dH = (field[k, old] - field[k, c]) * inv_n
            if dH > 0 and u >= math.exp(-beta * dH):
                continue
            sigma[k] = c
            field[:, old] -= J[:, k]
            field[:, c] += J[:, k]
            energy += dH
            counts[old] -= 1
            counts[c] += 1
            if track:
                idx += (c - old) * int(places[k])
            if (idx, tuple(counts.tolist())) in target:
                return steps, False
        # Blocks are shorter than ENERGY_CHECK_EVERY, so this spot-check is frequent enough.
        _check_energy(model, sigma, energy)
    return step_cap, True


def _check_energy(model: ModelSpec, sigma: np.ndarray, energy: float) -> None:
    fresh = float(hamiltonian(model, sigma))
    if abs(fresh - energy) > 1e-9:
        raise NumericError("incremental energy drifted", incremental=energy, fresh=fresh)


def _sample_batch(args: tuple) -> list[tuple[int, bool]]:
    model, J, starts, probs, target, seed, ids, step_cap = args
    out = []
    for s in ids:
        rng = make_rng(seed, s)
        which = int(rng.choice(len(probs), p=probs)) if len(probs) > 1 else 0
        out.append(_run_one(model, J, starts[which], target, rng, step_cap))
    return out


def simulate_hitting_time(model: ModelSpec, start: tuple[np.ndarray, np.ndarray] | np.ndarray,
                          target: Iterable[Any] | np.ndarray, rng_seed: int, n_samples: int,
                          *, step_cap: int = DEFAULT_STEP_CAP, workers: int = 1) -> SimulationSummary:
    """Sample the hitting time of ``target`` under single-site Metropolis.

    ``start`` is either one configuration or a pair ``(configs, probs)``.
    ``target`` is either an array of configuration indices or a collection of
    lattice points (count tuples) whose fibres form the target set.  Sample
    ``s`` uses its own Philox stream ``(rng_seed, s)``, so results do not
    depend on ``workers``.  Each step proposes one of the ``N q`` (site, colour)
    pairs uniformly, self-colour proposals included.
    """
    if n_samples < 1:
        raise ArgumentError("n_samples must be >= 1", n_samples=n_samples)
    if isinstance(start, tuple):
        starts, probs = np.atleast_2d(start[0]), np.asarray(start[1], dtype=float)
        probs = probs / probs.sum()
    else:
        starts, probs = np.atleast_2d(start), np.ones(1)
    model.check(starts)
    tgt = _Target(target, model.N, model.q)
    J = model.coupling_matrix()
    ids = list(range(n_samples))
    if workers > 1:
        chunks = [ids[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_batch, [(model, J, starts, probs, tgt, rng_seed, c,
                                                   step_cap) for c in chunks]))
        res: list[tuple[int, bool]] = [None] * n_samples  # type: ignore[list-item]
        for c, part in zip(chunks, parts):
            for s, r in zip(c, part):
                res[s] = r
    else:
        res = _sample_batch((model, J, starts, probs, tgt, rng_seed, ids, step_cap))
    times = np.array([r[0] for r in res], dtype=float)
    censored = int(sum(r[1] for r in res))
    se = float(times.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.nan
    q05, q50, q95 = np.quantile(times, [0.05, 0.5, 0.95])
    return SimulationSummary(int(rng_seed), n_samples, float(times.mean()), se,
                             float(q05), float(q50), float(q95), censored, times)

