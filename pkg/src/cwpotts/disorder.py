"""Random couplings, their cumulant generating functions and the quenched-annealed gap.

Couplings ``J_ij`` (``i < j``) are i.i.d. with mean 1.  They are stored flat in
the row-major order of ``numpy.triu_indices(N, 1)``.  Random streams come from
NumPy's counter-based Philox generator keyed by ``SeedSequence([seed, stream])``,
so a given ``(dist, N, seed)`` reproduces bit-identical entries on every platform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ArgumentError, DomainError

__all__ = [
    "Kind",
    "CouplingDistribution",
    "CouplingArray",
    "make_rng",
    "sample_couplings",
    "cgf",
    "same_colour_pairs",
    "delta",
    "AnnealedCheck",
    "annealed_identity_check",
    "XiResult",
    "xi_event",
    "xi_bound",
]

XI_EXACT_LIMIT = 10**6


class Kind(str, Enum):
    ONE = "deterministic_one"
    BERNOULLI = "scaled_bernoulli"
    POISSON = "scaled_poisson"
    GAUSSIAN = "gaussian"


_SHORT = {"one": Kind.ONE, "ber": Kind.BERNOULLI, "pois": Kind.POISSON, "gauss": Kind.GAUSSIAN}


@dataclass(frozen=True)
class CouplingDistribution:
    """Law of a single coupling.  ``param`` is ``p`` or ``v`` depending on ``kind``."""

    kind: Kind
    param: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        p = float(self.param)
        if not math.isfinite(p):
            raise ArgumentError("distribution parameter must be finite", param=p)
        if self.kind in (Kind.BERNOULLI, Kind.POISSON) and not (0 < p <= 1):
            raise ArgumentError("p must lie in (0, 1]", kind=self.kind.value, p=p)
        if self.kind is Kind.GAUSSIAN and not p > 0:
            raise ArgumentError("v must be positive", v=p)
        object.__setattr__(self, "param", p)

    @classmethod
    def parse(cls, text: str) -> "CouplingDistribution":
        """Parse ``one``, ``ber:p``, ``pois:p`` or ``gauss:v``."""
        head, _, tail = text.strip().partition(":")
        if head not in _SHORT:
            raise ArgumentError("unknown distribution", dist=text)
        kind = _SHORT[head]
        if kind is Kind.ONE:
            if tail:
                raise ArgumentError("'one' takes no parameter", dist=text)
            return cls(kind)
        try:
            return cls(kind, float(tail))
        except ValueError as exc:
            raise ArgumentError("bad distribution parameter", dist=text) from exc

    def short(self) -> str:
        inv = {v: k for k, v in _SHORT.items()}
        return "one" if self.kind is Kind.ONE else f"{inv[self.kind]}:{self.param!r}"

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        p = self.param
        return {Kind.ONE: 0.0, Kind.BERNOULLI: (1 - p) / p,
                Kind.POISSON: 1 / p, Kind.GAUSSIAN: p}[self.kind]

    def draw(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        p = self.param
        if self.kind is Kind.ONE:
            return np.ones(size)
        if self.kind is Kind.BERNOULLI:
            return (rng.random(size) < p) / p
        if self.kind is Kind.POISSON:
            return rng.poisson(p, size) / p
        return 1.0 + math.sqrt(p) * rng.standard_normal(size)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class CouplingArray:
    entries: np.ndarray
    N: int
    dist: CouplingDistribution
    seed: int
    stream: int = 0
    _matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape != (self.N * (self.N - 1) // 2,):
            raise ArgumentError("wrong number of couplings", N=self.N,
                                count=int(self.entries.size))

    def matrix(self) -> np.ndarray:
        """Symmetric ``N x N`` matrix with zero diagonal (cached)."""
        if self._matrix is None:
            J = np.zeros((self.N, self.N))
            iu = np.triu_indices(self.N, 1)
            J[iu] = self.entries
            self._matrix = J + J.T
        return self._matrix

    def header(self) -> dict[str, Any]:
        return {"kind": self.dist.kind.value, "param": self.dist.param,
                "N": self.N, "seed": self.seed, "stream": self.stream}

    def to_csv(self, path: str | Path) -> None:
        """Triangular dump: commented header, then ``i,j,J_ij`` rows."""
        iu = np.triu_indices(self.N, 1)
        with open(path, "w", newline="") as fh:
            h = self.header()
            fh.write("# " + " ".join(f"{k}={h[k]!r}" for k in ("kind", "param", "N", "seed", "stream")) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "J"])
            for i, j, v in zip(iu[0].tolist(), iu[1].tolist(), self.entries.tolist()):
                w.writerow([i, j, repr(v)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "CouplingArray":
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ArgumentError("missing coupling header", path=str(path))
            meta = dict(tok.split("=", 1) for tok in first[2:].split())
            rows = list(csv.DictReader(fh))
        N = int(meta["N"])
        dist = CouplingDistribution(Kind(meta["kind"].strip("'\"")), float(meta["param"]))
        vals = np.array([float(r["J"]) for r in rows])
        return cls(vals, N, dist, int(meta["seed"]), int(meta.get("stream", 0)))


def sample_couplings(dist: CouplingDistribution, N: int, seed: int,
                     stream: int = 0) -> CouplingArray:
    """I.i.d. couplings for all ``N (N - 1) / 2`` pairs, deterministic in ``(seed, stream)``."""
    if int(N) != N or N < 1:
        raise ArgumentError("N must be a positive integer", N=N)
    n = N * (N - 1) // 2
    return CouplingArray(dist.draw(make_rng(seed, stream), n), int(N), dist, int(seed), int(stream))


def cgf(dist: CouplingDistribution, t: float | np.ndarray) -> float | np.ndarray:
    """Cumulant generating function of ``J - 1``.

    Every supported law has a finite cgf on the whole real line.  Large
    positive ``t`` can overflow to ``inf`` for the Poisson kind.
    """
    tt = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(tt)):
        raise DomainError("cgf argument must be finite", t=t)
    p = dist.param
    if dist.kind is Kind.ONE:
        out = np.zeros_like(tt)
    elif dist.kind is Kind.BERNOULLI:
        with np.errstate(divide="ignore"):
            out = np.logaddexp(np.log1p(-p) if p < 1 else -np.inf, math.log(p) + tt / p) - tt
    elif dist.kind is Kind.POISSON:
        with np.errstate(over="ignore"):
            out = p * np.expm1(tt / p) - tt
    else:
        out = 0.5 * p * tt**2
    return float(out) if out.ndim == 0 else out


def same_colour_pairs(sigma: np.ndarray, q: int | None = None) -> np.ndarray | int:
    """Number of pairs ``i < j`` with equal colours, row-wise for 2-D input."""
    s = np.atleast_2d(np.asarray(sigma))
    qq = int(s.max()) + 1 if q is None else q
    counts = np.stack([(s == c).sum(axis=1) for c in range(qq)], axis=1)
    out = (counts * (counts - 1) // 2).sum(axis=1)
    return int(out[0]) if np.ndim(sigma) == 1 else out


def _pair_sum(J: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``sum_{i<j} J_ij 1{s_i = s_j}`` for each row of ``sigma``; ``J`` symmetric."""
    s = np.atleast_2d(sigma)
    out = np.zeros(s.shape[0])
    for i in range(s.shape[1] - 1):
        eq = s[:, i + 1:] == s[:, i:i + 1]
        out += eq @ J[i, i + 1:]
    return out


def delta(model: Any, sigma: np.ndarray) -> float | np.ndarray:
    """Quenched minus annealed energy, ``-(1/N) sum_{i<j} (J_ij - 1) 1{s_i = s_j}``.

    ``model`` is any object with ``N`` and ``couplings`` attributes.
    """
    if model.couplings is None:
        raise ArgumentError("delta needs a quenched model with couplings")
    J = model.couplings.matrix() - (1.0 - np.eye(model.N))
    out = -_pair_sum(J, np.asarray(sigma)) / model.N
    return float(out[0]) if np.ndim(sigma) == 1 else out


# ----------------------------------------------------------------------
# Annealed identity
# ----------------------------------------------------------------------
@dataclass
class AnnealedCheck:
    estimate: float
    exact: float
    std_error: float
    z: float
    n_samples: int
    pairs: int
    lower_bound: float
    upper_bound: float
    within_bounds: bool

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def annealed_identity_check(dist: CouplingDistribution, N: int, beta: float,
                            sigma: Sequence[int] | np.ndarray, n_samples: int, seed: int,
                            eps: float = 0.1, q: int | None = None,
                            chunk: int = 10_000) -> AnnealedCheck:
    """Monte Carlo check of ``E[exp(-beta Delta(sigma))] = exp(M(sigma) cgf(beta / N))``.

    Only the ``M(sigma)`` same-colour couplings enter ``Delta``, so each sample
    draws just those.  ``lower_bound``/``upper_bound`` are the annealed
    envelope ``exp(beta^2 v / (4q) (1 - eps))`` and ``exp(beta^2 v / 4 (1 + eps))``.
    """
    s = np.asarray(sigma)
    if s.shape != (N,):
        raise ArgumentError("sigma has wrong length", N=N)
    qq = q if q is not None else int(s.max()) + 1
    M = same_colour_pairs(s, qq)
    exact = math.exp(M * cgf(dist, beta / N))
    rng = make_rng(seed)
    total, total_sq, done = 0.0, 0.0, 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        J = dist.draw(rng, (m, M))
        vals = np.exp(beta / N * (J - 1.0).sum(axis=1))
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        done += m
    est = total / n_samples
    var = max(total_sq / n_samples - est**2, 0.0) * n_samples / max(n_samples - 1, 1)
    se = math.sqrt(var / n_samples)
    z = (est - exact) / se if se > 0 else 0.0
    v = dist.variance
    lo = math.exp(beta**2 * v / (4 * qq) * (1 - eps))
    hi = math.exp(beta**2 * v / 4 * (1 + eps))
    return AnnealedCheck(est, exact, se, z, n_samples, M, lo, hi, lo <= est <= hi)


# ----------------------------------------------------------------------
# The event Xi_N(a)
# ----------------------------------------------------------------------
def xi_bound(N: int, q: int, a: float, v: float) -> float:
    """``2 exp(N ln q - a^2 N / v)``, capped at 1."""
    if v <= 0:
        return 0.0
    return min(1.0, 2.0 * math.exp(N * math.log(q) - a * a * N / v))


@dataclass
class XiResult:
    holds: bool
    max_abs_delta: float
    threshold: float
    bound: float
    exact: bool

    @property
    def lower_bound_on_max(self) -> bool:
        """True when the maximum came from sampled configurations."""
        return not self.exact


def xi_event(model: Any, a: float, *, n_sampled: int = 100_000, seed: int = 0,
             chunk: int = 65_536) -> XiResult:
    """Whether ``max_sigma |Delta(sigma)| <= a sqrt(N)`` and the analytic failure bound.

    The maximum is exact (full enumeration) up to ``q^N = 10^6`` states and
    a sampled lower bound above that.
    """
    N, q = model.N, model.q
    thr = a * math.sqrt(N)
    v = model.couplings.dist.variance if model.couplings is not None else 0.0
    bound = xi_bound(N, q, a, v)
    if model.couplings is None or model.couplings.dist.kind is Kind.ONE:
        return XiResult(True, 0.0, thr, bound, True)
    exact = q**N <= XI_EXACT_LIMIT
    best = 0.0
    if exact:
        for start in range(0, q**N, chunk):
            idx = np.arange(start, min(start + chunk, q**N))
            sig = np.stack(np.unravel_index(idx, (q,) * N), axis=1)
            best = max(best, float(np.max(np.abs(delta(model, sig)))))
    else:
        rng = make_rng(seed, 1)
        done = 0
        while done < n_sampled:
            m = min(chunk, n_sampled - done)
            sig = rng.integers(0, q, size=(m, N))
            best = max(best, float(np.max(np.abs(delta(model, sig)))))
            done += m
    return XiResult(best <= thr, best, thr, bound, exact)

