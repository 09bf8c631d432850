"""Mesoscopic chain on the lattice simplex P_N = (1/N) N_0^q.

States are colour-count vectors ``n`` with ``sum(n) = N``, enumerated in
colex order (last coordinate most significant).  A move transfers one spin
from colour ``j`` to colour ``i``; its energy change is the integer
``n_j - n_i - 1`` divided by ``N``, so the Metropolis factor is evaluated from
exact integer arithmetic.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, logsumexp

from .errors import ConstructionError, DomainError, SizeGuardError

__all__ = [
    "LatticePoint",
    "Lattice",
    "ChainSpec",
    "MAX_LATTICE_SIZE",
    "lattice_size",
    "enumerate_lattice",
    "log_multinomial",
    "discrete_free_energy",
    "transition_prob",
    "build_chain",
]

MAX_LATTICE_SIZE = 10**8
ROW_SUM_TOL = 1e-12
BALANCE_TOL = 1e-10


@dataclass(frozen=True)
class LatticePoint:
    """Colour counts; the frequency vector is ``counts / N``."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) < 2 or any(int(c) != c or c < 0 for c in self.counts):
            raise DomainError("counts must be >= 2 non-negative integers",
                              counts=list(self.counts))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def q(self) -> int:
        return len(self.counts)

    def frequencies(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.N

    def neighbours(self) -> list["LatticePoint"]:
        out = []
        for j in range(self.q):
            if self.counts[j] == 0:
                continue
            for i in range(self.q):
                if i != j:
                    c = list(self.counts)
                    c[i] += 1
                    c[j] -= 1
                    out.append(LatticePoint(tuple(c)))
        return out


def lattice_size(N: int, q: int) -> int:
    return math.comb(N + q - 1, q - 1)


def _check_Nq(N: int, q: int) -> None:
    if int(N) != N or N < 2:
        raise DomainError("N must be an integer >= 2", N=N)
    if int(q) != q or q < 2:
        raise DomainError("q must be an integer >= 2", q=q)


@dataclass
class Lattice:
    """All compositions of ``N`` into ``q`` parts with neighbour lists.

    ``counts[s]`` is the composition of state ``s``; ``adjacency[s]`` lists
    neighbour indices in the order of moves ``(j, i)`` with ``j`` the donor.
    """

    N: int
    q: int
    counts: np.ndarray
    _keys: np.ndarray | None = field(repr=False, default=None)
    _lookup: dict[tuple[int, ...], int] | None = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.counts.shape[0]

    def points(self) -> list[LatticePoint]:
        return [LatticePoint(tuple(int(v) for v in row)) for row in self.counts]

    def index(self, counts: Sequence[int] | np.ndarray | LatticePoint) -> np.ndarray | int:
        """Vectorised state lookup; accepts a single point or an (m, q) array."""
        if isinstance(counts, LatticePoint):
            counts = counts.counts
        arr = np.asarray(counts, dtype=np.int64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if self._keys is not None:
            k = self._key(arr)
            pos = np.searchsorted(self._keys, k)
            ok = (pos < len(self._keys)) & (self._keys[np.minimum(pos, len(self._keys) - 1)] == k)
        else:
            assert self._lookup is not None
            pos = np.array([self._lookup.get(tuple(r), -1) for r in arr.tolist()])
            ok = pos >= 0
        if not np.all(ok) or np.any(arr.sum(axis=1) != self.N):
            raise DomainError("point not on the lattice", N=self.N, q=self.q)
        return int(pos[0]) if single else pos

    def _key(self, arr: np.ndarray) -> np.ndarray:
        return arr @ self._radix()

    def _radix(self) -> np.ndarray:
        return (self.N + 1) ** np.arange(self.q, dtype=np.int64)

    @property
    def adjacency(self) -> list[np.ndarray]:
        src, dst = self.edges()
        order = np.argsort(src, kind="stable")
        splits = np.searchsorted(src[order], np.arange(1, len(self)))
        return np.split(dst[order], splits)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed edges ``(src, dst)`` grouped by move type."""
        srcs, dsts = [], []
        for j, i, rows, tgt in self._moves():
            srcs.append(rows)
            dsts.append(tgt)
        return np.concatenate(srcs), np.concatenate(dsts)

    def _moves(self) -> Iterable[tuple[int, int, np.ndarray, np.ndarray]]:
        for j in range(self.q):
            rows = np.flatnonzero(self.counts[:, j] >= 1)
            for i in range(self.q):
                if i == j:
                    continue
                moved = self.counts[rows].copy()
                moved[:, j] -= 1
                moved[:, i] += 1
                yield j, i, rows, self.index(moved)


def enumerate_lattice(N: int, q: int) -> Lattice:
    """Enumerate P_N in colex order (stars and bars, then a stable lexsort)."""
    _check_Nq(N, q)
    size = lattice_size(N, q)
    if size > MAX_LATTICE_SIZE:
        raise SizeGuardError("lattice too large", N=N, q=q, size=size,
                             limit=MAX_LATTICE_SIZE)
    bars = np.array(list(combinations(range(N + q - 1), q - 1)), dtype=np.int64)
    bars = bars.reshape(size, q - 1)
    edges = np.hstack([np.full((size, 1), -1), bars, np.full((size, 1), N + q - 1)])
    counts = np.diff(edges, axis=1) - 1
    counts = counts[np.lexsort(counts.T)]
    lat = Lattice(N, q, counts)
    if q * math.log(N + 1) < 62 * math.log(2):
        lat._keys = lat._key(counts)
    else:
        lat._lookup = {tuple(r): s for s, r in enumerate(counts.tolist())}
    return lat


def log_multinomial(counts: np.ndarray | Sequence[int]) -> np.ndarray | float:
    """``log(N! / prod n_i!)`` row-wise via log-gamma."""
    arr = np.asarray(counts, dtype=float)
    out = gammaln(arr.sum(axis=-1) + 1) - gammaln(arr + 1).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def discrete_free_energy(x: LatticePoint | np.ndarray | Sequence[int], beta: float) -> float | np.ndarray:
    """Finite-N free energy with the Stirling constant absorbed.

    Accepts one point or an (m, q) array of counts.
    """
    if beta <= 0:
        raise DomainError("beta must be positive", beta=beta)
    arr = np.asarray(x.counts if isinstance(x, LatticePoint) else x, dtype=float)
    N = arr.sum(axis=-1)
    q = arr.shape[-1]
    freq2 = (arr**2).sum(axis=-1) / N**2
    out = (-0.5 * freq2 + 0.5 / N - log_multinomial(arr) / (N * beta)
           - (q - 1) / (2 * N * beta) * np.log(2 * np.pi * N))
    return float(out) if np.ndim(out) == 0 else out


def transition_prob(x: LatticePoint, i: int, j: int, beta: float) -> float:
    """Probability of moving one spin from colour ``j`` to colour ``i``."""
    if i == j:
        raise DomainError("i and j must differ", i=i, j=j)
    n = x.counts
    if n[j] == 0:
        return 0.0
    N, q = x.N, x.q
    uphill = max(n[j] - n[i] - 1, 0)  # N * energy change, exact integer
    return n[j] / (N * q) * math.exp(-beta * uphill / N)


@dataclass
class ChainSpec:
    """Finite reversible chain: state labels, log weights, row-stochastic kernel.

    Weights are unnormalised; ``log_partition`` gives their log-sum.
    """

    states: np.ndarray
    log_weights: np.ndarray
    kernel: sp.csr_matrix
    reversible_check: bool = False
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.kernel = sp.csr_matrix(self.kernel)
        self.kernel.sort_indices()
        n = self.kernel.shape[0]
        if self.kernel.shape != (n, n) or self.log_weights.shape != (n,):
            raise ConstructionError("inconsistent chain dimensions",
                                    kernel=self.kernel.shape, weights=self.log_weights.shape)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def log_partition(self) -> float:
        return float(logsumexp(self.log_weights))

    def off_diagonal(self) -> sp.csr_matrix:
        off = self.kernel.tolil(copy=True)
        off.setdiag(0)
        out = off.tocsr()
        out.eliminate_zeros()
        out.sort_indices()
        return out

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(np.asarray(self.kernel.sum(axis=1)).ravel() - 1.0)))

    def balance_error(self) -> float:
        """Max relative detailed-balance violation over all edges (log scale)."""
        off = self.off_diagonal()
        rev = off.T.tocsr()
        rev.sort_indices()
        if not (np.array_equal(off.indptr, rev.indptr)
                and np.array_equal(off.indices, rev.indices)):
            return math.inf
        rows = np.repeat(np.arange(self.n_states), np.diff(off.indptr))
        lhs = self.log_weights[rows] + np.log(off.data)
        rhs = self.log_weights[off.indices] + np.log(rev.data)
        return float(np.max(np.abs(np.expm1(lhs - rhs)))) if off.nnz else 0.0

    def verify(self) -> "ChainSpec":
        """Run structural checks, set ``reversible_check`` and return self."""
        diag = self.kernel.diagonal()
        if np.any(diag < -ROW_SUM_TOL) or np.any(self.kernel.data < -ROW_SUM_TOL):
            raise ConstructionError("negative transition probability",
                                    min_diag=float(diag.min()))
        err = self.row_sum_error()
        if err > ROW_SUM_TOL:
            raise ConstructionError("kernel rows do not sum to 1", max_error=err)
        self.reversible_check = self.balance_error() <= BALANCE_TOL
        return self

    def stationary(self) -> np.ndarray:
        """Normalised stationary distribution."""
        return np.exp(self.log_weights - self.log_partition)

    def write_edge_list(self, out: TextIO) -> None:
        """One directed edge per line: ``a b log_weight_a prob_ab``."""
        header = " ".join(f"{k}={self.meta[k]!r}" for k in sorted(self.meta))
        out.write(f"# {header} n_states={self.n_states}\n")
        off = self.off_diagonal()
        rows = np.repeat(np.arange(self.n_states), np.diff(off.indptr))
        for a, b, p in zip(rows.tolist(), off.indices.tolist(), off.data.tolist()):
            out.write(f"{a} {b} {self.log_weights[a]!r} {p!r}\n")

    def edge_list(self) -> str:
        buf = io.StringIO()
        self.write_edge_list(buf)
        return buf.getvalue()


def build_chain(N: int, q: int, beta: float, lattice: Lattice | None = None) -> ChainSpec:
    """Lumped Metropolis chain with weights ``exp(-beta N F_N)``."""
    if not (math.isfinite(beta) and beta >= 0):
        raise DomainError("beta must be non-negative and finite", beta=beta)
    lat = lattice if lattice is not None else enumerate_lattice(N, q)
    counts = lat.counts
    rows, cols, vals = [], [], []
    for j, i, src, dst in lat._moves():
        uphill = np.maximum(counts[src, j] - counts[src, i] - 1, 0)
        vals.append(counts[src, j] / (N * q) * np.exp(-beta * uphill / N))
        rows.append(src)
        cols.append(dst)
    n = len(lat)
    off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    hold = 1.0 - np.asarray(off.sum(axis=1)).ravel()
    if np.any(hold < -ROW_SUM_TOL):
        raise ConstructionError("negative holding probability",
                                min_hold=float(hold.min()), N=N, q=q, beta=beta)
    kernel = (off + sp.diags(np.clip(hold, 0.0, None))).tocsr()
    x2 = (counts.astype(float) ** 2).sum(axis=1) / N
    log_w = (0.5 * beta * x2 - 0.5 * beta + log_multinomial(counts)
             + 0.5 * (q - 1) * math.log(2 * math.pi * N))
    chain = ChainSpec(counts, log_w, kernel,
                      meta={"model": "lumped", "N": N, "q": q, "beta": beta}).verify()
    if not chain.reversible_check:
        raise ConstructionError("lumped chain failed detailed balance",
                                error=chain.balance_error())
    return chain
