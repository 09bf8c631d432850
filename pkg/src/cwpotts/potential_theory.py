"""Potential theory for finite reversible chains given as :class:`ChainSpec`.

Weights are handled in log space and shifted by their maximum before any
conductance ``c(x, y) = w(x) P(x, y)`` is formed, so results come back as
logarithms (``log_capacity``, ``log_harmonic_sum``) on the chain's own
unnormalised scale.

Two linear solvers are available for the Dirichlet problem:

``direct``
    sparse LU on ``(I - P)`` restricted to the interior.  Entries are O(1)
    whatever the weights, so the solve stays accurate on strongly metastable
    chains.  Fill-in makes it slow on high-degree graphs.
``cg``
    conjugate gradient with Jacobi preconditioning on the conductance
    Laplacian, which is symmetric positive definite.  Fast on the Hamming
    graphs of the microscopic model.

``auto`` picks ``direct`` for small or sparse chains and ``cg`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu
from scipy.special import logsumexp

from .errors import ArgumentError, NumericError
from .lumped_chain import ChainSpec

__all__ = [
    "PotentialSolution",
    "HittingTime",
    "MetastablePartition",
    "equilibrium_potential",
    "capacity",
    "dirichlet_form",
    "dirichlet_bound",
    "thomson_bound",
    "harmonic_flow",
    "path_flow",
    "mean_hitting_time",
    "absorption_times",
    "metastable_partition",
    "metastability_ratio",
]

RESIDUAL_TOL = 1e-10
CLAMP_TOL = 1e-9
FLOW_TOL = 1e-12
DIRECT_MAX_STATES = 1000
DIRECT_MAX_ROW_NNZ = 13

StateSet = Iterable[int] | np.ndarray


def _index_set(chain: ChainSpec, S: StateSet, name: str) -> np.ndarray:
    arr = np.asarray(S)
    if arr.dtype == bool:
        if arr.shape != (chain.n_states,):
            raise ArgumentError(f"boolean mask {name} has wrong length")
        arr = np.flatnonzero(arr)
    arr = np.unique(arr.astype(np.int64).ravel())
    if arr.size == 0:
        raise ArgumentError(f"set {name} is empty")
    if arr[0] < 0 or arr[-1] >= chain.n_states:
        raise ArgumentError(f"set {name} has out-of-range states")
    return arr


def _split(chain: ChainSpec, A: StateSet, B: StateSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = _index_set(chain, A, "A")
    b = _index_set(chain, B, "B")
    overlap = np.intersect1d(a, b)
    if overlap.size:
        raise ArgumentError("A and B must be disjoint", overlap=overlap[:10].tolist())
    inner = np.ones(chain.n_states, dtype=bool)
    inner[a] = False
    inner[b] = False
    return a, b, np.flatnonzero(inner)


def _shifted_weights(chain: ChainSpec) -> tuple[np.ndarray, float]:
    shift = float(np.max(chain.log_weights))
    return np.exp(chain.log_weights - shift), shift


def _conductance(chain: ChainSpec) -> tuple[sp.csr_matrix, float]:
    """Symmetrised off-diagonal conductance matrix (shifted weights) and shift."""
    w, shift = _shifted_weights(chain)
    off = chain.off_diagonal()
    c = sp.diags(w) @ off
    return ((c + c.T) * 0.5).tocsr(), shift


def _select_method(chain: ChainSpec, method: str) -> str:
    if method not in ("auto", "direct", "cg"):
        raise ArgumentError("unknown solver method", method=method)
    if method != "auto":
        return method
    n = chain.n_states
    if n <= DIRECT_MAX_STATES or chain.kernel.nnz <= DIRECT_MAX_ROW_NNZ * n:
        return "direct"
    return "cg"


@dataclass
class PotentialSolution:
    """Equilibrium potential ``h = P[tau_A < tau_B]`` and derived quantities.

    ``g`` is the complementary potential ``h_{B,A}``; with the direct solver
    it comes from its own right-hand side rather than from ``1 - h``, which
    keeps small escape probabilities accurate.
    """

    A: np.ndarray
    B: np.ndarray
    h: np.ndarray
    g: np.ndarray
    log_capacity: float
    log_harmonic_sum: float
    residual: float
    method: str
    iterations: int = 0

    @property
    def capacity(self) -> float:
        return math.exp(self.log_capacity) if self.log_capacity > -math.inf else 0.0

    @property
    def harmonic_sum(self) -> float:
        return math.exp(self.log_harmonic_sum)

    @property
    def log_mean_hitting_time(self) -> float:
        if self.log_capacity == -math.inf:
            return math.inf
        return self.log_harmonic_sum - self.log_capacity

    @property
    def mean_hitting_time(self) -> float:
        lt = self.log_mean_hitting_time
        return math.inf if lt == math.inf else math.exp(lt)

    def to_record(self, **labels: Any) -> dict[str, Any]:
        """JSON-ready record; every extensive quantity in natural log."""
        rec: dict[str, Any] = {
            "A": labels.pop("A", self.A.tolist()),
            "B": labels.pop("B", self.B.tolist()),
            "capacity_log": self.log_capacity,
            "harmonic_sum_log": self.log_harmonic_sum,
            "hitting_time_log": self.log_mean_hitting_time,
            "residual": self.residual,
        }
        rec.update(labels)
        return rec


def _solve_direct(chain: ChainSpec, a: np.ndarray, b: np.ndarray,
                  inner: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    off = chain.off_diagonal()
    escape = np.asarray(off.sum(axis=1)).ravel()
    P_II = off[inner][:, inner]
    M = (sp.diags(escape[inner]) - P_II).tocsc()
    rhs_h = np.asarray(off[inner][:, a].sum(axis=1)).ravel()
    rhs_g = np.asarray(off[inner][:, b].sum(axis=1)).ravel()
    try:
        lu = splu(M)
    except RuntimeError as exc:  # singular factor: part of the interior is cut off
        raise NumericError("interior system is singular", error=str(exc)) from exc
    rhs = np.column_stack([rhs_h, rhs_g])
    sol = lu.solve(rhs)
    res = np.linalg.norm(M @ sol - rhs, axis=0) / np.maximum(np.linalg.norm(rhs, axis=0), 1e-300)
    return sol[:, 0], sol[:, 1], float(np.max(res))


def _solve_cg(chain: ChainSpec, a: np.ndarray, inner: np.ndarray, rtol: float,
              maxiter: int | None) -> tuple[np.ndarray, float, int]:
    cond, _ = _conductance(chain)
    deg = np.asarray(cond.sum(axis=1)).ravel()
    C_II = cond[inner][:, inner]
    d_I = deg[inner]
    if np.any(d_I <= 0):
        raise NumericError("interior conductances underflow; use method='direct'")
    L = (sp.diags(d_I) - C_II).tocsr()
    rhs = np.asarray(cond[inner][:, a].sum(axis=1)).ravel()
    inv_d = 1.0 / d_I
    prec = LinearOperator(L.shape, matvec=lambda v: inv_d * v, dtype=float)
    n = inner.size
    limit = maxiter if maxiter is not None else max(50 * int(math.ceil(math.sqrt(n))), 100)
    count = [0]

    def _tick(_: np.ndarray) -> None:
        count[0] += 1

    x0 = np.clip(rhs * inv_d, 0.0, 1.0)
    sol, info = cg(L, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=limit, M=prec, callback=_tick)
    res = float(np.linalg.norm(L @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if info != 0 and res > RESIDUAL_TOL:
        raise NumericError("conjugate gradient did not converge", iterations=count[0],
                           residual=res, maxiter=limit)
    return sol, res, count[0]


def _clamp(v: np.ndarray, what: str) -> np.ndarray:
    lo, hi = float(v.min(initial=0.0)), float(v.max(initial=1.0))
    if lo < -CLAMP_TOL or hi > 1 + CLAMP_TOL:
        raise NumericError(f"{what} left [0, 1] beyond tolerance", min=lo, max=hi)
    return np.clip(v, 0.0, 1.0)


def dirichlet_form(chain: ChainSpec, f: np.ndarray) -> float:
    """``E(f) = 1/2 sum_{x,y} w(x) P(x,y) (f(x) - f(y))^2`` (unnormalised)."""
    log_e = _log_dirichlet_form(chain, np.asarray(f, dtype=float))
    return math.exp(log_e) if log_e > -math.inf else 0.0


def _log_dirichlet_form(chain: ChainSpec, f: np.ndarray) -> float:
    cond, shift = _conductance(chain)
    coo = sp.triu(cond, k=1).tocoo()
    energy = float(np.sum(coo.data * (f[coo.row] - f[coo.col]) ** 2))
    return math.log(energy) + shift if energy > 0 else -math.inf


def equilibrium_potential(chain: ChainSpec, A: StateSet, B: StateSet, *,
                          method: str = "auto", rtol: float = 1e-12,
                          maxiter: int | None = None) -> PotentialSolution:
    """Solve the Dirichlet problem ``(I - P) h = 0`` off ``A u B``, ``h|_A = 1``, ``h|_B = 0``.

    The capacity is evaluated as the Dirichlet energy of ``h``, which equals
    the escape flux out of ``A`` and is insensitive to cancellation near the
    boundary.
    """
    a, b, inner = _split(chain, A, B)
    n = chain.n_states
    h = np.zeros(n)
    g = np.zeros(n)
    h[a] = 1.0
    g[b] = 1.0
    chosen = _select_method(chain, method)
    residual, iters = 0.0, 0
    if inner.size:
        if chosen == "direct":
            hi, gi, residual = _solve_direct(chain, a, b, inner)
        else:
            hi, residual, iters = _solve_cg(chain, a, inner, rtol, maxiter)
            gi = 1.0 - hi
        if residual > RESIDUAL_TOL:
            raise NumericError("linear solve residual above tolerance", residual=residual,
                               method=chosen)
        h[inner] = _clamp(hi, "h")
        g[inner] = _clamp(gi, "g")
    log_cap = _log_dirichlet_form(chain, h)
    w, shift = _shifted_weights(chain)
    hs = float(w @ h)
    log_hs = math.log(hs) + shift if hs > 0 else -math.inf
    return PotentialSolution(a, b, h, g, log_cap, log_hs, residual, chosen, iters)


def capacity(chain: ChainSpec, A: StateSet, B: StateSet, **solver: Any) -> float:
    """Unnormalised capacity ``sum_{x in A} w(x) P_x[tau_B < tau_A]``."""
    return equilibrium_potential(chain, A, B, **solver).capacity


# ----------------------------------------------------------------------
# Variational principles
# ----------------------------------------------------------------------
def dirichlet_bound(chain: ChainSpec, A: StateSet, B: StateSet, test: np.ndarray,
                    tol: float = 1e-12) -> float:
    """Dirichlet energy of an admissible test function; an upper bound on the capacity."""
    a, b, _ = _split(chain, A, B)
    f = np.asarray(test, dtype=float)
    if f.shape != (chain.n_states,):
        raise ArgumentError("test function has wrong length", length=f.shape)
    if np.any(f < -tol) or np.any(f > 1 + tol):
        raise ArgumentError("test function must take values in [0, 1]")
    if np.any(np.abs(f[a] - 1.0) > tol) or np.any(np.abs(f[b]) > tol):
        raise ArgumentError("test function violates boundary values")
    return dirichlet_form(chain, f)


def harmonic_flow(chain: ChainSpec, sol: PotentialSolution) -> sp.csr_matrix:
    """Unit flow ``c(x,y) (h(x) - h(y)) / cap``; attains the Thomson supremum."""
    cond, shift = _conductance(chain)
    coo = cond.tocoo()
    scale = math.exp(shift - sol.log_capacity)
    data = coo.data * (sol.h[coo.row] - sol.h[coo.col]) * scale
    return sp.csr_matrix((data, (coo.row, coo.col)), shape=cond.shape)


def path_flow(chain: ChainSpec, path: Sequence[int]) -> sp.csr_matrix:
    """Unit flow along consecutive states of ``path`` (must be chain edges)."""
    n = chain.n_states
    rows, cols, vals = [], [], []
    for x, y in zip(path[:-1], path[1:]):
        rows += [x, y]
        cols += [y, x]
        vals += [1.0, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def thomson_bound(chain: ChainSpec, A: StateSet, B: StateSet, flow: sp.spmatrix,
                  tol: float = FLOW_TOL) -> float:
    """``1 / D(flow)`` for a unit ``A -> B`` flow; a lower bound on the capacity."""
    a, b, inner = _split(chain, A, B)
    phi = sp.csr_matrix(flow, dtype=float)
    if phi.shape != (chain.n_states, chain.n_states):
        raise ArgumentError("flow has wrong shape", shape=phi.shape)
    asym = abs(phi + phi.T)
    if asym.nnz and asym.max() > tol:
        raise ArgumentError("flow is not antisymmetric", max_violation=float(asym.max()))
    throughput = np.asarray(abs(phi).sum(axis=1)).ravel()
    div = np.asarray(phi.sum(axis=1)).ravel()
    bad = inner[np.abs(div[inner]) > tol * np.maximum(1.0, throughput[inner])]
    if bad.size:
        raise ArgumentError("flow not conserved", state=int(bad[0]),
                            divergence=float(div[bad[0]]))
    out_of_a = float(div[a].sum())
    if abs(out_of_a - 1.0) > tol * max(1.0, float(throughput[a].sum())):
        raise ArgumentError("flow does not carry unit flux out of A", flux=out_of_a)
    cond, shift = _conductance(chain)
    coo = sp.triu(phi, k=1).tocoo()
    c = np.asarray(cond[coo.row, coo.col]).ravel()
    if np.any((c <= 0) & (coo.data != 0)):
        raise ArgumentError("flow uses a pair that is not an edge of the chain")
    keep = coo.data != 0
    energy = float(np.sum(coo.data[keep] ** 2 / c[keep]))
    if energy == 0:
        raise ArgumentError("flow is identically zero")
    return math.exp(shift - math.log(energy))


# ----------------------------------------------------------------------
# Hitting times
# ----------------------------------------------------------------------
@dataclass
class HittingTime:
    """``E_nu[tau_B]`` with ``nu`` the last-exit biased law on ``A``."""

    A: np.ndarray
    nu: np.ndarray
    time: float
    log_time: float
    solution: PotentialSolution


def _escape_probabilities(chain: ChainSpec, sol: PotentialSolution) -> np.ndarray:
    """``P_x[tau_B < tau_A]`` for ``x in A`` (one step, then the potential ``g``)."""
    off = chain.off_diagonal()[sol.A]
    return np.asarray(off @ sol.g).ravel()


def mean_hitting_time(chain: ChainSpec, A: StateSet, B: StateSet, **solver: Any) -> HittingTime:
    """Mean hitting time of ``B`` from the last-exit biased distribution on ``A``.

    A zero capacity (``B`` unreachable) yields ``time = inf`` and a uniform
    ``nu`` instead of raising.
    """
    sol = equilibrium_potential(chain, A, B, **solver)
    esc = _escape_probabilities(chain, sol)
    with np.errstate(divide="ignore"):
        log_nu = chain.log_weights[sol.A] + np.log(esc)
    if np.all(log_nu == -np.inf):
        nu = np.full(sol.A.size, 1.0 / sol.A.size)
    else:
        nu = np.exp(log_nu - logsumexp(log_nu))
    lt = sol.log_mean_hitting_time
    return HittingTime(sol.A, nu, sol.mean_hitting_time, lt, sol)


def absorption_times(chain: ChainSpec, B: StateSet) -> np.ndarray:
    """Expected steps to reach ``B`` from every state (0 on ``B``); direct solve."""
    b = _index_set(chain, B, "B")
    free = np.setdiff1d(np.arange(chain.n_states), b)
    t = np.zeros(chain.n_states)
    if free.size:
        off = chain.off_diagonal()
        escape = np.asarray(off.sum(axis=1)).ravel()
        M = (sp.diags(escape[free]) - off[free][:, free]).tocsc()
        t[free] = splu(M).solve(np.ones(free.size))
    return t


# ----------------------------------------------------------------------
# Metastable structure
# ----------------------------------------------------------------------
@dataclass
class MetastablePartition:
    assignment: np.ndarray
    valley_weights: np.ndarray
    log_valley_weights: np.ndarray
    potentials: np.ndarray

    def valley(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)


def _log_mass(chain: ChainSpec, S: np.ndarray) -> float:
    return float(logsumexp(chain.log_weights[S])) if S.size else -math.inf


def metastable_partition(chain: ChainSpec, M: Sequence[StateSet], *,
                         tie_tol: float = 1e-12, **solver: Any) -> MetastablePartition:
    """Assign each state to the set ``M_i`` it most likely reaches first.

    Ties (within ``tie_tol``) go to the set of larger mass, then lower index;
    ``valley_weights`` instead splits a tied state's mass evenly.
    """
    sets = [_index_set(chain, m, f"M[{i}]") for i, m in enumerate(M)]
    allm = np.concatenate(sets)
    if np.unique(allm).size != allm.size:
        raise ArgumentError("metastable sets must be disjoint")
    K = len(sets)
    pots = np.zeros((K, chain.n_states))
    for i, Mi in enumerate(sets):
        if K == 1:
            pots[i] = 1.0
            continue
        rest = np.concatenate([s for j, s in enumerate(sets) if j != i])
        pots[i] = equilibrium_potential(chain, Mi, rest, **solver).h
    masses = np.array([_log_mass(chain, s) for s in sets])
    # Preference order: larger mass first, then smaller index.
    pref = np.lexsort((np.arange(K), -masses))
    best = pots.max(axis=0)
    assign = np.full(chain.n_states, -1, dtype=np.int64)
    for i in pref[::-1]:
        assign[pots[i] >= best - tie_tol] = i
    # Exact ties (symmetry lines) share their mass evenly between the tied valleys.
    tied = pots >= best - tie_tol
    with np.errstate(divide="ignore"):
        share = np.log(tied) - np.log(tied.sum(axis=0))
    log_vw = logsumexp(chain.log_weights[None, :] + share, axis=1)
    shift = chain.log_partition
    return MetastablePartition(assign, np.exp(log_vw - shift), log_vw, pots)


def _green_diagonal(chain: ChainSpec, free: np.ndarray, block: int = 256) -> np.ndarray:
    """Diagonal of ``((I - P)|_free)^{-1}`` by blocked LU solves."""
    off = chain.off_diagonal()
    escape = np.asarray(off.sum(axis=1)).ravel()
    M = (sp.diags(escape[free]) - off[free][:, free]).tocsc()
    lu = splu(M)
    n = free.size
    diag = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rhs = np.zeros((n, stop - start))
        rhs[np.arange(start, stop), np.arange(stop - start)] = 1.0
        diag[start:stop] = lu.solve(rhs)[np.arange(start, stop), np.arange(stop - start)]
    return diag


def metastability_ratio(chain: ChainSpec, M: Sequence[StateSet], **solver: Any) -> float:
    """Computable upper surrogate for the rho of the metastability definition.

    Numerator ``K max_j cap(M_j, M \\ M_j) / mu[M_j]``.  Denominator
    ``min_{x not in M} P_x[tau_M < tau_x] / |S|``, the singleton lower bound
    on the minimum over all subsets of the complement.  The singleton escape
    probability equals ``1 / G(x, x)`` for the Green function of the chain
    killed on ``M``.
    """
    sets = [_index_set(chain, m, f"M[{i}]") for i, m in enumerate(M)]
    allm = np.concatenate(sets)
    if np.unique(allm).size != allm.size:
        raise ArgumentError("metastable sets must be disjoint")
    K = len(sets)
    if K >= 2:
        logs = []
        for i, Mi in enumerate(sets):
            rest = np.concatenate([s for j, s in enumerate(sets) if j != i])
            sol = equilibrium_potential(chain, Mi, rest, **solver)
            logs.append(sol.log_capacity - _log_mass(chain, Mi))
        numerator = K * math.exp(max(logs))
    else:
        numerator = 0.0
    free = np.setdiff1d(np.arange(chain.n_states), allm)
    if free.size == 0:
        return 0.0
    escape = 1.0 / _green_diagonal(chain, free)
    denominator = float(escape.min()) / chain.n_states
    return numerator / denominator
