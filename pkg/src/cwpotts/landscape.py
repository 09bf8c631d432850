"""Free-energy landscape of the mean-field Potts model on the simplex.

The limiting free energy is

    F(x) = -1/2 |x|^2 + (1/beta) sum_i x_i log x_i,      x in the simplex P_q.

All critical points named here are found on symmetry subspaces where
``k`` coordinates take a common value ``t`` and the remaining ``q - k`` take
a common value ``r < t``.  Writing ``y = log(t / r)`` the stationarity
condition on such a subspace is the scalar equation

    y = beta * u(y),     u(y) = (e^y - 1) / (k e^y + q - k),    u = t - r,

which is solved in ``y`` rather than in ``u``: its derivative stays bounded
as the point approaches the boundary of the simplex, so residuals of order
1e-12 are reachable even for large ``beta``.  ``k = 1`` gives the axis
through ``m0`` and ``m_i`` (the classical mean-field equation with
``s = u``), ``k = 2`` gives the plane containing ``z_{j,k}``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq, minimize_scalar

from .errors import ClassificationError, DomainError, NumericError
from .lumped_chain import LatticePoint

__all__ = [
    "SimplexPoint",
    "PointKind",
    "CriticalPoint",
    "CriticalTemperatures",
    "RegimeReport",
    "free_energy",
    "tangent_gradient",
    "tangent_hessian",
    "hessian_index",
    "mean_field_solutions",
    "minima",
    "saddle_points",
    "critical_temperatures",
    "classify_regime",
    "closest_lattice_point",
]

SUM_TOL = 1e-12
GRAD_TOL = 1e-9
ROOT_TOL = 1e-12
BETA_TOL = 1e-10
DEGENERATE_TOL = 1e-9
_EIG_TOL = 1e-9


# ----------------------------------------------------------------------
# Points
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SimplexPoint:
    """Probability vector with ``q`` entries."""

    coords: tuple[float, ...]

    def __post_init__(self) -> None:
        arr = np.asarray(self.coords, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise DomainError("simplex point needs at least two coordinates")
        if not np.all(np.isfinite(arr)):
            raise DomainError("non-finite simplex coordinates", coords=list(arr))
        if np.any(arr < 0):
            raise DomainError("negative simplex coordinate", coords=list(arr))
        if abs(arr.sum() - 1.0) > SUM_TOL * max(1.0, arr.size):
            raise DomainError("coordinates do not sum to 1", total=float(arr.sum()))
        object.__setattr__(self, "coords", tuple(float(c) for c in arr))

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "SimplexPoint":
        return cls(tuple(float(v) for v in x))

    @classmethod
    def uniform(cls, q: int) -> "SimplexPoint":
        return cls((1.0 / q,) * q)

    @property
    def q(self) -> int:
        return len(self.coords)

    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)

    def permuted(self, perm: Sequence[int]) -> "SimplexPoint":
        return SimplexPoint(tuple(self.coords[p] for p in perm))


class PointKind(str, Enum):
    LOCAL_MIN = "local_min"
    GLOBAL_MIN = "global_min"
    SADDLE = "saddle_index_1"
    LOCAL_MAX = "local_max"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class CriticalPoint:
    """A stationary point of F together with its label.

    ``label`` is one of ``m0``, ``m_i``, ``z_0,i`` or ``z_j,k`` with colours
    counted from 1; ``indices`` holds the same integers for programmatic use.
    """

    location: SimplexPoint
    value: float
    kind: PointKind
    label: str
    indices: tuple[int, ...]
    gradient_norm: float
    index: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "indices": list(self.indices),
            "kind": self.kind.value,
            "value": self.value,
            "location": list(self.location.coords),
            "gradient_norm": self.gradient_norm,
            "hessian_index": self.index,
        }


# ----------------------------------------------------------------------
# Free energy and its derivatives
# ----------------------------------------------------------------------
def _as_array(x: SimplexPoint | Sequence[float] | np.ndarray) -> np.ndarray:
    arr = x.array() if isinstance(x, SimplexPoint) else np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite coordinates", coords=arr.tolist())
    if abs(arr.sum() - 1.0) > SUM_TOL * max(1.0, arr.size):
        raise DomainError("coordinates do not sum to 1", total=float(arr.sum()))
    return arr


def _check_beta(beta: float) -> None:
    if not (math.isfinite(beta) and beta > 0):
        raise DomainError("beta must be a positive finite number", beta=beta)


def free_energy(x: SimplexPoint | Sequence[float] | np.ndarray, beta: float,
                q: int | None = None) -> float:
    """Evaluate F at ``x``; ``0 log 0`` is taken as 0."""
    _check_beta(beta)
    arr = _as_array(x)
    if q is not None and arr.size != q:
        raise DomainError("point has wrong dimension", q=q, size=int(arr.size))
    if np.any(arr < 0):
        raise DomainError("negative coordinate", coords=arr.tolist())
    pos = arr[arr > 0]
    entropy = float(np.sum(pos * np.log(pos)))
    return -0.5 * float(arr @ arr) + entropy / beta


def _interior(x: SimplexPoint | Sequence[float] | np.ndarray) -> np.ndarray:
    arr = _as_array(x)
    if np.any(arr <= 0):
        raise DomainError("derivatives are only defined in the open simplex",
                          coords=arr.tolist())
    return arr


@lru_cache(maxsize=64)
def _tangent_basis(q: int) -> np.ndarray:
    """Orthonormal basis (q x (q-1)) of the sum-zero hyperplane."""
    return null_space(np.ones((1, q)))


def tangent_gradient(x: SimplexPoint | Sequence[float] | np.ndarray,
                     beta: float) -> np.ndarray:
    """Gradient of F projected onto the sum-zero hyperplane (ambient coordinates)."""
    _check_beta(beta)
    arr = _interior(x)
    g = -arr + np.log(arr) / beta
    return g - g.mean()


def tangent_hessian(x: SimplexPoint | Sequence[float] | np.ndarray,
                    beta: float) -> np.ndarray:
    """Hessian of F in the orthonormal tangent basis, shape (q-1, q-1)."""
    _check_beta(beta)
    arr = _interior(x)
    basis = _tangent_basis(arr.size)
    diag = 1.0 / (beta * arr) - 1.0
    return basis.T @ (diag[:, None] * basis)


def hessian_index(x: SimplexPoint | Sequence[float] | np.ndarray, beta: float,
                  tol: float = _EIG_TOL) -> tuple[int, bool]:
    """Return ``(number of negative eigenvalues, degenerate?)``."""
    eig = np.linalg.eigvalsh(tangent_hessian(x, beta))
    return int(np.sum(eig < -tol)), bool(np.any(np.abs(eig) <= tol))


# ----------------------------------------------------------------------
# Symmetric-subspace equations
# ----------------------------------------------------------------------
def _u_of_y(y: np.ndarray | float, q: int, k: int) -> np.ndarray | float:
    em = np.expm1(y)
    return em / (k * em + q)


def _sym_residual(y: float, beta: float, q: int, k: int) -> float:
    return float(y - beta * _u_of_y(y, q, k))


def _sym_roots(beta: float, q: int, k: int) -> list[float]:
    """Positive roots ``y`` of ``y = beta u(y)``, increasing.

    Any positive root satisfies ``y < beta / k`` because ``u < 1/k``.  The scan
    uses ``y / u(y) - beta``, which removes the trivial root at 0 and equals
    ``q - beta`` there.
    """
    hi = beta / k
    grid = np.unique(np.concatenate([
        np.geomspace(1e-9 * hi, hi, 1500),
        np.linspace(0.0, hi, 3001)[1:],
    ]))
    ratio = grid / _u_of_y(grid, q, k) - beta
    roots: list[float] = []
    sign = np.sign(ratio)
    for a in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        y0 = brentq(_sym_residual, grid[a], grid[a + 1], args=(beta, q, k),
                    xtol=1e-15, rtol=8.9e-16, maxiter=200)
        roots.append(float(y0))
    for a in np.flatnonzero(sign == 0):
        roots.append(float(grid[a]))
    roots = sorted(set(roots))
    for y0 in roots:
        res = abs(_sym_residual(y0, beta, q, k))
        if res > ROOT_TOL:
            raise NumericError("mean-field root did not reach tolerance",
                               beta=beta, q=q, y=y0, residual=res)
    return roots


def _sym_point(y: float, q: int, k: int, lead: Sequence[int]) -> np.ndarray:
    """Point with ``e^y r`` on coordinates ``lead`` and ``r`` elsewhere."""
    ey = math.exp(y)
    r = 1.0 / (k * ey + q - k)
    x = np.full(q, r)
    x[list(lead)] = ey * r
    return x / x.sum()


def mean_field_solutions(beta: float, q: int) -> list[float]:
    """All solutions ``s`` in [0, 1) of ``log(1+(q-1)s) - log(1-s) = beta s``.

    ``s = 0`` is always included.  Roots are polished to a residual of at most
    1e-12, measured in the logit variable described in the module docstring.
    """
    _check_beta(beta)
    _check_q(q)
    return [0.0] + [float(_u_of_y(y, q, 1)) for y in _sym_roots(beta, q, 1)]


def _check_q(q: int) -> None:
    if int(q) != q or q < 2:
        raise DomainError("q must be an integer >= 2", q=q)


# ----------------------------------------------------------------------
# Critical points
# ----------------------------------------------------------------------
def _make_point(x: np.ndarray, beta: float, kind: PointKind, label: str,
                indices: tuple[int, ...]) -> CriticalPoint:
    grad = float(np.linalg.norm(tangent_gradient(x, beta)))
    if grad > GRAD_TOL:
        raise NumericError("critical point gradient above tolerance",
                           label=label, gradient_norm=grad, beta=beta)
    idx, _ = hessian_index(x, beta)
    return CriticalPoint(SimplexPoint.from_array(x), free_energy(x, beta), kind,
                         label, indices, grad, idx)


def _m_kind(beta: float, q: int, betas: "CriticalTemperatures") -> tuple[PointKind | None,
                                                                        PointKind | None]:
    """Kinds of (m0, m_i) from the regime table; ``None`` means absent."""
    if q == 2:
        if beta <= betas.beta1:
            return PointKind.GLOBAL_MIN, None
        return None, PointKind.GLOBAL_MIN
    if beta <= betas.beta1:
        return PointKind.GLOBAL_MIN, None
    if abs(beta - betas.beta2) <= DEGENERATE_TOL:
        return PointKind.GLOBAL_MIN, PointKind.GLOBAL_MIN
    if beta < betas.beta2:
        return PointKind.GLOBAL_MIN, PointKind.LOCAL_MIN
    if beta < q:
        return PointKind.LOCAL_MIN, PointKind.GLOBAL_MIN
    return None, PointKind.GLOBAL_MIN


def minima(beta: float, q: int) -> list[CriticalPoint]:
    """``m0`` (while it is a minimum) and ``m_1 .. m_q`` (once they exist)."""
    _check_beta(beta)
    _check_q(q)
    betas = critical_temperatures(q)
    k0, ki = _m_kind(beta, q, betas)
    out: list[CriticalPoint] = []
    if k0 is not None:
        out.append(_make_point(np.full(q, 1.0 / q), beta, k0, "m0", (0,)))
    roots = _sym_roots(beta, q, 1)
    if ki is not None and roots:
        y = roots[-1]
        base = _sym_point(y, q, 1, [0])
        idx, degenerate = hessian_index(base, beta)
        if idx == 0 and not degenerate:
            for i in range(q):
                out.append(_make_point(_sym_point(y, q, 1, [i]), beta, ki,
                                       f"m_{i + 1}", (i + 1,)))
    return out


def _newton_polish(x: np.ndarray, beta: float, max_iter: int = 50) -> np.ndarray:
    """Newton iteration on the tangent gradient, staying inside the simplex."""
    basis = _tangent_basis(x.size)
    for _ in range(max_iter):
        g = tangent_gradient(x, beta)
        if np.linalg.norm(g) <= 1e-14:
            break
        step = basis @ np.linalg.solve(tangent_hessian(x, beta), basis.T @ g)
        t = 1.0
        while np.any(x - t * step <= 0):
            t *= 0.5
        x = x - t * step
        x = x / x.sum()
    if np.linalg.norm(tangent_gradient(x, beta)) > GRAD_TOL:
        raise NumericError("saddle search did not converge", beta=beta,
                           gradient_norm=float(np.linalg.norm(tangent_gradient(x, beta))))
    return x


def _z0_y(beta: float, q: int) -> float | None:
    roots = _sym_roots(beta, q, 1)
    if beta >= q or len(roots) < 2:
        return None
    return roots[0]


def _zjk_y(beta: float, q: int) -> float | None:
    """Root of the two-coordinate equation whose point has index 1."""
    if q < 3:
        return None
    for y in _sym_roots(beta, q, 2):
        idx, degenerate = hessian_index(_sym_point(y, q, 2, [0, 1]), beta)
        if idx == 1 and not degenerate:
            return y
    return None


def saddle_points(beta: float, q: int) -> list[CriticalPoint]:
    """Index-1 saddles ``z_{0,i}`` and ``z_{j,k}`` present at ``beta``.

    For ``q = 2`` the only saddle above the critical value is ``m0`` itself,
    returned under the label ``z_1,2``.
    """
    _check_beta(beta)
    _check_q(q)
    betas = critical_temperatures(q)
    if beta <= betas.beta1:
        raise DomainError("no saddles below beta1", beta=beta, beta1=betas.beta1)
    out: list[CriticalPoint] = []
    if q == 2:
        pt = _make_point(np.full(2, 0.5), beta, PointKind.SADDLE, "z_1,2", (1, 2))
        if pt.index != 1:
            raise ClassificationError("m0 is not a saddle", beta=beta, index=pt.index)
        return [pt]
    y0 = _z0_y(beta, q)
    if y0 is not None:
        for i in range(q):
            pt = _make_point(_sym_point(y0, q, 1, [i]), beta, PointKind.SADDLE,
                             f"z_0,{i + 1}", (0, i + 1))
            if pt.index != 1:
                raise ClassificationError("z_0,i has wrong index", beta=beta,
                                          index=pt.index)
            out.append(pt)
    yjk = _zjk_y(beta, q)
    if yjk is not None:
        for j in range(q):
            for k in range(j + 1, q):
                x = _newton_polish(_sym_point(yjk, q, 2, [j, k]), beta)
                pt = _make_point(x, beta, PointKind.SADDLE, f"z_{j + 1},{k + 1}",
                                 (j + 1, k + 1))
                if pt.index != 1:
                    raise ClassificationError("z_j,k has wrong index", beta=beta,
                                              index=pt.index)
                out.append(pt)
    return out


# ----------------------------------------------------------------------
# Critical temperatures
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class CriticalTemperatures:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    degenerate: bool = False

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.beta1, self.beta2, self.beta3, self.beta4)


def _beta_of_s(s: float, q: int) -> float:
    return (math.log1p((q - 1) * s) - math.log1p(-s)) / s


def _depth_gap(beta: float, q: int) -> float:
    """F(m_i) - F(m0); positive while m0 is the deeper well."""
    roots = _sym_roots(beta, q, 1)
    if not roots:
        return math.inf
    return (free_energy(_sym_point(roots[-1], q, 1, [0]), beta)
            - free_energy(np.full(q, 1.0 / q), beta))


def _gate_gap(beta: float, q: int) -> float:
    """F(z_jk) - F(z_0j); ``inf`` while z_jk does not exist."""
    yjk = _zjk_y(beta, q)
    y0 = _z0_y(beta, q)
    if yjk is None or y0 is None:
        return math.inf
    return (free_energy(_sym_point(yjk, q, 2, [0, 1]), beta)
            - free_energy(_sym_point(y0, q, 1, [0]), beta))


@lru_cache(maxsize=32)
def critical_temperatures(q: int) -> CriticalTemperatures:
    """The four temperatures ``beta1 < beta2 <= beta3 <= beta4 = q``.

    ``beta1`` is the minimum over ``s`` of the inverse mean-field map
    ``beta(s)``; a nonzero solution exists exactly when ``beta >= beta1``.
    ``beta2`` and ``beta3`` are bracketed roots of the well-depth and
    gate-height differences.  ``q = 2`` returns the single Curie-Weiss value
    2 four times with ``degenerate=True``.
    """
    _check_q(q)
    if q == 2:
        return CriticalTemperatures(2.0, 2.0, 2.0, 2.0, degenerate=True)
    res = minimize_scalar(_beta_of_s, bounds=(1e-12, 1 - 1e-12), args=(q,),
                          method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    if not res.success:
        raise NumericError("beta1 minimisation failed", q=q, message=res.message)
    beta1 = float(res.fun)
    beta4 = float(q)

    lo = beta1 + 1e-6
    if not _depth_gap(lo, q) > 0 or not _depth_gap(beta4 - 1e-9, q) < 0:
        raise NumericError("beta2 bracket failure", q=q)
    beta2 = brentq(_depth_gap, lo, beta4 - 1e-9, args=(q,), xtol=1e-13, rtol=1e-15)

    grid = np.linspace(beta2, beta4, 201)[1:-1]
    gaps = np.array([_gate_gap(b, q) for b in grid])
    below = np.flatnonzero(gaps < 0)
    if below.size == 0:
        beta3 = beta4
    else:
        a = below[0]
        if a == 0:
            raise NumericError("beta3 bracket failure", q=q)
        lo3, hi3 = grid[a - 1], grid[a]
        # The gap is +inf before z_jk appears; bisect on the sign directly.
        for _ in range(200):
            mid = 0.5 * (lo3 + hi3)
            if _gate_gap(mid, q) < 0:
                hi3 = mid
            else:
                lo3 = mid
            if hi3 - lo3 <= 1e-12:
                break
        beta3 = 0.5 * (lo3 + hi3)
    return CriticalTemperatures(beta1, float(beta2), float(beta3), beta4)


# ----------------------------------------------------------------------
# Regime classification
# ----------------------------------------------------------------------
REGIMES = ("(0,b1]", "(b1,b2)", "{b2}", "(b2,b3)", "{b3}", "(b3,b4)", "{b4}", "(b4,inf)")


def _regime_label(beta: float, betas: CriticalTemperatures) -> tuple[str, list[str]]:
    b1, b2, b3, b4 = betas.as_tuple()
    notes = []
    for name, b in (("beta1", b1), ("beta2", b2), ("beta3", b3), ("beta4", b4)):
        if abs(beta - b) <= DEGENERATE_TOL:
            notes.append(f"beta within {DEGENERATE_TOL:g} of {name}={b!r}")
    if betas.degenerate:
        return ("(0,b1]" if beta <= b1 else "(b4,inf)"), notes
    # Point regimes take precedence; b4 wins when b3 == b4.
    if abs(beta - b4) <= DEGENERATE_TOL:
        return "{b4}", notes
    if abs(beta - b3) <= DEGENERATE_TOL:
        return "{b3}", notes
    if abs(beta - b2) <= DEGENERATE_TOL:
        return "{b2}", notes
    if beta <= b1:
        return "(0,b1]", notes
    if beta < b2:
        return "(b1,b2)", notes
    if beta < b3:
        return "(b2,b3)", notes
    if beta < b4:
        return "(b3,b4)", notes
    return "(b4,inf)", notes


@dataclass
class RegimeReport:
    beta: float
    q: int
    betas: CriticalTemperatures
    regime: str
    minima: list[CriticalPoint]
    gates: dict[tuple[int, int], list[CriticalPoint]]
    comm_heights: dict[tuple[int, int], float]
    warnings: list[str] = field(default_factory=list)

    def point(self, label: str) -> CriticalPoint:
        for p in self.minima:
            if p.label == label:
                return p
        for pts in self.gates.values():
            for p in pts:
                if p.label == label:
                    return p
        raise KeyError(label)

    def barrier(self, pair: tuple[int, int], start: int) -> float:
        """``c_{pair} - F(m_start)``."""
        label = "m0" if start == 0 else f"m_{start}"
        return self.comm_heights[pair] - self.point(label).value

    def to_dict(self) -> dict[str, Any]:
        key = lambda p: f"{p[0]},{p[1]}"  # noqa: E731
        return {
            "beta": self.beta,
            "q": self.q,
            "betas": list(self.betas.as_tuple()),
            "betas_degenerate": self.betas.degenerate,
            "regime": self.regime,
            "minima": [p.to_dict() for p in self.minima],
            "gates": {key(k): [p.label for p in v] for k, v in self.gates.items()},
            "saddles": [p.to_dict() for p in self._saddles()],
            "comm_heights": {key(k): v for k, v in self.comm_heights.items()},
            "warnings": list(self.warnings),
        }

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def _saddles(self) -> list[CriticalPoint]:
        seen: dict[str, CriticalPoint] = {}
        for pts in self.gates.values():
            for p in pts:
                seen.setdefault(p.label, p)
        return list(seen.values())

    def text_table(self) -> str:
        lines = [f"q={self.q}  beta={self.beta!r}  regime={self.regime}",
                 "betas: " + "  ".join(f"{b:.12f}" for b in self.betas.as_tuple())]
        rows = [("label", "kind", "F", "coords")]
        for p in self.minima + self._saddles():
            rows.append((p.label, p.kind.value, f"{p.value:.12f}",
                         " ".join(f"{c:.6f}" for c in p.location.coords)))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        for k, v in self.comm_heights.items():
            lines.append(f"c[{k[0]},{k[1]}] = {v:.12f}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def classify_regime(beta: float, q: int) -> RegimeReport:
    """Locate ``beta`` in the regime table and fill minima, gates and heights."""
    _check_beta(beta)
    _check_q(q)
    betas = critical_temperatures(q)
    regime, notes = _regime_label(beta, betas)
    for n in notes:
        warnings.warn(f"degenerate regime: {n}", RuntimeWarning, stacklevel=2)
    mins = minima(beta, q)
    gates: dict[tuple[int, int], list[CriticalPoint]] = {}
    heights: dict[tuple[int, int], float] = {}
    if regime == "(0,b1]":
        return RegimeReport(beta, q, betas, regime, mins, gates, heights, notes)

    saddles = {p.label: p for p in saddle_points(beta, q)}
    if q == 2:
        gates[(1, 2)] = [saddles["z_1,2"]]
        heights[(1, 2)] = saddles["z_1,2"].value
        return RegimeReport(beta, q, betas, regime, mins, gates, heights, notes)

    has_z0 = regime in ("(b1,b2)", "{b2}", "(b2,b3)", "{b3}", "(b3,b4)")
    if has_z0:
        for i in range(1, q + 1):
            gates[(0, i)] = [saddles[f"z_0,{i}"]]
    for j in range(1, q + 1):
        for k in range(j + 1, q + 1):
            if regime in ("(b1,b2)", "{b2}", "(b2,b3)"):
                pts = [saddles[f"z_0,{j}"], saddles[f"z_0,{k}"]]
            elif regime == "{b3}":
                pts = [saddles[f"z_0,{j}"], saddles[f"z_0,{k}"]]
                if f"z_{j},{k}" in saddles:
                    pts.append(saddles[f"z_{j},{k}"])
            elif f"z_{j},{k}" not in saddles and regime == "{b4}":
                # When beta3 == beta4 the z_jk branch merges into m0 exactly at beta = q.
                pts = [_make_point(np.full(q, 1.0 / q), beta, PointKind.DEGENERATE,
                                   "m0", (0,))]
            else:
                if f"z_{j},{k}" not in saddles:
                    raise ClassificationError("z_j,k missing above beta3",
                                              beta=beta, q=q, pair=(j, k))
                pts = [saddles[f"z_{j},{k}"]]
            gates[(j, k)] = pts
    for pair, pts in gates.items():
        heights[pair] = max(p.value for p in pts)
    return RegimeReport(beta, q, betas, regime, mins, gates, heights, notes)


# ----------------------------------------------------------------------
# Lattice approximation
# ----------------------------------------------------------------------
def closest_lattice_point(x: SimplexPoint | Sequence[float], N: int) -> LatticePoint:
    """Nearest point of the lattice ``(1/N) N_0^q`` on the simplex.

    The squared distance is separable and convex in the counts, so the optimum
    rounds every ``N x_i`` down and hands the missing units to the largest
    fractional parts.  Ties go to the lowest colour index, which produces the
    lexicographically largest optimal count vector.
    """
    if int(N) != N or N < 2:
        raise DomainError("N must be an integer >= 2", N=N)
    arr = x.array() if isinstance(x, SimplexPoint) else np.asarray(x, dtype=float)
    scaled = arr * N
    base = np.floor(scaled + 1e-12).astype(np.int64)
    frac = scaled - base
    missing = int(N - base.sum())
    # Stable sort on the rounded negated fractions keeps index order on ties.
    order = np.argsort(-np.round(frac, 12), kind="stable")
    counts = base.copy()
    counts[order[:missing]] += 1
    return LatticePoint(tuple(int(c) for c in counts))
