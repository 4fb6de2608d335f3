"""Grid solver for ``sigma(|Du + xi|) * Laplace(u) = f`` and oscillation measurements.

The solver is a damped Picard iteration: freeze the gradient, solve the
Poisson problem ``Laplace(u) = f / max(sigma(|Du + xi|), floor)`` directly, and
under-relax.  Gradient magnitudes use the root mean square of the forward and
backward differences, which stays positive at symmetric critical points where
a centered difference would vanish and send ``f / sigma`` to the floor.

Two geometries are supported: the interval ``(-1, 1)`` and the unit disk
embedded in a square grid, whose exterior neighbours take the boundary value
of the nearest point on the circle.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import linalg as splinalg

from . import modulus as mod
from .errors import ConfigError, ConvergenceError, DomainError

log = logging.getLogger(__name__)

BENCHMARK_BOUNDARY = 2.0 * math.sqrt(2.0) / 3.0

Source = Union[float, Callable[..., np.ndarray]]


@dataclass(frozen=True)
class ProblemSpec:
    """``sigma(|Du + xi|) Laplace(u) = f`` on the unit ball with Dirichlet data.

    ``source`` is a constant or a vectorized function of the coordinates;
    ``boundary`` is a vectorized function of the coordinates evaluated on
    the boundary (``x = +-1`` in 1D, the unit circle in 2D).
    """

    dimension: int
    sigma: mod.DegeneracyLaw
    source: Source = 0.0
    boundary: Optional[Callable[..., np.ndarray]] = None
    xi: Union[float, tuple] = 0.0
    h: float = 1e-2
    floor: float = 1e-8
    relax: float = 0.5

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        if not isinstance(self.sigma, mod.DegeneracyLaw):
            raise ConfigError("sigma must be a DegeneracyLaw")
        if not (self.h > 0 and self.h <= 0.5):
            raise ConfigError("mesh spacing h must lie in (0, 1/2]")
        if not self.floor > 0:
            raise ConfigError("regularization floor must be positive")
        if not 0 < self.relax <= 1:
            raise ConfigError("relaxation factor must lie in (0, 1]")
        if not np.all(np.isfinite(np.atleast_1d(np.asarray(self.xi, dtype=float)))):
            raise ConfigError("xi must be finite")

    @property
    def xi_vector(self) -> np.ndarray:
        v = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if v.size == 1 and self.dimension == 2:
            v = np.array([v[0], 0.0])
        if v.size != self.dimension:
            raise ConfigError("xi must have one component per dimension")
        return v

    def source_values(self, *coords) -> np.ndarray:
        if callable(self.source):
            out = np.asarray(self.source(*coords), dtype=float)
            return np.broadcast_to(out, coords[0].shape).copy()
        return np.full(coords[0].shape, float(self.source))

    def boundary_values(self, *coords) -> np.ndarray:
        if self.boundary is None:
            raise ConfigError("problem has no boundary data")
        out = np.asarray(self.boundary(*coords), dtype=float)
        return np.broadcast_to(out, coords[0].shape).copy()


@dataclass(frozen=True)
class GridSolution:
    problem: ProblemSpec
    coords: tuple  # (x,) in 1D, (X, Y) in 2D
    values: np.ndarray
    mask: np.ndarray  # nodes of the closed domain (interior plus boundary)
    interior: np.ndarray
    residual_norm: float
    iterations: int
    regularization_floor: float
    floor_activations: int
    history: tuple = field(default=(), repr=False)

    @property
    def h(self) -> float:
        return self.problem.h

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Domain nodes as an ``(m, d)`` array with their values."""
        if self.problem.dimension == 1:
            return self.coords[0][:, None], self.values
        X, Y = self.coords
        sel = self.mask
        return np.column_stack([X[sel], Y[sel]]), self.values[sel]

    def write_csv(self, path) -> None:
        pts, vals = self.points()
        cols = ["x", "u"] if pts.shape[1] == 1 else ["x", "y", "u"]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for p, v in zip(pts, vals):
                w.writerow([*(repr(float(c)) for c in p), repr(float(v))])


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class ScalingRecord:
    r: float
    K: float
    u_norm: float
    f_norm: float
    r_adjusted: bool = False

    def map_back(self, v: np.ndarray) -> np.ndarray:
        """Values ``u(r x) = K v(x)``."""
        return self.K * np.asarray(v)


def normalize_problem(p: ProblemSpec, eps: float, u_bound: Optional[float] = None,
                      u_inside: Optional[Callable[..., np.ndarray]] = None,
                      samples: int = 2001) -> tuple[ProblemSpec, ScalingRecord]:
    """Rescale to ``v(x) = u(r x) / K`` with ``K = ||u|| + ||f||`` and ``r = eps``.

    The new law is ``sigma(K t / r)``, the new source ``(r^2 / K) f(r x)`` and
    the new shift ``(r / K) xi``, so ``||v|| <= 1`` and ``||f_bar|| < eps``.
    When ``r > K`` the inverse of the new law would grow, so ``r`` is shrunk
    to ``K``.  Boundary data for ``v`` need values of ``u`` inside the ball;
    pass them as ``u_inside`` (otherwise the new problem has no boundary).
    Without ``u_bound`` the sup norm of ``u`` is estimated by the boundary
    maximum plus ``||f|| / (2 d)``, the bound for the non-degenerate operator.
    """
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    d = p.dimension
    grid = np.linspace(-1.0, 1.0, samples)
    if d == 1:
        f_norm = float(np.max(np.abs(p.source_values(grid))))
    else:
        X, Y = np.meshgrid(grid[::4], grid[::4], indexing="ij")
        inside = X ** 2 + Y ** 2 <= 1
        f_norm = float(np.max(np.abs(p.source_values(X, Y)[inside])))
    if u_bound is None:
        if d == 1:
            b = np.abs(p.boundary_values(np.array([-1.0, 1.0])))
        else:
            ang = np.linspace(0, 2 * math.pi, 721)
            b = np.abs(p.boundary_values(np.cos(ang), np.sin(ang)))
        u_bound = float(np.max(b)) + f_norm / (2 * d)
    if not u_bound >= 0:
        raise DomainError("u_bound must be non-negative")
    K = u_bound + f_norm
    if K == 0:
        K = 1.0
    r = eps
    adjusted = False
    if r > K:
        log.warning("r = %g exceeds K = %g; shrinking r to K", r, K)
        r, adjusted = K, True
    sigma = p.sigma.sigma
    sigma_bar = mod.rescale(sigma, 1.0, K / r)
    law = mod.DegeneracyLaw(sigma_bar, normalized=sigma_bar.domain_end >= 1 and
                            float(sigma_bar(1.0)) >= 1.0,
                            sandwich_constant=p.sigma.sandwich_constant)
    src = p.source
    if callable(src):
        new_src = lambda *x: (r * r / K) * np.asarray(src(*(r * c for c in x)))  # noqa: E731
    else:
        new_src = (r * r / K) * float(src)
    new_bdry = None
    if u_inside is not None:
        new_bdry = lambda *x: np.asarray(u_inside(*(r * c for c in x))) / K  # noqa: E731
    xi = tuple((r / K) * p.xi_vector) if d == 2 else float((r / K) * p.xi_vector[0])
    q = replace(p, sigma=law, source=new_src, boundary=new_bdry, xi=xi)
    return q, ScalingRecord(r, K, u_bound, f_norm, adjusted)


# ---------------------------------------------------------------------------
# solver


def _sigma_of(p: ProblemSpec, g: np.ndarray) -> np.ndarray:
    s = p.sigma.sigma
    out = np.empty_like(g)
    pos = g > 0
    out[~pos] = 0.0
    if np.any(pos):
        top = s.domain_end
        out[pos] = np.asarray(s.fn(np.minimum(g[pos], top)), dtype=float)
    return out


def _solve_1d(p: ProblemSpec, tol: float, max_iter: int, initial=None) -> GridSolution:
    n = int(round(2.0 / p.h))
    x = np.linspace(-1.0, 1.0, n + 1)
    h = x[1] - x[0]
    ends = p.boundary_values(np.array([-1.0, 1.0]))
    f = p.source_values(x[1:-1])
    xi = float(p.xi_vector[0])
    u = ends[0] + (ends[1] - ends[0]) * (x + 1.0) / 2.0 if initial is None else np.array(initial)
    u[0], u[-1] = ends
    m = n - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    history = []
    activations = 0

    def grad(v):
        dp = (v[2:] - v[1:-1]) / h + xi
        dm = (v[1:-1] - v[:-2]) / h + xi
        return np.sqrt(0.5 * (dp * dp + dm * dm))

    for it in range(1, max_iter + 1):
        sig = _sigma_of(p, grad(u))
        low = sig < p.floor
        activations = int(np.count_nonzero(low))
        rhs = h * h * f / np.maximum(sig, p.floor)
        rhs[0] -= u[0]
        rhs[-1] -= u[-1]
        sol = linalg.solve_banded((1, 1), ab, rhs)
        new = u.copy()
        new[1:-1] = (1 - p.relax) * u[1:-1] + p.relax * sol
        change = float(np.max(np.abs(new - u)))
        u = new
        history.append(change)
        if change < tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not reach {tol} in {max_iter} steps",
                               history)
    lap = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)
    res = float(np.max(np.abs(np.maximum(_sigma_of(p, grad(u)), p.floor) * lap - f))) if m else 0.0
    mask = np.ones(n + 1, dtype=bool)
    interior = mask.copy()
    interior[[0, -1]] = False
    return GridSolution(p, (x,), u, mask, interior, res, it, p.floor, activations, tuple(history))


def _disk_layout(h: float):
    n = int(round(2.0 / h))
    g = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    inside = X ** 2 + Y ** 2 < 1.0 - 1e-12
    inside[[0, -1], :] = False
    inside[:, [0, -1]] = False
    nb = np.zeros_like(inside)
    nb[1:, :] |= inside[:-1, :]
    nb[:-1, :] |= inside[1:, :]
    nb[:, 1:] |= inside[:, :-1]
    nb[:, :-1] |= inside[:, 1:]
    ring = nb & ~inside
    return g, X, Y, inside, ring


def _solve_2d(p: ProblemSpec, tol: float, max_iter: int, initial=None) -> GridSolution:
    g, X, Y, inside, ring = _disk_layout(p.h)
    h = g[1] - g[0]
    idx = -np.ones(X.shape, dtype=np.int64)
    idx[inside] = np.arange(int(inside.sum()))
    u = np.zeros(X.shape)
    rad = np.hypot(X[ring], Y[ring])
    u[ring] = p.boundary_values(X[ring] / rad, Y[ring] / rad)
    if initial is not None:
        u[inside] = np.asarray(initial)[inside]
    else:
        u[inside] = float(np.mean(u[ring]))
    f = p.source_values(X[inside], Y[inside])
    xi = p.xi_vector

    ii, jj = np.nonzero(inside)
    rows, cols, vals = [np.arange(ii.size)], [np.arange(ii.size)], [np.full(ii.size, -4.0)]
    bnd = np.zeros(ii.size)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        k = idx[ni, nj]
        own = k >= 0
        rows.append(np.nonzero(own)[0])
        cols.append(k[own])
        vals.append(np.ones(int(own.sum())))
        bnd[~own] += u[ni[~own], nj[~own]]
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ii.size, ii.size))
    lu = splinalg.splu(A)

    def grad(v):
        c = v[ii, jj]
        fx = (v[ii + 1, jj] - c) / h + xi[0]
        bx = (c - v[ii - 1, jj]) / h + xi[0]
        fy = (v[ii, jj + 1] - c) / h + xi[1]
        by = (c - v[ii, jj - 1]) / h + xi[1]
        return np.sqrt(0.5 * (fx * fx + bx * bx + fy * fy + by * by))

    history = []
    activations = 0
    for it in range(1, max_iter + 1):
        sig = _sigma_of(p, grad(u))
        activations = int(np.count_nonzero(sig < p.floor))
        rhs = h * h * f / np.maximum(sig, p.floor) - bnd
        sol = lu.solve(rhs)
        old = u[inside]
        new = (1 - p.relax) * old + p.relax * sol
        change = float(np.max(np.abs(new - old)))
        u[inside] = new
        history.append(change)
        if change < tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not reach {tol} in {max_iter} steps",
                               history)
    c = u[ii, jj]
    lap = (u[ii + 1, jj] + u[ii - 1, jj] + u[ii, jj + 1] + u[ii, jj - 1] - 4 * c) / (h * h)
    res = float(np.max(np.abs(np.maximum(_sigma_of(p, grad(u)), p.floor) * lap - f)))
    mask = inside | ring
    return GridSolution(p, (X, Y), u, mask, inside, res, it, p.floor, activations, tuple(history))


def solve(p: ProblemSpec, tol: float = 1e-10, max_iter: int = 2000, initial=None) -> GridSolution:
    """Damped Picard solve; raises :class:`ConvergenceError` with the change history."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    if p.dimension == 1:
        return _solve_1d(p, tol, max_iter, initial)
    return _solve_2d(p, tol, max_iter, initial)


def benchmark_problem(h: float = 1e-3, xi: float = 0.0, dimension: int = 1) -> ProblemSpec:
    """``|u'| u'' = 1`` with boundary ``2 sqrt(2) / 3``; exact solution ``(2 sqrt 2 / 3)|x|^1.5``."""
    law = mod.DegeneracyLaw(mod.power(1.0))
    return ProblemSpec(dimension, law, 1.0, lambda *c: np.full(c[0].shape, BENCHMARK_BOUNDARY),
                       xi=xi, h=h)


def benchmark_exact(x) -> np.ndarray:
    return BENCHMARK_BOUNDARY * np.abs(np.asarray(x, dtype=float)) ** 1.5


# ---------------------------------------------------------------------------
# tangent planes


def minimax_affine(points: np.ndarray, values: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Chebyshev fit ``min_{A,B} max_i |u_i - A - B.x_i|`` as a linear program.

    Returns ``(E, A, B)``.
    """
    m, d = points.shape
    ones = np.ones((m, 1))
    # variables: A, B (d), E
    upper = np.hstack([-ones, -points, -ones])
    lower = np.hstack([ones, points, -ones])
    A_ub = np.vstack([upper, lower])
    b_ub = np.concatenate([-values, values])
    cost = np.zeros(d + 2)
    cost[-1] = 1.0
    bounds = [(None, None)] * (d + 1) + [(0, None)]
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"minimax fit failed: {res.message}")
    z = res.x
    return float(z[-1]), float(z[0]), np.asarray(z[1:-1])


@dataclass(frozen=True)
class DecayReport:
    probe: tuple
    ratio: float
    scales: tuple
    radii: np.ndarray
    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    tau: Optional[np.ndarray]
    predicted: Optional[np.ndarray]
    fitted_C: Optional[float]
    holder_exponent: float
    exponent_source: str  # "slope_change" or "error_decay"

    def normalized_errors(self) -> np.ndarray:
        """``E_n / r^n``; tends to 0 at a point of differentiability."""
        return self.E / self.radii

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "r_n", "E_n", "A_n", "B_n", "tau_n", "predicted_n"])
            for i, n in enumerate(self.scales):
                b = ";".join(repr(float(v)) for v in np.atleast_1d(self.B[i]))
                tau = "" if self.tau is None else repr(float(self.tau[i]))
                pred = "" if self.predicted is None else repr(float(self.predicted[i]))
                w.writerow([n, repr(float(self.radii[i])), repr(float(self.E[i])),
                            repr(float(self.A[i])), b, tau, pred])


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(x, y, 1)[0])


def fit_tangent_planes(sol: GridSolution, probe: Sequence[float], r: float, depth: int,
                       taus: Optional[Sequence[float]] = None,
                       min_points: int = 5) -> DecayReport:
    """Minimax affine fits on the balls ``B_{r^n}(probe)`` for ``n = 1..depth``.

    The gradient Hoelder exponent comes from regressing ``log |B_{n+1} - B_n|``
    on ``log r^n``.  When the slope changes are at rounding level compared with
    ``E_n / r^n`` (a symmetric probe makes every ``B_n`` equal), the exponent
    is read from the error decay instead: ``E_n ~ r^{n(1+alpha)}``.
    ``taus`` (``tau_1, tau_2, ...``) enables the prediction ``tau_n r^n`` and the
    fitted constant ``C = max E_n / (tau_n r^n)``.
    """
    if not 0 < r < 1:
        raise DomainError("ratio r must lie in (0, 1)")
    pts, vals = sol.points()
    c = np.atleast_1d(np.asarray(probe, dtype=float))
    if c.size != pts.shape[1]:
        raise DomainError("probe dimension does not match the solution")
    dist = np.sqrt(np.sum((pts - c) ** 2, axis=1))
    rows = []
    for n in range(1, depth + 1):
        rad = r ** n
        sel = dist <= rad * (1 + 1e-12)
        if np.count_nonzero(sel) < min_points:
            log.warning("ball of radius %g holds fewer than %d nodes; depth truncated to %d",
                        rad, min_points, n - 1)
            break
        if np.max(dist) < rad:
            raise DomainError("ball leaves the grid")
        E, A, B = minimax_affine(pts[sel] - c, vals[sel])
        rows.append((n, rad, E, A, B))
    if len(rows) < 2:
        raise DomainError("fewer than two usable scales")
    scales = tuple(rw[0] for rw in rows)
    radii = np.array([rw[1] for rw in rows])
    E = np.array([rw[2] for rw in rows])
    A = np.array([rw[3] for rw in rows])
    B = np.array([rw[4] for rw in rows])
    dB = np.linalg.norm(np.diff(B, axis=0).reshape(len(rows) - 1, -1), axis=1)
    slope_scale = E[:-1] / radii[:-1]
    if np.all(dB > 1e-3 * slope_scale) and np.all(dB > 0):
        alpha = _slope(np.log(radii[:-1]), np.log(dB))
        source = "slope_change"
    else:
        positive = E > 0
        if np.count_nonzero(positive) < 2:
            alpha, source = 1.0, "error_decay"
        else:
            alpha = _slope(np.log(radii[positive]), np.log(E[positive])) - 1.0
            source = "error_decay"
    tau = pred = fitted = None
    if taus is not None:
        tau = np.asarray(taus, dtype=float)[: len(rows)]
        if tau.size < len(rows):
            raise DomainError("not enough tau values for the computed scales")
        pred = tau * radii
        fitted = float(np.max(E / pred))
    return DecayReport(tuple(c.tolist()), r, scales, radii, E, A, B, tau, pred, fitted,
                       alpha, source)


# ---------------------------------------------------------------------------
# Hoelder seminorms


def _region_points(sol: GridSolution, center, radius: float, max_points: int):
    pts, vals = sol.points()
    c = np.atleast_1d(np.asarray(center, dtype=float))
    sel = np.sqrt(np.sum((pts - c) ** 2, axis=1)) <= radius
    pts, vals = pts[sel], vals[sel]
    if pts.shape[0] > max_points:
        stride = int(math.ceil(pts.shape[0] / max_points))
        pts, vals = pts[::stride], vals[::stride]
    return pts, vals


def holder_seminorm(sol: GridSolution, center=0.0, radius: float = 0.5, exponent: float = 1.0,
                    max_points: int = 2000) -> float:
    """``max |u(x) - u(y)| / |x - y|^exponent`` over node pairs in ``B_radius(center)``.

    Regions with more than ``max_points`` nodes are thinned with a fixed
    stride, so the result is deterministic.
    """
    if not 0 < exponent <= 1:
        raise DomainError("exponent must lie in (0, 1]")
    if not 0 < radius <= 0.5 + 1e-12:
        raise DomainError("region must lie inside the ball of radius 1/2")
    pts, vals = _region_points(sol, center, radius, max_points)
    best = 0.0
    for i in range(pts.shape[0] - 1):
        d = np.sqrt(np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1))
        q = np.abs(vals[i + 1:] - vals[i]) / d ** exponent
        best = max(best, float(np.max(q)))
    return best


def fit_holder_exponent(sol: GridSolution, center=0.0, radius: float = 0.5,
                        levels: int = 8, max_points: int = 2000) -> float:
    """Exponent of ``osc(rho) = max_{|x-y|<=rho} |u(x)-u(y)|`` over dyadic ``rho``, clipped to (0, 1]."""
    pts, vals = _region_points(sol, center, radius, max_points)
    spacing = max(sol.h, radius / 2.0 ** levels)
    rhos = radius * 2.0 ** -np.arange(1, levels + 1)
    rhos = rhos[rhos >= 2 * spacing]
    if rhos.size < 2:
        raise DomainError("region too small for an exponent fit")
    osc = np.zeros(rhos.size)
    for i in range(pts.shape[0] - 1):
        d = np.sqrt(np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1))
        dv = np.abs(vals[i + 1:] - vals[i])
        for j, rho in enumerate(rhos):
            w = d <= rho
            if np.any(w):
                osc[j] = max(osc[j], float(np.max(dv[w])))
    if np.any(osc <= 0):
        return 1.0
    return float(np.clip(_slope(np.log(rhos), np.log(osc)), 1e-6, 1.0))
