"""Computational geometry of Monge-Ampere sections.

A section S_r(x) = {y : v_x(y) < r^2} is the "ball of radius r" of the
potential's intrinsic geometry.  This module provides membership, radial
boundary parametrization, ellipsoid normalization, the engulfing probe,
two covering algorithms and the section-deformation checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError, RefinementNeededError
from .potential import Potential, _as_points


@dataclass(frozen=True)
class Section:
    center: tuple
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigurationError("section height parameter must be positive")


@dataclass
class AffineMap:
    """z = linear_part @ (y - offset); invertible by construction."""

    linear_part: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.linear_part = np.asarray(self.linear_part, dtype=float)
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if abs(np.linalg.det(self.linear_part)) <= 0.0:
            raise GeometryError("normalization map must be invertible")

    def apply(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.offset) @ self.linear_part.T

    def inverse_apply(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts @ np.linalg.inv(self.linear_part).T + self.offset

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear_part))


@dataclass
class CoverReport:
    selected: list
    overlap_max: int
    measure_ratio: float
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# basic queries
# ---------------------------------------------------------------------------

def contains(potential: Potential, section: Section, y) -> bool:
    v = potential.height(np.asarray(section.center, dtype=float), y)
    return bool(v[0] < section.r ** 2)


def contains_many(potential: Potential, center, r: float, pts) -> np.ndarray:
    return potential.height(center, pts) < r ** 2


def unit_directions(dim: int, count: int) -> np.ndarray:
    """Deterministic spread of unit directions."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def boundary_radii(potential: Potential, x, r: float, dirs: np.ndarray,
                   rel_tol: float = 1e-10) -> np.ndarray:
    """t*(d) > 0 with v_x(x + t* d) = r^2, by vectorized bracketed bisection."""
    if r <= 0:
        raise ConfigurationError("section height must be positive")
    x = _as_points(x, potential.dim)[0]
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise ConfigurationError("directions must be nonzero")
    dirs = dirs / norms[:, None]
    r2 = r * r

    hi = np.full(dirs.shape[0], r, dtype=float)
    for _ in range(80):
        vals = potential.shifted_height(x, hi[:, None] * dirs)
        grow = vals < r2
        if not grow.any():
            break
        hi[grow] *= 2.0
        if np.any(hi > 1e6 * r):
            raise GeometryError("section boundary beyond the 1e6*r search bracket")
    lo = np.zeros_like(hi)
    # ~60 halvings: interval shrinks below rel_tol for any starting bracket
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        vals = potential.shifted_height(x, mid[:, None] * dirs)
        below = vals < r2
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all((hi - lo) <= rel_tol * hi):
            break
    return 0.5 * (lo + hi)


def boundary_radius(potential: Potential, x, r: float, direction) -> float:
    return float(boundary_radii(potential, x, r, np.atleast_2d(direction))[0])


def quasi_distance(potential: Potential, x, y) -> np.ndarray:
    """d(x, y) = inf{r : y in S_r(x)} = sqrt(v_x(y)), exact by definition."""
    return np.sqrt(potential.height(x, y))


# ---------------------------------------------------------------------------
# ellipsoid normalization
# ---------------------------------------------------------------------------

def _mvee(points: np.ndarray, tol: float = 1e-6, max_iter: int = 200000):
    """Khachiyan-style minimum volume enclosing ellipsoid.

    Returns (E, c) with all points satisfying (p-c)^T E (p-c) <= 1 + O(tol).
    """
    P = np.asarray(points, dtype=float)
    N, d = P.shape
    if np.linalg.matrix_rank(P - P.mean(axis=0), tol=1e-10) < d:
        raise GeometryError("degenerate boundary point set (rank < n)")
    Q = np.vstack([P.T, np.ones(N)])
    u = np.full(N, 1.0 / N)
    for _ in range(max_iter):
        X = Q @ (u[:, None] * Q.T)
        M = np.einsum("ij,jk,ik->i", Q.T, np.linalg.inv(X), Q.T)
        j = int(np.argmax(M))
        step = (M[j] - d - 1.0) / ((d + 1.0) * (M[j] - 1.0))
        new_u = (1.0 - step) * u
        new_u[j] += step
        err = np.linalg.norm(new_u - u)
        u = new_u
        if err <= tol:
            break
    c = P.T @ u
    E = np.linalg.inv(P.T @ (u[:, None] * P) - np.outer(c, c)) / d
    return E, c


def fit_ellipsoid(potential: Potential, x, r: float, ray_count: int = 256) -> AffineMap:
    """Normalization map T with B_c subset T(S_r(x)) subset B_{1+1e-3}.

    Boundary points along `ray_count` spread directions are enclosed by a
    minimum-volume ellipsoid; T maps that ellipsoid onto the unit ball and is
    rescaled if fresh rays fall outside the 1e-3 outer margin.
    """
    n = potential.dim
    if ray_count < 2 * n + 2:
        raise ConfigurationError("ray_count must be at least 2n+2")
    x = _as_points(x, n)[0]
    dirs = unit_directions(n, ray_count)
    t = boundary_radii(potential, x, r, dirs)
    pts = x[None, :] + t[:, None] * dirs
    if n == 1:
        # interval [x+t_- d_-, x+t_+ d_+]: exact "ellipsoid"
        a, b = np.sort(pts[:, 0])
        c = np.array([(a + b) / 2.0])
        half = (b - a) / 2.0
        T = AffineMap(np.array([[1.0 / half]]), c)
    else:
        E, c = _mvee(pts)
        ev, V = np.linalg.eigh(E)
        if ev.min() <= 0:
            raise GeometryError("enclosing ellipsoid is degenerate")
        T = AffineMap((V * np.sqrt(ev)) @ V.T, c)

    fresh = unit_directions(n, ray_count + (0 if n == 1 else 7))
    if n == 2:  # offset fresh rays off the fitting rays
        ang = 2.0 * np.pi * (np.arange(ray_count) + 0.5) / ray_count
        fresh = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    tf = boundary_radii(potential, x, r, fresh)
    img = np.linalg.norm(T.apply(x[None, :] + tf[:, None] * fresh), axis=1)
    scale = max(1.0, img.max() / (1.0 + 1e-3))
    if scale > 1.0:
        T = AffineMap(T.linear_part / scale, T.offset)
        img = img / scale
    T.inner_radius = float(img.min())
    T.outer_radius = float(img.max())
    return T


# ---------------------------------------------------------------------------
# engulfing
# ---------------------------------------------------------------------------

def engulfing_probe(potential: Potential, x, r: float, trial_count: int = 64) -> float:
    """Smallest gamma in [1, 64] with S_r(x) subset S_{gamma r}(y) for sampled y.

    y ranges over interior samples of S_r(x), z over its boundary; bisection
    on gamma against the predicate v_y(z) < (gamma r)^2 for all pairs.
    """
    if trial_count < 1:
        raise ConfigurationError("trial_count must be >= 1")
    n = potential.dim
    x = _as_points(x, n)[0]
    ndir = max(8, trial_count) if n == 2 else 2
    dirs = unit_directions(n, ndir)
    t = boundary_radii(potential, x, r, dirs)
    zs = x[None, :] + (1.0 - 1e-9) * t[:, None] * dirs
    fracs = np.array([0.15, 0.4, 0.65, 0.85, 0.99])
    ys = (x[None, None, :] + fracs[:, None, None] * t[None, :, None] * dirs[None, :, :])
    ys = ys.reshape(-1, n)
    ys = np.vstack([x[None, :], ys])

    vmax = 0.0
    for y in ys:
        vmax = max(vmax, float(potential.height(y, zs).max()))

    lo, hi = 1.0, 64.0
    if vmax >= (hi * r) ** 2:
        raise GeometryError("engulfing failure: gamma > 64 needed (catalog pathology?)")
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if vmax < (mid * r) ** 2:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# covering algorithms
# ---------------------------------------------------------------------------

def _pad_lattice(pts: np.ndarray, pad: float, per_axis: int) -> np.ndarray:
    lo = pts.min(axis=0) - pad
    hi = pts.max(axis=0) + pad
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(pts.shape[1])]
    if pts.shape[1] == 1:
        return axes[0][:, None]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=-1)


def besicovitch_cover(potential: Potential, A: np.ndarray, radii, epsilon: float,
                      test_lattice: np.ndarray | None = None) -> CoverReport:
    """Greedy Besicovitch-type subcover with bounded overlap of the shrunk family.

    Scans A in lexicographic order; a point not covered by previously selected
    sections becomes a new center.  The overlap count is measured for the
    (1 - epsilon)-shrunk family on a test lattice.
    """
    if not 0.0 < epsilon < 0.5:
        raise ConfigurationError("epsilon must lie in (0, 1/2)")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] == 0:
        raise ConfigurationError("A must be nonempty")
    order = np.lexsort(A.T[::-1])
    A = A[order]
    if np.isscalar(radii) or isinstance(radii, float):
        rad = np.full(A.shape[0], float(radii))
    else:
        rad = np.asarray(radii, dtype=float)[order]

    covered = np.zeros(A.shape[0], dtype=bool)
    selected: list[Section] = []
    sel_r = []
    for i in range(A.shape[0]):
        if covered[i]:
            continue
        xk, rk = A[i], rad[i]
        selected.append(Section(tuple(xk), float(rk)))
        sel_r.append(rk)
        covered |= contains_many(potential, xk, rk, A)

    if test_lattice is None:
        pad = 3.0 * max(sel_r)
        per_axis = 1000 if potential.dim == 1 else 120
        test_lattice = _pad_lattice(A, pad, per_axis)

    counts = np.zeros(test_lattice.shape[0], dtype=int)
    for s in selected:
        counts += contains_many(potential, np.array(s.center), (1.0 - epsilon) * s.r,
                                test_lattice).astype(int)
    cov = np.zeros(A.shape[0], dtype=bool)
    for s in selected:
        cov |= contains_many(potential, np.array(s.center), s.r, A)
        cov |= np.all(np.isclose(A, np.array(s.center)), axis=1)
    return CoverReport(selected=selected,
                       overlap_max=int(counts.max()),
                       measure_ratio=float(cov.mean()),
                       details={"epsilon": epsilon, "n_selected": len(selected)})


def cz_decompose(potential: Potential, lattice: np.ndarray, mask: np.ndarray,
                 theta: float, cell_volume: float) -> CoverReport:
    """Calderon-Zygmund-type selection: sections of lattice density theta covering A.

    For each uncovered point of A (lexicographic scan) the height is found by
    bisection until the counted density |A n S| / |S| is theta within a
    2-cell tolerance.
    """
    if not 0.1 < theta < 0.9:
        raise ConfigurationError("theta must lie in (0.1, 0.9)")
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float))
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigurationError("A must be nonempty")
    apts = lattice[mask]
    order = np.lexsort(apts.T[::-1])
    apts = apts[order]

    h = cell_volume ** (1.0 / potential.dim)
    covered = np.zeros(apts.shape[0], dtype=bool)
    selected = []
    densities = []
    union = np.zeros(lattice.shape[0], dtype=bool)
    lo_b, hi_b = lattice.min(axis=0), lattice.max(axis=0)
    corners = np.array(np.meshgrid(*zip(lo_b, hi_b), indexing="ij")
                       ).reshape(potential.dim, -1).T

    def density(center, r):
        ins = contains_many(potential, center, r, lattice)
        n_s = int(ins.sum())
        n_a = int((ins & mask).sum())
        return n_a, n_s

    for i in range(apts.shape[0]):
        if covered[i]:
            continue
        xk = apts[i]
        r_lo, r_hi = 0.75 * h, 0.75 * h
        for _ in range(80):
            n_a, n_s = density(xk, r_hi)
            if n_s > 0 and n_a < theta * n_s:
                break
            if contains_many(potential, xk, r_hi, corners).any():
                raise RefinementNeededError(
                    f"counting lattice exhausted before density {theta} at {xk}: "
                    "enlarge the lattice")
            r_hi *= 2.0
        else:
            raise RefinementNeededError(f"density {theta} unreachable at center {xk}")
        for _ in range(60):
            mid = 0.5 * (r_lo + r_hi)
            n_a, n_s = density(xk, mid)
            if n_s > 0 and n_a < theta * n_s:
                r_hi = mid
            else:
                r_lo = mid
        rk = 0.5 * (r_lo + r_hi)
        n_a, n_s = density(xk, rk)
        if n_s == 0 or abs(n_a - theta * n_s) > 2.0:
            raise RefinementNeededError(
                f"density {theta} unreachable within 2 cells at center {xk} "
                f"(got {n_a}/{n_s})")
        selected.append(Section(tuple(xk), float(rk)))
        densities.append(n_a / n_s)
        ins = contains_many(potential, xk, rk, lattice)
        union |= ins
        covered |= contains_many(potential, xk, rk, apts)
        covered[i] = True

    measure_a = float(mask.sum()) * cell_volume
    measure_union = float((union | mask).sum()) * cell_volume
    return CoverReport(selected=selected,
                       overlap_max=len(selected),
                       measure_ratio=measure_a / measure_union,
                       details={"theta": theta, "densities": densities,
                                "n_selected": len(selected)})


# ---------------------------------------------------------------------------
# deformation checks
# ---------------------------------------------------------------------------

def section_measure(potential: Potential, x, r: float, lattice: np.ndarray,
                    cell_volume: float) -> float:
    return float(contains_many(potential, x, r, lattice).sum()) * cell_volume


def deformation_checks(potential: Potential, t: float, y, samples: int = 12) -> dict:
    """Empirical checks of section deformation: shell inclusion, doubling, shells.

    For sampled x in S_{3t/4}(y) \\ S_{t/2}(y), finds the largest delta with
    S_{delta t}(x) inside S_t(y) \\ S_{t/4}(y) on a test lattice; also counts
    the doubling ratio |S_r|/|S_{r/2}| and the shell-volume inequality.
    """
    if t <= 0:
        raise ConfigurationError("t must be positive")
    n = potential.dim
    y = _as_points(y, n)[0]
    dirs = unit_directions(n, max(8, samples) if n == 2 else 2)
    heights = np.array([0.72, 0.65, 0.58, 0.51]) * t
    xs = []
    for s in heights:
        tt = boundary_radii(potential, y, s, dirs)
        xs.append(y[None, :] + tt[:, None] * dirs)
    xs = np.vstack(xs)

    tmax = boundary_radii(potential, y, t, dirs).max()
    per_axis = 600 if n == 1 else 90
    lattice = _pad_lattice(np.vstack([y[None, :], xs]), 1.3 * tmax, per_axis)
    cell = ((lattice[:, 0].max() - lattice[:, 0].min()) / (per_axis - 1)) ** n

    in_outer = contains_many(potential, y, t, lattice)
    in_hole = contains_many(potential, y, t / 4.0, lattice)
    ring_ok = in_outer & ~in_hole

    delta_hats = []
    for x in xs:
        lo, hi = 0.0, 1.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            ins = contains_many(potential, x, mid * t, lattice)
            if np.all(ring_ok[ins]):
                lo = mid
            else:
                hi = mid
        delta_hats.append(lo)
    delta_hats = np.array(delta_hats)

    doubling = []
    for r in (t, t / 2.0):
        m_r = section_measure(potential, y, r, lattice, cell)
        m_half = section_measure(potential, y, r / 2.0, lattice, cell)
        if m_half > 0:
            doubling.append(m_r / m_half)
    shell_ok = []
    m_t = section_measure(potential, y, t, lattice, cell)
    for eps in (0.3, 0.6, 0.9):
        m_eps = section_measure(potential, y, eps * t, lattice, cell)
        lhs = m_t - m_eps
        rhs = n * (1.0 - eps) * m_t
        shell_ok.append(bool(lhs <= rhs + max(0.05 * m_t, 2 * cell)))

    return {
        "delta_hat_min": float(delta_hats.min()),
        "delta_hats": delta_hats.tolist(),
        "doubling_ratios": doubling,
        "shell_inequality_ok": shell_ok,
        "failure": bool(delta_hats.min() < 1e-4),
    }
