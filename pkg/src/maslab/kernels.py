"""Nonlocal operators: second differences, kernel class, singular quadrature.

The operators integrate delta(u,x,y) = u(x+y) + u(x-y) - 2u(x) against
kernels sandwiched between (2-sigma)*lam / wbar^{(n+sigma)/2} and the same
with Lam, where wbar is the symmetrized increment height of the potential,

    wbar_x(y) = sqrt(w_x(y) * w_x(-y)),   w_x(y) = v_x(x + y).

Quadrature decomposes increment space into
  (a) an inner model region (height < rho0^2): delta is replaced by its
      directional second-difference quadratic model and wbar by the
      quadratic model y^T D2phi(x) y / 2; the radial integral is closed
      form and the (2-sigma) factor cancels analytically, so values stay
      bounded as sigma -> 2;
  (b) dyadic section rings up to a tail radius, tensor-product
      (angle x Gauss-Legendre radius) panels with the true wbar;
  (c) an analytic tail beyond the tail radius, bounded via sup|u| and the
      quadratic-growth lower bound of wbar; the tail radius is pushed out
      until that bound is below tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DataError, KernelClassError
from .potential import Potential, _as_points

SELECTIONS = ("extremal_plus", "extremal_minus", "fixed_midpoint", "table")


@dataclass(frozen=True)
class KernelSpec:
    lam: float
    Lam: float
    sigma: float
    selection: str = "extremal_plus"

    def __post_init__(self):
        if not (0.0 < self.lam <= self.Lam):
            raise ConfigurationError("need 0 < lambda <= Lambda")
        if not (0.0 < self.sigma < 2.0):
            raise ConfigurationError(f"sigma={self.sigma} outside (0, 2)")
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"unknown kernel selection {self.selection!r}")


@dataclass(frozen=True)
class KernelRule:
    """Multiplier rule: K(y) = (2-sigma)*mult(x,y)/wbar^{(n+sigma)/2}, mult in [lam,Lam]."""

    name: str
    mult: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    smooth: bool = True
    x_dependent: bool = False

    def multipliers(self, x, y, wbar) -> np.ndarray:
        m = np.asarray(self.mult(x, y, wbar), dtype=float)
        return np.broadcast_to(m, (y.shape[0],)).astype(float, copy=False)


def lower_rule(spec: KernelSpec) -> KernelRule:
    return KernelRule("lower", lambda x, y, w, v=spec.lam: v)


def upper_rule(spec: KernelSpec) -> KernelRule:
    return KernelRule("upper", lambda x, y, w, v=spec.Lam: v)


def midpoint_rule(spec: KernelSpec) -> KernelRule:
    return KernelRule("midpoint", lambda x, y, w, v=0.5 * (spec.lam + spec.Lam): v)


def checkerboard_rule(spec: KernelSpec) -> KernelRule:
    """Rough kernel: multiplier alternates between lam and Lam on dyadic height shells."""

    def mult(x, y, wbar, lam=spec.lam, Lam=spec.Lam):
        shell = np.floor(np.log2(np.sqrt(np.maximum(wbar, 1e-300)))).astype(int)
        return np.where(shell % 2 == 0, Lam, lam)

    return KernelRule("checkerboard", mult, smooth=False)


def make_kernel_rule(rule_id: str, spec: KernelSpec) -> KernelRule:
    table = {"lower": lower_rule, "upper": upper_rule,
             "midpoint": midpoint_rule, "checkerboard": checkerboard_rule}
    if rule_id not in table:
        raise ConfigurationError(f"unknown kernel rule {rule_id!r}")
    return table[rule_id](spec)


# ---------------------------------------------------------------------------
# second difference and heights
# ---------------------------------------------------------------------------

def second_difference(u, x, y) -> float:
    """delta(u, x, y) = u(x+y) + u(x-y) - 2 u(x); exactly symmetric in y."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    up = float(u.eval(x[None, :] + y[None, :])[0])
    um = float(u.eval(x[None, :] - y[None, :])[0])
    ux = float(u.eval(x[None, :])[0])
    return up + um - 2.0 * ux


def sym_height(potential: Potential, x, y) -> np.ndarray:
    """wbar_x(y) = sqrt(w_x(y) w_x(-y)); equals w_x exactly for quadratics."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    wp = potential.shifted_height(x, y)
    wm = potential.shifted_height(x, -y)
    return np.sqrt(wp * wm)


def pucci_plus(delta, lam, Lam):
    return np.maximum(lam * delta, Lam * delta)


def pucci_minus(delta, lam, Lam):
    return np.minimum(lam * delta, Lam * delta)


# ---------------------------------------------------------------------------
# quadrature plans
# ---------------------------------------------------------------------------

def _sphere_measure(n: int) -> float:
    return 2.0 if n == 1 else 2.0 * math.pi


@dataclass(frozen=True)
class QuadraturePlan:
    """Node layout for one (potential, spec, grid-scale) combination."""

    potential: Potential
    spec: KernelSpec
    inner_radius: float            # height rho0 of the modeled core
    ring_heights: np.ndarray       # ascending dyadic ladder r_k
    ring_nodes: int                # Gauss-Legendre nodes per radial panel
    angles: np.ndarray             # (n_ang, n) unit directions
    ang_weights: np.ndarray        # (n_ang,) angular weights
    tail_radius: float             # Euclidean radius where rings stop
    tail_integral: float           # kernel-bound integral beyond tail_radius
    h: float = field(default=0.0)

    def refined(self, factor: int = 2) -> "QuadraturePlan":
        n = self.potential.dim
        n_ang = self.angles.shape[0] * (factor if n == 2 else 1)
        ang = _directions(n, n_ang)
        return replace(self, ring_nodes=self.ring_nodes * factor,
                       angles=ang, ang_weights=_ang_weights(n, n_ang))


def _directions(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    a = 2.0 * math.pi * (np.arange(count) + 0.5) / count
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def _ang_weights(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.ones(2)
    return np.full(count, 2.0 * math.pi / count)


def tail_kernel_integral(potential: Potential, sigma: float, R: float) -> float:
    """int_{|y|>R} (alpha_lo |y|^2 / 2)^{-(n+sigma)/2} dy, closed form."""
    n = potential.dim
    a_lo, _ = potential.hessian_bounds()
    return (_sphere_measure(n) * (0.5 * a_lo) ** (-(n + sigma) / 2.0)
            * R ** (-sigma) / sigma)


def make_plan(potential: Potential, spec: KernelSpec, h: float,
              box_diam: float, sup_scale: float = 1.0,
              n_ang: int | None = None, ring_nodes: int | None = None,
              tail_tol: float = 1e-9,
              inner_cells: int | None = None) -> QuadraturePlan:
    """Build the quadrature plan for lattice scale h.

    rho0 is the height of a few grid cells (2 in 1D where the model stencil
    is node-aligned; 4 in 2D, where diagonal stencils are interpolated and a
    wider core keeps the interpolation bias on the curvature model small);
    the ring ladder r_k doubles from r_0 = 2^{-1/(2-sigma)} in both
    directions; the tail radius is chosen so the analytic tail bound is
    below tail_tol * max(1, sup_scale).
    """
    if h <= 0 or box_diam <= 0:
        raise ConfigurationError("h and box_diam must be positive")
    n = potential.dim
    sigma, lam, Lam = spec.sigma, spec.lam, spec.Lam
    a_lo, a_hi = potential.hessian_bounds()
    if inner_cells is None:
        inner_cells = 2 if n == 1 else 4
    rho0 = inner_cells * h * math.sqrt(0.5 * a_hi)
    r0 = 2.0 ** (-1.0 / (2.0 - sigma))

    eps_tail = tail_tol * max(1.0, sup_scale)
    coef = (2.0 - sigma) * Lam * 4.0 * max(sup_scale, 1e-300) * _sphere_measure(n) \
        * (0.5 * a_lo) ** (-(n + sigma) / 2.0) / sigma
    R_t = (coef / eps_tail) ** (1.0 / sigma)
    R_t = min(max(R_t, 2.0 * box_diam), 1e30)

    j_lo = math.floor(math.log2(max(rho0, 1e-300) / r0))
    h_max = math.sqrt(0.5 * a_hi) * R_t * 1.001
    j_hi = math.ceil(math.log2(h_max / r0)) + 1
    ladder = r0 * (2.0 ** np.arange(j_lo, j_hi + 1, dtype=float))

    if n_ang is None:
        n_ang = 2 if n == 1 else 16
    if ring_nodes is None:
        ring_nodes = 8 if n == 1 else 5
    return QuadraturePlan(
        potential=potential, spec=spec, inner_radius=rho0,
        ring_heights=ladder, ring_nodes=int(ring_nodes),
        angles=_directions(n, n_ang), ang_weights=_ang_weights(n, n_ang),
        tail_radius=float(R_t),
        tail_integral=tail_kernel_integral(potential, sigma, R_t),
        h=float(h))


@dataclass
class PointQuadrature:
    """Increment nodes and kernel-bound coefficients for one base point."""

    x: np.ndarray            # (n,)
    y: np.ndarray            # (J, n) increments
    coef: np.ndarray         # (J,) nonnegative; includes (2-sigma) where needed
    wbar: np.ndarray         # (J,) height at the nodes (model value on inner nodes)
    n_inner: int
    tail_integral: float     # multiply by (2-sigma)*Lam*4*sup|u| for the bound

    def mass(self, Lam: float) -> float:
        return 2.0 * Lam * float(self.coef.sum())


def point_quadrature(plan: QuadraturePlan, x) -> PointQuadrature:
    pot, spec = plan.potential, plan.spec
    n, sigma = pot.dim, spec.sigma
    x = _as_points(x, n)[0]
    G = pot.hessian(x)[0]
    ang, aw = plan.angles, plan.ang_weights
    q = 0.5 * np.einsum("ai,ij,aj->a", ang, G, ang)
    t_in = plan.inner_radius / np.sqrt(q)

    # inner model nodes: one directional second difference per angle
    y_inner = t_in[:, None] * ang
    coef_inner = aw * q ** (-(n + sigma) / 2.0) * t_in ** (-sigma)
    wbar_inner = np.full(ang.shape[0], plan.inner_radius ** 2)

    if np.any(t_in >= plan.tail_radius):
        raise ConfigurationError("inner core reaches the tail radius: "
                                 "grid scale too coarse for this plan")
    gl_x, gl_w = np.polynomial.legendre.leggauss(plan.ring_nodes)
    ys, cs, ws = [y_inner], [coef_inner], [wbar_inner]
    for a in range(ang.shape[0]):
        knots = plan.ring_heights / math.sqrt(q[a])
        knots = knots[(knots > t_in[a] * (1 + 1e-12)) & (knots < plan.tail_radius)]
        knots = np.concatenate([[t_in[a]], knots, [plan.tail_radius]])
        lo, hi = knots[:-1], knots[1:]
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        t = (mid + half * gl_x[None, :]).ravel()
        w = (half * gl_w[None, :]).ravel()
        y = t[:, None] * ang[a]
        wb = sym_height(pot, x, y)
        c = aw[a] * w * t ** (n - 1) * (2.0 - sigma) * wb ** (-(n + sigma) / 2.0)
        ys.append(y)
        cs.append(c)
        ws.append(wb)
    return PointQuadrature(
        x=x, y=np.vstack(ys), coef=np.concatenate(cs),
        wbar=np.concatenate(ws), n_inner=ang.shape[0],
        tail_integral=plan.tail_integral)


# ---------------------------------------------------------------------------
# operator evaluation
# ---------------------------------------------------------------------------

def node_deltas(u, pq: PointQuadrature) -> np.ndarray:
    up = u.eval(pq.x[None, :] + pq.y)
    um = u.eval(pq.x[None, :] - pq.y)
    ux = float(u.eval(pq.x[None, :])[0])
    d = up + um - 2.0 * ux
    if not np.all(np.isfinite(d)):
        raise DataError("non-finite u values at quadrature nodes")
    return d


def _extremal_from_deltas(d, coef, spec: KernelSpec, plus: bool) -> float:
    s = pucci_plus(d, spec.lam, spec.Lam) if plus else pucci_minus(d, spec.lam, spec.Lam)
    return float(coef @ s)


def extremal(u, x, spec: KernelSpec, plan: QuadraturePlan,
             adaptive: bool = False) -> float:
    """M+ or M- of u at x (selection from spec), with optional node doubling.

    With adaptive=True the ring nodes (and angles in 2D) are doubled until
    two successive refinements agree to 1e-4 relative (at most 3 doublings).
    """
    if spec.selection not in ("extremal_plus", "extremal_minus"):
        raise ConfigurationError("extremal() needs an extremal selection")
    if abs(spec.sigma - plan.spec.sigma) > 1e-15:
        raise ConfigurationError("spec.sigma differs from the plan's sigma")
    plus = spec.selection == "extremal_plus"
    pq = point_quadrature(plan, x)
    val = _extremal_from_deltas(node_deltas(u, pq), pq.coef, spec, plus)
    if not adaptive:
        return val
    for _ in range(3):
        plan = plan.refined()
        pq = point_quadrature(plan, x)
        val2 = _extremal_from_deltas(node_deltas(u, pq), pq.coef, spec, plus)
        if abs(val2 - val) <= 1e-4 * max(abs(val2), 1e-12):
            return val2
        val = val2
    return val


def linear_apply(u, x, rule: KernelRule, plan: QuadraturePlan) -> float:
    """L u(x) for a single admissible kernel rule (checked against the sandwich)."""
    spec = plan.spec
    pq = point_quadrature(plan, x)
    mult = rule.multipliers(pq.x, pq.y, pq.wbar)
    if np.any(mult < spec.lam - 1e-12) or np.any(mult > spec.Lam + 1e-12):
        raise KernelClassError(
            f"kernel rule {rule.name!r} leaves [{spec.lam}, {spec.Lam}] at a node")
    d = node_deltas(u, pq)
    return float(pq.coef @ (mult * d))


def isaacs_apply(u, x, families, plan: QuadraturePlan) -> float:
    """min over alpha of max over beta of the linear operators (Isaacs form)."""
    if not families or any(len(b) == 0 for b in families):
        raise ConfigurationError("families must be nonempty")
    spec = plan.spec
    pq = point_quadrature(plan, x)
    d = node_deltas(u, pq)
    dc = pq.coef * d
    outer = []
    for beta_rules in families:
        inner = []
        for rule in beta_rules:
            mult = rule.multipliers(pq.x, pq.y, pq.wbar)
            if np.any(mult < spec.lam - 1e-12) or np.any(mult > spec.Lam + 1e-12):
                raise KernelClassError(f"rule {rule.name!r} violates the kernel class")
            inner.append(float(dc @ mult))
        outer.append(max(inner))
    return min(outer)


class FieldDifference:
    """Pointwise u - v under the field evaluation interface."""

    def __init__(self, u, v):
        self.u, self.v = u, v
        self.sup_bound = u.sup_bound + v.sup_bound
        self.dim = u.dim

    def eval(self, pts):
        return self.u.eval(pts) - self.v.eval(pts)


def ellipticity_check(u, v, x, spec: KernelSpec, plan: QuadraturePlan,
                      families=None) -> dict:
    """Checks M-(u-v) <= Iu - Iv <= M+(u-v) at x, I being the Isaacs operator."""
    if families is None:
        families = [[lower_rule(spec)], [upper_rule(spec)]]
    iu = isaacs_apply(u, x, families, plan)
    iv = isaacs_apply(v, x, families, plan)
    w = FieldDifference(u, v)
    mplus = extremal(w, x, replace(spec, selection="extremal_plus"), plan)
    mminus = extremal(w, x, replace(spec, selection="extremal_minus"), plan)
    scale = max(1.0, abs(iu), abs(iv), abs(mplus), abs(mminus))
    tol = 1e-6 * scale
    ok = (mminus - tol <= iu - iv <= mplus + tol)
    return {"I_u": iu, "I_v": iv, "M_plus_diff": mplus, "M_minus_diff": mminus,
            "tolerance": tol, "ok": bool(ok)}
