"""Grid functions: lattice values + multilinear interpolation + exterior rule.

A GridFunction is the discrete unknown of the solver and the input of the
nonlocal operators: piecewise multilinear inside its box, an evaluable
bounded rule on the complement.  AnalyticField wraps a closed-form function
under the same evaluation interface (used for barriers and oracles).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class ExteriorRule:
    """Bounded evaluable data on the complement of the box."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    sup_bound: float

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        v = np.asarray(self.fn(pts), dtype=float)
        return np.broadcast_to(v, (pts.shape[0],)).astype(float, copy=False)


def constant_rule(c: float) -> ExteriorRule:
    return ExteriorRule(f"const({c:g})", lambda p, c=float(c): np.full(p.shape[0], c), abs(float(c)))


def zero_rule() -> ExteriorRule:
    return constant_rule(0.0)


def indicator_box_rule(lo, hi, height: float = 1.0) -> ExteriorRule:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))

    def fn(p):
        inside = np.all((p >= lo) & (p <= hi), axis=1)
        return np.where(inside, float(height), 0.0)

    return ExteriorRule(f"indicator({lo.tolist()},{hi.tolist()},{height:g})", fn, abs(float(height)))


def halfspace_rule(axis: int, threshold: float, height: float = 1.0) -> ExteriorRule:
    def fn(p):
        return np.where(p[:, axis] > threshold, float(height), 0.0)

    return ExteriorRule(f"halfspace(x{axis}>{threshold:g},{height:g})", fn, abs(float(height)))


def gaussian_rule(amp: float = 1.0, width: float = 1.0, center=None) -> ExteriorRule:
    def fn(p, c=center):
        q = p if c is None else p - np.atleast_1d(np.asarray(c, dtype=float))
        r2 = np.einsum("ki,ki->k", q, q)
        with np.errstate(under="ignore"):
            return float(amp) * np.exp(-r2 / float(width) ** 2)

    return ExteriorRule(f"gaussian({amp:g},{width:g})", fn, abs(float(amp)))


def callable_rule(name: str, fn, sup_bound: float) -> ExteriorRule:
    return ExteriorRule(name, fn, float(sup_bound))


RULE_FACTORIES = {
    "zero": lambda params: zero_rule(),
    "constant": lambda params: constant_rule(*params),
    "indicator_box": lambda params: _indicator_from_flat(params),
    "halfspace": lambda params: halfspace_rule(int(params[0]), params[1], *params[2:]),
    "gaussian": lambda params: gaussian_rule(*params),
}


def _indicator_from_flat(params):
    # flat layout: n, lo..., hi..., height
    n = int(params[0])
    lo = params[1:1 + n]
    hi = params[1 + n:1 + 2 * n]
    height = params[1 + 2 * n] if len(params) > 1 + 2 * n else 1.0
    return indicator_box_rule(lo, hi, height)


def make_rule(rule_id: str, params=()) -> ExteriorRule:
    if rule_id not in RULE_FACTORIES:
        raise ConfigurationError(f"unknown exterior/data rule {rule_id!r}")
    return RULE_FACTORIES[rule_id](list(params))


class GridFunction:
    """Values on a uniform lattice over a box, multilinear inside, rule outside."""

    def __init__(self, box_lo, box_hi, values: np.ndarray, exterior: ExteriorRule):
        self.lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
        self.values = np.asarray(values, dtype=float)
        self.exterior = exterior
        self.dim = self.lo.size
        if self.values.ndim != self.dim:
            raise ConfigurationError("values array rank must equal dimension")
        if not np.all(np.isfinite(self.values)):
            raise DataError("grid values must be finite")
        self.shape = self.values.shape
        steps = (self.hi - self.lo) / (np.array(self.shape) - 1)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
            raise ConfigurationError("lattice spacing must be uniform across axes")
        self.h = float(steps[0])

    @classmethod
    def from_callable(cls, box_lo, box_hi, h: float, fn, exterior: ExteriorRule):
        lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
        counts = np.rint((hi - lo) / h).astype(int) + 1
        axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(lo.size)]
        if lo.size == 1:
            pts = axes[0][:, None]
        else:
            g = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([a.ravel() for a in g], axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape(counts)
        return cls(lo, hi, vals, exterior)

    # -- geometry helpers ----------------------------------------------------

    def points(self) -> np.ndarray:
        axes = [np.linspace(self.lo[i], self.hi[i], self.shape[i]) for i in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)

    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def sup_bound(self) -> float:
        return max(float(np.abs(self.values).max()), self.exterior.sup_bound)

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo - 1e-12) & (pts <= self.hi + 1e-12), axis=1)

    # -- evaluation ----------------------------------------------------------

    def interp_weights(self, pts: np.ndarray):
        """Multilinear stencil (flat indices, weights) for in-box points."""
        rel = (pts - self.lo) / self.h
        base = np.minimum(np.floor(rel).astype(int), np.array(self.shape) - 2)
        base = np.maximum(base, 0)
        frac = rel - base
        k = pts.shape[0]
        ncorner = 1 << self.dim
        idx = np.empty((k, ncorner), dtype=np.int64)
        wts = np.empty((k, ncorner))
        strides = np.array([1]) if self.dim == 1 else np.array([self.shape[1], 1])
        for corner in range(ncorner):
            offs = np.array([(corner >> (self.dim - 1 - d)) & 1 for d in range(self.dim)])
            node = base + offs
            idx[:, corner] = node @ strides
            w = np.ones(k)
            for d in range(self.dim):
                w = w * (frac[:, d] if offs[d] else 1.0 - frac[:, d])
            wts[:, corner] = w
        return idx, wts

    def eval(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        out = np.empty(pts.shape[0])
        ins = self.inside(pts)
        if ins.any():
            idx, wts = self.interp_weights(pts[ins])
            out[ins] = (self.values.ravel()[idx] * wts).sum(axis=1)
        if (~ins).any():
            out[~ins] = self.exterior(pts[~ins])
        return out

    def copy_with(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.lo, self.hi, values, self.exterior)


class AnalyticField:
    """Closed-form bounded function under the GridFunction evaluation interface."""

    def __init__(self, name: str, fn, sup_bound: float, dim: int):
        self.name = name
        self.fn = fn
        self.sup_bound = float(sup_bound)
        self.dim = dim

    def eval(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        return np.asarray(self.fn(pts), dtype=float)
