"""Monte Carlo oracle: pure-jump process exit payoff for the linear case.

For lam = Lam the operator has a single admissible kernel, the generator of
a symmetric pure jump process whose jump measure is 2 K_x(y) dy.  Small
jumps (height below eta^2) are truncated; since the kernel is symmetric the
compensator drift vanishes and the truncation bias is bounded by the
neglected-generator mass times the accumulated expected holding time, which
the estimator reports as `bias_bound`.

Only the jump law matters for the exit distribution of the f = 0 Dirichlet
problem; for quadratic potentials it is sampled exactly by inverse CDF
along rays, for the perturbed entry by rejection against the quadratic
model (the truncation is then applied in the model height).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .grid import ExteriorRule
from .kernels import KernelSpec
from .potential import Potential

_MAX_JUMPS = 1_000_000
_BLOCK = 64


@dataclass(frozen=True)
class JumpProcessConfig:
    potential: Potential
    spec: KernelSpec
    eta: float
    payoff: ExteriorRule
    seed: int

    def __post_init__(self):
        if self.spec.lam != self.spec.Lam:
            raise ConfigurationError("jump process needs lam == Lam (single kernel)")
        if self.eta <= 0:
            raise ConfigurationError("small-jump cutoff eta must be positive")


def _sqrtm_inv(A: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(A)
    return (V / np.sqrt(ev)) @ V.T


def total_truncated_mass(config: JumpProcessConfig) -> float:
    """Jump intensity: int_{wbar >= eta^2} 2 K(y) dy for the quadratic model."""
    pot, spec, eta = config.potential, config.spec, config.eta
    n, sigma, c = pot.dim, config.spec.sigma, config.spec.lam
    detA = np.linalg.det(pot._A)
    omega = 2.0 if n == 1 else 2.0 * math.pi
    # change of variables z = A^{1/2} y / sqrt(2): wbar = |z|^2
    jac = 2.0 ** (n / 2.0) / math.sqrt(detA)
    return 2.0 * (2.0 - sigma) * c * jac * omega * eta ** (-sigma) / sigma


def generator_truncation_bound(config: JumpProcessConfig, d2_scale: float) -> float:
    """|neglected generator| <= bound * d2_scale, bound ~ C eta^{2-sigma}."""
    pot, spec = config.potential, config.spec
    n, sigma = pot.dim, spec.sigma
    a_lo, _ = pot.hessian_bounds()
    omega = 2.0 if n == 1 else 2.0 * math.pi
    a_eta = config.eta * math.sqrt(2.0 / a_lo)
    return (spec.lam * d2_scale * (0.5 * a_lo) ** (-(n + sigma) / 2.0)
            * omega * a_eta ** (2.0 - sigma))


def _draw_jumps(rng, config: JumpProcessConfig, x: np.ndarray, count: int) -> np.ndarray:
    """`count` jump increments from the truncated normalized kernel at x."""
    pot, spec, eta = config.potential, config.spec, config.eta
    n, sigma = pot.dim, spec.sigma
    if pot.id in ("iso_quadratic", "aniso_quadratic"):
        radii = eta * rng.random(count) ** (-1.0 / sigma)
        if n == 1:
            z = np.where(rng.random(count) < 0.5, -radii, radii)[:, None]
        else:
            ang = 2.0 * math.pi * rng.random(count)
            z = radii[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return math.sqrt(2.0) * z @ _sqrtm_inv(pot._A).T
    return _draw_jumps_generic(rng, config, x, count)


def _draw_jumps_generic(rng, config: JumpProcessConfig, x: np.ndarray,
                        count: int) -> np.ndarray:
    """Rejection sampler against the local quadratic model (perturbed entry)."""
    pot, spec, eta = config.potential, config.spec, config.eta
    n, sigma = pot.dim, spec.sigma
    a_lo, a_hi = pot.hessian_bounds()
    G = pot.hessian(x)[0]
    env = (a_hi / a_lo) ** ((n + sigma) / 2.0)
    out = np.empty((count, n))
    got = 0
    while got < count:
        m = 4 * (count - got) + 8
        if n == 1:
            theta = np.where(rng.random(m) < 0.5, -1.0, 1.0)[:, None]
        else:
            ang = 2.0 * math.pi * rng.random(m)
            theta = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        q = 0.5 * np.einsum("ki,ij,kj->k", theta, G, theta)
        # angular rejection: per-angle model mass ~ q^{-n/2}
        keep = rng.random(m) < (0.5 * a_lo / q) ** (n / 2.0)
        theta, q = theta[keep], q[keep]
        t_eta = eta / np.sqrt(q)
        t = t_eta * rng.random(theta.shape[0]) ** (-1.0 / sigma)
        y = t[:, None] * theta
        wbar_true = np.sqrt(pot.shifted_height(x, y) * pot.shifted_height(x, -y))
        model = q * t * t
        ratio = (np.maximum(wbar_true, 1e-300) / model) ** (-(n + sigma) / 2.0) / env
        acc = rng.random(theta.shape[0]) < ratio
        take = min(int(acc.sum()), count - got)
        out[got:got + take] = y[acc][:take]
        got += take
    return out


def estimate_exit_payoff(config: JumpProcessConfig, x0, box_lo, box_hi,
                         paths: int, d2_scale: float = 1.0) -> dict:
    """Mean exit payoff, standard error and truncation-bias bound.

    Each path gets its own Generator derived from (seed, path index); jumps
    are drawn in blocks and the path ends on first exit from the box.
    """
    if paths < 100:
        raise ConfigurationError("need at least 100 paths")
    lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
    hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any(x0 <= lo) or np.any(x0 >= hi):
        raise ConfigurationError("x0 must lie inside the domain box")

    intensity = total_truncated_mass(config)
    quad = config.potential.id in ("iso_quadratic", "aniso_quadratic")
    payoffs = np.empty(paths)
    total_jumps = 0
    seeds = np.random.SeedSequence(config.seed).spawn(paths)
    for i in range(paths):
        rng = np.random.default_rng(seeds[i])
        x = x0.copy()
        jumps = 0
        while True:
            if quad:
                block = _draw_jumps(rng, config, x, _BLOCK)
                pos = x[None, :] + np.cumsum(block, axis=0)
                outside = np.any((pos <= lo) | (pos >= hi), axis=1)
                k = int(np.argmax(outside)) if outside.any() else -1
                if k >= 0:
                    jumps += k + 1
                    payoffs[i] = float(config.payoff(pos[k:k + 1])[0])
                    break
                x = pos[-1]
                jumps += _BLOCK
            else:
                y = _draw_jumps(rng, config, x, 1)[0]
                x = x + y
                jumps += 1
                if np.any(x <= lo) or np.any(x >= hi):
                    payoffs[i] = float(config.payoff(x[None, :])[0])
                    break
            if jumps > _MAX_JUMPS:
                raise DataError("path exceeded 1e6 jumps (eta too small)")
        total_jumps += jumps

    mean = float(payoffs.mean())
    std_error = float(payoffs.std(ddof=1) / math.sqrt(paths))
    mean_holding = total_jumps / paths / intensity
    bias_bound = generator_truncation_bound(config, d2_scale) * mean_holding
    return {"mean": mean, "std_error": std_error, "bias_bound": float(bias_bound),
            "paths": int(paths), "mean_jumps": total_jumps / paths,
            "intensity": float(intensity), "eta": config.eta}
