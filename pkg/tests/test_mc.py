import numpy as np
import pytest

from maslab.errors import ConfigurationError
from maslab.grid import constant_rule, halfspace_rule
from maslab.kernels import KernelSpec
from maslab.mc import (JumpProcessConfig, estimate_exit_payoff,
                       generator_truncation_bound, total_truncated_mass)
from maslab.solver import DiscreteProblem, solve


def _cfg(pot, sigma=1.5, eta=0.05, payoff=None, seed=7):
    spec = KernelSpec(1.0, 1.0, sigma, "fixed_midpoint")
    return JumpProcessConfig(pot, spec, eta, payoff or constant_rule(1.0), seed)


def test_requires_single_kernel(iso1):
    spec = KernelSpec(1.0, 2.0, 1.5, "fixed_midpoint")
    with pytest.raises(ConfigurationError):
        JumpProcessConfig(iso1, spec, 0.05, constant_rule(1.0), 0)


def test_constant_payoff_exact(iso1):
    r = estimate_exit_payoff(_cfg(iso1, payoff=constant_rule(2.5)),
                             [0.0], [-1], [1], 200)
    assert r["mean"] == 2.5
    assert r["std_error"] == 0.0


def test_symmetric_half(iso1):
    r = estimate_exit_payoff(_cfg(iso1, payoff=halfspace_rule(0, 1.0)),
                             [0.0], [-1], [1], 4000)
    assert abs(r["mean"] - 0.5) <= 3 * r["std_error"]


def test_determinism_per_seed(iso1):
    a = estimate_exit_payoff(_cfg(iso1, payoff=halfspace_rule(0, 1.0), seed=3),
                             [0.2], [-1], [1], 500)
    b = estimate_exit_payoff(_cfg(iso1, payoff=halfspace_rule(0, 1.0), seed=3),
                             [0.2], [-1], [1], 500)
    assert a["mean"] == b["mean"] and a["std_error"] == b["std_error"]
    c = estimate_exit_payoff(_cfg(iso1, payoff=halfspace_rule(0, 1.0), seed=4),
                             [0.2], [-1], [1], 500)
    assert c["mean"] != a["mean"]


def test_bias_refinement(iso1):
    g = halfspace_rule(0, 1.0)
    r1 = estimate_exit_payoff(_cfg(iso1, eta=0.05, payoff=g), [0.4], [-1], [1], 8000)
    r2 = estimate_exit_payoff(_cfg(iso1, eta=0.025, payoff=g), [0.4], [-1], [1], 8000)
    move = abs(r1["mean"] - r2["mean"])
    noise = 3.0 * np.hypot(r1["std_error"], r2["std_error"])
    assert move <= r1["bias_bound"] + noise
    assert r2["bias_bound"] < r1["bias_bound"]  # bound shrinks like eta^{2-sigma}


def test_truncated_mass_closed_form(iso1):
    cfg = _cfg(iso1, sigma=1.5, eta=0.1)
    # 2 * (2-s) * jac * omega * eta^{-s} / s with jac = sqrt(2), omega = 2
    expect = 2 * 0.5 * np.sqrt(2) * 2 * 0.1 ** (-1.5) / 1.5
    assert total_truncated_mass(cfg) == pytest.approx(expect, rel=1e-12)


def test_generator_bound_scales(iso1):
    b1 = generator_truncation_bound(_cfg(iso1, eta=0.1), 1.0)
    b2 = generator_truncation_bound(_cfg(iso1, eta=0.05), 1.0)
    assert b2 / b1 == pytest.approx(0.5 ** (2 - 1.5), rel=1e-12)


def test_x0_outside_rejected(iso1):
    with pytest.raises(ConfigurationError):
        estimate_exit_payoff(_cfg(iso1), [1.5], [-1], [1], 200)


def test_paths_floor(iso1):
    with pytest.raises(ConfigurationError):
        estimate_exit_payoff(_cfg(iso1), [0.0], [-1], [1], 50)


def test_aniso_2d_mirror_symmetry(aniso2):
    # exits through the y-sides carry payoff 0, so the mean is below 1/2;
    # mirrored payoffs must agree within noise by x-symmetry
    spec = KernelSpec(1.0, 1.0, 1.2, "fixed_midpoint")
    from maslab.grid import callable_rule
    right = halfspace_rule(0, 1.0)
    left = callable_rule("left", lambda p: (p[:, 0] < -1.0).astype(float), 1.0)
    args = ([0.0, 0.0], [-1, -1], [1, 1], 2000)
    r1 = estimate_exit_payoff(JumpProcessConfig(aniso2, spec, 0.1, right, 5), *args)
    r2 = estimate_exit_payoff(JumpProcessConfig(aniso2, spec, 0.1, left, 6), *args)
    assert r1["mean"] < 0.5
    assert abs(r1["mean"] - r2["mean"]) <= 4 * np.hypot(r1["std_error"], r2["std_error"])


def test_generic_sampler_perturbed(perturbed1):
    spec = KernelSpec(1.0, 1.0, 1.2, "fixed_midpoint")
    cfg = JumpProcessConfig(perturbed1, spec, 0.1, halfspace_rule(0, 1.0), 5)
    r = estimate_exit_payoff(cfg, [0.0], [-1], [1], 300)
    assert abs(r["mean"] - 0.5) <= 4 * r["std_error"] + 0.05


def test_cross_validation_against_solver(iso1):
    # the acceptance criterion at reduced scale
    g = halfspace_rule(0, 1.0)
    spec = KernelSpec(1.0, 1.0, 1.5, "extremal_plus")
    prob = DiscreteProblem(iso1, spec, [-1], [1], 1 / 64, g)
    u, rep = solve(prob)
    r = estimate_exit_payoff(_cfg(iso1, eta=0.025, payoff=g, seed=11),
                             [0.0], [-1], [1], 10000)
    tol = 3 * r["std_error"] + r["bias_bound"]
    assert abs(float(u.eval([0.0])[0]) - r["mean"]) <= tol


def test_runaway_path_guard(iso1, monkeypatch):
    import maslab.mc as mc_mod
    monkeypatch.setattr(mc_mod, "_MAX_JUMPS", 8)
    cfg = _cfg(iso1, sigma=1.5, eta=1e-4, payoff=constant_rule(1.0))
    with pytest.raises(Exception, match="jumps"):
        estimate_exit_payoff(cfg, [0.0], [-50], [50], 200)


def test_cross_validation_2d(iso2):
    from maslab.grid import callable_rule
    g = callable_rule("right", lambda p: (p[:, 0] >= 1.0).astype(float), 1.0)
    spec = KernelSpec(1.0, 1.0, 1.2, "extremal_plus")
    prob = DiscreteProblem(iso2, spec, [-1, -1], [1, 1], 1 / 16, g)
    u, rep = solve(prob)
    assert rep.converged
    cfg = JumpProcessConfig(iso2, spec, 0.04, g, seed=5)
    mc = estimate_exit_payoff(cfg, [0.2, 0.0], [-1, -1], [1, 1], 6000)
    gv = float(u.eval(np.array([[0.2, 0.0]]))[0])
    assert abs(gv - mc["mean"]) <= 3 * mc["std_error"] + mc["bias_bound"]
