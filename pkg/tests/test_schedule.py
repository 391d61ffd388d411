"""Variance-preserving schedule algebra."""

import math

import numpy as np
import pytest
import torch

from foleysync.diffusion import schedule


def test_identity_alpha_sq_plus_beta_sq():
    sigma = torch.linspace(0.0, 1.0, 1001, dtype=torch.float64)
    alpha, beta = schedule.alpha_beta(sigma)
    assert torch.all(torch.abs(alpha ** 2 + beta ** 2 - 1.0) < 1e-12)


def test_endpoints_exact():
    a0, b0 = schedule.alpha_beta(0.0)
    a1, b1 = schedule.alpha_beta(1.0)
    assert (a0, b0) == (1.0, 0.0)
    assert (a1, b1) == (0.0, 1.0)


def test_midpoint():
    a, b = schedule.alpha_beta(0.5)
    assert abs(a - math.sqrt(2) / 2) < 1e-12
    assert abs(b - math.sqrt(2) / 2) < 1e-12


@pytest.mark.parametrize("sigma", [-0.1, 1.1, 2.0])
def test_sigma_out_of_range_rejected(sigma):
    with pytest.raises(ValueError):
        schedule.alpha_beta(sigma)


def test_perturb_endpoints():
    x0 = torch.randn(2, 1, 64)
    eps = torch.randn(2, 1, 64)
    assert torch.equal(schedule.perturb(x0, eps, 0.0), x0)
    assert torch.equal(schedule.perturb(x0, eps, 1.0), eps)


def test_v_target_endpoints():
    x0 = torch.randn(2, 1, 64)
    eps = torch.randn(2, 1, 64)
    assert torch.equal(schedule.v_target(x0, eps, 0.0), eps)
    assert torch.equal(schedule.v_target(x0, eps, 1.0), -x0)


def test_perturb_shape_mismatch():
    with pytest.raises(ValueError):
        schedule.perturb(torch.randn(2, 4), torch.randn(2, 5), 0.5)


def test_inversion_identities_on_random_triples():
    g = torch.Generator().manual_seed(0)
    worst_x0 = worst_eps = 0.0
    for _ in range(100):
        x0 = torch.randn(3, 1, 128, generator=g)
        eps = torch.randn(3, 1, 128, generator=g)
        sigma = torch.rand(3, generator=g)
        xt = schedule.perturb(x0, eps, sigma)
        v = schedule.v_target(x0, eps, sigma)
        worst_x0 = max(worst_x0, (schedule.reconstruct_x0(xt, v, sigma) - x0).abs().max().item())
        worst_eps = max(worst_eps, (schedule.reconstruct_eps(xt, v, sigma) - eps).abs().max().item())
    assert worst_x0 < 1e-6
    assert worst_eps < 1e-6


def test_per_item_sigma_broadcasts_over_batch():
    x0 = torch.zeros(2, 1, 8)
    eps = torch.ones(2, 1, 8)
    xt = schedule.perturb(x0, eps, torch.tensor([0.0, 1.0]))
    assert torch.equal(xt[0], torch.zeros(1, 8))
    assert torch.equal(xt[1], torch.ones(1, 8))


def test_variance_preservation_monte_carlo():
    g = torch.Generator().manual_seed(123)
    n = 100_000
    x0 = torch.randn(n, generator=g)
    eps = torch.randn(n, generator=g)
    for sigma in np.arange(0.1, 0.95, 0.1):
        xt = schedule.perturb(x0, eps, float(sigma))
        assert abs(xt.var().item() - 1.0) < 0.02


def test_sigma_grid():
    grid = schedule.sigma_grid(10)
    assert grid.shape == (11,)
    assert grid[0] == 1.0
    assert grid[-1] == 0.0
    assert torch.all(grid[1:] < grid[:-1])


def test_sigma_grid_rejects_zero_steps():
    with pytest.raises(ValueError):
        schedule.sigma_grid(0)
