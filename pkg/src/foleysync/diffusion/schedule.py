"""Variance-preserving trigonometric noise schedule and v-parameterization.

A noise level sigma in [0, 1] maps to mixing coefficients
``alpha = cos(0.5*pi*sigma)`` and ``beta = sin(0.5*pi*sigma)``, so
``alpha**2 + beta**2 == 1`` and the perturbed signal
``x_t = alpha*x0 + beta*eps`` keeps unit marginal variance. The regression
target is the rotation ``v = alpha*eps - beta*x0``; given ``(x_t, v)`` the
clean signal and the noise are recovered exactly:

    x0  = alpha*x_t - beta*v
    eps = beta*x_t + alpha*v
"""

from __future__ import annotations

import math

import torch


def alpha_beta(sigma):
    """Mixing coefficients ``(cos(0.5*pi*sigma), sin(0.5*pi*sigma))``.

    Accepts a python float or a tensor; dtype is preserved so float64 inputs
    keep float64 precision. Raises ``ValueError`` outside [0, 1].
    """
    if isinstance(sigma, torch.Tensor):
        if torch.any(sigma < 0) or torch.any(sigma > 1):
            raise ValueError("sigma must lie in [0, 1]")
        alpha = torch.cos(0.5 * math.pi * sigma)
        beta = torch.sin(0.5 * math.pi * sigma)
        # cos(pi/2) evaluates to ~6e-17; the endpoints must be exact
        alpha = torch.where(sigma == 1, torch.zeros_like(alpha), alpha)
        beta = torch.where(sigma == 1, torch.ones_like(beta), beta)
        return alpha, beta
    if sigma < 0 or sigma > 1:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    if sigma == 1:
        return 0.0, 1.0
    return math.cos(0.5 * math.pi * sigma), math.sin(0.5 * math.pi * sigma)


def _broadcast(coef, x: torch.Tensor) -> torch.Tensor:
    """Reshape a per-item coefficient to broadcast over trailing dims of x."""
    if not isinstance(coef, torch.Tensor):
        return torch.as_tensor(coef, dtype=x.dtype, device=x.device)
    return coef.to(x.dtype).reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def perturb(x0: torch.Tensor, eps: torch.Tensor, sigma) -> torch.Tensor:
    """Noisy sample ``alpha*x0 + beta*eps`` at noise level sigma."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    alpha, beta = alpha_beta(sigma)
    return _broadcast(alpha, x0) * x0 + _broadcast(beta, x0) * eps


def v_target(x0: torch.Tensor, eps: torch.Tensor, sigma) -> torch.Tensor:
    """Regression target ``alpha*eps - beta*x0`` at noise level sigma."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    alpha, beta = alpha_beta(sigma)
    return _broadcast(alpha, x0) * eps - _broadcast(beta, x0) * x0


def reconstruct_x0(xt: torch.Tensor, v: torch.Tensor, sigma) -> torch.Tensor:
    """Invert the (x0, eps) rotation: ``alpha*xt - beta*v``."""
    alpha, beta = alpha_beta(sigma)
    return _broadcast(alpha, xt) * xt - _broadcast(beta, xt) * v


def reconstruct_eps(xt: torch.Tensor, v: torch.Tensor, sigma) -> torch.Tensor:
    """Invert the (x0, eps) rotation: ``beta*xt + alpha*v``."""
    alpha, beta = alpha_beta(sigma)
    return _broadcast(beta, xt) * xt + _broadcast(alpha, xt) * v


def sigma_grid(steps: int) -> torch.Tensor:
    """Uniform sampling grid from 1 down to 0 inclusive (steps intervals)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return torch.linspace(1.0, 0.0, steps + 1, dtype=torch.float64)
