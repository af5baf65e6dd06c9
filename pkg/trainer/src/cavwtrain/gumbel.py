"""Gumbel-Softmax relaxation of multinomial class sampling."""

import torch

RHO_FLOOR = 1e-12


def gumbel_softmax_sample(rho, tau, generator=None, noise=None):
    """k_i = softmax((log rho_i + g_i)/tau) with g_i ~ Gumbel(0, 1).

    rho: (..., C) probability vectors; zero entries are clamped at 1e-12
    before the log. Pass `noise` (uniform(0,1) samples of rho's shape) to fix
    the randomness, else a generator-driven sample is drawn.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rho = torch.clamp(torch.as_tensor(rho), min=RHO_FLOOR)
    if noise is None:
        noise = torch.rand(rho.shape, generator=generator, dtype=rho.dtype)
    u = torch.clamp(noise, min=1e-20, max=1.0 - 1e-7)
    g = -torch.log(-torch.log(u))
    return torch.softmax((torch.log(rho) + g) / tau, dim=-1)
