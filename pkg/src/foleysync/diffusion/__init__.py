from foleysync.diffusion.schedule import (
    alpha_beta,
    perturb,
    reconstruct_eps,
    reconstruct_x0,
    sigma_grid,
    v_target,
)

__all__ = [
    "alpha_beta",
    "perturb",
    "reconstruct_eps",
    "reconstruct_x0",
    "sigma_grid",
    "v_target",
]
