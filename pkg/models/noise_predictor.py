import math

import torch
from torch import nn

N_FREQUENCIES = 4  # sin and cos of each -> 8 sinusoidal features
EMBED_DIM = 1 + 2 * N_FREQUENCIES


def timestep_embedding(t, num_steps):
    """[..., 9]: t/T followed by sin/cos of (t/T) * pi * 2^k, k = 0..3."""
    frac = torch.as_tensor(t, dtype=torch.float32) / num_steps
    angles = frac.unsqueeze(-1) * (math.pi * 2.0 ** torch.arange(N_FREQUENCIES, dtype=torch.float32))
    return torch.cat([frac.unsqueeze(-1), torch.sin(angles), torch.cos(angles)], dim=-1)


class NoisePredictor(nn.Module):
    """
    Per-point noise estimate eps_hat(x_t, t, z). Each point sees only its own
    coordinates plus the shared timestep embedding and shape latent, so permuting
    the input points permutes the output rows the same way.
    """

    def __init__(self, point_dim=3, latent_dim=256, hidden=256, num_steps=256):
        super().__init__()
        self.point_dim = point_dim
        self.latent_dim = latent_dim
        self.num_steps = num_steps
        self.hidden = hidden
        self.net = nn.Sequential(
            nn.Linear(point_dim + EMBED_DIM + latent_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, point_dim),
        )

    def forward(self, x_t, t, z):
        # x_t: [..., N, D], t: [...] (or int), z: [..., F] -> [..., N, D]
        if x_t.shape[-1] != self.point_dim:
            raise ValueError(f"decoder takes {self.point_dim}-D points, got shape {tuple(x_t.shape)}")
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"decoder takes a {self.latent_dim}-D latent, got shape {tuple(z.shape)}")
        t = torch.as_tensor(t).expand(x_t.shape[:-2])
        context = torch.cat([timestep_embedding(t, self.num_steps).to(z.dtype), z], dim=-1)
        context = context.unsqueeze(-2).expand(*x_t.shape[:-1], context.shape[-1])
        return self.net(torch.cat([x_t, context], dim=-1))
