import torch
from torch import nn

POINT_WIDTHS = (128, 256)


class PointNetEncoder(nn.Module):
    """
    Shape latent of a point cloud: a shared per-point MLP (D -> 128 -> 256), a max
    over the point axis, and a linear head to the latent size. The max makes the
    output independent of point order.
    """

    def __init__(self, point_dim=3, latent_dim=256):
        super().__init__()
        self.point_dim = point_dim
        self.latent_dim = latent_dim
        self.point_mlp = nn.Sequential(
            nn.Linear(point_dim, POINT_WIDTHS[0]),
            nn.ReLU(),
            nn.Linear(POINT_WIDTHS[0], POINT_WIDTHS[1]),
            nn.ReLU(),
        )
        self.head = nn.Linear(POINT_WIDTHS[1], latent_dim)

    def forward(self, points):
        # points: [..., N, D] -> [..., F]
        if points.shape[-1] != self.point_dim:
            raise ValueError(f"encoder takes {self.point_dim}-D points, got shape {tuple(points.shape)}")
        features = self.point_mlp(points)
        pooled = features.max(dim=-2).values
        return self.head(pooled)
