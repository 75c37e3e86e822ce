from models.noise_predictor import NoisePredictor, timestep_embedding
from models.pointnet import PointNetEncoder

__all__ = ["NoisePredictor", "PointNetEncoder", "timestep_embedding"]
