"""
Point-cloud diffusion models: the linear noise schedule, the forward (noising)
process, the learned reverse-step mean, training, unconditional sampling and
checkpoints.

One Dpm is trained per domain. It pairs a PointNet shape encoder with a per-point
noise predictor conditioned on the shape latent, and carries the schedule and the
normalization of the data it was trained on.
"""
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

import numerics
from config import (DEFAULT_BATCH, DEFAULT_HIDDEN, DEFAULT_ITERS, DEFAULT_LATENT, DEFAULT_LR_FINAL,
                    DEFAULT_LR_INITIAL, DEFAULT_STEPS, TOOL_VERSION)
from data import NormStats, PointCloud, normalize
from models import NoisePredictor, PointNetEncoder

# Linear beta endpoints at 256 steps; other step counts rescale them by 256 / T.
REFERENCE_STEPS = 256
REFERENCE_BETAS = (1e-4, 0.02)
MAX_DEFAULT_BETA = 0.5

LOG_EVERY = 100


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss ({loss}) at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step coefficients for t = 1..T, stored at index t - 1 in float64."""
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    sigma: torch.Tensor

    @property
    def T(self):
        return self.beta.shape[0]

    @classmethod
    def from_betas(cls, betas):
        beta = torch.as_tensor(betas, dtype=torch.float64)
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=torch.cumprod(alpha, dim=0), sigma=beta.sqrt())

    def at(self, t):
        """(beta_t, alpha_t, alpha_bar_t, sigma_t) as Python floats."""
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")
        i = t - 1
        return (self.beta[i].item(), self.alpha[i].item(), self.alpha_bar[i].item(),
                self.sigma[i].item())


def make_schedule(T, beta1, betaT):
    """Linear betas from beta1 to betaT over T steps, sigma_t = sqrt(beta_t)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < beta1 <= betaT < 1:
        raise ValueError(f"need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={betaT}")
    return NoiseSchedule.from_betas(torch.linspace(beta1, betaT, T, dtype=torch.float64))


def default_beta_range(T):
    scale = REFERENCE_STEPS / T
    return (min(REFERENCE_BETAS[0] * scale, MAX_DEFAULT_BETA),
            min(REFERENCE_BETAS[1] * scale, MAX_DEFAULT_BETA))


@dataclass(frozen=True)
class TrainConfig:
    batch: int = DEFAULT_BATCH
    iters: int = DEFAULT_ITERS
    lr_initial: float = DEFAULT_LR_INITIAL
    lr_final: float = DEFAULT_LR_FINAL
    T: int = DEFAULT_STEPS
    F: int = DEFAULT_LATENT
    hidden: int = DEFAULT_HIDDEN
    beta1: float | None = None
    betaT: float | None = None

    def beta_range(self):
        default = default_beta_range(self.T)
        return (self.beta1 if self.beta1 is not None else default[0],
                self.betaT if self.betaT is not None else default[1])

    @classmethod
    def from_run_config(cls, cfg):
        return cls(batch=cfg.batch, iters=cfg.iters, lr_initial=cfg.lr_initial, lr_final=cfg.lr_final,
                   T=cfg.T, F=cfg.F, hidden=cfg.hidden, beta1=cfg.beta1, betaT=cfg.betaT)


class Dpm(nn.Module):
    """A trained (or freshly initialized) diffusion model for one domain."""

    def __init__(self, point_dim, latent_dim, hidden, schedule, norm, domain_label="domain"):
        super().__init__()
        self.encoder = PointNetEncoder(point_dim, latent_dim)
        self.decoder = NoisePredictor(point_dim, latent_dim, hidden, schedule.T)
        self.schedule = schedule
        self.norm = norm
        self.domain_label = domain_label
        self.info = {}
        self.loss_history = []

    @property
    def point_dim(self):
        return self.encoder.point_dim

    @property
    def latent_dim(self):
        return self.encoder.latent_dim


def build_dpm(hyper, point_dim, norm, domain_label="domain", seed=0):
    """A Dpm with weights drawn from torch's default init under the given seed."""
    schedule = make_schedule(hyper.T, *hyper.beta_range())
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        dpm = Dpm(point_dim, hyper.F, hyper.hidden, schedule, norm, domain_label)
    dpm.info['beta_range'] = list(hyper.beta_range())
    return dpm


def _as_points(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.as_tensor()
    if isinstance(cloud, np.ndarray):
        return torch.from_numpy(cloud.astype(np.float32))
    return cloud


@torch.no_grad()
def encode_shape(enc, cloud):
    """The F-dimensional shape latent of a cloud (invariant to point order)."""
    return enc(_as_points(cloud))


@torch.no_grad()
def forward_diffuse(schedule, x0, seed):
    """
    Runs x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) w_t for t = 1..T and returns
    [x_1, ..., x_T]. Leading batch dimensions of x0 diffuse independently.
    """
    generator = torch.Generator().manual_seed(seed)
    x = _as_points(x0)
    trajectory = []
    for t in range(1, schedule.T + 1):
        beta = schedule.beta[t - 1].item()
        w = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        x = math.sqrt(1.0 - beta) * x + math.sqrt(beta) * w
        trajectory.append(x)
    return trajectory


@torch.no_grad()
def posterior_mean(dec, schedule, x_t, t, z):
    """mu(x_t, t, z) = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat(x_t, t, z)) / sqrt(alpha_t)."""
    beta, alpha, alpha_bar, _ = schedule.at(t)
    x_t = _as_points(x_t)
    eps_hat = dec(x_t, t, z)
    return (x_t - (beta / math.sqrt(1.0 - alpha_bar)) * eps_hat) * (1.0 / math.sqrt(alpha))


def noise_prediction_loss(dpm, x0, t, noise):
    """Mean squared error between the injected noise and its estimate, for a batch [B, N, D]."""
    alpha_bar = dpm.schedule.alpha_bar.to(x0.dtype)[t - 1].view(-1, 1, 1)
    x_t = alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * noise
    z = dpm.encoder(x0)
    return ((noise - dpm.decoder(x_t, t, z)) ** 2).mean()


def _assemble_batch(clouds, generator):
    sizes = {c.shape[0] for c in clouds}
    if len(sizes) == 1:
        return torch.stack(clouds)
    # Unequal point counts (imported events): subsample each to the smallest.
    n = min(sizes)
    return torch.stack([c[torch.randperm(c.shape[0], generator=generator)[:n]] for c in clouds])


def train_dpm(dataset, hyper, seed=0, progress=True):
    """
    Trains one Dpm on a dataset with the noise-prediction objective and Adam under
    the linear learning-rate decay. A dataset without NormStats is normalized first.
    """
    if not len(dataset):
        raise ValueError(f"dataset '{dataset.domain_label}' is empty")
    if dataset.norm is None:
        dataset, _ = normalize(dataset)

    dpm = build_dpm(hyper, dataset.d, dataset.norm, dataset.domain_label, seed)
    params = numerics.ParamStore(dpm)
    state = numerics.AdamState.create(params)
    lr_schedule = numerics.LrSchedule(hyper.lr_initial, hyper.lr_final, max(hyper.iters, 1))

    clouds = [e.as_tensor() for e in dataset.events]
    generator = torch.Generator().manual_seed(seed)
    T = dpm.schedule.T

    with tqdm(total=hyper.iters, desc=f"Training {dpm.domain_label}", disable=not progress) as pbar:
        for it in range(hyper.iters):
            idx = torch.randint(len(clouds), (hyper.batch,), generator=generator)
            x0 = _assemble_batch([clouds[i] for i in idx.tolist()], generator)
            t = torch.randint(1, T + 1, (hyper.batch,), generator=generator)
            noise = torch.randn(x0.shape, generator=generator)

            loss = noise_prediction_loss(dpm, x0, t, noise)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(it, loss.item())
            numerics.backward(loss, params)
            numerics.adam_step(params, state, numerics.lr_at(lr_schedule, it))

            dpm.loss_history.append(loss.item())
            if (it + 1) % LOG_EVERY == 0:
                pbar.set_postfix(loss=f"{np.mean(dpm.loss_history[-LOG_EVERY:]):.4f}")
            pbar.update(1)

    dpm.info.update({'seed': seed, 'train': asdict(hyper)})
    return dpm


@torch.no_grad()
def sample_unconditional(dpm, z, n_points, seed):
    """Ancestral sampling from N(0, I) conditioned on z; returns a denormalized cloud."""
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn((n_points, dpm.point_dim), generator=generator)
    for t in range(dpm.schedule.T, 0, -1):
        sigma = dpm.schedule.at(t)[3]
        x = posterior_mean(dpm.decoder, dpm.schedule, x, t, z) + sigma * torch.randn(x.shape, generator=generator)
    return PointCloud(dpm.norm.invert(x.numpy()))


# --- Checkpoints ---

def sidecar_path(path):
    return Path(path).with_suffix('.json')


def save_dpm(path, dpm, provenance=None):
    """Writes the parameter container plus a JSON sidecar describing how to rebuild the model."""
    numerics.save_checkpoint(path, numerics.ParamStore(dpm))
    beta1, betaT = dpm.info.get('beta_range', (dpm.schedule.beta[0].item(), dpm.schedule.beta[-1].item()))
    sidecar = {
        'tool_version': TOOL_VERSION,
        'domain_label': dpm.domain_label,
        'T': dpm.schedule.T,
        'F': dpm.latent_dim,
        'D': dpm.point_dim,
        'hidden': dpm.decoder.hidden,
        'beta1': beta1,
        'betaT': betaT,
        'norm': dpm.norm.to_dict(),
        'seed': dpm.info.get('seed'),
        'train': dpm.info.get('train'),
        'config_hash': dpm.info.get('config_hash'),
    }
    sidecar.update(provenance or {})
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write('\n')


def load_dpm(path):
    with open(sidecar_path(path), 'r', encoding='utf-8') as f:
        sidecar = json.load(f)
    schedule = make_schedule(sidecar['T'], sidecar['beta1'], sidecar['betaT'])
    dpm = Dpm(sidecar['D'], sidecar['F'], sidecar['hidden'], schedule,
              NormStats.from_dict(sidecar['norm']), sidecar['domain_label'])
    numerics.load_checkpoint(path, numerics.ParamStore(dpm))
    dpm.info = {k: sidecar[k] for k in ('seed', 'train', 'config_hash', 'tool_version') if k in sidecar}
    dpm.info['beta_range'] = [sidecar['beta1'], sidecar['betaT']]
    return dpm
