"""
Unpaired translation between two point-cloud domains with one diffusion model each.

An event is encoded with the source model into its terminal noisy cloud x_T plus
the per-step residuals eps_t = (x_{t-1} - mu_src(x_t, t, z_src)) / sigma_t. Replaying
the reverse step y_{t-1} = mu(y_t, t, z) + sigma_t * eps_t from y_T = x_T with the
source model gives the input back exactly; swapping in the target model and its
shape latent gives the translated event.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch
from tqdm import tqdm

import numerics
from data import Dataset, PointCloud
from diffusion import encode_shape, forward_diffuse, posterior_mean
from metrics import chamfer

EPS_PREFIX = "eps."


class ScheduleMismatchError(ValueError):
    """Raised when an encoding is decoded by a model with a different step count."""


@dataclass
class DpmEncoding:
    """Terminal cloud x_T (normalized, as a tensor) and residuals ordered eps_T, ..., eps_1."""
    x_T: torch.Tensor
    eps: list
    source_T: int

    def __post_init__(self):
        if len(self.eps) != self.source_T:
            raise ValueError(f"encoding holds {len(self.eps)} residuals for T = {self.source_T}")
        for e in self.eps:
            if e.shape != self.x_T.shape:
                raise ValueError(f"residual shape {tuple(e.shape)} != x_T shape {tuple(self.x_T.shape)}")

    def residual(self, t):
        """eps_t for t in 1..T."""
        return self.eps[self.source_T - t]


@dataclass
class TranslationResult:
    output: PointCloud
    z_src: torch.Tensor
    z_tgt: torch.Tensor
    encoding: DpmEncoding


def event_seed(seed, index):
    """Independent 32-bit seed for event `index` of a run seeded with `seed`."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@torch.no_grad()
def dpm_encode(dpm_src, x0, seed):
    """
    Encodes an already-normalized cloud with the source model. Returns
    (z_src, DpmEncoding); decoding the encoding with the same model and z_src
    reproduces x0.
    """
    x0 = x0.as_tensor() if isinstance(x0, PointCloud) else x0
    schedule = dpm_src.schedule
    if not bool((schedule.sigma > 0).all()):
        t = int(torch.nonzero(schedule.sigma <= 0)[0]) + 1
        raise ValueError(f"sigma_{t} = 0; the encoder needs a strictly positive sigma at every step")

    z = encode_shape(dpm_src.encoder, x0)
    trajectory = [x0] + forward_diffuse(schedule, x0, seed)
    eps = []
    for t in range(schedule.T, 0, -1):
        mu = posterior_mean(dpm_src.decoder, schedule, trajectory[t], t, z)
        eps.append((trajectory[t - 1] - mu) / schedule.at(t)[3])
    return z, DpmEncoding(x_T=trajectory[-1], eps=eps, source_T=schedule.T)


@torch.no_grad()
def dpm_decode(dpm_tgt, z, enc):
    """Replays the reverse chain from enc.x_T with the recorded residuals; returns y_0 (normalized)."""
    schedule = dpm_tgt.schedule
    if enc.source_T != schedule.T:
        raise ScheduleMismatchError(
            f"encoding has T = {enc.source_T} but the target model uses T = {schedule.T}; "
            f"retrain the models or regenerate the encoding with a matching T")
    y = enc.x_T
    for t in range(schedule.T, 0, -1):
        y = posterior_mean(dpm_tgt.decoder, schedule, y, t, z) + schedule.at(t)[3] * enc.residual(t)
    return y


def translate(dpm_src, dpm_tgt, x0_raw, seed):
    """Translates one raw (unnormalized) event from the source domain to the target domain."""
    if x0_raw.d != dpm_src.point_dim or x0_raw.d != dpm_tgt.point_dim:
        raise ValueError(f"event has D = {x0_raw.d}; models expect {dpm_src.point_dim} "
                         f"(source) and {dpm_tgt.point_dim} (target)")
    x0_src = torch.from_numpy(dpm_src.norm.apply(x0_raw.points))
    x0_tgt = torch.from_numpy(dpm_tgt.norm.apply(x0_raw.points))
    z_src, enc = dpm_encode(dpm_src, x0_src, seed)
    z_tgt = encode_shape(dpm_tgt.encoder, x0_tgt)
    y0 = dpm_decode(dpm_tgt, z_tgt, enc)
    output = PointCloud(dpm_tgt.norm.invert(y0.numpy()), x0_raw.label)
    return TranslationResult(output=output, z_src=z_src, z_tgt=z_tgt, encoding=enc)


def translate_dataset(dpm_src, dpm_tgt, dataset, seed=0, workers=1, progress=True):
    """
    Translates every event with seed event_seed(seed, i), keeping event order and
    labels. Returns the translated Dataset; its meta lists the per-event seeds.
    """
    seeds = [event_seed(seed, i) for i in range(len(dataset))]

    def _one(i):
        return translate(dpm_src, dpm_tgt, dataset.events[i], seeds[i]).output

    desc = f"Translating {dpm_src.domain_label} -> {dpm_tgt.domain_label}"
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        events = list(tqdm(executor.map(_one, range(len(dataset))), total=len(dataset),
                           desc=desc, disable=not progress))

    meta = dict(dataset.meta)
    meta.update({'translated_from': dataset.domain_label, 'source_model': dpm_src.domain_label,
                 'target_model': dpm_tgt.domain_label, 'seed': seed, 'event_seeds': seeds})
    return Dataset(events, f"{dataset.domain_label}_to_{dpm_tgt.domain_label}", meta=meta)


def reconstruct_cycle(dpm_A, dpm_B, x0, seed):
    """A -> B -> A; returns (x_back, chamfer(x0, x_back))."""
    there = translate(dpm_A, dpm_B, x0, event_seed(seed, 0)).output
    back = translate(dpm_B, dpm_A, there, event_seed(seed, 1)).output
    return back, chamfer(x0, back)


def cycle_dataset(dpm_A, dpm_B, dataset, seed=0, workers=1, progress=True):
    """reconstruct_cycle over a dataset; returns (reconstructed Dataset, per-event CD list)."""
    seeds = [event_seed(seed, i) for i in range(len(dataset))]

    def _one(i):
        return reconstruct_cycle(dpm_A, dpm_B, dataset.events[i], seeds[i])

    desc = f"Cycling {dpm_A.domain_label} -> {dpm_B.domain_label} -> {dpm_A.domain_label}"
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        results = list(tqdm(executor.map(_one, range(len(dataset))), total=len(dataset),
                            desc=desc, disable=not progress))

    meta = dict(dataset.meta)
    meta.update({'cycled_through': dpm_B.domain_label, 'seed': seed, 'event_seeds': seeds})
    back = Dataset([r[0] for r in results], f"{dataset.domain_label}_reco", meta=meta)
    return back, [r[1] for r in results]


# --- Encoding files ---

def save_encoding(path, enc):
    tensors = {'x_T': enc.x_T}
    for k, e in enumerate(enc.eps):
        tensors[f"{EPS_PREFIX}{enc.source_T - k:04d}"] = e
    numerics.save_tensors(path, tensors)


def load_encoding(path):
    tensors = numerics.load_tensors(path)
    if 'x_T' not in tensors:
        raise numerics.CheckpointFormatError(f"{path} holds no x_T tensor")
    steps = sorted((int(name[len(EPS_PREFIX):]) for name in tensors if name.startswith(EPS_PREFIX)),
                   reverse=True)
    T = len(steps)
    if steps != list(range(T, 0, -1)):
        raise numerics.CheckpointFormatError(f"{path} residuals do not cover steps 1..{T}")
    eps = [tensors[f"{EPS_PREFIX}{t:04d}"] for t in steps]
    return DpmEncoding(x_T=tensors['x_T'], eps=eps, source_T=T)
