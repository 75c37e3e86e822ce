"""
Tensor math, gradients, the Adam optimizer and the learning-rate schedule.

Tensors are float32 torch tensors; gradients come from torch's reverse-mode
autodiff. This module pins down the parts the training loop relies on: a
parameter store with a deterministic (sorted) order, a gradient pass that
always fills every slot, an Adam step that refuses non-finite gradients, the
linear learning-rate decay, and the binary checkpoint container.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch

CONTAINER_VERSION = 1
_MAX_RANK = 8

# Adam defaults (standard values).
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(ValueError):
    """Raised by adam_step when a gradient holds NaN or Inf."""

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter '{name}'")
        self.name = name


class CheckpointFormatError(ValueError):
    """Raised for a tensor container with a bad version, truncation or extents."""


class ParamStore:
    """
    The named parameters of a module, iterated in sorted-name order, each with a
    gradient slot of the same shape.
    """

    def __init__(self, module):
        self.module = module
        self._params = dict(sorted(module.named_parameters()))

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = torch.zeros_like(p)

    def grads(self):
        return {name: p.grad for name, p in self._params.items()}

    def num_values(self):
        return sum(p.numel() for p in self._params.values())

    def tensors(self):
        """Detached copies of every parameter, keyed by name."""
        return {name: p.detach().clone() for name, p in self._params.items()}

    def load(self, tensors):
        missing = sorted(set(self._params) - set(tensors))
        if missing:
            raise CheckpointFormatError(f"checkpoint is missing parameters: {', '.join(missing)}")
        with torch.no_grad():
            for name, p in self._params.items():
                value = tensors[name]
                if tuple(value.shape) != tuple(p.shape):
                    raise CheckpointFormatError(
                        f"parameter '{name}' has shape {tuple(value.shape)} in the checkpoint, "
                        f"model expects {tuple(p.shape)}")
                p.copy_(value)


def backward(output, params):
    """
    Fills every gradient slot of params with d(output)/d(parameter). Parameters
    the output does not depend on get zero gradients. Returns the gradients.
    """
    if output.dim() != 0:
        raise ValueError(f"backward() needs a scalar output, got shape {tuple(output.shape)}")
    params.zero_grad()
    output.backward()
    for _, p in params.items():
        if p.grad is None:
            p.grad = torch.zeros_like(p)
    return params.grads()


@dataclass
class AdamState:
    """Adam moments (held by torch's optimizer state) and the step counter k."""
    optimizer: torch.optim.Adam
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    k: int = 0

    @classmethod
    def create(cls, params, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        optimizer = torch.optim.Adam(
            [p for _, p in params.items()], lr=0.0, betas=(beta1, beta2), eps=eps,
            foreach=False)
        return cls(optimizer=optimizer, beta1=beta1, beta2=beta2, eps=eps)

    def moments(self, param):
        """(m, v) for one parameter tensor; zeros before the first step."""
        state = self.optimizer.state.get(param, {})
        if not state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state['exp_avg'], state['exp_avg_sq']


def adam_step(params, state, lr):
    """One bias-corrected Adam update at learning rate lr; increments state.k."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter '{name}' has no gradient; call backward() first")
        if not torch.isfinite(p.grad).all():
            raise NonFiniteGradientError(name)
    # Entries with a zero gradient keep their value.
    frozen = [(p, p.grad == 0, p.detach().clone()) for _, p in params.items()]
    for group in state.optimizer.param_groups:
        group['lr'] = lr
    state.optimizer.step()
    with torch.no_grad():
        for p, mask, before in frozen:
            if mask.any():
                p[mask] = before[mask]
    state.k += 1
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    lr_initial: float = 0.001
    lr_final: float = 0.0001
    total_iters: int = 1

    def __post_init__(self):
        if self.total_iters <= 0:
            raise ValueError(f"total_iters must be > 0, got {self.total_iters}")
        if self.lr_final > self.lr_initial:
            raise ValueError(f"lr_final {self.lr_final} exceeds lr_initial {self.lr_initial}")


def lr_at(schedule, iteration):
    """Linear decay from lr_initial to lr_final over total_iters, then held."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    frac = min(iteration, schedule.total_iters) / schedule.total_iters
    return schedule.lr_initial + (schedule.lr_final - schedule.lr_initial) * frac


# --- Tensor container (checkpoints, encodings) ---

def encode_tensors(tensors):
    """Serializes {name: tensor} into the container bytes, names in sorted order."""
    chunks = [struct.pack('<BI', CONTAINER_VERSION, len(tensors))]
    for name in sorted(tensors):
        # rank-0 tensors stay rank 0
        array = np.asarray(torch.as_tensor(tensors[name]).detach().cpu().numpy(), dtype='<f4')
        name_bytes = name.encode('utf-8')
        if array.ndim > _MAX_RANK:
            raise ValueError(f"tensor '{name}' has rank {array.ndim} > {_MAX_RANK}")
        chunks.append(struct.pack('<H', len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack(f'<B{array.ndim}I', array.ndim, *array.shape))
        chunks.append(array.tobytes(order='C'))
    return b''.join(chunks)


class ByteReader:
    """Sequential reader that reports truncation as expected vs. actual byte counts."""

    def __init__(self, blob, what, error_cls=CheckpointFormatError):
        self.blob = blob
        self.pos = 0
        self.what = what
        self.error_cls = error_cls

    def take(self, n, field_name):
        if self.pos + n > len(self.blob):
            raise self.error_cls(
                f"{self.what} truncated reading {field_name}: expected {self.pos + n} bytes, "
                f"file has {len(self.blob)}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, field_name):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field_name))


def decode_tensors(blob, what="tensor container"):
    reader = ByteReader(blob, what)
    (version,) = reader.unpack('<B', 'version')
    if version != CONTAINER_VERSION:
        raise CheckpointFormatError(
            f"{what} has version {version}, this build reads version {CONTAINER_VERSION}")
    (count,) = reader.unpack('<I', 'tensor count')
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H', 'name length')
        name = reader.take(name_len, 'name').decode('utf-8')
        (rank,) = reader.unpack('<B', f"rank of '{name}'")
        if rank > _MAX_RANK:
            raise CheckpointFormatError(f"tensor '{name}' claims rank {rank} > {_MAX_RANK}")
        extents = reader.unpack(f'<{rank}I', f"extents of '{name}'")
        n_values = math.prod(extents)
        if n_values * 4 > len(blob):
            raise CheckpointFormatError(
                f"tensor '{name}' extents {extents} overflow the {len(blob)}-byte {what}")
        payload = reader.take(n_values * 4, f"payload of '{name}'")
        array = np.frombuffer(payload, dtype='<f4').reshape(extents)
        tensors[name] = torch.from_numpy(array.astype(np.float32))
    if reader.pos != len(blob):
        raise CheckpointFormatError(
            f"{what} has {len(blob) - reader.pos} trailing bytes after {count} tensors")
    return tensors


def save_tensors(path, tensors):
    with open(path, 'wb') as f:
        f.write(encode_tensors(tensors))


def load_tensors(path):
    with open(path, 'rb') as f:
        return decode_tensors(f.read(), what=str(path))


def save_checkpoint(path, params):
    save_tensors(path, params.tensors())


def load_checkpoint(path, params):
    params.load(load_tensors(path))
    return params
