"""Shared test setup: imports, the slow-test switch, and small model/data builders.

Everything runs on CPU with tiny networks (a few hundred parameters up to a few
thousand) so the property suites stay fast. Desk-scale training runs are marked
`slow` and only run with RUN_SLOW=1.
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
for p in (str(REPO_ROOT), str(REPO_ROOT / "scripts")):
    if p not in sys.path:
        sys.path.insert(0, p)

from data import NormStats, PointCloud  # noqa: E402  (needs the path setup above)
from diffusion import TrainConfig, build_dpm  # noqa: E402


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="desk-scale run; set RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


IDENTITY_NORM = NormStats(center=(0.0, 0.0, 0.0), scale=1.0)


def tiny_hyper(**overrides):
    base = dict(batch=4, iters=0, T=8, F=8, hidden=16)
    base.update(overrides)
    return TrainConfig(**base)


def make_dpm(seed=0, point_dim=3, norm=None, label="domain", **hyper):
    """A randomly initialized (untrained) Dpm with small widths."""
    if norm is None:
        norm = NormStats(center=(0.0,) * point_dim, scale=1.0)
    return build_dpm(tiny_hyper(**hyper), point_dim, norm, label, seed)


def random_cloud(n=32, d=3, seed=0, label=None):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, d)), label)
