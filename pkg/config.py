"""
Run configuration: defaults, the flat JSON schema, overrides and the config hash.

A run is described by one flat JSON object whose keys are the RunConfig field
names. Anything not given falls back to the defaults below, which mirror the
hyperparameters used for the full-scale models (lr 0.001 -> 0.0001, Adam,
batch 128, 1,000,000 iterations, latent size 256, 256 diffusion steps).
"""
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

# --- Configuration ---
TOOL_VERSION = "0.1.0"

DEFAULT_SEED = 0
DEFAULT_POINTS = 256
DEFAULT_LINE_EVENTS = 1000
DEFAULT_SHAPE_EVENTS = 2000
DEFAULT_SHAPE_NOISE = 0.05

DEFAULT_LR_INITIAL = 0.001
DEFAULT_LR_FINAL = 0.0001
DEFAULT_BATCH = 128
DEFAULT_ITERS = 1_000_000
DEFAULT_LATENT = 256
DEFAULT_STEPS = 256
DEFAULT_HIDDEN = 256

DEFAULT_JSD_RESOLUTION = 28
DEFAULT_SIGMA_BINS = 4
DEFAULT_KEEP_FRACTION = 0.99

DATASET_KINDS = ("lines", "shapes", "csv")


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or malformed overrides."""


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    # dataset
    kind: str = "lines"
    n_events: int | None = None
    n_points: int = DEFAULT_POINTS
    noise_sigma: float = DEFAULT_SHAPE_NOISE
    csv_path: str | None = None
    csv_label: str = "external"
    # training
    batch: int = DEFAULT_BATCH
    iters: int = DEFAULT_ITERS
    T: int = DEFAULT_STEPS
    F: int = DEFAULT_LATENT
    hidden: int = DEFAULT_HIDDEN
    beta1: float | None = None
    betaT: float | None = None
    lr_initial: float = DEFAULT_LR_INITIAL
    lr_final: float = DEFAULT_LR_FINAL
    # evaluation
    jsd_resolution: int = DEFAULT_JSD_RESOLUTION
    sigma_bins: int = DEFAULT_SIGMA_BINS
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    include_charge: bool = False
    plot_events: int = 4
    # paths
    data_dir: str = "runs/data"
    checkpoint_dir: str = "runs/checkpoints"
    report_dir: str = "runs/reports"

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigError("kind 'csv' needs csv_path")
        for name in ("n_points", "batch", "T", "F", "hidden", "jsd_resolution", "sigma_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iters < 0:
            raise ConfigError(f"iters must be >= 0, got {self.iters}")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")

    @property
    def events(self):
        """Event count for the generator, defaulting per dataset kind."""
        if self.n_events is not None:
            return self.n_events
        return DEFAULT_SHAPE_EVENTS if self.kind == "shapes" else DEFAULT_LINE_EVENTS

    def to_dict(self):
        return asdict(self)


def _known_keys():
    return {f.name for f in fields(RunConfig)}


def parse_override(item):
    """Parses one KEY=VALUE override; VALUE is read as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path=None, overrides=None):
    """
    Builds a RunConfig from an optional JSON file plus {key: value} overrides.
    Unknown keys are refused so a typo can't silently fall back to a default.
    """
    values = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    values.update(overrides or {})

    unknown = sorted(set(values) - _known_keys())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def config_hash(cfg):
    """Stable SHA256 of the config (canonical JSON: sorted keys, compact separators)."""
    data = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    canonical_json = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical_json.encode('utf-8')).hexdigest()


def provenance(cfg):
    """The (seed, config hash, tool version) triple embedded in every artifact."""
    return {'seed': cfg.seed, 'config_hash': config_hash(cfg), 'tool_version': TOOL_VERSION}


def save_manifest(manifest_path, manifest):
    Path(manifest_path).parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
