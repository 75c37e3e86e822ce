"""
Point-cloud events: the synthetic line and wireframe-shape datasets, per-dataset
normalization, the PCDS binary format and CSV import of external detector events.

Every generator is a pure function of (seed, arguments). Each event draws from its
own numpy PCG64 stream seeded by SeedSequence([seed, event_index, stream]), where
stream 0 drives the geometry and stream 1 the added noise; a clean and a noisy
dataset generated with the same seed therefore share their geometry.
"""
import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from numerics import ByteReader

PCDS_MAGIC = b"PCDS"
PCDS_VERSION = 1
NO_LABEL = 0xFF

PRISM, CUBOID = 0, 1
CLASS_NAMES = {PRISM: "triangular_prism", CUBOID: "cuboid"}

LINE_RANGE = (0.0, 2.0)      # y and z of a line are drawn from U(0, 2)
LINE_NOISE_SLOPE = 0.1       # noisy lines: sigma(y) = 0.1 * y
SIZE_RANGE = (0.5, 1.5)      # per-axis extent of a wireframe solid

_GEOMETRY_STREAM, _NOISE_STREAM = 0, 1


class PointCloudFormatError(ValueError):
    """Raised for malformed PCDS files and CSV imports."""


@dataclass
class PointCloud:
    """One event: N unordered points in D = 3 (space) or 4 (space + charge) dimensions."""
    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] not in (3, 4):
            raise ValueError(f"a point cloud is N x D with N >= 1 and D in (3, 4), "
                             f"got shape {self.points.shape}")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def as_tensor(self):
        return torch.from_numpy(self.points.copy())


@dataclass(frozen=True)
class NormStats:
    """Per-dimension center and one global scale; points map to (p - center) / scale."""
    center: tuple
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    def apply(self, points):
        return ((np.asarray(points, np.float64) - np.asarray(self.center)) / self.scale).astype(np.float32)

    def invert(self, points):
        return (np.asarray(points, np.float64) * self.scale + np.asarray(self.center)).astype(np.float32)

    def to_dict(self):
        return {'center': [float(c) for c in self.center], 'scale': float(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(center=tuple(float(c) for c in d['center']), scale=float(d['scale']))


@dataclass
class Dataset:
    events: list
    domain_label: str
    norm: NormStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {e.d for e in self.events}
        if len(dims) > 1:
            raise ValueError(f"events of dataset '{self.domain_label}' mix dimensions {sorted(dims)}")
        bad = {e.label for e in self.events if e.label is not None} - {PRISM, CUBOID}
        if bad:
            raise ValueError(f"class labels must be 0 or 1, got {sorted(bad)}")

    def __len__(self):
        return len(self.events)

    @property
    def d(self):
        return self.events[0].d if self.events else None

    def class_counts(self):
        counts = {}
        for e in self.events:
            if e.label is not None:
                counts[CLASS_NAMES[e.label]] = counts.get(CLASS_NAMES[e.label], 0) + 1
        return counts


def event_rng(seed, index, stream):
    """The numpy generator for one event's geometry (stream 0) or noise (stream 1)."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return np.random.default_rng([seed, index, stream])


# --- Lines ---

def line_event(seed, index, n_points, noisy):
    """One line along z at x = 0 and a fixed y ~ U(0, 2); noisy adds N(0, (0.1 y)^2) per coordinate."""
    rng = event_rng(seed, index, _GEOMETRY_STREAM)
    y = rng.uniform(*LINE_RANGE)
    points = np.zeros((n_points, 3))
    points[:, 1] = y
    points[:, 2] = rng.uniform(*LINE_RANGE, size=n_points)
    if noisy:
        noise_rng = event_rng(seed, index, _NOISE_STREAM)
        points += noise_rng.normal(0.0, LINE_NOISE_SLOPE * y, size=(n_points, 3))
    return PointCloud(points)


def gen_lines(n_events, n_points=256, seed=0, noisy=False):
    if n_events < 1 or n_points < 2:
        raise ValueError(f"gen_lines needs n_events >= 1 and n_points >= 2, got {n_events}, {n_points}")
    events = [line_event(seed, i, n_points, noisy) for i in range(n_events)]
    label = "lines_noisy" if noisy else "lines_clean"
    return Dataset(events, label, meta={'kind': 'lines', 'noisy': noisy, 'generator_seed': seed})


# --- Wireframe shapes ---

def cuboid_edges(size):
    """The 12 edges (12, 2, 3) of an axis-aligned box of extents size centered at the origin."""
    half = np.asarray(size, np.float64) / 2
    corners = np.array([signs * half for signs in product((-1, 1), repeat=3)])
    pairs = [(i, j) for i in range(8) for j in range(i + 1, 8) if bin(i ^ j).count('1') == 1]
    return np.array([(corners[i], corners[j]) for i, j in pairs])


def prism_edges(size):
    """The 9 edges (9, 2, 3) of a triangular prism extruded along z, bounding box centered at the origin."""
    hx, hy, hz = np.asarray(size, np.float64) / 2
    triangle = [(-hx, -hy), (hx, -hy), (0.0, hy)]
    bottom = [np.array([x, y, -hz]) for x, y in triangle]
    top = [np.array([x, y, hz]) for x, y in triangle]
    edges = []
    for k in range(3):
        edges.append((bottom[k], bottom[(k + 1) % 3]))
        edges.append((top[k], top[(k + 1) % 3]))
        edges.append((bottom[k], top[k]))
    return np.array(edges)


def sample_edges(edges, n_points, rng):
    """Points uniform by arc length over a set of segments."""
    lengths = np.linalg.norm(edges[:, 1] - edges[:, 0], axis=1)
    which = rng.choice(len(edges), size=n_points, p=lengths / lengths.sum())
    u = rng.uniform(size=(n_points, 1))
    start, end = edges[which, 0], edges[which, 1]
    return start + u * (end - start)


def random_rotation(rng):
    """A uniformly distributed 3-D rotation matrix (normalized Gaussian quaternion)."""
    q = rng.normal(size=4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def shape_event(seed, index, n_points, noise_sigma=None):
    """
    One wireframe solid: even indices are triangular prisms, odd ones cuboids.
    Returns (PointCloud, edges) with edges the rotated analytic segments (E, 2, 3).
    """
    rng = event_rng(seed, index, _GEOMETRY_STREAM)
    label = PRISM if index % 2 == 0 else CUBOID
    size = rng.uniform(*SIZE_RANGE, size=3)
    edges = prism_edges(size) if label == PRISM else cuboid_edges(size)
    rotation = random_rotation(rng)
    edges = edges @ rotation.T
    points = sample_edges(edges, n_points, rng)
    if noise_sigma:
        points = points + event_rng(seed, index, _NOISE_STREAM).normal(0.0, noise_sigma, size=points.shape)
    return PointCloud(points, label), edges


def gen_shapes(n_events, n_points=256, seed=0, noisy=False, noise_sigma=0.05):
    if n_events < 1 or n_events % 2:
        raise ValueError(f"gen_shapes needs an even n_events (half prisms, half cuboids), got {n_events}")
    if n_points < 2:
        raise ValueError(f"gen_shapes needs n_points >= 2, got {n_points}")
    sigma = noise_sigma if noisy else None
    events = [shape_event(seed, i, n_points, sigma)[0] for i in range(n_events)]
    label = "shapes_noisy" if noisy else "shapes_clean"
    meta = {'kind': 'shapes', 'noisy': noisy, 'generator_seed': seed}
    if noisy:
        meta['noise_sigma'] = noise_sigma
    return Dataset(events, label, meta=meta)


# --- Normalization ---

def fit_norm(dataset):
    """NormStats of a dataset; a zero-variance dataset gets scale 1 and a warning."""
    if not len(dataset):
        raise ValueError("cannot normalize an empty dataset")
    all_points = np.concatenate([e.points for e in dataset.events]).astype(np.float64)
    center = all_points.mean(axis=0)
    scale = float((all_points - center).std())
    if not scale > 1e-12:
        warnings.warn(f"dataset '{dataset.domain_label}' has zero variance; using scale 1")
        scale = 1.0
    return NormStats(center=tuple(float(c) for c in center), scale=scale)


def normalize(dataset, stats=None):
    stats = stats or fit_norm(dataset)
    events = [PointCloud(stats.apply(e.points), e.label) for e in dataset.events]
    return Dataset(events, dataset.domain_label, stats, dict(dataset.meta)), stats


def denormalize(dataset, stats):
    events = [PointCloud(stats.invert(e.points), e.label) for e in dataset.events]
    return Dataset(events, dataset.domain_label, None, dict(dataset.meta))


# --- PCDS files ---

def encode_pc(dataset):
    meta = dict(dataset.meta)
    meta['domain_label'] = dataset.domain_label
    meta['norm'] = dataset.norm.to_dict() if dataset.norm else None
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(',', ':')).encode('utf-8')
    chunks = [PCDS_MAGIC, struct.pack('<BI', PCDS_VERSION, len(meta_bytes)), meta_bytes,
              struct.pack('<I', len(dataset))]
    for e in dataset.events:
        label = NO_LABEL if e.label is None else e.label
        chunks.append(struct.pack('<IBB', e.n, e.d, label))
        chunks.append(e.points.astype('<f4').tobytes())
    return b''.join(chunks)


def decode_pc(blob, what="PCDS data"):
    reader = ByteReader(blob, what, PointCloudFormatError)
    magic = reader.take(4, 'magic')
    if magic != PCDS_MAGIC:
        raise PointCloudFormatError(f"{what} is not a PCDS file (magic {magic!r})")
    (version, meta_len) = reader.unpack('<BI', 'header')
    if version != PCDS_VERSION:
        raise PointCloudFormatError(f"{what} has PCDS version {version}, this build reads {PCDS_VERSION}")
    try:
        meta = json.loads(reader.take(meta_len, 'metadata').decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PointCloudFormatError(f"{what} has unreadable metadata: {e}") from e
    if not isinstance(meta, dict) or 'domain_label' not in meta:
        raise PointCloudFormatError(f"{what} metadata has no domain_label")
    (count,) = reader.unpack('<I', 'event count')
    events = []
    for i in range(count):
        n, d, label = reader.unpack('<IBB', f'header of event {i}')
        if d not in (3, 4):
            raise PointCloudFormatError(f"{what}: event {i} has dimension {d}, expected 3 or 4")
        if n == 0:
            raise PointCloudFormatError(f"{what}: event {i} has no points")
        if label not in CLASS_NAMES and label != NO_LABEL:
            raise PointCloudFormatError(f"{what}: event {i} has class label {label}, expected 0, 1 or 255")
        if n * d * 4 > len(blob):
            raise PointCloudFormatError(
                f"{what}: event {i} extent {n} x {d} overflows the {len(blob)}-byte file")
        payload = reader.take(n * d * 4, f'points of event {i}')
        points = np.frombuffer(payload, dtype='<f4').reshape(n, d).astype(np.float32)
        events.append(PointCloud(points, None if label == NO_LABEL else label))
    if reader.pos != len(blob):
        raise PointCloudFormatError(f"{what} has {len(blob) - reader.pos} trailing bytes")
    norm = meta.pop('norm', None)
    label = meta.pop('domain_label')
    return Dataset(events, label, NormStats.from_dict(norm) if norm else None, meta)


def save_pc(path, dataset):
    with open(path, 'wb') as f:
        f.write(encode_pc(dataset))


def load_pc(path):
    with open(path, 'rb') as f:
        return decode_pc(f.read(), what=str(path))


def import_csv(path, domain_label="external"):
    """
    Reads detector events from a CSV with header event_id,x,y,z[,charge].
    Rows are grouped by event_id (first-appearance order); a charge column gives D = 4.
    """
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in ('event_id', 'x', 'y', 'z') if c not in header]
        if missing:
            raise PointCloudFormatError(f"{path}: CSV header lacks {', '.join(missing)}")
        columns = ['x', 'y', 'z'] + (['charge'] if 'charge' in header else [])
        groups = {}
        for line_number, row in enumerate(reader, 2):
            try:
                values = [float(row[c]) for c in columns]
            except (TypeError, ValueError) as e:
                raise PointCloudFormatError(f"{path}:{line_number}: bad value ({e})") from e
            groups.setdefault(row['event_id'], []).append(values)
    if not groups:
        raise PointCloudFormatError(f"{path}: no rows")
    events = [PointCloud(np.array(rows)) for rows in groups.values()]
    return Dataset(events, domain_label,
                   meta={'kind': 'csv', 'source_csv': str(path), 'event_ids': list(groups)})
