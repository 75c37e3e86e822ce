"""
Evaluation of translated events: Chamfer distance, set-level Jensen-Shannon
divergence over pooled voxel occupancy (with in-domain and random baselines),
the fitted line-noise table and outlier trimming, plus the report writers.

Conventions:
- Chamfer is the sum of the two directed means of squared nearest-neighbor
  distances. The charge channel of 4-D clouds is left out unless asked for.
- JSD bins spatial coordinates only, on a resolution^3 grid over the union
  bounding box of both sets widened by 5% per axis, and uses base-2 logs so
  the result lies in [0, 1].
"""
import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import entropy

from config import DEFAULT_JSD_RESOLUTION, DEFAULT_KEEP_FRACTION, DEFAULT_SIGMA_BINS
from data import LINE_NOISE_SLOPE, LINE_RANGE, PointCloud

BOUNDS_PADDING = 0.05
DEGENERATE_HALF_WIDTH = 0.5
SPATIAL_DIMS = 3


def _coords(cloud, include_charge):
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, np.float32)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError(f"chamfer needs non-empty N x D clouds, got shape {points.shape}")
    points = points.astype(np.float64)
    return points if include_charge else points[:, :SPATIAL_DIMS]


# --- Chamfer ---

def chamfer(a, b, include_charge=False):
    """Symmetric Chamfer distance: mean squared NN distance a->b plus b->a."""
    pa, pb = _coords(a, include_charge), _coords(b, include_charge)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"chamfer needs matching dimensions, got {pa.shape[1]} and {pb.shape[1]}")
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def chamfer_bruteforce(a, b, include_charge=False):
    """O(N*M) reference for chamfer(); builds the full squared-distance matrix."""
    pa, pb = _coords(a, include_charge), _coords(b, include_charge)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"chamfer needs matching dimensions, got {pa.shape[1]} and {pb.shape[1]}")
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


# --- Jensen-Shannon divergence over voxel occupancy ---

@dataclass
class VoxelGrid:
    resolution: int
    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray

    @property
    def total(self):
        return float(self.counts.sum())

    def probabilities(self):
        if not self.total > 0:
            raise ValueError("voxel grid holds no points")
        return self.counts.ravel() / self.total


def _pooled(cloud_set):
    if not len(cloud_set):
        raise ValueError("jsd needs non-empty sets of clouds")
    return np.concatenate([c.points[:, :SPATIAL_DIMS] for c in cloud_set]).astype(np.float64)


def union_bounds(*point_arrays):
    """Axis-aligned box around all points, each axis widened by 5% of its extent."""
    points = np.concatenate(point_arrays)
    if not len(points):
        raise ValueError("cannot bound zero points")
    lower, upper = points.min(axis=0), points.max(axis=0)
    extent = upper - lower
    pad = np.where(extent > 0, BOUNDS_PADDING * extent, DEGENERATE_HALF_WIDTH)
    return lower - pad, upper + pad


def voxelize(points, lower, upper, resolution=DEFAULT_JSD_RESOLUTION):
    counts, _ = np.histogramdd(points, bins=resolution, range=list(zip(lower, upper)))
    return VoxelGrid(resolution, lower, upper, counts)


def jsd_histograms(p, q):
    """
    JSD(P || Q) = 1/2 KL(P || M) + 1/2 KL(Q || M) with M = (P + Q) / 2, base 2.
    Inputs are nonnegative histograms of equal size; they are normalized here.
    """
    p = np.asarray(p, np.float64).ravel()
    q = np.asarray(q, np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"histograms differ in size: {p.size} vs {q.size}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("histograms hold negative counts")
    if not (p.sum() > 0 and q.sum() > 0):
        raise ValueError("jsd needs histograms with a positive total")
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)
    value = 0.5 * (entropy(p, m, base=2) + entropy(q, m, base=2))
    return float(np.clip(value, 0.0, 1.0))


def jsd_sets(set_a, set_b, resolution=DEFAULT_JSD_RESOLUTION):
    """JSD between the pooled voxel occupancies of two sets of clouds."""
    pa, pb = _pooled(set_a), _pooled(set_b)
    if not (len(pa) and len(pb)):
        raise ValueError("jsd needs sets with at least one point each")
    lower, upper = union_bounds(pa, pb)
    grid_a = voxelize(pa, lower, upper, resolution)
    grid_b = voxelize(pb, lower, upper, resolution)
    return jsd_histograms(grid_a.counts, grid_b.counts)


def random_clouds(reference_set, rng):
    """Uniform clouds in the reference set's bounding box, matched in count and size."""
    points = _pooled(reference_set)
    lower, upper = points.min(axis=0), points.max(axis=0)
    return [PointCloud(rng.uniform(lower, upper, size=(c.n, SPATIAL_DIMS))) for c in reference_set]


def jsd_baselines(domain_set, seed=0, resolution=DEFAULT_JSD_RESOLUTION):
    """(in-domain JSD over a random half split, JSD against uniform random clouds)."""
    if len(domain_set) < 2:
        raise ValueError(f"jsd baselines need at least 2 events, got {len(domain_set)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(domain_set))
    half = len(domain_set) // 2
    first = [domain_set[i] for i in order[:half]]
    second = [domain_set[i] for i in order[half:]]
    jsd_in_domain = jsd_sets(first, second, resolution)
    jsd_rand = jsd_sets(random_clouds(domain_set, rng), domain_set, resolution)
    return jsd_in_domain, jsd_rand


# --- Fitted noise table for the lines domain ---

@dataclass(frozen=True)
class FittedSigmaRow:
    y_bin_center: float
    y_eff: float
    sigma_true: float
    sigma_T: float
    stderr: float
    mae: float
    n_points: int


def fitted_sigma_report(translated, n_bins=DEFAULT_SIGMA_BINS):
    """
    Bins line events by their median y over [0, 2] and fits the spread of x in
    each bin. Clean lines sit at x = 0, so the x spread is the added noise.

    A bin pools events of different y, so its true spread is 0.1 times the
    point-weighted RMS of the event y values (y_eff), not 0.1 times the bin center.
    Empty bins are left out with a warning.
    """
    events = translated.events if hasattr(translated, 'events') else list(translated)
    if not events:
        raise ValueError("fitted_sigma_report needs at least one event")
    edges = np.linspace(*LINE_RANGE, n_bins + 1)
    medians = np.array([np.median(e.points[:, 1]) for e in events])
    which = np.clip(np.digitize(medians, edges) - 1, 0, n_bins - 1)

    rows = []
    for b in range(n_bins):
        members = [i for i in range(len(events)) if which[i] == b]
        center = 0.5 * (edges[b] + edges[b + 1])
        if not members:
            warnings.warn(f"fitted sigma: bin {b} (y = {center:.2f}) has no events; row omitted")
            continue
        xs = np.concatenate([events[i].points[:, 0].astype(np.float64) for i in members])
        weights = np.array([events[i].n for i in members], np.float64)
        if len(xs) < 2:
            warnings.warn(f"fitted sigma: bin {b} (y = {center:.2f}) has a single point; row omitted")
            continue
        y_eff = math.sqrt(float(np.average(medians[members] ** 2, weights=weights)))
        sigma_true = LINE_NOISE_SLOPE * y_eff
        sigma_T = float(np.std(xs, ddof=1))
        rows.append(FittedSigmaRow(
            y_bin_center=float(center), y_eff=y_eff, sigma_true=sigma_true, sigma_T=sigma_T,
            stderr=sigma_T / math.sqrt(len(xs)), mae=abs(sigma_T - sigma_true), n_points=len(xs)))
    return rows


# --- Outliers ---

def outlier_trim(values, keep_fraction=DEFAULT_KEEP_FRACTION):
    """Keeps the ceil(keep_fraction * n) smallest-magnitude values in their original order."""
    if not len(values):
        raise ValueError("outlier_trim needs at least one value")
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    values = list(values)
    n_keep = min(len(values), math.ceil(keep_fraction * len(values) - 1e-9))
    ranked = sorted(range(len(values)), key=lambda i: abs(values[i]))
    keep = sorted(ranked[:n_keep])
    return [values[i] for i in keep], len(values) - n_keep


# --- Reports ---

@dataclass
class MetricsReport:
    jsd_trans: float | None = None
    jsd_in_domain: float | None = None
    jsd_rand: float | None = None
    cd_reco_mean: float | None = None
    cd_reco_std: float | None = None
    cd_clean_mean: float | None = None
    n_cd: int = 0
    n_removed: int = 0
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def scalars(self):
        return {k: getattr(self, k) for k in
                ('jsd_trans', 'jsd_in_domain', 'jsd_rand', 'cd_reco_mean', 'cd_reco_std',
                 'cd_clean_mean', 'n_cd', 'n_removed')}


def reconstruction_stats(report, cd_values, keep_fraction=DEFAULT_KEEP_FRACTION):
    """Fills the CD(reco) mean/std (population std) and the trimmed CD(clean) mean."""
    values = np.asarray(cd_values, np.float64)
    report.cd_reco_mean = float(values.mean())
    report.cd_reco_std = float(values.std())
    kept, removed = outlier_trim(list(values), keep_fraction)
    report.cd_clean_mean = float(np.mean(kept))
    report.n_cd = len(values)
    report.n_removed = removed
    return report


def write_report_json(path, report):
    payload = report.scalars()
    payload['sigma_rows'] = [asdict(r) for r in report.rows]
    payload.update(report.provenance)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def _write_provenance_header(f, provenance):
    for key in sorted(provenance):
        f.write(f"# {key}: {provenance[key]}\n")


def write_report_csv(path, report):
    """One metric per row; metrics that were not computed are left out."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        _write_provenance_header(f, report.provenance)
        writer = csv.writer(f)
        writer.writerow(['metric', 'value'])
        for key, value in report.scalars().items():
            if value is not None:
                writer.writerow([key, value])


def write_sigma_csv(path, rows, provenance=None):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        _write_provenance_header(f, provenance or {})
        writer = csv.writer(f)
        writer.writerow(['y', 'sigma_y', 'sigma_T', 'stderr', 'mae', 'y_eff', 'n_points'])
        for r in rows:
            writer.writerow([f"{r.y_bin_center:.4f}", f"{r.sigma_true:.6f}", f"{r.sigma_T:.6f}",
                             f"{r.stderr:.6f}", f"{r.mae:.6f}", f"{r.y_eff:.6f}", r.n_points])

