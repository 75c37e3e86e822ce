"""Tests for the dataset generators, normalization, PCDS files and CSV import."""
import struct

import numpy as np
import pytest

import data
from data import PointCloud, PointCloudFormatError


def _segment_distance(points, edges):
    """Distance from each point to the nearest segment (brute force)."""
    a, b = edges[:, 0], edges[:, 1]                   # (E, 3)
    ab = b - a
    ap = points[:, None, :] - a[None]                 # (N, E, 3)
    u = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    closest = a[None] + u[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1).min(axis=1)


# --- Lines ---

def test_clean_lines_have_x_zero_and_constant_y():
    ds = data.gen_lines(20, 64, seed=3)
    assert len(ds) == 20 and all(e.points.shape == (64, 3) for e in ds.events)
    for e in ds.events:
        assert np.all(e.points[:, 0] == 0.0)
        assert np.all(e.points[:, 1] == e.points[0, 1])
        assert 0.0 <= e.points[0, 1] <= 2.0
        assert np.all((e.points[:, 2] >= 0.0) & (e.points[:, 2] <= 2.0))


def test_line_dataset_sizes_match_defaults():
    ds = data.gen_lines(1000, 256, seed=0)
    assert len(ds) == 1000
    assert {e.n for e in ds.events} == {256}
    assert ds.meta["kind"] == "lines"


def test_noisy_lines_x_spread_near_y_one():
    ds = data.gen_lines(5000, 64, seed=11, noisy=True)
    clean = data.gen_lines(5000, 64, seed=11, noisy=False)
    xs = [e.points[:, 0] for e, c in zip(ds.events, clean.events) if abs(c.points[0, 1] - 1.0) < 0.05]
    xs = np.concatenate(xs)
    assert len(xs) >= 10_000
    assert np.std(xs, ddof=1) == pytest.approx(0.1, abs=0.005)


def test_generators_are_deterministic_and_share_geometry():
    a = data.gen_lines(5, 16, seed=7, noisy=True)
    b = data.gen_lines(5, 16, seed=7, noisy=True)
    clean = data.gen_lines(5, 16, seed=7, noisy=False)
    for x, y, c in zip(a.events, b.events, clean.events):
        assert np.array_equal(x.points, y.points)
        assert not np.array_equal(x.points, c.points)
    other = data.gen_lines(5, 16, seed=8)
    assert not np.array_equal(other.events[0].points, clean.events[0].points)


def test_gen_lines_rejects_bad_sizes():
    with pytest.raises(ValueError):
        data.gen_lines(0, 16)
    with pytest.raises(ValueError):
        data.gen_lines(3, 1)


# --- Shapes ---

def test_shapes_are_evenly_split():
    ds = data.gen_shapes(2000, 16, seed=0)
    assert ds.class_counts() == {"triangular_prism": 1000, "cuboid": 1000}


def test_odd_shape_count_is_refused():
    with pytest.raises(ValueError, match="even"):
        data.gen_shapes(3, 16)


@pytest.mark.parametrize("index", [0, 1, 4, 7])
def test_clean_shapes_lie_on_their_wireframe(index):
    cloud, edges = data.shape_event(5, index, 256)
    assert len(edges) == (9 if index % 2 == 0 else 12)
    assert cloud.label == (data.PRISM if index % 2 == 0 else data.CUBOID)
    assert _segment_distance(cloud.points.astype(np.float64), edges).max() < 1e-5


def test_cuboid_and_prism_edges():
    cube = data.cuboid_edges((1.0, 1.0, 1.0))
    assert cube.shape == (12, 2, 3)
    assert np.allclose(np.linalg.norm(cube[:, 1] - cube[:, 0], axis=1), 1.0)
    prism = data.prism_edges((1.0, 2.0, 3.0))
    assert prism.shape == (9, 2, 3)
    assert np.allclose(prism.reshape(-1, 3).max(axis=0), [0.5, 1.0, 1.5])


def test_noisy_shape_distance_matches_monte_carlo_oracle():
    sigma = 0.05
    measured, oracle = [], []
    rng = np.random.default_rng(123)
    for i in range(40):
        noisy, edges = data.shape_event(9, i, 256, noise_sigma=sigma)
        clean, _ = data.shape_event(9, i, 256)
        measured.append(_segment_distance(noisy.points.astype(np.float64), edges))
        resampled = clean.points + rng.normal(0.0, sigma, size=clean.points.shape)
        oracle.append(_segment_distance(resampled, edges))
    measured, oracle = np.concatenate(measured), np.concatenate(oracle)
    assert len(measured) >= 10_000
    assert measured.mean() == pytest.approx(oracle.mean(), rel=0.2)


def test_random_rotation_is_orthonormal():
    r = data.random_rotation(np.random.default_rng(0))
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


# --- Normalization ---

def test_normalize_round_trip():
    ds = data.gen_shapes(10, 32, seed=1, noisy=True)
    normed, stats = data.normalize(ds)
    assert normed.norm == stats
    pooled = np.concatenate([e.points for e in normed.events]).astype(np.float64)
    assert np.allclose(pooled.mean(axis=0), 0.0, atol=1e-5)
    assert pooled.std() == pytest.approx(1.0, abs=1e-4)
    back = data.denormalize(normed, stats)
    for a, b in zip(ds.events, back.events):
        assert np.allclose(a.points, b.points, atol=1e-6)
        assert a.label == b.label


def test_normalizing_normalized_data_is_near_identity():
    ds = data.gen_lines(10, 32, seed=1, noisy=True)
    normed, _ = data.normalize(ds)
    stats = data.fit_norm(normed)
    assert np.allclose(stats.center, 0.0, atol=1e-5)
    assert stats.scale == pytest.approx(1.0, abs=1e-4)


def test_single_point_dataset_clamps_scale_with_warning():
    ds = data.Dataset([PointCloud([[1.0, 2.0, 3.0]])], "one")
    with pytest.warns(UserWarning, match="zero variance"):
        stats = data.fit_norm(ds)
    assert stats.scale == 1.0
    assert stats.center == pytest.approx((1.0, 2.0, 3.0))


def test_dataset_invariants():
    with pytest.raises(ValueError, match="mix"):
        data.Dataset([PointCloud(np.zeros((2, 3))), PointCloud(np.zeros((2, 4)))], "bad")
    with pytest.raises(ValueError, match="labels"):
        data.Dataset([PointCloud(np.zeros((2, 3)), label=5)], "bad")
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 5)))


# --- Files ---

def test_pcds_round_trip_is_bit_exact(tmp_path):
    ds = data.gen_shapes(6, 20, seed=2, noisy=True)
    ds.meta["seed"] = 2
    path = tmp_path / "shapes.pcds"
    data.save_pc(path, ds)
    back = data.load_pc(path)
    assert back.domain_label == ds.domain_label
    assert back.meta == ds.meta
    for a, b in zip(ds.events, back.events):
        assert np.array_equal(a.points, b.points)
        assert a.label == b.label


def test_pcds_keeps_norm_and_missing_labels():
    ds = data.gen_lines(3, 8, seed=0)
    normed, stats = data.normalize(ds)
    back = data.decode_pc(data.encode_pc(normed))
    assert back.norm == stats
    assert all(e.label is None for e in back.events)


def test_pcds_is_byte_identical_across_runs():
    a = data.encode_pc(data.gen_lines(4, 8, seed=5, noisy=True))
    b = data.encode_pc(data.gen_lines(4, 8, seed=5, noisy=True))
    assert a == b


def test_truncated_pcds_names_byte_counts():
    blob = data.encode_pc(data.gen_lines(2, 8, seed=0))
    with pytest.raises(PointCloudFormatError, match=rf"expected {len(blob)} bytes, file has {len(blob) - 4}"):
        data.decode_pc(blob[:-4])


def test_bad_magic_and_version():
    blob = data.encode_pc(data.gen_lines(1, 4, seed=0))
    with pytest.raises(PointCloudFormatError, match="not a PCDS"):
        data.decode_pc(b"XXXX" + blob[4:])
    with pytest.raises(PointCloudFormatError, match="version 9"):
        data.decode_pc(blob[:4] + bytes([9]) + blob[5:])


def _first_event_header(blob):
    (meta_len,) = struct.unpack('<I', blob[5:9])
    return 9 + meta_len + 4


def test_unknown_class_label_is_a_format_error():
    blob = bytearray(data.encode_pc(data.gen_shapes(2, 8, seed=0)))
    blob[_first_event_header(blob) + 5] = 7
    with pytest.raises(PointCloudFormatError, match="event 0 has class label 7"):
        data.decode_pc(bytes(blob))


def test_empty_event_is_a_format_error():
    blob = bytearray(data.encode_pc(data.gen_lines(1, 4, seed=0)))
    at = _first_event_header(blob)
    blob[at:at + 4] = struct.pack('<I', 0)
    with pytest.raises(PointCloudFormatError, match="event 0 has no points"):
        data.decode_pc(bytes(blob[:at + 6]))


def test_unreadable_metadata_is_a_format_error():
    blob = bytearray(data.encode_pc(data.gen_lines(1, 4, seed=0)))
    blob[9] = 0xFF
    with pytest.raises(PointCloudFormatError, match="unreadable metadata"):
        data.decode_pc(bytes(blob))


def test_csv_import_groups_by_event(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text(
        "event_id,x,y,z,charge\n"
        "b,0,0,0,1.5\n"
        "a,1,1,1,2.0\n"
        "b,0,1,0,1.0\n"
        "a,2,2,2,3.0\n"
        "b,0,2,0,0.5\n"
        "a,3,3,3,4.0\n")
    ds = data.import_csv(path, "at_tpc")
    assert len(ds) == 2 and ds.d == 4
    assert ds.meta["event_ids"] == ["b", "a"]
    assert ds.events[0].points.tolist() == [[0, 0, 0, 1.5], [0, 1, 0, 1.0], [0, 2, 0, 0.5]]
    assert ds.events[1].n == 3


def test_csv_import_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("event_id,x,y\n1,0,0\n")
    with pytest.raises(PointCloudFormatError, match="lacks z"):
        data.import_csv(path)
    path.write_text("event_id,x,y,z\n1,0,zero,0\n")
    with pytest.raises(PointCloudFormatError, match=":2:"):
        data.import_csv(path)
