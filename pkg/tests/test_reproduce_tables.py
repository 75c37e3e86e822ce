"""Tests for the pass/fail checks and the per-direction metrics of the reproduction script."""
import pytest

import reproduce_tables
from config import RunConfig
from conftest import make_dpm
from data import gen_shapes
from metrics import FittedSigmaRow, MetricsReport, jsd_baselines, jsd_sets


def _row(y, sigma_T):
    return FittedSigmaRow(y_bin_center=y, y_eff=y, sigma_true=0.1 * y, sigma_T=sigma_T, stderr=0.001,
                          mae=abs(sigma_T - 0.1 * y), n_points=100)


def test_lines_checks_pass_for_a_growing_accurate_table():
    rows = [_row(0.25, 0.03), _row(0.75, 0.08), _row(1.25, 0.12), _row(1.75, 0.18)]
    assert all(passed for _, passed, _ in reproduce_tables.lines_checks(rows))


def test_lines_checks_flag_flat_or_inaccurate_tables():
    flat = [_row(0.25, 0.1), _row(0.75, 0.1)]
    (_, increasing, _), (_, accurate, _) = reproduce_tables.lines_checks(flat)
    assert not increasing
    wide = [_row(0.25, 0.2), _row(0.75, 0.3)]
    assert not reproduce_tables.lines_checks(wide)[1][1]
    assert not any(passed for _, passed, _ in reproduce_tables.lines_checks([]))


@pytest.mark.parametrize("jsd_trans, jsd_rand, cd, pair, expected", [
    (0.1, 0.8, 0.01, 0.2, [True, True, True]),
    (0.5, 0.8, 0.01, 0.2, [False, True, True]),
    (0.1, 0.4, 0.01, 0.2, [True, False, True]),
    (0.1, 0.8, 0.3, 0.2, [True, True, False]),
])
def test_shapes_checks(jsd_trans, jsd_rand, cd, pair, expected):
    report = MetricsReport(jsd_trans=jsd_trans, jsd_rand=jsd_rand)
    assert [passed for _, passed, _ in reproduce_tables.shapes_checks(report, cd, pair)] == expected


def test_random_pair_chamfer_never_pairs_an_event_with_itself():
    events = gen_shapes(20, 64, seed=0).events
    assert reproduce_tables.random_pair_chamfer(events, seed=0) > 0
    assert reproduce_tables.random_pair_chamfer(events, seed=0) == reproduce_tables.random_pair_chamfer(events, seed=0)


# --- Both translation directions ---

def _shapes_pair():
    clean = gen_shapes(6, 16, seed=0)
    noisy = gen_shapes(6, 16, seed=0, noisy=True)
    cfg = RunConfig(seed=2, kind="shapes", n_events=6, n_points=16, jsd_resolution=8)
    return clean, noisy, cfg


def test_reverse_direction_is_measured_against_the_clean_set(monkeypatch):
    monkeypatch.setattr(reproduce_tables, "CYCLE_EVENTS", 4)
    clean, noisy, cfg = _shapes_pair()
    noisy_dpm = make_dpm(seed=1, T=4, label="shapes_noisy")
    clean_dpm = make_dpm(seed=2, T=4, label="shapes_clean")
    translated, report, cd_median, pair_median = reproduce_tables.direction_report(
        noisy_dpm, clean_dpm, noisy, clean, cfg, progress=False)

    assert translated.meta["translated_from"] == "shapes_noisy" and len(translated) == 6
    assert report.jsd_trans == jsd_sets(translated.events, clean.events, 8)
    assert (report.jsd_in_domain, report.jsd_rand) == jsd_baselines(clean.events, 2, 8)
    assert report.n_cd == 4
    assert pair_median == reproduce_tables.random_pair_chamfer(noisy.events[:4], 2)
    assert cd_median >= 0


def test_a_direction_through_one_model_cycles_back():
    clean, noisy, cfg = _shapes_pair()
    dpm = make_dpm(seed=3, T=8)
    _, report, cd_median, _ = reproduce_tables.direction_report(dpm, dpm, noisy, clean, cfg, progress=False)
    assert cd_median < 1e-6
    assert report.n_cd == 6


def test_direction_table_has_one_row_per_direction():
    report = MetricsReport(jsd_trans=0.1, jsd_in_domain=0.02, jsd_rand=0.8, cd_reco_mean=0.01, cd_clean_mean=0.009)
    table = reproduce_tables.format_direction_table([("clean -> noisy", report, 0.005, 0.2),
                                                     ("noisy -> clean", report, 0.006, 0.3)])
    lines = table.splitlines()
    assert len(lines) == 3 and lines[0].startswith("direction")
    assert lines[1].startswith("clean -> noisy") and lines[2].startswith("noisy -> clean")
    assert "0.1000" in lines[1] and "0.30000" in lines[2]
