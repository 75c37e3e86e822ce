"""
Desk-scale reproduction of the two headline results, in-process and end to end.

  --task lines   clean lines -> noisy lines. Trains both models, translates the
                 clean events and prints the fitted-noise table: sigma_T must grow
                 with y and the mean MAE against sigma(y) = 0.1 y must be <= 0.05.
  --task shapes  wireframes in both directions. Prints JSD(trans), JSD(in-domain),
                 JSD(rand), CD(reco) and CD(clean) for clean -> noisy and for
                 noisy -> clean. On the clean -> noisy row JSD(trans) must be under
                 half of JSD(rand), JSD(rand) above 0.5, and the median cycle CD
                 below the median CD between random in-domain pairs.

The budget is T = 64, F = 64, batch 64 and 30,000 iterations per model (hours on a
desktop CPU); --iters shrinks it for a smoke run, which will not pass --check.
Datasets, checkpoints and reports land in --out and are byte-identical across
re-runs with the same seed.

Usage:
    python scripts/reproduce_tables.py --task lines
    python scripts/reproduce_tables.py --task shapes --check
    python scripts/reproduce_tables.py --task lines --iters 500 --out runs/smoke
"""
import argparse
import sys
from pathlib import Path

import numpy as np

# Run as a script from anywhere: the pipeline modules live in the repo root.
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from config import RunConfig, provenance, save_manifest  # noqa: E402
from data import Dataset, gen_lines, gen_shapes, save_pc
from diffusion import TrainConfig, save_dpm, train_dpm
from metrics import (MetricsReport, chamfer, fitted_sigma_report, jsd_baselines, jsd_sets,
                     reconstruction_stats, write_report_csv, write_report_json, write_sigma_csv)
from translation import cycle_dataset, translate_dataset

DESK = dict(T=64, F=64, batch=64, iters=30_000)
LINE_EVENTS = 500
SHAPE_EVENTS = 1000
CYCLE_EVENTS = 200
MAX_MEAN_MAE = 0.05


def lines_checks(rows):
    """[(name, passed, detail)] for the fitted-noise table."""
    sigmas = [r.sigma_T for r in rows]
    increasing = len(rows) >= 2 and all(b > a for a, b in zip(sigmas, sigmas[1:]))
    mean_mae = float(np.mean([r.mae for r in rows])) if rows else float('inf')
    return [
        ("sigma_T strictly increasing in y", increasing, " < ".join(f"{s:.3f}" for s in sigmas)),
        (f"mean MAE <= {MAX_MEAN_MAE}", mean_mae <= MAX_MEAN_MAE, f"{mean_mae:.4f}"),
    ]


def shapes_checks(report, cd_median, pair_median):
    return [
        ("JSD(trans) < 0.5 x JSD(rand)", report.jsd_trans < 0.5 * report.jsd_rand,
         f"{report.jsd_trans:.3f} vs {0.5 * report.jsd_rand:.3f}"),
        ("JSD(rand) > 0.5", report.jsd_rand > 0.5, f"{report.jsd_rand:.3f}"),
        ("median CD(reco) < median random-pair CD", cd_median < pair_median,
         f"{cd_median:.4f} vs {pair_median:.4f}"),
    ]


def random_pair_chamfer(events, seed):
    """Median chamfer between each event and a different, randomly chosen event of the same set."""
    rng = np.random.default_rng(seed)
    n = len(events)
    partners = (np.arange(n) + rng.integers(1, n, size=n)) % n
    return float(np.median([chamfer(events[i], events[j]) for i, j in enumerate(partners)]))


def _train_pair(clean, noisy, cfg, out):
    hyper = TrainConfig.from_run_config(cfg)
    models = []
    for k, dataset in enumerate((clean, noisy)):
        print(f"-> Training '{dataset.domain_label}' ({hyper.iters} iterations)")
        dpm = train_dpm(dataset, hyper, seed=cfg.seed + k)
        save_dpm(out / f"{dataset.domain_label}.ckpt", dpm, provenance(cfg))
        models.append(dpm)
    return models


def run_lines(cfg, out):
    clean = gen_lines(cfg.events, cfg.n_points, cfg.seed, noisy=False)
    noisy = gen_lines(cfg.events, cfg.n_points, cfg.seed + 1, noisy=True)
    save_pc(out / "lines_clean.pcds", clean)
    save_pc(out / "lines_noisy.pcds", noisy)
    src, tgt = _train_pair(clean, noisy, cfg, out)

    translated = translate_dataset(src, tgt, clean, cfg.seed)
    save_pc(out / "translated.pcds", translated)
    rows = fitted_sigma_report(translated, cfg.sigma_bins)
    write_sigma_csv(out / "sigma_table.csv", rows, provenance(cfg))

    print()
    print("--- Fitted noise of translated lines ---")
    print(f"{'y':>5}  {'sigma(y)':>8}  {'sigma_T':>8}  {'stderr':>7}  {'MAE':>6}")
    for r in rows:
        print(f"{r.y_bin_center:>5.2f}  {r.sigma_true:>8.3f}  {r.sigma_T:>8.3f}  {r.stderr:>7.4f}  {r.mae:>6.3f}")
    print()
    return lines_checks(rows)


def run_shapes(cfg, out):
    clean = gen_shapes(cfg.events, cfg.n_points, cfg.seed, noisy=False)
    # Same seed: the noisy domain holds noisy copies of the clean solids. Training never pairs them.
    noisy = gen_shapes(cfg.events, cfg.n_points, cfg.seed, noisy=True, noise_sigma=cfg.noise_sigma)
    save_pc(out / "shapes_clean.pcds", clean)
    save_pc(out / "shapes_noisy.pcds", noisy)
    src, tgt = _train_pair(clean, noisy, cfg, out)

    forward = direction_report(src, tgt, clean, noisy, cfg)
    backward = direction_report(tgt, src, noisy, clean, cfg)
    for suffix, (translated, report, _, _) in (("", forward), ("_noisy_to_clean", backward)):
        save_pc(out / f"translated{suffix}.pcds", translated)
        write_report_json(out / f"metrics{suffix}.json", report)
        write_report_csv(out / f"metrics{suffix}.csv", report)

    print()
    print("--- Wireframe translation metrics ---")
    print(format_direction_table([("clean -> noisy", *forward[1:]), ("noisy -> clean", *backward[1:])]))
    print()
    return shapes_checks(*forward[1:])


def direction_report(src, tgt, source, reference, cfg, progress=True):
    """
    Metrics of one translation direction: JSD(trans) of the translated source against
    reference, the JSD baselines of reference, and CD(reco) of the source -> target ->
    source cycle over the first CYCLE_EVENTS source events.

    Returns (translated Dataset, MetricsReport, median cycle CD, median random-pair CD).
    """
    translated = translate_dataset(src, tgt, source, cfg.seed, progress=progress)
    report = MetricsReport(provenance=provenance(cfg))
    report.jsd_trans = jsd_sets(translated.events, reference.events, cfg.jsd_resolution)
    report.jsd_in_domain, report.jsd_rand = jsd_baselines(reference.events, cfg.seed, cfg.jsd_resolution)

    subset = Dataset(source.events[:CYCLE_EVENTS], source.domain_label, meta=dict(source.meta))
    _, cds = cycle_dataset(src, tgt, subset, cfg.seed, progress=progress)
    reconstruction_stats(report, cds, cfg.keep_fraction)
    return translated, report, float(np.median(cds)), random_pair_chamfer(subset.events, cfg.seed)


def format_direction_table(rows):
    """One line per (direction, report, cd_median, pair_median) row."""
    header = (f"{'direction':<16} {'jsd_trans':>9} {'jsd_in_dom':>10} {'jsd_rand':>9} "
              f"{'cd_reco':>10} {'cd_clean':>10} {'cd_median':>10} {'pair_cd':>10}")
    lines = [header]
    for name, r, cd_median, pair_median in rows:
        lines.append(f"{name:<16} {r.jsd_trans:>9.4f} {r.jsd_in_domain:>10.4f} {r.jsd_rand:>9.4f} "
                     f"{r.cd_reco_mean:>10.5f} {r.cd_clean_mean:>10.5f} {cd_median:>10.5f} {pair_median:>10.5f}")
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description="Desk-scale reproduction of the lines and wireframe results.")
    parser.add_argument("--task", choices=("lines", "shapes"), required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iters", type=int, default=DESK['iters'],
                        help="Training iterations per model (default: %(default)s).")
    parser.add_argument("--out", type=Path, help="Output directory (default: runs/reproduce/<task>).")
    parser.add_argument("--check", action="store_true", help="Exit 1 if any check fails.")
    args = parser.parse_args()

    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, 'reconfigure'):
            stream.reconfigure(errors='replace')

    n_events = LINE_EVENTS if args.task == "lines" else SHAPE_EVENTS
    cfg = RunConfig(seed=args.seed, kind=args.task, n_events=n_events,
                    **{**DESK, 'iters': args.iters})
    out = args.out or Path("runs/reproduce") / args.task
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(out / "manifest.json", {'task': args.task, 'config': cfg.to_dict(), **provenance(cfg)})

    checks = run_lines(cfg, out) if args.task == "lines" else run_shapes(cfg, out)
    for name, passed, detail in checks:
        print(f"{'✅' if passed else '❌'} {name}: {detail}")
    if args.iters < DESK['iters']:
        print(f"⚠ {args.iters} iterations is below the desk budget of {DESK['iters']}; "
              f"the checks are not expected to pass.")
    if args.check and not all(passed for _, passed, _ in checks):
        sys.exit(1)


if __name__ == "__main__":
    main()
