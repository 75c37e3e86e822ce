"""
Command-line front end: generate datasets, train one diffusion model per domain,
translate events between domains, run A -> B -> A reconstruction cycles, and
evaluate the results.

    python main.py gen-data --config run.json
    python main.py train runs/data/lines_clean.pcds --config run.json
    python main.py train runs/data/lines_noisy.pcds --config run.json
    python main.py translate runs/checkpoints/lines_clean.ckpt runs/checkpoints/lines_noisy.ckpt \
        runs/data/lines_clean.pcds --config run.json
    python main.py evaluate --translated runs/data/translated.pcds \
        --reference runs/data/lines_noisy.pcds --source runs/data/lines_clean.pcds

Every artifact records (seed, config hash, tool version) and nothing time-dependent,
so re-running a command with the same inputs writes byte-identical files.
"""
import argparse
import csv
import hashlib
import sys
from pathlib import Path

import numpy as np

import numerics
from config import ConfigError, TOOL_VERSION, config_hash, load_config, parse_override, provenance, save_manifest
from data import PointCloudFormatError, gen_lines, gen_shapes, import_csv, load_pc, save_pc
from diffusion import TrainConfig, TrainingDivergedError, load_dpm, save_dpm, train_dpm
from metrics import (MetricsReport, chamfer, fitted_sigma_report, jsd_baselines, jsd_sets, reconstruction_stats,
                     write_report_csv, write_report_json, write_sigma_csv)
from numerics import CheckpointFormatError, NonFiniteGradientError
from plots import write_projections
from translation import ScheduleMismatchError, cycle_dataset, translate_dataset

# --- Configuration ---
LOSS_LOG_EVERY = 100
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def file_sha256(path):
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(dataset, cfg):
    dataset.meta.update(provenance(cfg))
    return dataset


def cmd_gen_data(cfg, args):
    """Writes the clean and noisy datasets (or one imported CSV dataset) plus manifest.json."""
    out = _out_dir(args, cfg.data_dir)
    print(f"-> Generating '{cfg.kind}' data into {out} (seed {cfg.seed})")
    if cfg.kind == "csv":
        datasets = {cfg.csv_label: import_csv(cfg.csv_path, cfg.csv_label)}
    elif cfg.kind == "lines":
        datasets = {f"lines_{state}": gen_lines(cfg.events, cfg.n_points, cfg.seed, noisy)
                    for state, noisy in (("clean", False), ("noisy", True))}
    else:
        datasets = {f"shapes_{state}": gen_shapes(cfg.events, cfg.n_points, cfg.seed, noisy, cfg.noise_sigma)
                    for state, noisy in (("clean", False), ("noisy", True))}

    files = {}
    for name, dataset in datasets.items():
        path = out / f"{name}.pcds"
        save_pc(path, _stamp(dataset, cfg))
        files[name] = {'path': path.name, 'events': len(dataset), 'points_per_event': cfg.n_points,
                       'class_counts': dataset.class_counts(), 'sha256': file_sha256(path)}
        print(f"   {path}: {len(dataset)} events")

    manifest = {'command': 'gen-data', 'kind': cfg.kind, 'config': cfg.to_dict(), 'files': files}
    manifest.update(provenance(cfg))
    save_manifest(out / "manifest.json", manifest)
    print(f"✅ Manifest: {out / 'manifest.json'}")
    return files


def write_loss_csv(path, losses, prov):
    """Mean loss over each block of LOSS_LOG_EVERY iterations (the last block may be shorter)."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        for key in sorted(prov):
            f.write(f"# {key}: {prov[key]}\n")
        writer = csv.writer(f)
        writer.writerow(['iteration', 'mean_loss'])
        for start in range(0, len(losses), LOSS_LOG_EVERY):
            block = losses[start:start + LOSS_LOG_EVERY]
            writer.writerow([start + len(block), f"{float(np.mean(block)):.6f}"])


def cmd_train(cfg, args):
    dataset = load_pc(args.dataset)
    label = args.label or dataset.domain_label
    dataset.domain_label = label
    out = _out_dir(args, cfg.checkpoint_dir)
    hyper = TrainConfig.from_run_config(cfg)
    print(f"-> Training '{label}' on {len(dataset)} events: {hyper.iters} iterations, "
          f"batch {hyper.batch}, T={hyper.T}, F={hyper.F}")

    dpm = train_dpm(dataset, hyper, seed=cfg.seed)
    print(f"   {numerics.ParamStore(dpm).num_values():,} parameters")
    dpm.info['config_hash'] = config_hash(cfg)
    prov = provenance(cfg)
    ckpt = out / f"{label}.ckpt"
    save_dpm(ckpt, dpm, prov)
    write_loss_csv(out / f"{label}_loss.csv", dpm.loss_history, prov)
    if dpm.loss_history:
        print(f"   final loss (last {LOSS_LOG_EVERY}): {np.mean(dpm.loss_history[-LOSS_LOG_EVERY:]):.4f}")
    print(f"✅ Checkpoint: {ckpt}")
    return ckpt


def cmd_translate(cfg, args):
    src, tgt = load_dpm(args.src_ckpt), load_dpm(args.tgt_ckpt)
    dataset = load_pc(args.input)
    out = _out_dir(args, cfg.data_dir)
    print(f"-> Translating {len(dataset)} events {src.domain_label} -> {tgt.domain_label} (seed {cfg.seed})")

    translated = _stamp(translate_dataset(src, tgt, dataset, cfg.seed, args.workers), cfg)
    path = out / "translated.pcds"
    save_pc(path, translated)
    manifest = {'command': 'translate', 'input': str(args.input), 'src_ckpt': str(args.src_ckpt),
                'tgt_ckpt': str(args.tgt_ckpt), 'events': len(translated),
                'event_seeds': translated.meta['event_seeds'], 'sha256': file_sha256(path)}
    manifest.update(provenance(cfg))
    save_manifest(out / "translate_manifest.json", manifest)
    print(f"✅ Translated events: {path}")
    return path


def cmd_cycle(cfg, args):
    dpm_a, dpm_b = load_dpm(args.ckpt_a), load_dpm(args.ckpt_b)
    dataset = load_pc(args.input)
    out = _out_dir(args, cfg.data_dir)
    print(f"-> Cycling {len(dataset)} events {dpm_a.domain_label} -> {dpm_b.domain_label} -> {dpm_a.domain_label}")

    back, cds = cycle_dataset(dpm_a, dpm_b, dataset, cfg.seed, args.workers)
    path = out / "reconstructed.pcds"
    save_pc(path, _stamp(back, cfg))
    with open(out / "cycle_cd.csv", 'w', newline='', encoding='utf-8') as f:
        prov = provenance(cfg)
        for key in sorted(prov):
            f.write(f"# {key}: {prov[key]}\n")
        writer = csv.writer(f)
        writer.writerow(['event', 'cd'])
        for i, cd in enumerate(cds):
            writer.writerow([i, f"{cd:.8f}"])
    print(f"   CD(reco) mean {np.mean(cds):.4f}, median {np.median(cds):.4f}")
    print(f"✅ Reconstructed events: {path}")
    return path


def cmd_evaluate(cfg, args):
    translated = load_pc(args.translated)
    reference = load_pc(args.reference)
    out = _out_dir(args, cfg.report_dir)
    prov = provenance(cfg)
    report = MetricsReport(provenance=prov)

    print(f"-> JSD over {len(translated)} translated vs {len(reference)} reference events "
          f"(resolution {cfg.jsd_resolution})")
    report.jsd_trans = jsd_sets(translated.events, reference.events, cfg.jsd_resolution)
    if len(reference) >= 2:
        report.jsd_in_domain, report.jsd_rand = jsd_baselines(reference.events, cfg.seed, cfg.jsd_resolution)
    else:
        print("⚠ Reference set has a single event; in-domain and random baselines skipped.")

    source = load_pc(args.source) if args.source else None
    if args.reconstructed:
        if source is None:
            raise ConfigError("--reconstructed needs --source (the events the cycle started from)")
        back = load_pc(args.reconstructed)
        if len(back) != len(source):
            raise ConfigError(f"--reconstructed has {len(back)} events, --source has {len(source)}")
        cds = [chamfer(a, b, cfg.include_charge) for a, b in zip(source.events, back.events)]
        reconstruction_stats(report, cds, cfg.keep_fraction)

    if translated.meta.get('kind') == 'lines':
        report.rows = fitted_sigma_report(translated, cfg.sigma_bins)
        write_sigma_csv(out / "sigma_table.csv", report.rows, prov)
        for r in report.rows:
            print(f"   y={r.y_bin_center:.2f}  sigma(y)={r.sigma_true:.3f}  "
                  f"sigma_T={r.sigma_T:.3f} ± {r.stderr:.3f}  MAE={r.mae:.3f}")

    write_report_json(out / "metrics.json", report)
    write_report_csv(out / "metrics.csv", report)
    for key, value in report.scalars().items():
        if value is not None:
            print(f"   {key:<14} {value}")

    if source is not None:
        n = min(cfg.plot_events, len(source), len(translated))
        if n:
            write_projections(out, source.events[:n], translated.events[:n],
                              title=f"{source.domain_label} -> {translated.domain_label}", provenance=prov)
    print(f"✅ Reports: {out}")
    return report


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'translate': cmd_translate,
    'cycle': cmd_cycle,
    'evaluate': cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Unpaired point-cloud domain translation with one diffusion model per domain."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (flat; keys are RunConfig fields).")
    common.add_argument("--seed", type=int, help="Overrides the config seed.")
    common.add_argument("--out", help="Output directory (default: the config's data/checkpoint/report dir).")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key; VALUE is parsed as JSON. Repeatable.")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="Generate clean/noisy datasets or import a CSV.")

    p = sub.add_parser("train", parents=[common], help="Train one diffusion model on a dataset file.")
    p.add_argument("dataset", help="PCDS dataset file.")
    p.add_argument("--label", help="Domain label / checkpoint name (default: the dataset's label).")

    p = sub.add_parser("translate", parents=[common], help="Translate a dataset between two models.")
    p.add_argument("src_ckpt")
    p.add_argument("tgt_ckpt")
    p.add_argument("input", help="PCDS file of source-domain events.")
    p.add_argument("--workers", type=int, default=1, help="Translation threads (default: %(default)s).")

    p = sub.add_parser("cycle", parents=[common], help="A -> B -> A reconstruction with per-event CD.")
    p.add_argument("ckpt_a")
    p.add_argument("ckpt_b")
    p.add_argument("input", help="PCDS file of domain-A events.")
    p.add_argument("--workers", type=int, default=1, help="Cycle threads (default: %(default)s).")

    p = sub.add_parser("evaluate", parents=[common], help="JSD, CD and fitted-sigma reports plus SVG projections.")
    p.add_argument("--translated", required=True)
    p.add_argument("--reference", required=True, help="Original events of the target domain.")
    p.add_argument("--source", help="The events that were translated (for plots and CD).")
    p.add_argument("--reconstructed", help="Output of `cycle` for --source.")
    return parser


def main(argv=None):
    # Progress output uses emoji; a cp1252 console would otherwise abort the run.
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, 'reconfigure'):
            stream.reconfigure(errors='replace')

    args = build_parser().parse_args(argv)
    try:
        overrides = dict(parse_override(item) for item in args.set)
        if args.seed is not None:
            overrides['seed'] = args.seed
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, ScheduleMismatchError) as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except (TrainingDivergedError, NonFiniteGradientError) as e:
        print(f"❌ Numerical failure: {e}. Try a lower lr_initial or a smaller beta range.")
        return EXIT_NUMERIC
    except (OSError, PointCloudFormatError, CheckpointFormatError) as e:
        print(f"❌ I/O error: {e}")
        return EXIT_IO
    except ValueError as e:
        print(f"❌ Invalid input: {e}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
