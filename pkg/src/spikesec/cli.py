"""Command-line interface.

Subcommands: calibrate, gen-dataset, attack, experiment, report,
verify-log. Exit codes: 0 success, 1 usage error, 2 runtime error,
3 acceptance/calibration failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import load_config, save_config
from .errors import CalibrationError, ConfigError, SpikesecError, UsageError
from .profiles import PROFILES, get_profile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_FAILURE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p):
    p.add_argument("--config", help="experiment config file (overrides --profile)")
    p.add_argument("--profile", default="desk", choices=PROFILES,
                   help="shipped profile to start from (default: desk)")
    p.add_argument("--seed", type=int, default=None, help="override the root seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--format", default="csv,markdown,json,plotdata",
                   help="comma list of report formats")


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = get_profile(args.profile)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, root_seed=args.seed)
        cfg = dataclasses.replace(
            cfg,
            sim=dataclasses.replace(cfg.sim, seed=args.seed),
            task=dataclasses.replace(cfg.task, seed=args.seed),
            tamper=dataclasses.replace(cfg.tamper, seed=args.seed + 1),
            poison=dataclasses.replace(cfg.poison, seed=args.seed + 2),
        )
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _cmd_experiment(args) -> int:
    from .harness import emit_report, run_experiment
    from .telemetry import read_dataset_csv

    cfg = _load(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    dataset_csv = os.path.join(cfg.output_dir, "dataset.csv")
    report = run_experiment(cfg, jobs=args.jobs,
                            progress=lambda m: print(f"[experiment] {m}", flush=True),
                            out_dataset_csv=dataset_csv)
    dataset = read_dataset_csv(dataset_csv)
    formats = tuple(args.format.split(","))
    written = emit_report(report, cfg.output_dir, formats=formats, dataset=dataset)
    print(f"[experiment] wrote {dataset_csv}")
    for path in written:
        print(f"[experiment] wrote {path}")
    return EXIT_OK


def _cmd_gen_dataset(args) -> int:
    from .harness import build_baseline
    from .telemetry import (generate_dataset, summarize, summary_csv_text,
                            summary_table_text)

    cfg = _load(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    print("[gen-dataset] training baseline", flush=True)
    baseline, task, readout = build_baseline(cfg)
    tamper = dataclasses.replace(cfg.tamper, seed=cfg.tamper.seed + 777_000)
    poison = dataclasses.replace(cfg.poison, seed=cfg.poison.seed + 777_000)
    path = os.path.join(cfg.output_dir, "dataset.csv")
    dataset = generate_dataset(
        baseline, readout, task, cfg.sim, cfg.workload, tamper, poison,
        n_samples=cfg.dataset_size, attack_ratio=cfg.attack_ratio,
        seed_root=cfg.root_seed, out_csv=path, jobs=args.jobs,
        progress=lambda d, t: print(f"[gen-dataset] {d}/{t}", flush=True))
    stats = summarize(dataset)
    with open(os.path.join(cfg.output_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(summary_csv_text(stats))
    print(summary_table_text(stats), end="")
    print(f"[gen-dataset] wrote {path} ({len(dataset)} rows)")
    return EXIT_OK


def _cmd_attack(args) -> int:
    from .harness import ExperimentContext, run_scenario, build_baseline
    from .attacks import plan_tamper, poison_inputs, tamper_weights
    from .workload import draw_sample
    from . import rng as rngmod

    cfg = _load(args)
    print("[attack] training baseline", flush=True)
    baseline, task, readout = build_baseline(cfg)
    ctx = ExperimentContext(cfg=cfg, baseline=baseline, readout=readout,
                            task=task, anomaly=None, ids_rules=None)
    res = run_scenario(ctx, args.scenario_id, args.type)
    for key, value in res.to_dict().items():
        print(f"{key}: {value}")
    if args.export_logs:
        os.makedirs(args.export_logs, exist_ok=True)
        if args.type == "weight_tamper":
            spec = dataclasses.replace(cfg.tamper, seed=cfg.tamper.seed + args.scenario_id)
            _, log = tamper_weights(baseline.copy(), spec, readout, cfg.task.n_channels)
            path = os.path.join(args.export_logs, "tamper_log.csv")
            log.to_csv(path)
        else:
            spec = dataclasses.replace(cfg.poison, seed=cfg.poison.seed + args.scenario_id)
            gen = rngmod.substream(cfg.root_seed, rngmod.SCENARIO, args.scenario_id)
            stream = [draw_sample(cfg.task, k % cfg.task.n_classes, gen, task.prototypes)
                      for k in range(8)]
            _, log = poison_inputs(stream, spec, task)
            path = os.path.join(args.export_logs, "poison_log.csv")
            log.to_csv(path)
        print(f"[attack] wrote {path}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    from .harness import CalibrationTargets, calibrate

    cfg = _load(args)
    report = calibrate(cfg, CalibrationTargets(), budget=args.budget,
                       progress=lambda m: print(f"[calibrate] {m}", flush=True))
    print(f"{'metric':<22}{'achieved':>12}  target band")
    for name, band in report.targets.items():
        val = report.achieved[name]
        mark = "ok" if band[0] <= val <= band[1] else "MISS"
        print(f"{name:<22}{val:>12.3f}  [{band[0]}, {band[1]}] {mark}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "calibrated.cfg")
        save_config(report.config, path)
        print(f"[calibrate] wrote {path}")
    if not report.converged:
        print(f"[calibrate] FAILED after {report.iterations} iterations; "
              f"unmet bands: {report.unmet}")
        return EXIT_FAILURE
    print(f"[calibrate] converged in {report.iterations} iterations")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .harness import ExperimentReport, emit_report
    from .telemetry import read_dataset_csv

    with open(args.from_json, "r", encoding="utf-8") as fh:
        report = ExperimentReport.from_json(fh.read())
    dataset = read_dataset_csv(args.dataset) if args.dataset else None
    out = args.out or "out"
    written = emit_report(report, out, formats=tuple(args.format.split(",")),
                          dataset=dataset)
    for path in written:
        print(f"[report] wrote {path}")
    return EXIT_OK


def _cmd_verify_log(args) -> int:
    from .defenses import SecureLog, SecurePolicy, verify_records

    key = bytes.fromhex(args.key) if args.key else bytes.fromhex(
        get_profile("desk").secure.key_hex)
    log = SecureLog.load(args.log)
    result = verify_records(log, key, SecurePolicy())
    print(f"records: {len(log.records)}  accepted: {len(result.accepted)}  "
          f"rejected: {len(result.rejected)}  alarm: {result.alarm}")
    if result.alarm or result.rejected:
        for rec, reason in result.rejected[:20]:
            print(f"  seq {rec.seq}: {reason}")
        if len(result.rejected) > 20:
            print(f"  ... and {len(result.rejected) - 20} more")
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="spikesec",
                     description="Spiking-network security workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", parents=[], help="run the full protocol")
    _add_common(p)
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("gen-dataset", help="generate the telemetry dataset")
    _add_common(p)
    p.set_defaults(fn=_cmd_gen_dataset)

    p = sub.add_parser("attack", help="run a single attack scenario")
    _add_common(p)
    p.add_argument("--type", choices=("weight_tamper", "input_poison"),
                   default="weight_tamper")
    p.add_argument("--scenario-id", type=int, default=0)
    p.add_argument("--export-logs", default=None,
                   help="directory for tamper/poison log CSVs")
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("calibrate", help="tune the config into the clean bands")
    _add_common(p)
    p.add_argument("--budget", type=int, default=20, help="max probe evaluations")
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("report", help="re-emit tables/figures from report.json")
    p.add_argument("--from-json", required=True)
    p.add_argument("--dataset", default=None, help="dataset.csv for fig1 data")
    p.add_argument("--out", default="out")
    p.add_argument("--format", default="csv,markdown,json,plotdata")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("verify-log", help="audit a secure update log")
    p.add_argument("--log", required=True)
    p.add_argument("--key", default=None, help="session key (hex)")
    p.set_defaults(fn=_cmd_verify_log)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CalibrationError as exc:
        print(f"calibration failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except SpikesecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
