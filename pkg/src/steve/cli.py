"""Command-line entry point: ``steve <subcommand>``.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Errors go to
stderr as ``ERROR:<code>:<message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import dca
from .config import Config, load_config, write_config
from .data import Dataset, generate_synthetic, load_dataset, save_dataset
from .errors import SteveError, ValidationError
from .graph import cluster_regions, save_clusters

log = logging.getLogger("steve")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _common(p: argparse.ArgumentParser, data=True) -> None:
    p.add_argument("--config", help="INI config file; defaults are used for missing keys")
    p.add_argument("--out", help="output root (default: $STEVE_OUT_DIR or ./steve_out)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--precision", choices=["float32", "float64"], help="training precision")
    if data:
        p.add_argument("--data", help="dataset directory (default: <out>/data)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="steve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic confounded dataset")
    _common(p, data=False)

    p = sub.add_parser("train", help="train one model variant")
    _common(p)
    p.add_argument("--variant", help="ablation variant (default: eval.variant)")
    p.add_argument("--run", help="run directory (default: <out>/run)")

    p = sub.add_parser("eval", help="evaluate a trained run on the OOD test scenarios")
    _common(p)
    p.add_argument("--run", help="run directory (default: <out>/run)")

    p = sub.add_parser("ablate", help="train all ablation variants over several seeds")
    _common(p)
    p.add_argument("--parallel", type=int, default=1, help="worker processes")

    p = sub.add_parser("verify-dca", help="check the two-group adjustment against backdoor adjustment")
    p.add_argument("--n", type=int, default=100, help="number of random SCMs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scm", help="check one SCM definition file instead")

    p = sub.add_parser("plot", help="write loss, scenario and prior figures for a run")
    _common(p)
    p.add_argument("--run", help="run directory (default: <out>/run)")
    return parser


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get("STEVE_OUT_DIR") or "steve_out")


def _config(args) -> Config:
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"synth.seed={args.seed}", f"train.seed={args.seed}"]
    if getattr(args, "precision", None):
        overrides.append(f"train.precision={args.precision}")
    return load_config(args.config, overrides)


def _dataset(args) -> tuple[Dataset, Path]:
    path = Path(args.data) if args.data else _out_root(args) / "data"
    if not (path / "meta.cfg").is_file():
        raise ValidationError(f"no dataset at {path}; run gen-data first or pass --data")
    return load_dataset(path), path


def _run_dir(args) -> Path:
    return Path(args.run) if args.run else _out_root(args) / "run"


def _model_kw(cfg: Config) -> dict:
    return dataclasses.asdict(cfg.model)


def expand_scenarios(names, ds: Dataset, splits, k_range, seed: int = 0):
    """Turn scenario names into concrete filters; ``clusters`` and ``weather`` expand per group."""
    out, result = [], None
    for name in names:
        if name == "clusters":
            last = max(s.target_time_index for s in splits.train)
            result = cluster_regions(ds.flows[: last + 1], k_range, seed)
            out += [f"cluster:{c}" for c in range(result.k)]
        elif name == "weather":
            if "weather" in ds.context_columns:
                values = sorted({int(ds.context_columns["weather"][s.target_time_index]) for s in splits.test})
                out += [f"context:weather={v}" for v in values]
        else:
            out.append(name)
    return out, result


def _evaluate_all(model, ds, splits, cfg: Config, run_dir: Path):
    from .training import evaluate, write_results

    scenarios, result = expand_scenarios(cfg.eval.scenarios, ds, splits,
                                           range(cfg.eval.k_min, cfg.eval.k_max + 1), cfg.train.seed)
    clusters = result.labels if result is not None else None
    rows = []
    for sc in ["all"] + scenarios:
        try:
            mae, mape = evaluate(model, splits.test, sc, clusters, cfg.train.mape_floor)
        except SteveError as exc:
            log.warning("skipping scenario %s: %s", sc, exc)
            continue
        rows.append((sc, mae, mape))
    write_results(rows, run_dir / "results.csv")
    if result is not None:
        save_clusters(result, run_dir / "clusters.csv")
    return rows


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    root = _out_root(args)
    ds, truth = generate_synthetic(cfg.synth)
    save_dataset(ds, root / "data", truth)
    write_config(cfg, root / "data" / "generator.cfg")
    print(f"wrote {root / 'data'} ({ds.steps} steps, {ds.num_nodes} regions, {ds.channels} channels)")
    return 0


def cmd_train(args) -> int:
    from .training import VARIANTS, build_model, prepare, train, write_alpha_log

    cfg = _config(args)
    ds, data_path = _dataset(args)
    variant = args.variant or cfg.eval.variant
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    run_dir = _run_dir(args)
    splits = prepare(ds, cfg.window)
    model = build_model(ds, cfg.window, seed=cfg.train.seed, **_model_kw(cfg))
    record = train(model, splits.train, splits.val, cfg.train, VARIANTS[variant], run_dir)
    snapshot = json.loads((run_dir / "config.snapshot").read_text())
    snapshot.update(data=str(data_path.resolve()), config=cfg.as_flat())
    (run_dir / "config.snapshot").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    write_alpha_log(model, splits.test, ds, run_dir / "alpha_log.csv")
    rows = _evaluate_all(model, ds, splits, cfg, run_dir)
    print(f"best epoch {record.best_epoch} val_MAE={record.best_val_mae:.4f}")
    for sc, mae, mape in rows:
        print(f"{sc}: MAE={mae:.4f} MAPE={mape:.2f}")
    return 0


def cmd_eval(args) -> int:
    from .training import build_model, fit_scaler, prepare, write_alpha_log, DTYPES

    cfg = _config(args)
    ds, _ = _dataset(args)
    run_dir = _run_dir(args)
    ckpt = run_dir / "checkpoint.best"
    if not ckpt.is_file():
        raise ValidationError(f"no checkpoint at {ckpt}; run train first")
    splits = prepare(ds, cfg.window)
    model = build_model(ds, cfg.window, seed=cfg.train.seed, **_model_kw(cfg))
    model.to(DTYPES[cfg.train.precision])
    fit_scaler(model, splits.train)
    model.load_checkpoint(ckpt)
    write_alpha_log(model, splits.test, ds, run_dir / "alpha_log.csv")
    for sc, mae, mape in _evaluate_all(model, ds, splits, cfg, run_dir):
        print(f"{sc}: MAE={mae:.4f} MAPE={mape:.2f}")
    return 0


def cmd_ablate(args) -> int:
    from .training import TrainConfig, ablation_suite, prepare, write_ablation

    cfg = _config(args)
    ds, _ = _dataset(args)
    splits = prepare(ds, cfg.window)
    scenarios, result = expand_scenarios(cfg.eval.scenarios, ds, splits,
                                         range(cfg.eval.k_min, cfg.eval.k_max + 1), cfg.train.seed)
    clusters = result.labels if result is not None else None
    seeds = (args.seed,) if args.seed is not None else cfg.eval.seeds
    rows, _ = ablation_suite(ds, cfg.train, seeds, cfg.eval.variants, scenarios, _model_kw(cfg),
                             cfg.window, clusters, parallel=args.parallel)
    out = _out_root(args) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    write_ablation(rows, out / "ablation.csv")
    for r in rows:
        flag = " (reference)" if r["reference"] else ""
        print(f"{r['variant']:7s} {r['scenario']:20s} MAE={r['MAE']:.4f} MAPE={r['MAPE']:.2f}{flag}")
    return 0


def cmd_verify_dca(args) -> int:
    if args.scm:
        scm, part = dca.load_scm(args.scm)
        dev = dca.max_dca_deviation(scm, [part])
    else:
        dev = dca.verify_dca(args.n, args.seed)
    print(f"max_dev={dev:.3e}")
    return 0 if dev <= dca.TOL else 2


def cmd_plot(args) -> int:
    from . import plotting

    run_dir = _run_dir(args)
    out = _out_root(args) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    hols = ()
    snap = run_dir / "config.snapshot"
    if snap.is_file():
        data = json.loads(snap.read_text()).get("data")
        if data and (Path(data) / "meta.cfg").is_file():
            hols = load_dataset(data).holiday_dates
    if (run_dir / "metrics.csv").is_file():
        written.append(plotting.plot_losses(run_dir / "metrics.csv", out / "loss_curves.png"))
    if (run_dir / "results.csv").is_file():
        written.append(plotting.plot_scenarios(run_dir / "results.csv", out / "scenarios.png"))
    ablation = _out_root(args) / "ablation" / "ablation.csv"
    if ablation.is_file():
        written.append(plotting.plot_scenarios(ablation, out / "ablation.png"))
    if (run_dir / "alpha_log.csv").is_file():
        written.append(plotting.plot_priors(run_dir / "alpha_log.csv", out / "priors.png", hols))
    if not written:
        raise ValidationError(f"nothing to plot in {run_dir}")
    for path in written:
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify-dca": cmd_verify_dca,
    "plot": cmd_plot,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"ERROR:{exc.code}:{exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 2
        code = getattr(exc, "code", "runtime")
        print(f"ERROR:{code}:{exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
