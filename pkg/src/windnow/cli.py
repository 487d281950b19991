"""Command-line entry point.

Subcommands: synth, build-graph, train, evaluate, baseline, report.
Every run is driven by a YAML config (see config.SCHEMA); flags win
over file values and the effective config is snapshotted into the
output directory. Exit codes: 0 success, 1 usage/config error,
2 data error, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import diffusion, metrics, model as model_mod, training
from .config import RunConfig
from .datakit import generate_synthetic, write_dataset
from .errors import ConfigError, DataError, NumericalError
from .pipeline import build_context, ensure_dir, method_name, windows_for

log = logging.getLogger(__name__)

CANONICAL_METHODS = [
    "gcn_diff_augmented_moco", "gcn_diff_multistep_moco",
    "gcn_diff_augmented", "gcn_diff_multistep",
    "gcn_diff", "gcn_plain",
    "ar", "lr", "knn", "idw",
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig({})
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        import yaml

        cfg.override(key, yaml.safe_load(value))
    return cfg


def cmd_synth(args):
    cfg = _load_config(args)
    out = args.out or cfg["data"]["dataset_dir"]
    if not out:
        raise ConfigError("set data.dataset_dir or pass --out")
    ds = generate_synthetic(cfg.synthetic_config())
    content_hash = write_dataset(ds, out)
    print(f"dataset written to {out}")
    print(f"stations: {len(ds.station_ids)} ({len(ds.withheld_ids)} withheld), "
          f"steps: {len(ds.timestamps)}")
    print(f"hash: {content_hash}")
    return 0


def cmd_build_graph(args):
    cfg = _load_config(args)
    ctx = build_context(cfg, need_features=False)
    out = ensure_dir(cfg.output_dir)
    ctx.node_set.write_csv(os.path.join(out, "nodes.csv"))
    ctx.s_mix.write_csv(os.path.join(out, "diffusion_edges.csv"), ctx.node_set.kinds)
    records = diffusion.influence_stats(ctx.s_mix, ctx.node_set.kinds)
    diffusion.write_influence_csv(records, os.path.join(out, "influence_stats.csv"))
    cfg.save(os.path.join(out, "config.yaml"))
    mean_rf = float(np.mean([r["real_fraction"] for r in records])) if records else 0.0
    print(f"nodes: {len(ctx.node_set)} ({ctx.node_set.n_real} real, "
          f"{ctx.node_set.n_virtual} virtual)")
    print(f"max entries per diffusion row: {ctx.s_mix.max_entries_per_row()}")
    print(f"mean real_fraction over virtual nodes: {mean_rf:.4f}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    if args.strategy:
        cfg.override("contrastive.strategy", args.strategy)
    if args.no_moco:
        cfg.override("contrastive.use_moco", False)
    use_diffusion = not args.no_diffusion
    ccfg = cfg.contrastive_config()
    method = args.method or method_name(ccfg.strategy, ccfg.use_moco, use_diffusion)

    ctx = build_context(cfg, use_diffusion=use_diffusion)
    windows = windows_for(ctx, "stride")
    if not windows:
        raise DataError("dataset yields no training windows")
    run_dir = ensure_dir(os.path.join(cfg.output_dir, method))
    cfg.save(os.path.join(run_dir, "config.yaml"))

    data_cfg = cfg["data"]
    mdl = model_mod.Model(ctx.node_set, cfg.feature_layout(),
                          embed_dim=cfg["model"]["embed_dim"],
                          t_in=data_cfg["t_in"], t_out=data_cfg["t_out"],
                          seed=cfg["training"]["seed"])
    result = training.train(
        mdl, ctx.fs, windows, ctx.s_mix, cfg.train_config(), ccfg,
        schedule=cfg.lambda_schedule(),
        diagnostics_path=os.path.join(run_dir, "diagnostics.csv"),
        progress=print)
    model_mod.save_checkpoint(
        os.path.join(run_dir, "checkpoint.npz"), mdl, ctx.fs.stats,
        cfg.diffusion_params(),
        extra={"method": method, "use_diffusion": use_diffusion,
               "strategy": ccfg.strategy, "use_moco": ccfg.use_moco})
    print(f"trained {method}: best epoch {result.best_epoch}, "
          f"stopped at {result.stopped_epoch}, monitored {result.monitored}")
    print(f"artifacts in {run_dir}")
    return 0


def _eval_output_paths(cfg, method):
    out = ensure_dir(os.path.join(cfg.output_dir, "evals"))
    return (os.path.join(out, f"eval_{method}.json"),
            os.path.join(out, f"eval_{method}.csv"), out)


def cmd_evaluate(args):
    cfg = _load_config(args)
    if bool(args.checkpoint) == bool(args.baseline):
        raise ConfigError("pass exactly one of --checkpoint or --baseline")

    if args.baseline:
        method = args.method or args.baseline
        ctx = build_context(cfg)
        windows = windows_for(ctx, "eval_stride")
        report, _, fitted = training.evaluate_baseline(
            args.baseline, ctx.dataset, ctx.fs, windows, ctx.truth_by_station,
            t_in=cfg["data"]["t_in"], t_out=cfg["data"]["t_out"])
        json_path, csv_path, out = _eval_output_paths(cfg, method)
        if fitted is not None:
            arrays = {}
            for c, fit in fitted.fits.items():
                arrays[f"coef_{c}"] = fit.coef
                arrays[f"x_mean_{c}"] = fit.x_mean
                arrays[f"y_mean_{c}"] = fit.y_mean
            arrays["channel_mean"] = fitted.channel_mean
            arrays["channel_std"] = fitted.channel_std
            np.savez(os.path.join(out, f"fit_{method}.npz"), **arrays)
    else:
        params, stats, meta = model_mod.load_checkpoint(args.checkpoint)
        use_diffusion = meta.get("extra", {}).get("use_diffusion", True)
        ctx = build_context(cfg, use_diffusion=use_diffusion)
        mdl = model_mod.restore_model(ctx.node_set, params, meta)
        ctx.fs.stats = stats  # evaluation reuses training statistics exactly
        method = args.method or meta.get("extra", {}).get("method", "model")
        windows = windows_for(ctx, "eval_stride")
        report, _ = training.evaluate_model(mdl, ctx.fs, windows, ctx.s_mix,
                                            ctx.truth_by_station, method)
        json_path, csv_path, _ = _eval_output_paths(cfg, method)

    report.write_json(json_path)
    report.write_csv(csv_path)
    for var in ("dd", "ff", "gff"):
        cell = report.get(method, var)
        if cell:
            print(f"{method} {var}: pooled MAE {cell['mae']:.4f} "
                  f"RMSE {cell['rmse']:.4f} (n={cell['n_samples']})")
    print(f"report written to {json_path}")
    return 0


def cmd_baseline(args):
    args.checkpoint = None
    args.baseline = args.kind
    return cmd_evaluate(args)


def cmd_report(args):
    cfg = _load_config(args)
    evals_dir = os.path.join(cfg.output_dir, "evals")
    if not os.path.isdir(evals_dir):
        raise DataError(f"no evaluations found under {evals_dir}")
    reports = {}
    for name in sorted(os.listdir(evals_dir)):
        if name.startswith("eval_") and name.endswith(".json"):
            method = name[len("eval_"):-len(".json")]
            reports[method] = metrics.EvalReport.read_json(
                os.path.join(evals_dir, name))
    if not reports:
        raise DataError(f"no eval_*.json files in {evals_dir}")

    out = ensure_dir(os.path.join(cfg.output_dir, "report"))
    methods = ([m for m in CANONICAL_METHODS if m in reports]
               + sorted(m for m in reports if m not in CANONICAL_METHODS))

    def cell(method, var, **kw):
        return reports[method].get(method, var, **kw)

    comparison = []
    for m in methods:
        row = {"method": m}
        for var in metrics.VARIABLES:
            c = cell(m, var)
            row[f"mae_{var}"] = c["mae"] if c else None
            row[f"rmse_{var}"] = c["rmse"] if c else None
        comparison.append(row)
    _write_table(os.path.join(out, "comparison"), comparison,
                 ["method"] + [f"{k}_{v}" for v in metrics.VARIABLES
                               for k in ("mae", "rmse")])

    leads = []
    stations = []
    seasons = []
    for m in methods:
        for var in metrics.VARIABLES:
            for lead in range(1, 7):
                c = cell(m, var, lead=lead)
                if c:
                    leads.append({"method": m, "variable": var, "lead": lead,
                                  "mae": c["mae"], "rmse": c["rmse"],
                                  "n_samples": c["n_samples"]})
            for key in reports[m].entries:
                _, variable, lead, station, season = key
                if variable != var or lead != "all":
                    continue
                c = reports[m].entries[key]
                if station != "all" and season == "all":
                    stations.append({"method": m, "variable": var,
                                     "station": station, "mae": c["mae"],
                                     "rmse": c["rmse"], "n_samples": c["n_samples"]})
                if season != "all" and station == "all":
                    seasons.append({"method": m, "variable": var,
                                    "season": season, "mae": c["mae"],
                                    "rmse": c["rmse"], "n_samples": c["n_samples"]})
    _write_table(os.path.join(out, "leads"), leads,
                 ["method", "variable", "lead", "mae", "rmse", "n_samples"])
    _write_table(os.path.join(out, "stations"), stations,
                 ["method", "variable", "station", "mae", "rmse", "n_samples"])
    _write_table(os.path.join(out, "seasons"), seasons,
                 ["method", "variable", "season", "mae", "rmse", "n_samples"])
    print(f"comparison over {len(methods)} methods written to {out}")
    return 0


def _write_table(stem, rows, columns):
    import csv as csv_mod

    with open(stem + ".csv", "w", newline="") as fh:
        w = csv_mod.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    with open(stem + ".json", "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def build_parser():
    parser = _Parser(prog="windnow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted key)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", help="dataset directory (default: data.dataset_dir)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build-graph", help="write node/diffusion/influence CSVs")
    common(p)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train", help="train a model variant")
    common(p)
    p.add_argument("--strategy", choices=["augmented", "multistep", "none"])
    p.add_argument("--no-moco", action="store_true",
                   help="drop the momentum queue (in-window negatives)")
    p.add_argument("--no-diffusion", action="store_true",
                   help="propagate over the plain row-normalized kNN adjacency")
    p.add_argument("--method", help="override the run/method label")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or baseline")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["ar", "lr", "knn", "idw"])
    p.add_argument("--method", help="method label for the report")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline", help="alias of evaluate --baseline")
    common(p)
    p.add_argument("kind", choices=["ar", "lr", "knn", "idw"])
    p.add_argument("--method")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("report", help="consolidate evaluations into tables")
    common(p)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
