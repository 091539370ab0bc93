"""Command-line entry point: ``quadaware <verb> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dynamics import DivergenceError
from .harness.config import CONTROLLER_MODES, GP_MODES, ConfigError, load_config
from .harness.export import export, read_json, write_json, write_sweep_csv

log = logging.getLogger("quadaware")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON overrides on top of the shipped defaults")
    common.add_argument("--dist-scale", type=float)
    common.add_argument("--controller", choices=CONTROLLER_MODES)
    common.add_argument("--eps", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--strict", action="store_true", help="exit 4 when the sweep finds no feasible scale")
    common.add_argument("--model", type=Path, help="fitted GP model JSON")
    common.add_argument("--data", type=Path, help="training dataset CSV")
    common.add_argument("--trans-scale", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="quadaware", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("simulate", parents=[common], help="run one episode")
    sub.add_parser("collect", parents=[common], help="collect labeled training data")
    sub.add_parser("fit", parents=[common], help="fit the GP disturbance model")
    sub.add_parser("sweep", parents=[common], help="gain-scale sweep and selection")
    sub.add_parser("online", parents=[common], help="offline-only vs offline plus online residual")
    sub.add_parser("report", parents=[common], help="summarize stored metrics JSON files")
    return p


def _config(args):
    cfg = load_config(args.config)
    over = {}
    if args.dist_scale is not None:
        over["disturbance.scale"] = args.dist_scale
    if args.controller is not None:
        over["controller.mode"] = args.controller
    if args.eps is not None:
        over["scheduler.eps"] = args.eps
    if args.seed is not None:
        over["simulation.seed"] = args.seed
    if args.out is not None:
        over["output.dir"] = str(args.out)
    if args.trans_scale is not None:
        over["controller.trans_scale"] = args.trans_scale
    if args.strict:
        over["scheduler.strict"] = True
    return cfg.replace(**over) if over else cfg


def _load_model(args, cfg):
    from .oracle.gp import GpModel

    path = args.model or (Path(cfg.gp.model_path) if cfg.gp.model_path else Path(cfg.output.dir) / "model.json")
    if not path.exists():
        raise ConfigError(f"GP model not found at {path}; run 'quadaware fit' or pass --model")
    return GpModel.load(path)


def _sweep(cfg, jobs: int, model=None):
    from .harness.online import make_compensator
    from .scheduler import sweep_select

    factory = (lambda: make_compensator(cfg, model)) if model is not None else None
    # with a GP the minimal feasible scale is all that is needed, so stop there
    return sweep_select(cfg.scheduler.grid(), cfg.scheduler.eps, cfg, factory,
                        early_stop=model is not None, jobs=jobs)


def cmd_simulate(args, cfg) -> int:
    from .harness.episode import run_episode
    from .harness.metrics import metrics
    from .harness.online import make_compensator, run_online

    mode = cfg.controller.mode
    selection = None
    model = _load_model(args, cfg) if mode in GP_MODES else None
    if mode == "gp-comp-online":
        res = run_online(cfg, model, cfg.controller.trans_scale).result
    else:
        scale = None
        if mode in ("aware", "gp-comp-aware"):
            selection = _sweep(cfg, args.jobs, model)
            scale = selection.chosen
        oracle = make_compensator(cfg, model) if model is not None else None
        res = run_episode(cfg, oracle, scale)
    rep = metrics(res, cfg)
    paths = export(res, rep, cfg.output.dir, mode, selection)
    print(f"{mode}: scale {res.meta['trans_scale']:.2f}, final error {rep.final_error:.4f} m, "
          f"eps {cfg.scheduler.eps} -> {'feasible' if rep.final_error <= cfg.scheduler.eps else 'infeasible'}")
    print(f"wrote {paths['csv']}")
    return EXIT_OK


def cmd_collect(args, cfg) -> int:
    from .harness.collect import collect_training_data, default_collection

    data = collect_training_data(default_collection(cfg))
    path = args.data or Path(cfg.output.dir) / "dataset.csv"
    data.save(path)
    print(f"{len(data)} samples -> {path}")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    from .harness.collect import fit_model
    from .oracle.gp import Dataset

    ds_path = args.data or (Path(cfg.gp.dataset_path) if cfg.gp.dataset_path else Path(cfg.output.dir) / "dataset.csv")
    if not ds_path.exists():
        raise ConfigError(f"dataset not found at {ds_path}; run 'quadaware collect' first")
    model = fit_model(cfg, Dataset.load(ds_path))
    out = args.model or Path(cfg.output.dir) / "model.json"
    model.save(out, ds_path.resolve())
    for j in range(6):
        print(f"channel {j}: {model.hyper.describe(j)}")
    print(f"model -> {out}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    model = _load_model(args, cfg) if cfg.controller.mode in GP_MODES else None
    sel = _sweep(cfg, args.jobs, model)
    out = Path(cfg.output.dir)
    write_json({"selection": sel.to_dict()}, out / "sweep.json")
    write_sweep_csv(sel, out / "sweep.csv")
    for r in sel.records:
        print(f"scale {r.scale:.2f}  final {r.final_error:.4f}  {'ok' if r.feasible else '--'}"
              f"{'  diverged' if r.diverged else ''}")
    print(f"chosen {sel.chosen:.2f} ({'feasible' if sel.feasible else 'infeasible, best tested'})")
    if not sel.feasible and cfg.scheduler.strict:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_online(args, cfg) -> int:
    from .harness.metrics import metrics
    from .harness.online import run_offline, run_online

    model = _load_model(args, cfg)
    scale = cfg.controller.trans_scale
    off = run_offline(cfg, model, scale)
    on = run_online(cfg, model, scale)
    out = Path(cfg.output.dir)
    rep_off, rep_on = metrics(off, cfg), metrics(on.result, cfg)
    export(off, rep_off, out, "offline")
    export(on.result, rep_on, out, "online")
    summary = {"offline_final": rep_off.final_error, "online_final": rep_on.final_error,
               "residual_size": len(on.residual), "updates": on.updates, "failures": on.failures,
               "gate_off_mean_ss": on.result.meta["gate_off_mean_ss"],
               "gate_on_mean_ss": on.result.meta["gate_on_mean_ss"]}
    write_json({"online": summary}, out / "online_summary.json")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = Path(cfg.output.dir)
    files = sorted(out.glob("*_metrics.json"))
    if not files:
        print(f"no metrics files in {out}")
        return EXIT_OK
    cols = ["final_error", "peak_error", "Tdot_rms_tr", "taudot_rms_tr", "Tdot_rms_ss", "taudot_rms_ss",
            "effort_T_tr", "effort_tau_tr", "H_fro", "gate_mean_ss", "rho_mean_ss"]
    print("run".ljust(22) + "".join(c.rjust(15) for c in cols))
    for f in files:
        m = read_json(f)["metrics"]
        cells = ["-" if m.get(c) is None else f"{m[c]:.4f}" for c in cols]
        print(f.name.removesuffix("_metrics.json").ljust(22) + "".join(c.rjust(15) for c in cells))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "collect": cmd_collect, "fit": cmd_fit,
            "sweep": cmd_sweep, "online": cmd_online, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.verb](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"episode diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
