"""Command-line entry point: ``gazerefine <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from gazerefine.config import OUTPUT_ROOT_ENV, load_config
from gazerefine.errors import GazeRefineError

log = logging.getLogger("gazerefine")

COMMANDS = ("simulate", "train-eyenet", "train-refinenet", "eval", "ablation", "cross-stimuli", "sweep-kappa",
            "baseline", "gradcheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="gazerefine", description="Gaze refinement toolkit (simulation, training, evaluation).")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_, data=True, out=True):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, help="global seed (same as --set run.seed=N)")
        p.add_argument("--preset", choices=("published", "desk"), help="hyperparameter preset")
        if data:
            p.add_argument("--data", required=True, help="dataset directory written by 'simulate'")
        if out:
            p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV} or run.output_root, "
                                         "plus /<command>)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    command("simulate", "Build a synthetic dataset (manifest plus GZSQ sequence files).", data=False)
    command("train-eyenet", "Train EyeNet-lite on a dataset's train split.")
    p = command("train-refinenet", "Train RefineNet-lite with offset augmentation.")
    p.add_argument("--eyenet", help="EyeNet checkpoint for initial gaze (default: simulator estimates)")
    p = command("eval", "Score initial or refined PoG estimates on a split.")
    p.add_argument("--checkpoint", help="RefineNet checkpoint; without it the initial estimates are scored")
    p.add_argument("--eyenet", help="EyeNet checkpoint for initial gaze")
    for name, help_ in (("ablation", "Refinement ablation over screen content, augmentation and skips."),
                        ("cross-stimuli", "Train per stimulus kind, test on every kind."),
                        ("sweep-kappa", "Offset-augmentation strength sweep.")):
        p = command(name, help_)
        p.add_argument("--eyenet", help="EyeNet checkpoint for initial gaze")
    p = command("baseline", "Fit saliency-alignment corrections per observer and stimulus kind.")
    p.add_argument("--variant", choices=("scale_bias", "kappa", "both"))
    p.add_argument("--checkpoint", help="also score this RefineNet checkpoint")
    p.add_argument("--eyenet", help="EyeNet checkpoint for initial gaze")
    command("gradcheck", "Finite-difference gradient checks of all ops and both models.", data=False)
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.preset is not None:
        overrides.insert(0, f"run.preset={args.preset}")
    return load_config(args.config, overrides)


def _out_dir(args, cfg):
    out = Path(args.out) if getattr(args, "out", None) else cfg.output_root() / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rng(cfg):
    from gazerefine.numerics.rng import Rng

    return Rng(cfg.run.seed)


def _load_data(args, cfg, need=("train", "val", "test")):
    from gazerefine.evaluation.experiments import ExperimentData
    from gazerefine.models.training import load_model
    from gazerefine.simulator.dataset import load_dataset

    dataset = load_dataset(args.data)
    missing = [s for s in need if s not in dataset.splits]
    if missing:
        raise GazeRefineError(f"dataset {args.data} lacks split(s): {', '.join(missing)}")
    eyenet = load_model(args.eyenet) if getattr(args, "eyenet", None) else None
    source = "eyenet" if eyenet is not None else "corrupted"
    sp = dataset.splits
    data = ExperimentData(sp.get("train"), sp.get("val"), sp.get("test"), dataset.screen, source, eyenet)
    return dataset, data


def cmd_simulate(args, cfg, out):
    from gazerefine.simulator.dataset import build_dataset

    build_dataset(out, cfg.simulate, _rng(cfg))
    log.info("dataset written to %s", out)


def cmd_train_eyenet(args, cfg, out):
    from gazerefine.models.training import history_csv, save_model, train_eyenet

    dataset, _ = _load_data(args, cfg, need=("train",))
    train = dataset.splits["train"]
    if train.eyes is None:
        raise GazeRefineError("dataset has no eye images (simulate with eye_size > 0)")
    res = train_eyenet(train, cfg.train_eyenet, _rng(cfg).derive("eyenet"), val=dataset.splits.get("val"),
                       screen=dataset.screen)
    save_model(out / "eyenet.gzck", res.model)
    (out / "history.csv").write_text(history_csv(res.history))


def cmd_train_refinenet(args, cfg, out):
    from gazerefine.models.training import history_csv, save_model, train_refinenet

    rcfg = cfg.train_refinenet
    if args.eyenet:
        rcfg = replace(rcfg, initial_source="eyenet")
    _, data = _load_data(args, cfg, need=("train",))
    res = train_refinenet(data.train, rcfg, _rng(cfg).derive("refinenet"), val=data.val, screen=data.screen,
                          init_gaze=data.init["train"], val_init_gaze=data.init.get("val"))
    save_model(out / "refinenet.gzck", res.model)
    (out / "history.csv").write_text(history_csv(res.history))


def cmd_eval(args, cfg, out):
    from gazerefine.evaluation.metrics import evaluate_estimates, improvement, key_values, table_csv
    from gazerefine.models.training import load_model, predict_refinenet

    split_name = cfg.eval.split
    _, data = _load_data(args, cfg, need=(split_name,))
    split = getattr(data, split_name)
    init_cm = data.initial_cm(split_name)
    base = evaluate_estimates(init_cm, split, data.screen, group_by=cfg.eval.group_by)
    pred = init_cm
    name = "initial"
    if args.checkpoint:
        model = load_model(args.checkpoint, data.screen)
        pred = predict_refinenet(model, split, init_cm, cfg.eval.batch_size)
        name = "refined"
    rep = evaluate_estimates(pred, split, data.screen, group_by=cfg.eval.group_by)
    header = ("group", "angular_deg", "cm", "px", "n", "baseline_angular_deg", "improvement_deg_pct")
    base_rows = {r.name: r for r in [base.overall] + base.groups}
    rows = []
    for r in [rep.overall] + rep.groups:
        b = base_rows[r.name]
        rows.append((r.name, r.angular_deg, r.cm, r.px, r.n, b.angular_deg,
                     improvement(b.angular_deg, r.angular_deg)))
    (out / "report.csv").write_text(table_csv(header, rows))
    seq_rows = [(r.name, r.group["observer"], r.group["kind"], r.angular_deg, r.cm, r.px, r.n)
                for r in rep.per_sequence]
    (out / "per_sequence.csv").write_text(table_csv(("sequence", "observer", "kind", "angular_deg", "cm", "px", "n"),
                                                    seq_rows))
    summary = {"estimates": name, "split": split_name, "baseline": "averaged-eyes initial PoG",
               **{k: v for k, v in rep.as_dict().items()}}
    (out / "summary.txt").write_text(key_values(summary))


def cmd_ablation(args, cfg, out):
    from gazerefine.evaluation.experiments import run_ablation, run_cross_noise

    _, data = _load_data(args, cfg)
    report = run_ablation(data, cfg.train_refinenet, cells=cfg.experiments.cells, seed=cfg.run.seed)
    report.write(out)
    if cfg.experiments.cross_noise:
        run_cross_noise(replace(cfg.simulate, eye_size=0), cfg.train_refinenet, seed=cfg.run.seed,
                        screen=data.screen).write(out)


def cmd_cross_stimuli(args, cfg, out):
    from gazerefine.evaluation.experiments import run_cross_stimuli

    _, data = _load_data(args, cfg)
    run_cross_stimuli(data, cfg.train_refinenet, kinds=tuple(sorted(set(data.test.kinds.tolist()))),
                      seed=cfg.run.seed).write(out)


def cmd_sweep_kappa(args, cfg, out):
    from gazerefine.evaluation.experiments import run_kappa_sweep, sweep_plot_data

    _, data = _load_data(args, cfg)
    report = run_kappa_sweep(data, cfg.sweep.sigmas, cfg.train_refinenet, seed=cfg.run.seed)
    report.write(out)
    (out / "kappa_sweep_plot.dat").write_text(sweep_plot_data(report))


def cmd_baseline(args, cfg, out):
    from gazerefine.evaluation.experiments import run_baseline_comparison
    from gazerefine.models.training import load_model

    bcfg = cfg.baseline
    variant = args.variant or bcfg.variant
    methods = ("scale_bias", "kappa") if variant == "both" else (variant,)
    _, data = _load_data(args, cfg, need=(bcfg.split,))
    if bcfg.split != "test":
        data = replace(data, test=getattr(data, bcfg.split), init={**data.init, "test": data.init[bcfg.split]})
    model = None
    if args.checkpoint:
        model = load_model(args.checkpoint, data.screen)
        methods = methods + ("refinement",)
    report = run_baseline_comparison(data, seed=cfg.run.seed, fit_cfg=bcfg.fit_config(), out_dir=out,
                                     methods=methods, model=model)
    report.write(out)


def cmd_gradcheck(args, cfg, out):
    from gazerefine.evaluation.metrics import table_csv
    from gazerefine.gradsuite import run_suite

    g = cfg.gradcheck
    results = run_suite(step=g.step, model_coords=g.model_coords, seed=cfg.run.seed)
    rows = [(r.name, r.max_rel_error, r.worst, r.n_checked, r.n_skipped, "pass" if r.passed(g.tol) else "fail")
            for r in results]
    (out / "gradcheck.csv").write_text(table_csv(("case", "max_rel_error", "worst", "checked", "skipped_kinks",
                                                  "status"), rows))
    failed = [r.name for r in results if not r.passed(g.tol)]
    for r in results:
        log.info("%-28s %.3e %s", r.name, r.max_rel_error, "ok" if r.passed(g.tol) else "FAIL")
    if failed:
        raise GazeRefineError(f"gradient check failed for: {', '.join(failed)}")


HANDLERS = {
    "simulate": cmd_simulate,
    "train-eyenet": cmd_train_eyenet,
    "train-refinenet": cmd_train_refinenet,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
    "cross-stimuli": cmd_cross_stimuli,
    "sweep-kappa": cmd_sweep_kappa,
    "baseline": cmd_baseline,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required")
        cfg = _config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except GazeRefineError as exc:
        print(f"gazerefine: configuration error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:   # --help
        return 0 if exc.code in (0, None) else 1

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _out_dir(args, cfg)
        path = cfg.write(out)
        print(f"gazerefine {args.command}: seed {cfg.run.seed}, resolved config {path}", file=sys.stderr)
        log.info("resolved config:\n%s", cfg.to_ini())
        HANDLERS[args.command](args, cfg, out)
    except (GazeRefineError, OSError, ValueError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
