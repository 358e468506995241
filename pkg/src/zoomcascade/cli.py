"""Command-line entry point: ``zoomcascade <command> [options]``.

Exit codes: 0 ok, 1 diagnostic failure, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import policy as pn
from . import rng as rng_mod
from .cascade import CLI_NAMES, PolicySpec, decision_grid, evaluate, run_baseline, zoom_probability_profile
from .config import RunConfig, parse_assignment
from .scene import assign_boxes
from .errors import TrainingError, ZoomCascadeError
from .synth import generate, generate_scene, load_dataset, write_dataset
from .trainer import grad_check, mc_check, train

EXIT_OK, EXIT_DIAGNOSTIC, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _config(args) -> RunConfig:
    overrides = dict(parse_assignment(s) for s in args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["eval.threads"] = args.threads
    return RunConfig.load(args.config, overrides)


def _scenes(cfg: RunConfig, args):
    d = Path(args.scenes or cfg["paths.scenes_dir"])
    if not d.is_dir():
        raise UsageError(f"scene directory {d} does not exist")
    scenes = load_dataset(d)
    if not scenes:
        raise UsageError(f"no scenes found in {d}")
    return scenes


def _model(path, what: str) -> pn.PolicyModel:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} model file {p} not found")
    return pn.PolicyModel.load(p)


def cmd_gen_scenes(args) -> int:
    cfg = _config(args)
    synth = cfg.synth(args.count)
    out = Path(args.out or cfg["paths.scenes_dir"])
    try:
        manifest = write_dataset(generate(synth), out, synth, {"effective_config": cfg.to_dict()})
    except OSError as exc:
        raise UsageError(f"cannot write scenes to {out}: {exc.strerror or exc}") from None
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg.values["train.epochs"] = int(args.epochs)
    scenes = _scenes(cfg, args)
    grid = cfg.grid()
    tc = cfg.train_config(args.stage)
    model = pn.policy_for_grid(args.stage, tc.input_side(grid), tc.n_actions(grid), cfg.hidden(), cfg.seed)
    out = Path(args.out or cfg[f"paths.{args.stage}_model"])
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    provenance = {"stage": args.stage, "effective_config": cfg.to_dict()}

    on_epoch = None
    if args.checkpoint_every:
        def on_epoch(epoch, m):
            if (epoch + 1) % args.checkpoint_every == 0:
                out.parent.mkdir(parents=True, exist_ok=True)
                m.save(out.with_name(f"{out.stem}.epoch{epoch + 1}.json"), provenance)

    try:
        trained, logs = train(model, scenes, grid, tc, cfg.detectors(), cfg.seed, on_epoch)
    except TrainingError as exc:
        good = exc.model if exc.model is not None else model
        path = out.with_name(f"{out.stem}.last-good.json")
        out.parent.mkdir(parents=True, exist_ok=True)
        good.save(path, provenance)
        print(f"error: {exc}; last good checkpoint: {path}", file=sys.stderr)
        return EXIT_NUMERIC
    out.parent.mkdir(parents=True, exist_ok=True)
    trained.save(out, provenance)
    _write_text(log_path, "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in logs))
    final = logs[-1].mean_sampled_reward if logs else float("nan")
    print(f"{out} mean_reward={final:.6f}")
    return EXIT_OK


def _policy_spec(cfg: RunConfig, args) -> PolicySpec:
    kind = CLI_NAMES[args.policy]
    cp = fp = None
    if kind in ("cascade", "cpnet_only"):
        cp = _model(args.cpnet or cfg["paths.cpnet_model"], "CPNet")
    if kind in ("cascade", "fpnet_only"):
        fp = _model(args.fpnet or cfg["paths.fpnet_model"], "FPNet")
    zoom = cfg["eval.zoom_prob"] if args.zoom_prob is None else args.zoom_prob
    return PolicySpec(kind, cp, fp, zoom_prob=zoom, patch_prob=cfg["eval.patch_prob"],
                      entropy_thresholds=(cfg["eval.entropy_patch_threshold"],
                                          cfg["eval.entropy_subpatch_threshold"]))


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.zoom_prob is not None:
        cfg.values["eval.zoom_prob"] = args.zoom_prob
    spec = _policy_spec(cfg, args)
    scenes = _scenes(cfg, args)
    report = evaluate(spec, scenes, cfg.grid(), cfg.detectors(), cfg.cost(), cfg.metric(), cfg.seed,
                      cfg.observation(), cfg["eval.threads"], {"policy": args.policy, **cfg.to_dict()})
    out = Path(args.report) if args.report else Path(cfg["paths.report_dir"]) / f"{args.policy}.json"
    _write_text(out, report.to_json())
    print(report.table_row())
    return EXIT_OK


GRAD_BOUND = 1e-4


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    grid = cfg.grid()
    if args.which == "grad":
        tc = cfg.train_config("cpnet")
        worst = {"max_rel_error": 0.0}
        cases = []
        for case in range(args.cases):
            model = pn.policy_for_grid("cpnet", tc.input_side(grid), tc.n_actions(grid), cfg.hidden(),
                                       cfg.seed + case)
            r = rng_mod.stream(cfg.seed, "diagnose-grad", case)
            x = r.random(model.n_inputs)
            a = r.integers(0, 2, model.n_outputs)
            scale = float(r.normal())
            for alpha in (1.0, cfg["reward.alpha"]):
                rep = grad_check(model, x, a, scale, alpha, max_params=args.params, seed=cfg.seed + case,
                                 corrupt=args.corrupt_gradient)
                cases.append({"case": case, "alpha": alpha, "max_rel_error": float(rep.max_rel_error),
                              "n_checked": rep.n_checked})
                if rep.max_rel_error >= worst["max_rel_error"]:
                    worst = cases[-1]
        ok = bool(worst["max_rel_error"] <= GRAD_BOUND)
        print(_dump({"diagnostic": "grad", "bound": GRAD_BOUND, "max_rel_error": worst["max_rel_error"],
                     "cases": cases, "ok": ok}))
        return EXIT_OK if ok else EXIT_DIAGNOSTIC

    tc = cfg.train_config("fpnet")
    model = pn.policy_for_grid("fpnet", tc.input_side(grid), tc.n_actions(grid), cfg.hidden(), cfg.seed)
    scene = generate_scene(cfg.synth(), 0)
    # the busiest patch gives the widest spread of subpatch gains
    patch = int(np.argmax(assign_boxes(scene, grid).counts))
    rep = mc_check(model, scene, grid, tc, cfg.detectors(), args.samples, cfg.seed, patch)
    ok = bool(rep.gap <= 3.0 * rep.stderr)
    print(_dump({"diagnostic": "mc", "empirical": rep.empirical, "exact": rep.exact, "gap": rep.gap,
                 "stderr": rep.stderr, "n_samples": rep.n_samples, "bound": 3.0 * rep.stderr, "ok": ok}))
    return EXIT_OK if ok else EXIT_DIAGNOSTIC


def cmd_visualize(args) -> int:
    cfg = _config(args)
    cpnet = _model(args.model or cfg["paths.cpnet_model"], "CPNet")
    fpnet = _model(args.fpnet, "FPNet") if args.fpnet else None
    scenes = _scenes(cfg, args)
    by_id = {s.id: s for s in scenes}
    if args.scene not in by_id:
        raise UsageError(f"scene {args.scene!r} not found")
    grid, obs = cfg.grid(), cfg.observation()
    spec = PolicySpec("cascade" if fpnet else "cpnet_only", cpnet, fpnet)
    result = run_baseline(by_id[args.scene], grid, spec, cfg.detectors(), cfg.cost(), None, obs)
    out = Path(args.out or cfg["paths.report_dir"])
    out.mkdir(parents=True, exist_ok=True)
    decision_grid(result, grid).save_pgm(out / f"{args.scene}_decisions.pgm")
    obs.scene_raster(by_id[args.scene]).save_pgm(out / f"{args.scene}_raster.pgm")
    profile = zoom_probability_profile(cpnet, scenes, grid, obs)
    _write_text(out / "zoom_profile.csv", profile.to_csv())
    _write_text(out / f"{args.scene}_provenance.json",
                _dump({"scene": args.scene, "model": str(args.model or cfg["paths.cpnet_model"]),
                       "fpnet": args.fpnet, "effective_config": cfg.to_dict()}))
    print(out / f"{args.scene}_decisions.pgm")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file with flat dotted keys")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="global seed (falls back to $ZOOMCASCADE_SEED)")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--scenes", help="scene directory (default: paths.scenes_dir)")

    p = argparse.ArgumentParser(prog="zoomcascade", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--count", type=int, help="number of scenes (default: synth.n_scenes)")
    g.add_argument("--out", help="output directory (default: paths.scenes_dir)")
    g.set_defaults(func=cmd_gen_scenes)

    t = sub.add_parser("train", parents=[common], help="train CPNet or FPNet")
    t.add_argument("--stage", choices=("cpnet", "fpnet"), required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", help="model file (default: paths.<stage>_model)")
    t.add_argument("--log", help="JSON-lines training log (default: next to the model)")
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="N", help="write a checkpoint every N epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a policy")
    e.add_argument("--policy", choices=tuple(CLI_NAMES), required=True)
    e.add_argument("--cpnet")
    e.add_argument("--fpnet")
    e.add_argument("--zoom-prob", type=float, help="subpatch zoom probability for --policy random")
    e.add_argument("--report", help="report file (default: paths.report_dir/<policy>.json)")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", parents=[common], help="gradient and Monte-Carlo self-checks")
    d.add_argument("which", choices=("grad", "mc"))
    d.add_argument("--samples", type=int, default=100_000)
    d.add_argument("--cases", type=int, default=3)
    d.add_argument("--params", type=int, default=200, help="parameters checked per gradient case")
    d.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    d.set_defaults(func=cmd_diagnose)

    v = sub.add_parser("visualize", parents=[common], help="decision grid and zoom-probability profile")
    v.add_argument("--model", help="CPNet model (default: paths.cpnet_model)")
    v.add_argument("--fpnet")
    v.add_argument("--scene", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_visualize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ZoomCascadeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
