"""Command line: ``minepred {synth,preprocess,rasterize,train,predict,eval,plot}``.

Every subcommand takes ``--seed``, ``--config`` and ``--out``. Randomness
comes from one integer seed split into independent named streams with
``numpy.random.SeedSequence(seed).spawn(4)``, in the order synth, split,
init, shuffle. Values from ``--config`` (JSON) replace the built-in defaults;
flags given on the command line win over both.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import nn
from .estimator import MultimodalPredictor, ekf_predictions
from .evaluation import compare, feasibility_filter, read_predictions, write_predictions
from .physics import MODEL_KINDS, EKFForecaster
from .plot import write_svg
from .raster import PRESETS, export_png, export_ppm, get_config, render_instance
from .scene import (
    make_instances,
    nominal_rate,
    read_instances,
    read_map,
    read_split,
    read_trajectories,
    resample,
    split_dataset,
    split_on_gaps,
    write_instances,
    write_map,
    write_split,
    write_trajectories,
)
from .synth import KINDS, synth_scenario
from .training import LOSS_KINDS, prepare
from .training import train as run_training

log = logging.getLogger("minepred")

STREAMS = ("synth", "split", "init", "shuffle")


class CommandError(RuntimeError):
    pass


def seed_streams(seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(STREAMS, children)}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _existing(text: str) -> Path:
    path = Path(text)
    if not path.exists():
        raise argparse.ArgumentTypeError(f"path does not exist: {text}")
    return path


# config keys -> argparse destinations
CONFIG_KEYS = {
    "seed": "seed",
    "raster": "preset",
    "k": "k",
    "horizon": "horizon",
    "pred_dt": "pred_dt",
    "hist_hz": "hist_hz",
    "ratios": "ratios",
    "modes": "modes",
    "synth.kind": "kind",
    "synth.n_agents": "agents",
    "train.batch_size": "batch_size",
    "train.learning_rate": "lr",
    "train.epochs": "epochs",
    "train.max_steps": "max_steps",
    "loss.alpha": "alpha",
    "loss.angle_threshold": "angle_threshold_deg",
    "loss.kind": "loss",
    "eval.miss_threshold": "miss_threshold",
    "ekf.model": "ekf_model",
}


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, val in doc.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(_flatten(val, name + "."))
        else:
            flat[name] = val
    return flat


def config_defaults(path) -> dict:
    doc = json.loads(Path(path).read_text())
    out = {}
    for key, val in _flatten(doc).items():
        if key not in CONFIG_KEYS:
            raise CommandError(f"unknown config key {key!r}")
        dest = CONFIG_KEYS[key]
        if key == "loss.angle_threshold":
            val = math.degrees(val)
        if dest in ("ratios",) and isinstance(val, list):
            val = [float(v) for v in val]
        if dest == "modes" and isinstance(val, list):
            val = [int(v) for v in val]
        out[dest] = val
    return out


def build_parser(overrides: dict | None = None) -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed, split into synth/split/init/shuffle streams")
    common.add_argument("--config", type=_existing, default=None, help="JSON file with default overrides")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="minepred", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text, formatter_class=fmt)

    def data_args(p, split=True, subset=True):
        p.add_argument("--instances", type=_existing, required=True, help="instances JSON-lines file")
        p.add_argument("--map", type=_existing, required=True, help="map JSON file")
        if split:
            p.add_argument("--split", type=_existing, default=None, help="split JSON file")
        if split and subset:
            p.add_argument("--subset", choices=("train", "val", "test", "all"), default="test", help="which split part to use")

    p = add("synth", "generate a synthetic map and 10 Hz trajectory log")
    p.add_argument("--kind", choices=KINDS, default="crossroads", help="scene layout")
    p.add_argument("--agents", type=int, default=50, help="number of agents")

    p = add("preprocess", "downsample logs, cut instances and split them")
    p.add_argument("--logs", type=_existing, required=True, help="trajectory log (.csv or .jsonl)")
    p.add_argument("--map", type=_existing, required=True, help="map JSON file")
    p.add_argument("--k", type=int, default=6, help="history length in states")
    p.add_argument("--horizon", type=int, default=6, help="number of predicted positions H")
    p.add_argument("--pred-dt", type=float, default=1.0, help="seconds between predicted positions")
    p.add_argument("--hist-hz", type=float, default=2.0, help="history sampling rate after downsampling")
    p.add_argument("--ratios", type=_float_list, default=[7.0, 1.5, 1.5], help="train,val,test proportions")

    p = add("rasterize", "render instance rasters to image files")
    data_args(p, split=False)
    p.add_argument("--ids", type=_str_list, default=None, help="instance ids (default: the first instance)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper", help="raster configuration")
    p.add_argument("--format", choices=("png", "ppm"), default="png", help="image format")

    p = add("train", "train one model per mode count")
    data_args(p, subset=False)
    p.add_argument("--modes", type=_int_list, default=[3], help="mode counts to train, e.g. 1,2,3,5")
    p.add_argument("--preset", choices=sorted(PRESETS), default="train", help="raster configuration of the model input")
    p.add_argument("--batch-size", type=int, default=64, help="mini-batch size")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    p.add_argument("--epochs", type=int, default=10, help="maximum epochs")
    p.add_argument("--max-steps", type=int, default=None, help="maximum optimizer steps")
    p.add_argument("--alpha", type=float, default=1.0, help="weight of the regression term")
    p.add_argument("--angle-threshold-deg", type=float, default=45.0, help="best-mode angle gate in degrees")
    p.add_argument("--loss", choices=LOSS_KINDS, default="best-mode", help="training loss")
    p.add_argument("--hidden", type=int, default=128, help="hidden units in the head")
    p.add_argument("--save-init", action="store_true", help="also write the untrained checkpoint")

    p = add("predict", "write prediction records for a split")
    data_args(p)
    p.add_argument("--checkpoint", type=_existing, action="append", default=[], help="model checkpoint (repeatable)")
    p.add_argument("--ekf", action="store_true", help="also run the EKF baseline")
    p.add_argument("--ekf-model", choices=MODEL_KINDS, default="CTRV", help="process model of the EKF baseline")
    p.add_argument("--filter-feasible", action="store_true", help="zero probabilities of off-road modes")

    p = add("eval", "score methods and write a comparison table")
    data_args(p)
    p.add_argument("--methods", type=_str_list, default=["ekf", "model"], help="methods to compare")
    p.add_argument("--modes", type=_int_list, default=[1, 2, 3, 5], help="model mode counts")
    p.add_argument("--models-dir", type=Path, default=None, help="directory with model_M<k>.ckpt (default: --out)")
    p.add_argument("--miss-threshold", type=float, default=2.0, help="final displacement miss threshold in meters")
    p.add_argument("--ekf-model", choices=MODEL_KINDS, default="CTRV", help="process model of the EKF baseline")
    p.add_argument("--filter-feasible", action="store_true", help="zero probabilities of off-road modes")

    p = add("plot", "draw one instance with its predictions as SVG")
    data_args(p, split=False)
    p.add_argument("--predictions", type=_existing, required=True, help="predictions JSON-lines file")
    p.add_argument("--instance", default=None, help="instance id (default: first prediction)")
    p.add_argument("--filter-feasible", action="store_true", help="apply the feasibility filter before drawing")
    p.add_argument("--png", action="store_true", help="also write the instance raster as PNG")

    if overrides:
        for action in sub.choices.values():
            known = {a.dest for a in action._actions}
            action.set_defaults(**{k: v for k, v in overrides.items() if k in known})
    return parser


@contextmanager
def artifacts():
    """Collect written paths; delete them all if the block raises."""
    written: list[Path] = []
    try:
        yield written
    except BaseException:
        for path in written:
            try:
                path.unlink()
            except OSError:
                pass
        raise


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _load_data(args, need_split=True):
    scene_map = read_map(args.map)
    instances = read_instances(args.instances, scene_map)
    if not instances:
        raise CommandError("no instances")
    if not need_split:
        return scene_map, instances, instances
    subset = getattr(args, "subset", "all")
    if subset == "all":
        return scene_map, instances, instances
    if args.split is None:
        raise CommandError("missing split: pass --split or use --subset all")
    split = read_split(args.split)
    idx = getattr(split, subset)
    if any(i >= len(instances) for i in idx):
        raise CommandError("split refers to instances that do not exist")
    return scene_map, instances, [instances[i] for i in idx]


def cmd_synth(args, out: Path, written: list) -> None:
    streams = seed_streams(args.seed)
    scene_map, trajectories = synth_scenario(args.kind, args.agents, streams["synth"])
    out.mkdir(parents=True, exist_ok=True)
    for path in (out / "map.json", out / "trajectories.csv"):
        written.append(path)
    write_map(scene_map, out / "map.json")
    write_trajectories(trajectories, out / "trajectories.csv")
    n_states = sum(len(t) for t in trajectories)
    print(f"synth: kind={args.kind} agents={len(trajectories)} states={n_states} -> {out}")


def cmd_preprocess(args, out: Path, written: list) -> None:
    scene_map = read_map(args.map)
    trajectories = read_trajectories(args.logs, origin=scene_map.origin)
    instances = []
    for traj in trajectories:
        if len(traj) < 2:
            continue
        src_hz = nominal_rate(traj)
        for piece in split_on_gaps(traj, 1.0 / src_hz):
            if len(piece) < 2:
                continue
            low = resample(piece, args.hist_hz, source_hz=src_hz)
            instances += make_instances(low, args.k, args.horizon, args.pred_dt, 1.0 / args.hist_hz, scene_map)
    if not instances:
        raise CommandError("no instances")
    split = split_dataset(len(instances), args.ratios, seed_streams(args.seed)["split"])
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "k": args.k,
        "horizon": args.horizon,
        "pred_dt": args.pred_dt,
        "hist_hz": args.hist_hz,
        "trajectories": len(trajectories),
        "instances": len(instances),
        "ratios": list(args.ratios),
        "split_sizes": list(split.sizes),
    }
    for name in ("instances.jsonl", "split.json", "preprocess_summary.json"):
        written.append(out / name)
    write_instances(instances, out / "instances.jsonl")
    write_split(split, out / "split.json")
    (out / "preprocess_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    ratio_text = ":".join(f"{r:g}" for r in args.ratios)
    print(
        f"preprocess: k={args.k} H={args.horizon} pred_dt={args.pred_dt:g}s hist={args.hist_hz:g}Hz "
        f"trajectories={len(trajectories)} instances={len(instances)} "
        f"split {ratio_text} -> train/val/test = {split.sizes[0]}/{split.sizes[1]}/{split.sizes[2]}"
    )


def cmd_rasterize(args, out: Path, written: list) -> None:
    _, instances, _ = _load_data(args, need_split=False)
    by_id = {inst.id: inst for inst in instances}
    ids = args.ids or [instances[0].id]
    cfg = get_config(args.preset)
    out.mkdir(parents=True, exist_ok=True)
    for iid in ids:
        if iid not in by_id:
            raise CommandError(f"unknown instance id {iid!r}")
        raster = render_instance(by_id[iid], cfg)
        path = out / f"raster_{_safe(iid)}.{args.format}"
        written.append(path)
        (export_png if args.format == "png" else export_ppm)(raster, path)
        print(f"rasterize: {iid} -> {path} ({cfg.size_px}x{cfg.size_px})")


def cmd_train(args, out: Path, written: list) -> None:
    _, instances, _ = _load_data(args, need_split=False)
    if args.split is None:
        raise CommandError("missing split: train needs --split")
    split = read_split(args.split)
    train_set = [instances[i] for i in split.train]
    val_set = [instances[i] for i in split.val]
    if not train_set:
        raise CommandError("training split is empty")
    horizon = train_set[0].horizon
    streams = seed_streams(args.seed)
    cfg = get_config(args.preset)
    train_data = prepare(train_set, cfg)
    val_data = prepare(val_set, cfg) if val_set else None
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": args.seed, "streams": streams, "models": {}}
    for m in args.modes:
        est = MultimodalPredictor(
            n_modes=m,
            horizon=horizon,
            raster=cfg,
            alpha=args.alpha,
            angle_threshold=math.radians(args.angle_threshold_deg),
            loss=args.loss,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            epochs=args.epochs,
            max_steps=args.max_steps,
            hidden=args.hidden,
            random_state=streams["init"],
        )
        if args.save_init:
            init_path = out / f"model_M{m}.init.ckpt"
            written.append(init_path)
            est.save(init_path, net=est.build())
        # the shuffle stream drives batching; the init stream seeds the weights
        net = est.build()
        tcfg = est.train_config()
        tcfg.seed = streams["shuffle"]
        result = run_training(train_data, net, tcfg, est.loss_config(), val_data=val_data)
        est.net_, est.history_, est.step_losses_ = result.model, result.history, result.step_losses
        ckpt = out / f"model_M{m}.ckpt"
        hist = out / f"history_M{m}.csv"
        written += [ckpt, hist]
        est.save(ckpt)
        est.write_history(hist)
        final = result.history[-1] if result.history else (0, float("nan"), float("nan"))
        meta["models"][m] = {"checkpoint": ckpt.name, "steps": len(result.step_losses), "final": list(final)}
        print(f"train: M={m} steps={len(result.step_losses)} train_loss={final[1]:.4f} val_loss={final[2]:.4f} -> {ckpt}")
    written.append(out / "train_config.json")
    meta["config"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    (out / "train_config.json").write_text(json.dumps(meta, indent=1, default=str) + "\n")


def _model_predictions(path: Path, instances):
    est = MultimodalPredictor.from_checkpoint(path)
    if instances and instances[0].horizon != est.horizon:
        raise CommandError(f"checkpoint {path} predicts H={est.horizon}, instances have H={instances[0].horizon}")
    return est.predict_predictions(instances)


def _maybe_filter(preds, scene_map, enabled: bool):
    if not enabled:
        return preds
    out = [feasibility_filter(p, scene_map) for p in preds]
    flagged = sum(1 for p in out if p.warning)
    if flagged:
        log.warning("%s: %d of %d predictions have all modes infeasible; kept unfiltered", out[0].source, flagged, len(out))
    return out


def cmd_predict(args, out: Path, written: list) -> None:
    scene_map, _, chosen = _load_data(args)
    if not args.checkpoint and not args.ekf:
        raise CommandError("nothing to predict: pass --checkpoint and/or --ekf")
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if args.ekf:
        jobs.append(("ekf", lambda: ekf_predictions(chosen, EKFForecaster(model=args.ekf_model))))
    for path in args.checkpoint:
        jobs.append((None, lambda path=path: _model_predictions(path, chosen)))
    for tag, job in jobs:
        # the single-mode baseline has nothing to redistribute
        preds = _maybe_filter(job(), scene_map, args.filter_feasible and tag != "ekf")
        source = preds[0].source
        path = out / f"predictions_{_safe(source)}.jsonl"
        written.append(path)
        write_predictions(preds, path)
        print(f"predict: {source} records={len(preds)} -> {path}")


def cmd_eval(args, out: Path, written: list) -> None:
    scene_map, _, chosen = _load_data(args)
    models_dir = args.models_dir or out
    methods = []
    for name in args.methods:
        if name == "ekf":
            preds = ekf_predictions(chosen, EKFForecaster(model=args.ekf_model))
            methods.append(("ekf", preds))
        elif name == "model":
            for m in args.modes:
                ckpt = Path(models_dir) / f"model_M{m}.ckpt"
                if not ckpt.exists():
                    raise CommandError(f"missing checkpoint {ckpt}")
                methods.append((f"model-M{m}", _model_predictions(ckpt, chosen)))
        else:
            raise CommandError(f"unknown method {name!r}; expected ekf or model")
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for tag, preds in methods:
        preds = _maybe_filter(preds, scene_map, args.filter_feasible and tag != "ekf")
        path = out / f"predictions_{_safe(tag)}.jsonl"
        written.append(path)
        write_predictions(preds, path)
        table.append((tag, {p.id: p for p in preds}))
    gts = {inst.id: inst.future for inst in chosen}
    report = compare(table, gts, args.miss_threshold, instance_ids=[inst.id for inst in chosen])
    written += [out / "report.csv", out / "report.txt"]
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text(), end="")


def cmd_plot(args, out: Path, written: list) -> None:
    scene_map, instances, _ = _load_data(args, need_split=False)
    preds = {p.id: p for p in read_predictions(args.predictions)}
    if not preds:
        raise CommandError("predictions file is empty")
    iid = args.instance or next(iter(preds))
    by_id = {inst.id: inst for inst in instances}
    if iid not in by_id:
        raise CommandError(f"missing instance id {iid!r}")
    if iid not in preds:
        raise CommandError(f"no prediction record for instance {iid!r}")
    pred = preds[iid]
    if args.filter_feasible:
        pred = feasibility_filter(pred, scene_map)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"plot_{_safe(iid)}_{_safe(pred.source)}.svg"
    written.append(path)
    write_svg(by_id[iid], pred, path, scene_map)
    print(f"plot: {iid} modes={pred.n_modes} -> {path}")
    if args.png:
        png = out / f"raster_{_safe(iid)}.png"
        written.append(png)
        export_png(render_instance(by_id[iid], "paper"), png)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "rasterize": cmd_rasterize,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    try:
        overrides = config_defaults(known.config) if known.config else None
    except (OSError, ValueError, CommandError) as exc:
        print(f"minepred: error: bad config: {exc}", file=sys.stderr)
        return 2
    args = build_parser(overrides).parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with artifacts() as written:
            COMMANDS[args.command](args, Path(args.out), written)
    except (CommandError, ValueError, KeyError, OSError, nn.CheckpointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"minepred {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
