"""Command-line entry point: ``joint-forge <command> [options]``.

Structured progress goes to stdout as one JSON object per line; a short human
summary goes to stderr. Exit codes: 0 success, 1 usage or validation error,
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidConfig, JointForgeError

THREADS_ENV = "JOINT_FORGE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class Logger:
    def __init__(self, stream=None):
        self.stream = stream or sys.stdout

    def __call__(self, event: str, **fields) -> None:
        self.emit({"event": event, **fields})

    def emit(self, record: dict) -> None:
        self.stream.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")
        self.stream.flush()


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def summary(text: str) -> None:
    print(text, file=sys.stderr)


def _write_json(path: Path, doc) -> Path:
    from .fileio import atomic_write_text

    return atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default))


def _ratios(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def _features(text: str) -> tuple:
    return tuple(sorted(x.strip() for x in text.split(",") if x.strip()))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(args, log: Logger) -> int:
    from .synthetic import SyntheticConfig, gen_synthetic, write_dataset

    cfg = SyntheticConfig(
        n=args.n,
        seed=args.seed,
        peg_plate_fraction=args.peg_plate_fraction,
        sibling_prob=args.sibling_prob,
        max_holes=args.max_holes,
        random_placement=not args.no_random_placement,
    )
    samples = gen_synthetic(cfg)
    out = write_dataset(samples, args.out)
    templates = {}
    for s in samples:
        templates[s.template] = templates.get(s.template, 0) + 1
    log("generated", samples=len(samples), templates=templates, out=str(out))
    summary(f"wrote {len(samples)} synthetic joint sets to {out}")
    return 0


def cmd_consolidate(args, log: Logger) -> int:
    from .brep import joint_set_to_dict, part_graph_to_dict
    from .dataset import JointRecord, consolidate, load_dataset
    from .fileio import atomic_write_text

    src, out = Path(args.input), Path(args.out)
    samples = load_dataset(src)
    records = [
        JointRecord(s.part1, s.part2, j, s.joint_set.holes) for s in samples for j in s.joint_set.joints
    ]
    joint_sets, parts = consolidate(records)
    out.mkdir(parents=True, exist_ok=True)
    for part in parts.values():
        atomic_write_text(out / f"{part.part_id}.json", json.dumps(part_graph_to_dict(part), sort_keys=True))
        if part.mesh and (src / part.mesh).exists() and src.resolve() != out.resolve():
            shutil.copyfile(src / part.mesh, out / part.mesh)
    for js in joint_sets:
        atomic_write_text(out / f"joint_set_{js.name}.json", json.dumps(joint_set_to_dict(js), sort_keys=True))
    log("consolidated", joints=len(records), joint_sets=len(joint_sets), parts=len(parts), out=str(out))
    summary(f"{len(records)} joints -> {len(joint_sets)} joint sets over {len(parts)} parts")
    return 0


def cmd_split(args, log: Logger) -> int:
    from .dataset import load_dataset, make_splits, write_splits

    samples = load_dataset(args.data)
    joint_sets = [s.joint_set for s in samples]
    splits = make_splits(joint_sets, args.ratios, args.seed, exclude_siblings=not args.keep_siblings)
    path = write_splits(Path(args.out), joint_sets, splits)
    counts = {k: len(v) for k, v in splits.items()}
    log("split", counts=counts, path=str(path))
    summary("split sizes: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _load(args, split: Optional[str]):
    from .dataset import SPLIT_FILE, load_split

    split_file = args.splits or None
    if split == "auto":
        has_file = Path(split_file).exists() if split_file else (Path(args.data) / SPLIT_FILE).exists()
        split = "test" if has_file else "all"
    return load_split(args.data, split, split_file), split


def cmd_train(args, log: Logger) -> int:
    from .brep import DEFAULT_FEATURES
    from .dataset import SPLIT_FILE, load_split
    from .train import TrainConfig, train

    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        skip_threshold=args.skip_threshold,
        features=args.features or tuple(sorted(DEFAULT_FEATURES)),
        hidden=args.hidden,
        use_ce=not args.no_ce,
        use_sym=not args.no_sym,
        patience=args.patience,
    )
    split_file = args.splits or None
    has_splits = Path(split_file).exists() if split_file else (Path(args.data) / SPLIT_FILE).exists()
    if has_splits:
        train_set = load_split(args.data, "train", split_file)
        val_set = []
        if args.val_split:
            try:
                val_set = load_split(args.data, "val", split_file)
            except EmptyDataset:
                val_set = []
    else:
        train_set, val_set = load_split(args.data, "all"), []
    log("config", command="train", **{k: list(v) if isinstance(v, tuple) else v for k, v in vars(cfg).items()},
        train_samples=len(train_set), val_samples=len(val_set))
    result = train(train_set, val_set, cfg, args.out, log=log.emit)
    last = result.history[-1] if result.history else {}
    log("trained", seconds=result.seconds, skipped=result.skipped, out=str(args.out), **{
        k: last.get(k) for k in ("train_loss", "val_loss", "val_top1")
    })
    summary(f"trained {cfg.epochs} epochs on {len(train_set)} samples; checkpoints in {args.out}")
    return 0


def _scorer(args, log: Logger):
    """Score function (part1, part2) -> n x m matrix for the chosen method."""
    if args.method == "model":
        from .network import ModelParams
        from .train import predict_scores

        if not args.model:
            raise InvalidConfig("--model is required for --method model")
        params = ModelParams.load(args.model)
        return lambda g1, g2: predict_scores(params, g1, g2)
    if args.method == "heuristic":
        from .dataset import load_split
        from .heuristic import fit_prior, heuristic_scores

        prior = fit_prior(load_split(args.data, args.prior_split, args.splits or None))
        return lambda g1, g2: heuristic_scores(g1, g2, prior)
    if args.method == "random":
        from .heuristic import random_scores

        root = np.random.SeedSequence(args.seed)
        return lambda g1, g2: random_scores(g1, g2, root.spawn(1)[0])
    raise InvalidConfig(f"unknown method {args.method!r}")


def cmd_predict(args, log: Logger) -> int:
    from .network import top_k

    samples, split = _load(args, args.split)
    score = _scorer(args, log)
    doc = {}
    for s in samples:
        scores = score(s.part1, s.part2)
        doc[s.name] = [[u, v, sc] for u, v, sc in top_k(scores, args.k, np.isfinite(scores))]
    path = _write_json(Path(args.out) / "predictions.json", {"method": args.method, "k": args.k, "predictions": doc})
    log("predicted", samples=len(samples), split=split, method=args.method, path=str(path))
    summary(f"wrote top-{args.k} predictions for {len(samples)} samples to {path}")
    return 0


def _read_predictions(path) -> dict:
    from .fileio import read_json

    doc = read_json(path)
    if "predictions" not in doc:
        raise InvalidConfig(f"{path} is not a predictions file")
    return doc["predictions"]


def _search_config(args):
    from .search import SearchConfig

    cfg = SearchConfig(k=args.k, samples=args.samples, max_iter=args.max_iter)
    try:
        cfg.validate()
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    return cfg


def cmd_search(args, log: Logger) -> int:
    from .search import search_pose

    samples, split = _load(args, args.split)
    preds = _read_predictions(args.predictions)
    cfg = _search_config(args)
    doc = {}
    for s in samples:
        if s.name not in preds:
            raise InvalidConfig(f"no predictions for sample {s.name}")
        result = search_pose(s.part1, s.part2, s.mesh1, s.mesh2, preds[s.name], cfg, args.seed)
        doc[s.name] = result.to_dict()
        log("searched", sample=s.name, u=result.u, v=result.v, cost=result.cost,
            overlap=result.terms.overlap, seconds=result.seconds)
    path = _write_json(Path(args.out) / "poses.json", {"poses": doc})
    summary(f"searched poses for {len(samples)} samples; wrote {path}")
    return 0


def cmd_eval(args, log: Logger) -> int:
    from .evaluation import axis_accuracy, pose_eval, report, report_json
    from .fileio import atomic_write_text, read_json
    from .geometry.transforms import RigidTransform

    samples, split = _load(args, args.split)
    results = {}
    if args.predictions:
        preds = _read_predictions(args.predictions)
        score_list = []
        for s in samples:
            scores = np.full((s.part1.n, s.part2.n), -np.inf)
            for rank, (u, v, _) in enumerate(preds.get(s.name, [])):
                scores[int(u), int(v)] = -rank
            score_list.append(scores)
        for k in args.k:
            results[f"top{k}_{args.mode}"] = axis_accuracy(score_list, samples, k, mode=args.mode)
    if args.poses:
        poses = read_json(args.poses)["poses"]
        missing = [s.name for s in samples if s.name not in poses]
        if missing:
            raise InvalidConfig(f"no pose for samples {missing[:5]}")
        transforms = [RigidTransform.from_matrix(np.array(poses[s.name]["transform"])) for s in samples]
        results["chamfer"] = pose_eval(transforms, samples, seed=args.seed)
    if not results:
        raise InvalidConfig("eval needs --predictions and/or --poses")
    doc, text = report(results, {"split": split, "samples": len(samples)})
    path = atomic_write_text(Path(args.out) / "report.json", report_json(doc))
    log("evaluated", path=str(path), metrics=doc["metrics"])
    summary(text)
    return 0


def cmd_gradcheck(args, log: Logger) -> int:
    from .gradcheck import gradcheck

    rep = gradcheck(args.seed, args.networks, args.width)
    log("gradcheck", seed=args.seed, **rep.to_dict())
    print(f"max relative gradient error {rep.max_rel_error:.3e} "
          f"({rep.checked} coordinates, {rep.skipped_kinks} skipped at kinks)", file=sys.stderr)
    return 0 if rep.passed else 1


def cmd_assemble_sequence(args, log: Logger) -> int:
    from .geometry.cost import overlap_and_contact
    from .evaluation import axes_collinear
    from .geometry.mesh import write_obj
    from .fileio import atomic_write_text
    from .search import assemble_sequence
    from .synthetic import make_stack

    stack = make_stack(args.seed)
    if args.method == "model":
        from .network import ModelParams
        from .train import predict_scores

        if not args.model:
            raise InvalidConfig("--model is required for --method model")
        params = ModelParams.load(args.model)

        def scorer(g1, g2):
            return predict_scores(params, g1, g2)
    else:
        from .heuristic import fit_prior, heuristic_scores
        from .synthetic import SyntheticConfig, gen_synthetic

        prior_samples = gen_synthetic(SyntheticConfig(n=args.prior_samples, seed=args.seed + 1))
        prior = fit_prior(s.to_joint_sample() for s in prior_samples)

        def scorer(g1, g2):
            return heuristic_scores(g1, g2, prior)

    parts = [(p.graph, p.mesh) for p in stack.parts]
    placements = assemble_sequence(parts, stack.sequence, scorer, _search_config(args), args.seed)
    order = [stack.sequence[0][1]] + [new for new, _ in stack.sequence]
    world = dict(zip(order, placements))
    out = Path(args.out)
    steps = []
    for (new, anchor), js in zip(stack.sequence, stack.joint_sets):
        gt = js.joints[0]
        g_new, g_anchor = stack.parts[new].graph, stack.parts[anchor].graph
        axis_new = g_new.axes[gt.u].transformed(world[new])
        axis_anchor = g_anchor.axes[gt.v].transformed(world[anchor])
        steps.append({"part": g_new.part_id, "anchor": g_anchor.part_id,
                      "collinear": bool(axes_collinear(axis_new, axis_anchor))})
    overlaps = []
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            a, b = order[i], order[j]
            ov, ct = overlap_and_contact(stack.parts[a].mesh.transformed(world[a]),
                                         stack.parts[b].mesh.transformed(world[b]), args.samples, args.seed)
            overlaps.append({"parts": [stack.parts[a].graph.part_id, stack.parts[b].graph.part_id],
                             "overlap": ov, "contact": ct})
    for idx in order:
        part = stack.parts[idx]
        atomic_write_text(out / f"assembled_{part.graph.part_id}.obj", write_obj(part.mesh.transformed(world[idx])))
    doc = {
        "placements": {stack.parts[i].graph.part_id: world[i].to_list() for i in order},
        "steps": steps,
        "overlaps": overlaps,
    }
    path = _write_json(out / "assembly.json", doc)
    ok = all(s["collinear"] for s in steps) and all(o["overlap"] < 0.1 for o in overlaps)
    log("assembled", path=str(path), collinear=[s["collinear"] for s in steps],
        max_overlap=max(o["overlap"] for o in overlaps), ok=ok)
    summary(f"assembled {len(order)} parts; all axes collinear and overlaps < 0.1: {ok}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _data_args(p: argparse.ArgumentParser, split_default: str = "auto") -> None:
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default=split_default,
                   help="split name, 'all', or 'auto' (test when a splits file exists)")
    p.add_argument("--splits", default=None, help="splits file (default DATA/splits.json)")


def _search_args(p: argparse.ArgumentParser, k: int = 50) -> None:
    p.add_argument("--k", type=int, default=k, help="top predictions searched")
    p.add_argument("--samples", type=int, default=4096, help="Monte-Carlo samples per cost evaluation")
    p.add_argument("--max-iter", type=int, default=200)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="joint-forge", description="Joint axis prediction and pose search for CAD part pairs.")
    parser.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (env {THREADS_ENV})")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="generate peg/plate and cube-pair joint sets")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--peg-plate-fraction", type=float, default=0.8)
    p.add_argument("--sibling-prob", type=float, default=0.3)
    p.add_argument("--max-holes", type=int, default=3)
    p.add_argument("--no-random-placement", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("consolidate", help="group joints by part-pair hash")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("split", help="assign joint sets to train/val/test/test-original")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", type=_ratios, default=[0.7, 0.1, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-siblings", action="store_true", help="allow sibling sets in val/test")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the joint-axis network")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden", type=int, default=384)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-threshold", type=int, default=950)
    p.add_argument("--features", type=_features, default=None, help="comma-separated input features")
    p.add_argument("--no-ce", action="store_true")
    p.add_argument("--no-sym", action="store_true")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--no-val", dest="val_split", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="top-k joint-axis predictions")
    _data_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("model", "heuristic", "random"), default="model")
    p.add_argument("--model", help="checkpoint path")
    p.add_argument("--prior-split", default="train", help="split the heuristic prior is fitted on")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("search", help="pose search over predicted axes")
    _data_args(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _search_args(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="axis accuracy and chamfer pose metrics")
    _data_args(p)
    p.add_argument("--predictions")
    p.add_argument("--poses")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[1])
    p.add_argument("--mode", choices=("cells", "collinear"), default="cells")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--networks", type=int, default=20)
    p.add_argument("--width", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("assemble-sequence", help="assemble the three-part synthetic stack")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("model", "heuristic"), default="heuristic")
    p.add_argument("--model")
    p.add_argument("--prior-samples", type=int, default=50)
    _search_args(p, k=5)
    p.set_defaults(func=cmd_assemble_sequence)
    return parser


def _prescan(parser: argparse.ArgumentParser, argv: Sequence[str]) -> tuple[Optional[str], Optional[str]]:
    """(config path, command) found ahead of full parsing."""
    config, command = None, None
    commands = set(_subparsers(parser).choices)
    it = iter(range(len(argv)))
    for i in it:
        token = argv[i]
        if token == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
            next(it, None)
        elif token.startswith("--config="):
            config = token.split("=", 1)[1]
        elif command is None and token in commands:
            command = token
    return config, command


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Install config-file values as subcommand defaults, then parse; flags win."""
    config, command = _prescan(parser, argv)
    if config and command:
        from .fileio import read_json

        try:
            cfg = read_json(config)
        except FileNotFoundError:
            raise InvalidConfig(f"config file {config} not found") from None
        if not isinstance(cfg, dict):
            raise InvalidConfig("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        subparser = _subparsers(parser).choices[command]
        actions = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(cfg) - set(actions) - {"func"})
        if unknown:
            raise InvalidConfig(f"unknown config keys for {command}: {unknown}")
        for dest, value in cfg.items():
            action = actions[dest]
            if action.type is not None and isinstance(value, str):
                cfg[dest] = action.type(value)
            action.required = False
        subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def _subparsers(parser: argparse.ArgumentParser) -> argparse._SubParsersAction:
    return next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))


def _set_threads(requested: Optional[int]) -> Optional[int]:
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        if not env:
            return None
        try:
            requested = int(env)
        except ValueError:
            raise InvalidConfig(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if requested < 1:
        raise InvalidConfig("thread count must be >= 1")
    import numba

    count = min(requested, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(count)
    return count


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    log = Logger()
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            raise UsageError("joint-forge: error: a command is required")
        threads = _set_threads(args.threads)
        log("start", command=args.command, threads=threads,
            args={k: v for k, v in vars(args).items() if k != "func"})
        return int(args.func(args, log))
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help and friends
        return int(exc.code or 0)
    except (JointForgeError, argparse.ArgumentTypeError, FileNotFoundError) as exc:
        log("error", kind=type(exc).__name__, message=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log("error", kind=type(exc).__name__, message=str(exc), internal=True)
        traceback.print_exc(file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
