"""Command-line entry point: gen-data, train, pipeline, evaluate.

Exit codes: 0 ok, 2 configuration error, 3 I/O or file-format error,
4 non-finite loss or gradient during training, 5 incompatible checkpoints.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, save_config
from .diffusion import NonFiniteLossError
from .evaluation import format_table, report_json
from .formats import MotionFile, MotionFormatError, save_motion
from .geometry import MeshError, TrajectoryFormatError, load_object_sequence
from .nn import CheckpointError, NonFiniteGradientError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_INCOMPATIBLE = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _log(**record) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _config(args) -> RunConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise CliError(EXIT_IO, f"config file {args.config} not found")
    return load_config(args.config, args.preset, args.set)


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise CliError(EXIT_IO, f"{p} does not exist")


def _open_corpus(path):
    from .synthdata import Corpus
    _require(Path(path) / "manifest.json")
    try:
        return Corpus.open(path)
    except ValueError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _load_stages(stage1, stage2):
    from .pipeline import check_compatible, load_stage
    _require(stage1, stage2)
    hs, _, _ = load_stage(stage1)
    bs, _, _ = load_stage(stage2)
    check_compatible(hs, bs)
    return hs, bs


def cmd_gen_data(args) -> int:
    from .synthdata import build_corpus, manifest_hash
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError(EXIT_IO, f"{out} exists and is not empty")
    manifest = build_corpus(cfg.corpus, out, cfg.build_skeleton())
    save_config(cfg, out / "config.json")
    splits = manifest["splits"]
    _log(event="corpus", path=str(out), sequences=len(manifest["sequences"]),
         subject_train=len(splits["subject"]["train"]), subject_test=len(splits["subject"]["test"]),
         object_train=len(splits["object"]["train"]), object_test=len(splits["object"]["test"]),
         held_out=splits["object"]["held_out"], manifest_sha256=manifest_hash(out))
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train_stage
    cfg = _config(args)
    _require(args.resume)
    corpus = _open_corpus(args.corpus)
    if corpus.skeleton.digest() != cfg.build_skeleton().digest():
        raise ConfigError(f"corpus skeleton does not match config skeleton {cfg.skeleton!r}")
    kind = "hands" if args.stage == 1 else "body"
    records = corpus.records(args.scheme, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / f"stage{args.stage}_config.json")
    _, log = train_stage(kind, cfg, records, out, resume=args.resume,
                         on_log=lambda s, l: _log(event="train", stage=args.stage, step=s, loss=l))
    _log(event="checkpoint", path=str(out / f"stage{args.stage}.ckpt"),
         first_loss=log[0][1] if log else None, final_loss=log[-1][1] if log else None)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline
    cfg = _config(args)
    _require(args.object_trajectory, args.mesh)
    hs, bs = _load_stages(args.stage1, args.stage2)
    seq = load_object_sequence(args.mesh, args.object_trajectory, args.fps)
    result = run_pipeline(seq, hs, bs, args.seed, rectify=not args.no_rectify, th=cfg.thresholds.contact_rectify)
    out = Path(args.out)
    if not out.parent.exists():
        raise CliError(EXIT_IO, f"output directory {out.parent} does not exist")
    meta = {"seed": args.seed, "rectify": not args.no_rectify, "hand_mode": result.hand_mode,
            "mesh": str(args.mesh), "trajectory": str(args.object_trajectory)}
    save_motion(out, MotionFile(result.pose, result.hands, seq.fps, [a.to_dict() for a in result.anchors], meta))
    save_config(cfg, out.with_name(out.name + ".config.json"))
    _log(event="motion", path=str(out), frames=len(result.pose), hand_mode=result.hand_mode,
         anchors=[a.to_dict() for a in result.anchors])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .benchmark import evaluate_split
    cfg = _config(args)
    corpus = _open_corpus(args.corpus)
    hs, bs = _load_stages(args.stage1, args.stage2)
    test = corpus.records(args.scheme, "test")
    if args.limit is not None:
        test = test[:args.limit]
    train = corpus.records(args.scheme, "train")
    best_of = args.best_of if args.best_of is not None else cfg.best_of
    if best_of < 1:
        raise ConfigError("--best-of must be at least 1")
    th = cfg.thresholds
    res = evaluate_split(test, train, hs, bs, best_of, cfg.eval_seed, th.contact_rectify, th.contact_metric,
                         th.collision)
    table = format_table(res.aggregate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    (out / "table.txt").write_text(table + "\n")
    report = json.loads(report_json(res.per_sequence, res.aggregate))
    report.update(best_of=best_of, scheme=args.scheme, sequences=len(test),
                  hand_jpe={"best_of": res.hand_jpe_best, "mean_baseline": res.hand_jpe_baseline,
                            "offset_baseline": res.hand_jpe_offset_baseline},
                  selected=res.selected)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(table)
    _log(event="report", path=str(out / "report.json"), hand_jpe_best=res.hand_jpe_best,
         hand_jpe_baseline=res.hand_jpe_baseline)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", default="desk", help="base configuration (desk | full)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train_hands.steps=500")

    parser = argparse.ArgumentParser(prog="hoisynth", description="Synthesize body motion from object motion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="new corpus directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run directory for checkpoint and loss log")
    p.add_argument("--scheme", default="subject", choices=("subject", "object"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", parents=[common], help="generate motion for one object trajectory")
    p.add_argument("--object-trajectory", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--no-rectify", action="store_true", help="skip contact rectification")
    p.add_argument("--out", required=True, help="motion file to write")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", parents=[common], help="benchmark checkpoints on a corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--scheme", default="subject", choices=("subject", "object"))
    p.add_argument("--best-of", type=int)
    p.add_argument("--limit", type=int, help="evaluate only the first N test sequences")
    p.add_argument("--out", required=True, help="directory for table.txt and report.json")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .pipeline import IncompatibleCheckpointsError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        code, msg = EXIT_NONFINITE, f"training diverged: {exc}"
    except IncompatibleCheckpointsError as exc:
        code, msg = EXIT_INCOMPATIBLE, f"incompatible checkpoints: {exc}"
    except (OSError, CheckpointError, MeshError, TrajectoryFormatError, MotionFormatError) as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    print(f"hoisynth: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
