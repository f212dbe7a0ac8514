"""Command-line driver: ``stgan <subcommand> [flags]``.

Exit status is 0 on success, 1 on bad input or usage, 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import metrics as M
from .gan import FMEASURES
from .pipeline import (EMBEDDINGS, PRESETS, STAGE_FUNCS, STAGES, ExperimentConfig, StageError,
                       ValidationError, evaluate_files, merge_report, run_pipeline)

log = logging.getLogger("stgan")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this CLI reserves 2 for runtime failures
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _metric_list(text: str) -> tuple[str, ...]:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    bad = [n for n in names if n not in M.METRIC_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown metrics {bad}; choose from {','.join(M.METRIC_NAMES)}")
    return names


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--corpus")
    p.add_argument("--word-vectors")
    p.add_argument("--out")
    p.add_argument("--fmeasure", choices=FMEASURES)
    p.add_argument("--embedding", choices=sorted(EMBEDDINGS))
    p.add_argument("--minibatch-disc", type=_bool, metavar="BOOL")
    p.add_argument("--epochs", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--metrics", type=_metric_list, metavar="LIST")
    p.add_argument("--samples", type=int, dest="n_samples", help="number of generated sentences")
    p.add_argument("--decode", choices=("greedy", "sample"))
    p.add_argument("--snapshot-every", type=int, help="decode generator snapshots every N rounds")
    p.add_argument("--force", action="store_true", help="rerun even if the artifact is up to date")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stgan", description="Sentence-embedding GAN laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "prepare": "tokenize, split and build the vocabulary",
        "train-st": "train the skip-thought model (or the GloVe decoder)",
        "encode": "embed the training sentences",
        "train-gan": "train the GAN on the sentence vectors",
        "sample": "generate and decode sentences",
        "evaluate": "score generated sentences against references",
        "report": "write report CSV and SVG charts",
        "run": "run every stage in order, resuming finished ones",
    }
    for name in (*STAGES, "run"):
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        if name == "evaluate":
            p.add_argument("--hyp", help="hypothesis file, one sentence per line")
            p.add_argument("--ref", help="reference file, one sentence per line")
            p.add_argument("--ref-mode", choices=("aligned", "pool"), default="aligned",
                           help="aligned: line i vs line i; pool: every hypothesis vs all references")
            p.add_argument("--model", default="hyp", help="model name for report rows")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise ValidationError(f"config file not found: {args.config}")
        try:
            file_cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: {exc}") from exc
    preset = args.preset or file_cfg.pop("preset", "desk")
    seed = args.seed if args.seed is not None else file_cfg.pop("seed", 0)
    file_cfg.pop("seed", None)
    out = args.out or file_cfg.pop("out", None)
    file_cfg.pop("out", None)
    if out is None:
        raise ValidationError("--out is required")
    st = dict(file_cfg.pop("skipthought", {}))
    gan = dict(file_cfg.pop("gan", {}))
    flags = {k: getattr(args, k) for k in ("corpus", "word_vectors", "embedding", "n_samples",
                                           "decode", "snapshot_every", "metrics")
             if getattr(args, k, None) is not None}
    if "metrics" in file_cfg:
        file_cfg["metrics"] = tuple(file_cfg["metrics"])
    if args.epochs is not None:
        st["epochs"] = args.epochs
    if args.batch_size is not None:
        st["batch_size"] = gan["batch_size"] = args.batch_size
    for key in ("fmeasure", "rounds", "minibatch_disc"):
        if getattr(args, key) is not None:
            gan[key] = getattr(args, key)
    known = set(ExperimentConfig.__dataclass_fields__) - {"out", "seed", "preset", "st", "gan"}
    unknown = set(file_cfg) - known
    if unknown:
        raise ValidationError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig.from_preset(preset, out, seed, st=st, gan=gan, **file_cfg, **flags)


def _evaluate(args: argparse.Namespace) -> int:
    if args.hyp is None and args.ref is None:
        cfg = config_from_args(args)
        cfg.validate(need_corpus=False)
        scores = STAGE_FUNCS["evaluate"](cfg)
        for k, v in scores.items():
            print(f"{k}\t{v:.6f}")
        return 0
    if args.hyp is None or args.ref is None:
        raise UsageError("evaluate needs both --hyp and --ref")
    for path in (args.hyp, args.ref):
        if not Path(path).is_file():
            raise ValidationError(f"file not found: {path}")
    names = args.metrics or M.METRIC_NAMES
    scores = evaluate_files(args.hyp, args.ref, names, args.ref_mode)
    embedding = args.embedding or "-"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        merge_report(Path(args.out) / "report.csv", args.model, embedding, scores)
    report = M.MetricReport()
    for k, v in scores.items():
        report.add(args.model, embedding, k, v)
    sys.stdout.write(report.to_csv())
    return 0


def dispatch(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "evaluate":
        return _evaluate(args)
    cfg = config_from_args(args)
    if args.command == "run":
        path = run_pipeline(cfg, force=args.force)
        print(path)
        return 0
    cfg.validate(need_corpus=args.command == "prepare")
    if args.command != "prepare" and not (Path(cfg.out) / "vocab.tsv").exists():
        raise ValidationError(f"{cfg.out} has no prepared corpus; run prepare first")
    try:
        result = STAGE_FUNCS[args.command](cfg, args.force)
    except ValidationError:
        raise
    except Exception as exc:
        raise StageError(args.command, exc) from exc
    if args.command == "report":
        for p in result:
            print(p)
    return 0


def setup_logging() -> None:
    level = os.environ.get("STGAN_LOG", "info").lower()
    if level not in LOG_LEVELS:
        print(f"STGAN_LOG must be one of {sorted(LOG_LEVELS)}; using info", file=sys.stderr)
        level = "info"
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    try:
        return dispatch(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(build_parser().format_usage() + f"stgan: error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        log.debug("stage failure", exc_info=exc.cause)
        print(f"stgan: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"stgan: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
