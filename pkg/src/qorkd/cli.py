"""Command-line entry point: ``qorkd <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.  Errors go to stderr as
one line of JSON: ``{"error": <category>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import evalx, synthgen, training
from .graphio import DataError, save_ast_graphs
from .models import ConfigMismatchError, load_checkpoint, save_checkpoint
from .verilog_ast import VerilogError, parse_to_graph, save_features


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of TrainConfig fields; flags take precedence")
    p.add_argument("--target", choices=("area", "delay"))
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--scheduler", choices=("auto", "plateau", "cosine", "constant"))
    p.add_argument("--log", dest="log_path", help="write per-epoch JSON lines here")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qorkd", description="QoR prediction with cross-modal distillation")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("spec", help="JSON file of SynthSpec fields")
    p.add_argument("out_dir")

    p = sub.add_parser("parse", help="parse Verilog, export AST graph and 108 features")
    p.add_argument("verilog_path")
    p.add_argument("--top")
    p.add_argument("--design-id")
    p.add_argument("--ast-out")
    p.add_argument("--features-out")

    p = sub.add_parser("train-teacher")
    p.add_argument("data_dir")
    p.add_argument("ckpt_out")
    _train_flags(p)

    p = sub.add_parser("train-student")
    p.add_argument("data_dir")
    p.add_argument("ckpt_out")
    p.add_argument("--teacher", required=True)
    p.add_argument("--alpha-schedule", help='e.g. "0:0.5,150:0.75,250:1" or "1"')
    _train_flags(p)

    p = sub.add_parser("train-baseline")
    p.add_argument("variant", choices=training.BASELINES)
    p.add_argument("data_dir")
    p.add_argument("ckpt_out")
    p.add_argument("--teacher")
    p.add_argument("--alpha-schedule")
    _train_flags(p)

    p = sub.add_parser("evaluate")
    p.add_argument("ckpt")
    p.add_argument("data_dir")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--report-out")
    p.add_argument("--per-design-out")

    p = sub.add_parser("export-hidden")
    p.add_argument("ckpt")
    p.add_argument("data_dir")
    p.add_argument("out")
    p.add_argument("--split", choices=("train", "val", "test"), help="default: every design")
    return ap


def _train_config(args) -> training.TrainConfig:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    for key in ("target", "seed", "max_epochs", "batch_size", "optimizer", "lr", "scheduler", "log_path"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "alpha_schedule", None):
        cfg["alpha_schedule"] = training.LossWeights.parse(args.alpha_schedule).schedule
    try:
        return training.TrainConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _cmd_synth(args) -> None:
    try:
        obj = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read spec: {exc}") from None
    try:
        spec = synthgen.SynthSpec.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    split = synthgen.generate(spec, args.out_dir)
    print(json.dumps({"out_dir": args.out_dir, "train": len(split.train), "val": len(split.val),
                      "test": len(split.test), "spec": asdict(spec)}, sort_keys=True))


def _cmd_parse(args) -> None:
    src = Path(args.verilog_path).read_text()
    did = args.design_id or Path(args.verilog_path).stem
    m, g, feats = parse_to_graph(src, did, args.top)
    if args.ast_out:
        save_ast_graphs(args.ast_out, [g])
    if args.features_out:
        save_features(args.features_out, [(did, feats)])
    print(json.dumps({"design_id": did, "module": m.name, "nodes": g.num_nodes,
                      "categories": g.category_counts(), "features": feats.tolist()}))


def _emit_train(result: training.TrainResult, out: str) -> None:
    save_checkpoint(out, result.checkpoint)
    print(json.dumps({"checkpoint": out, "best_epoch": result.best_epoch, "best_val": result.best_val,
                      "config": result.checkpoint.meta.get("train")}, sort_keys=True))


def _cmd_train_teacher(args) -> None:
    cfg = _train_config(args)
    corpus = training.load_corpus(args.data_dir, need=("lut",))
    _emit_train(training.pretrain_teacher(corpus, cfg), args.ckpt_out)


def _cmd_train_student(args) -> None:
    cfg = _train_config(args)
    teacher = load_checkpoint(args.teacher)
    if teacher.model.config.kind != "teacher":
        raise UsageError("--teacher must be a teacher checkpoint")
    corpus = training.load_corpus(args.data_dir, need=("lut", "embedding"))
    _emit_train(training.train_student_kd(corpus, teacher, cfg), args.ckpt_out)


def _cmd_train_baseline(args) -> None:
    cfg = _train_config(args)
    needs_teacher = args.variant.endswith("_kd")
    if needs_teacher and not args.teacher:
        raise UsageError(f"{args.variant} requires --teacher")
    teacher = load_checkpoint(args.teacher) if needs_teacher else None
    need = {"ast_gnn": ("ast",), "ast_gnn_kd": ("ast", "lut"),
            "llm_decoder": ("embedding",), "llm_decoder_kd": ("embedding", "lut")}[args.variant]
    corpus = training.load_corpus(args.data_dir, need=need)
    _emit_train(training.train_baseline(args.variant, corpus, cfg, teacher), args.ckpt_out)


def _cmd_evaluate(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    corpus = training.load_corpus(args.data_dir, need=(ckpt.model.config.modality,))
    report, per = evalx.evaluate(ckpt, corpus, args.split)
    text = report.to_json()
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(
            {**json.loads(text), "config": ckpt.config}, sort_keys=True) + "\n")
    if args.per_design_out:
        per.save(args.per_design_out)
    print(text)


def _cmd_export(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    corpus = training.load_corpus(args.data_dir, need=(ckpt.model.config.modality,))
    ids = corpus.split.part(args.split) if args.split else None
    ids = evalx.export_hidden(ckpt, corpus, args.out, ids)
    print(json.dumps({"out": args.out, "records": len(ids), "dim": ckpt.model.config.hidden}))


_COMMANDS = {
    "synth-data": _cmd_synth, "parse": _cmd_parse, "train-teacher": _cmd_train_teacher,
    "train-student": _cmd_train_student, "train-baseline": _cmd_train_baseline,
    "evaluate": _cmd_evaluate, "export-hidden": _cmd_export,
}


def _fail(category: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _COMMANDS[args.cmd](args)
    except UsageError as exc:
        return _fail("usage", exc, 1)
    except VerilogError as exc:
        return _fail(exc.category, exc, 2)
    except (DataError, ConfigMismatchError, evalx.DegenerateTargetError, OSError, ValueError) as exc:
        return _fail("data", exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
