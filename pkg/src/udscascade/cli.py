"""Command-line entry point: ``uds-cascade {train,parse,eval,augment,gradcheck,selfcheck}``.

Every subcommand reads an optional JSON run configuration and lets flags
override it.  Exit codes: 0 success, 2 validation failure, 1 other error,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .augmentation import RuleConfig, TrigramLM, domain_score, filter_invalid, pseudo_label
from .autodiff.checkpoint import CheckpointError
from .evaluation import attribute_metrics, corpus_s_score, evaluate_model, syntax_metrics
from .graph import (AnnotatedSentence, UDSError, ValidationError, dumps_graphs, load_graphs,
                    parse_conllu)
from .injection import MODES
from .model import ModelConfig, ParserModel
from .training import LossWeights, TrainConfig, format_log, pretrain_finetune, train

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_USAGE = 0, 1, 2, 64
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
GRAD_TOLERANCE = 1e-4

log = logging.getLogger("udscascade")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- run configuration ---------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a subcommand needs, merged from the config file and flags."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    rules: RuleConfig = field(default_factory=RuleConfig)
    data: dict = field(default_factory=dict)
    workers: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def seed(self) -> int:
        return self.train.seed

    @classmethod
    def load(cls, path: str | None, args: argparse.Namespace) -> "RunConfig":
        raw, base = {}, Path.cwd()
        if path:
            p = Path(path)
            if not p.is_file():
                raise ValidationError(f"config file not found: {path}")
            try:
                raw = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ValidationError(f"{path}: top level must be an object")
            base = p.resolve().parent
        unknown = set(raw) - {"model", "train", "weights", "rules", "data", "workers"}
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        model = dict(raw.get("model", {}))
        train_cfg = dict(raw.get("train", {}))
        # flags win over the file
        if getattr(args, "encoder", None) is not None:
            model["encoder"] = args.encoder
        if getattr(args, "syntax_mode", None) is not None:
            model["syntax_mode"] = args.syntax_mode
        if getattr(args, "span_refine", False):
            model["span_refine"] = True
        if getattr(args, "seed", None) is not None:
            train_cfg["seed"] = args.seed
        if getattr(args, "restarts", None) is not None:
            train_cfg["restarts"] = args.restarts
        if getattr(args, "epochs", None) is not None:
            train_cfg["epochs"] = args.epochs
        workers = args.workers if getattr(args, "workers", None) is not None else raw.get("workers", 1)
        try:
            cfg = cls(ModelConfig(**model), TrainConfig(**train_cfg), LossWeights(**raw.get("weights", {})),
                      RuleConfig(**raw.get("rules", {})), dict(raw.get("data", {})), int(workers), base)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid configuration: {exc}") from exc
        if cfg.workers < 1:
            raise ValidationError("workers must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": {f.name: getattr(self.train, f.name)
                                                        for f in fields(self.train)},
                "weights": self.weights.as_dict(), "rules": self.rules.to_dict(), "data": self.data,
                "workers": self.workers}

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def dataset(self, key: str, required: bool = False):
        """Records for ``data[key]``: a Graph JSONL path or a ``{"synthetic": {...}}`` spec."""
        spec = self.data.get(key)
        if spec is None:
            if required:
                raise ValidationError(f"no '{key}' dataset given (config data.{key} or --{key})")
            return None
        if isinstance(spec, dict):
            if set(spec) != {"synthetic"}:
                raise ValidationError(f"data.{key}: expected a path or {{'synthetic': {{...}}}}")
            from .synthetic import synthetic_records

            opts = dict(spec["synthetic"])
            return synthetic_records(int(opts.pop("n")), int(opts.pop("seed", 0)), self.rules, **opts)
        path = self.resolve(spec)
        if not path.is_file():
            raise ValidationError(f"data.{key}: file not found: {path}")
        return load_graphs(path)


# -- input helpers -----------------------------------------------------------------------

def read_sentences(path: str, fmt: str = "auto") -> list:
    """CoNLL-U sentences or whitespace-tokenized lines (lists of forms)."""
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if fmt == "auto":
        fmt = "conllu" if p.suffix.lower() in (".conllu", ".conll") else "text"
    if fmt == "conllu":
        return parse_conllu(text)
    return [line.split() for line in text.splitlines() if line.strip()]


def _forms(item) -> list[str]:
    return item.forms if isinstance(item, AnnotatedSentence) else list(item)


def _flat_sentence(forms: list[str]) -> AnnotatedSentence:
    """Placeholder syntax for plain-text input when the model predicts none."""
    heads = [1] * len(forms)
    return AnnotatedSentence.build(forms, ["X"] * len(forms), heads,
                                   ["root"] + ["dep"] * (len(forms) - 1))


def _output_sentence(item, out, model: ParserModel) -> AnnotatedSentence:
    if out.tree is not None and out.tree.valid:
        return AnnotatedSentence.build(_forms(item), out.pos, out.tree.heads,
                                       [model.vocabs.deprels[i] for i in out.tree.labels])
    if isinstance(item, AnnotatedSentence):
        return item
    return _flat_sentence(_forms(item))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_model(path: str) -> ParserModel:
    if not path or not Path(path).is_file():
        raise ValidationError(f"model checkpoint not found: {path}")
    return ParserModel.load(path)


# -- subcommands --------------------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> int:
    for key in ("train", "dev", "pseudo"):
        if getattr(args, key, None):
            cfg.data[key] = str(Path(getattr(args, key)).resolve())
    train_records = cfg.dataset("train", required=True)
    dev_records = cfg.dataset("dev")
    pseudo_records = cfg.dataset("pseudo")
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    if pseudo_records:
        result = pretrain_finetune(pseudo_records, train_records, cfg.train, cfg.model, cfg.weights, dev_records)
        best = {}
    else:
        result = train(train_records, cfg.train, cfg.model, cfg.weights, dev_records)
        best = {"best_epoch": result.best_epoch, "best_score": result.best_score}
    run = cfg.to_dict()
    result.model.save(out / "model.ckpt", extra={"run": run, **best})
    (out / "metrics.csv").write_text(format_log(result.history), encoding="utf-8")
    (out / "config.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "log": str(out / "metrics.csv"), **best}))
    return EXIT_OK


def cmd_parse(args, cfg: RunConfig) -> int:
    from .evaluation import _parse_job, parallel_map

    model = _load_model(args.model)
    items = read_sentences(args.input, args.format)
    outputs = parallel_map(_parse_job, [(model, _forms(s), args.decode) for s in items], cfg.workers)
    records = [(_output_sentence(item, o, model), o.graph, o.attrs) for item, o in zip(items, outputs)]
    problems = [o.problems for o in outputs]
    _emit(dumps_graphs(records, model.vocabs.node_attrs, model.vocabs.edge_attrs, problems), args.out)
    log.info("parsed %d sentences, %d degenerate, %d flagged invalid", len(records),
             sum(o.degenerate for o in outputs), sum(bool(p) for p in problems))
    return EXIT_OK


def compare_attributes(pred_records, gold_records) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``(pred, gold)`` per attribute over gold-annotated entries the prediction also covers."""
    pred, gold = {}, {}
    for (_, _, pa), (_, _, ga) in zip(pred_records, gold_records):
        for gv, gm, pv in ((ga.node_values, ga.node_mask, pa.node_values),
                           (ga.edge_values, ga.edge_mask, pa.edge_values)):
            for key, names in gm.items():
                for name, m in names.items():
                    if m and name in pv.get(key, {}):
                        pred.setdefault(name, []).append(pv[key][name])
                        gold.setdefault(name, []).append(gv[key][name])
    return {k: (np.array(pred[k]), np.array(gold[k])) for k in pred}


def evaluate_files(pred_records, gold_records, restarts: int, seed: int, workers: int) -> dict:
    if len(pred_records) != len(gold_records):
        raise ValidationError(f"{len(pred_records)} predicted graphs for {len(gold_records)} gold graphs")
    for k, (p, g) in enumerate(zip(pred_records, gold_records)):
        if p[0].forms != g[0].forms:
            raise ValidationError(f"sentence {k}: predicted and gold tokens differ")
    preds = [(r[0], r[1]) for r in pred_records]
    golds = [(r[0], r[1]) for r in gold_records]
    p, r, f1, _ = corpus_s_score(preds, golds, restarts, seed, workers)
    report = {"n_sentences": len(gold_records), "s_precision": p, "s_recall": r, "s_f1": f1}
    report.update(syntax_metrics([(list(s.heads), list(s.deprels), s.pos) for s, _, _ in pred_records],
                                 [(list(s.heads), list(s.deprels), s.pos) for s, _, _ in gold_records]))
    attr = attribute_metrics(compare_attributes(pred_records, gold_records))
    report.update({"attr_rho": attr.rho, "attr_f1": attr.f1, "attributes": attr.table,
                   "attributes_skipped": attr.skipped})
    return report


def cmd_eval(args, cfg: RunConfig) -> int:
    if not args.gold:
        raise ValidationError("--gold is required")
    gold = load_graphs(_existing(args.gold))
    if args.pred:
        report = evaluate_files(load_graphs(_existing(args.pred), allow_flagged=True), gold, cfg.train.restarts, cfg.seed,
                                cfg.workers)
    elif args.model:
        validation = load_graphs(_existing(args.validation)) if args.validation else None
        report = evaluate_model(_load_model(args.model), gold, cfg.train.restarts, cfg.seed, cfg.workers,
                                validation, args.decode)
    else:
        raise ValidationError("eval needs either --pred or --model")
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise ValidationError(f"file not found: {path}")
    return path


def cmd_augment(args, cfg: RunConfig) -> int:
    model = _load_model(args.model)
    pool = [_forms(s) for s in read_sentences(args.input, args.format)]
    n_input = len(pool)
    if args.in_domain:
        if args.select is None:
            raise ValidationError("--in-domain needs --select N")
        in_lm = TrigramLM([_forms(s) for s in read_sentences(args.in_domain, args.format)])
        general = TrigramLM(pool)
        order = sorted(range(len(pool)), key=lambda i: (-domain_score(pool[i], in_lm, general), i))
        pool = [pool[i] for i in order[:args.select]]
    records, skipped = pseudo_label(pool, model, cfg.rules, args.decode, cfg.workers)
    kept, report = filter_invalid(records, args.max_len)
    _emit(dumps_graphs(kept, (), ()), args.out)
    summary = {"input": n_input, "selected": len(pool), "parse_failures": skipped, **report.as_dict()}
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(str(args.out) + ".report.json").write_text(text, encoding="utf-8")
    sys.stderr.write(text)
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .checks import run_gradient_suite

    results = run_gradient_suite(cfg.seed, args.only or None)
    if args.only and set(args.only) - set(results):
        raise ValidationError(f"unknown checks: {sorted(set(args.only) - set(results))}")
    width = max(len(k) for k in results)
    for name, err in results.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err <= GRAD_TOLERANCE else 'FAIL'}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    return EXIT_OK if worst <= GRAD_TOLERANCE else EXIT_INVALID


def cmd_selfcheck(args, cfg: RunConfig) -> int:
    from .checks import run_selfcheck

    results = run_selfcheck(cfg.seed, args.scale)
    width = max(len(k) for k in results)
    for name, (ok, detail) in results.items():
        print(f"{name:<{width}}  {'ok' if ok else 'FAIL'}  {detail}")
    return EXIT_OK if all(ok for ok, _ in results.values()) else EXIT_INVALID


COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval, "augment": cmd_augment,
            "gradcheck": cmd_gradcheck, "selfcheck": cmd_selfcheck}


# -- argument parsing ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = _Parser(add_help=False, formatter_class=fmt)
    common.add_argument("--config", default=None, help="JSON run configuration; flags override its values")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides train.seed, default 0)")
    common.add_argument("--encoder", choices=("bilstm", "transformer"), default=None,
                        help="sentence encoder (overrides model.encoder, default bilstm)")
    common.add_argument("--syntax-mode", choices=MODES, default=None,
                        help="how syntax is used (overrides model.syntax_mode, default gcn)")
    common.add_argument("--span-refine", action="store_true", help="attend over span members for node states")
    common.add_argument("--restarts", type=int, default=None,
                        help="S-score hill-climbing restarts (overrides train.restarts, default 5)")
    common.add_argument("--workers", type=int, default=None,
                        help="processes for parse/eval/augment; training always uses one (default 1)")
    common.add_argument("--out", default=None, help="output file, or output directory for train")

    parser = _Parser(prog="uds-cascade", formatter_class=fmt,
                     description="Cascade semantic graph parser with syntax injection.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a parser")
    p.add_argument("--train", default=None, help="training Graph JSONL (overrides data.train)")
    p.add_argument("--dev", default=None, help="development Graph JSONL (overrides data.dev)")
    p.add_argument("--pseudo", default=None, help="pseudo-labelled Graph JSONL to pretrain on (data.pseudo)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (overrides train.epochs)")

    for name, text in (("parse", "parse CoNLL-U or plain text into Graph JSONL"),
                       ("augment", "pseudo-label raw sentences with a syntax model")):
        p = sub.add_parser(name, parents=[common], formatter_class=fmt, help=text)
        p.add_argument("--model", required=True, help="model checkpoint")
        p.add_argument("--input", required=True, help="CoNLL-U file or one whitespace-tokenized sentence per line")
        p.add_argument("--format", choices=("auto", "conllu", "text"), default="auto",
                       help="input format; auto picks conllu for .conllu/.conll files")
        p.add_argument("--decode", choices=("mst", "greedy"), default="mst", help="tree decoder")
        if name == "augment":
            p.add_argument("--max-len", type=int, default=100, help="drop sentences longer than this")
            p.add_argument("--in-domain", default=None, help="in-domain text for cross-entropy selection")
            p.add_argument("--select", type=int, default=None, help="keep the N most in-domain sentences")

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="score graphs against gold")
    p.add_argument("--gold", default=None, help="gold Graph JSONL")
    p.add_argument("--pred", default=None, help="predicted Graph JSONL (compare files)")
    p.add_argument("--model", default=None, help="checkpoint to parse the gold sentences with")
    p.add_argument("--validation", default=None, help="Graph JSONL for tuning attribute thresholds (--model)")
    p.add_argument("--decode", choices=("mst", "greedy"), default="greedy", help="tree decoder (--model)")

    p = sub.add_parser("gradcheck", parents=[common], formatter_class=fmt,
                       help="finite-difference check of every differentiable component")
    p.add_argument("--only", action="append", default=None, help="run only this named check (repeatable)")

    p = sub.add_parser("selfcheck", parents=[common], formatter_class=fmt, help="run the invariant suite")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on the number of trials")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("UDS_CASCADE_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ValidationError(f"UDS_CASCADE_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _configure_logging()
        cfg = RunConfig.load(args.config, args)
        return COMMANDS[args.command](args, cfg)
    except (UDSError, CheckpointError) as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
