"""Loss composition, the joint training loop and pretrain-then-finetune."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tensor, adam_update, clip_grad_norm, no_grad
from .autodiff import functional as F
from .model import SYNTAX_TERMS, TERMS, ModelConfig, ParserModel, Vocabularies

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("s_precision", "s_recall", "s_f1", "uas", "las", "pos", "attr_rho", "attr_f1")
LOG_COLUMNS = ("phase", "epoch", "lr", "loss") + TERMS + tuple(f"dev_{m}" for m in METRIC_COLUMNS)


@dataclass
class LossWeights:
    cls: float = 1.0
    span: float = 2.0
    edge: float = 1.0
    attr_mask: float = 1.0
    attr_value: float = 1.0
    pos: float = 1.0
    tree: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"loss weight {f.name} must be a finite non-negative number, got {value}")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def active(self, syntax_mode: str = "gcn") -> tuple[str, ...]:
        """Terms that enter the objective with a non-zero weight."""
        return tuple(t for t in TERMS if getattr(self, t) != 0
                     and (syntax_mode != "none" or t not in SYNTAX_TERMS))


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 2e-4
    finetune_lr: float | None = None  # defaults to lr / 4
    epochs: int = 30
    pretrain_epochs: int = 5
    seed: int = 0
    clip: float = 5.0
    eval_every: int = 1
    restarts: int = 5
    min_count: int = 1
    decode: str = "greedy"  # tree decoder for dev metrics
    target: dict[str, float] = field(default_factory=dict)  # stop once every dev metric reaches its target

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.finetune_lr is not None and not self.finetune_lr > 0:
            raise ValueError("finetune_lr must be positive")

    @property
    def effective_finetune_lr(self) -> float:
        return self.finetune_lr if self.finetune_lr is not None else self.lr / 4

    def as_dict(self):
        return asdict(self)


# -- losses ------------------------------------------------------------------------

def harmonic_composite(a, b):
    """``2ab / (a + b)``, defined as 0 when both are 0.  Works on floats and tensors."""
    total = a + b
    value = total.item() if isinstance(total, Tensor) else total
    if value == 0:
        return total * 0.0
    return 2.0 * a * (b / total)  # ratio first so tiny inputs do not underflow


def attribute_value_loss(pred: Tensor, gold, mask) -> Tensor:
    """Harmonic mean of masked MSE and a sign-agreement BCE on ``sigmoid(pred)``."""
    gold = np.asarray(gold, dtype=np.float64).reshape(pred.shape)
    mask = np.asarray(mask, dtype=np.float64).reshape(pred.shape)
    if mask.sum() == 0:
        return F.mse(pred, gold, mask)  # graph-connected zero
    mse = F.mse(pred, gold, mask)
    bce = F.binary_cross_entropy(pred, (gold > 0).astype(np.float64), mask)
    return harmonic_composite(mse, bce)


def total_loss(terms: dict[str, Tensor], weights: LossWeights, syntax_mode: str = "gcn") -> Tensor:
    """Weighted sum of the active terms; a NaN anywhere aborts naming the term."""
    for name, value in terms.items():
        if np.isnan(value.data).any():
            raise FloatingPointError(f"loss term {name!r} is NaN")
    total = Tensor(np.zeros(()))
    for name in weights.active(syntax_mode):
        if name in terms:
            total = total + terms[name] * getattr(weights, name)
    return total


# -- loop --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ParserModel
    history: list[dict]
    best_epoch: int
    best_score: float

    def log_csv(self) -> str:
        return format_log(self.history)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else (repr(row[k]) if isinstance(row[k], float) else row[k]))
                         for k in LOG_COLUMNS})
    return buf.getvalue()


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for init, shuffling, dropout and evaluation from one root seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    return {name: np.random.default_rng(s) for name, s in zip(("init", "shuffle", "dropout", "eval"), children)}


def build_model(model_config: ModelConfig, vocabs: Vocabularies, seed: int) -> ParserModel:
    return ParserModel(model_config, vocabs, seed_streams(seed)["init"])


def mean_loss(model: ParserModel, examples, weights: LossWeights) -> float:
    """Dropout-free average objective over ``examples``."""
    active = weights.active(model.config.syntax_mode)
    with no_grad():
        values = [total_loss(model.sentence_losses(ex, active), weights, model.config.syntax_mode).item()
                  for ex in examples]
    return float(np.mean(values)) if values else 0.0


def run_epochs(model: ParserModel, examples, weights: LossWeights, cfg: TrainConfig, lr: float,
               epochs: int, streams, dev_records=None, phase: str = "train", history=None,
               evaluate=True):
    """Core optimisation loop; returns ``(history, best_epoch, best_score, best_arrays)``."""
    from .evaluation import evaluate_model

    history = [] if history is None else history
    params = model.parameters()
    active = weights.active(model.config.syntax_mode)
    best_score, best_epoch, best_arrays = -math.inf, 0, None
    for epoch in range(1, epochs + 1):
        order = streams["shuffle"].permutation(len(examples))
        sums = dict.fromkeys(TERMS, 0.0)
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            for ex in batch:
                terms = model.sentence_losses(ex, active, streams["dropout"])
                loss = total_loss(terms, weights, model.config.syntax_mode)
                (loss * (1.0 / len(batch))).backward()
                loss_sum += loss.item()
                for t in TERMS:
                    sums[t] += terms[t].item()
            clip_grad_norm(params, cfg.clip)
            adam_update(params, lr)
        n = len(examples)
        row = {"phase": phase, "epoch": epoch, "lr": lr, "loss": loss_sum / n}
        row.update({t: sums[t] / n for t in TERMS})
        score = -row["loss"]
        if evaluate and dev_records and (epoch % cfg.eval_every == 0 or epoch == epochs):
            report = evaluate_model(model, dev_records, cfg.restarts, seed=cfg.seed, decode=cfg.decode)
            row.update({f"dev_{m}": report.get(m) for m in METRIC_COLUMNS})
            score = report["s_f1"]
        history.append(row)
        log.info("%s epoch %d loss %.4f score %.3f", phase, epoch, row["loss"], score)
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
        if cfg.target and all((row.get(f"dev_{k}") or -math.inf) >= v for k, v in cfg.target.items()):
            break
    return history, best_epoch, best_score, best_arrays


def train(train_records, config: TrainConfig, model_config: ModelConfig | None = None,
          weights: LossWeights | None = None, dev_records=None, model: ParserModel | None = None,
          vocabs: Vocabularies | None = None) -> TrainResult:
    """Train a parser and keep the parameters of the best epoch.

    The best epoch is chosen by dev S-F1 when ``dev_records`` is given and by
    training loss otherwise.
    """
    train_records = list(train_records)
    if not train_records:
        raise ValueError("training dataset is empty")
    weights = weights or LossWeights()
    streams = seed_streams(config.seed)
    if model is None:
        model_config = model_config or ModelConfig()
        vocabs = vocabs or Vocabularies.from_records(train_records, min_count=config.min_count)
        model = ParserModel(model_config, vocabs, streams["init"])
    examples = [model.prepare(r) for r in train_records]
    history, best_epoch, best_score, best = run_epochs(model, examples, weights, config, config.lr,
                                                       config.epochs, streams, dev_records)
    if best is not None:
        model.load_arrays(best)
    return TrainResult(model, history, best_epoch, best_score)


@dataclass
class FinetuneResult:
    model: ParserModel
    history: list[dict]
    initial_finetune_loss: float
    first_epoch_finetune_loss: float


def pretrain_finetune(pseudo_records, gold_records, config: TrainConfig, model_config: ModelConfig | None = None,
                      weights: LossWeights | None = None, dev_records=None) -> FinetuneResult:
    """Pretrain on pseudo-labelled graphs (no attribute terms), then finetune on gold."""
    pseudo_records, gold_records = list(pseudo_records), list(gold_records)
    if not pseudo_records or not gold_records:
        raise ValueError("both corpora must be non-empty")
    weights = weights or LossWeights()
    pre_weights = LossWeights(**{**weights.as_dict(), "attr_mask": 0.0, "attr_value": 0.0})
    streams = seed_streams(config.seed)
    vocabs = Vocabularies.from_records(pseudo_records, gold_records, min_count=config.min_count)
    model = ParserModel(model_config or ModelConfig(), vocabs, streams["init"])
    pseudo = [model.prepare(r) for r in pseudo_records]
    history, *_ = run_epochs(model, pseudo, pre_weights, config, config.lr, config.pretrain_epochs,
                             streams, phase="pretrain", evaluate=False)
    reset_optimizer(model)
    gold = [model.prepare(r) for r in gold_records]
    initial = mean_loss(model, gold, weights)
    log.info("initial finetune loss %.4f", initial)
    history.append({"phase": "finetune", "epoch": 0, "lr": config.effective_finetune_lr, "loss": initial})
    start = len(history)
    history, best_epoch, _, best = run_epochs(model, gold, weights, config, config.effective_finetune_lr,
                                              config.epochs, streams, dev_records, phase="finetune",
                                              history=history)
    first = history[start]["loss"] if len(history) > start else initial
    if best is not None:
        model.load_arrays(best)
    return FinetuneResult(model, history, initial, first)


def reset_optimizer(model: ParserModel) -> None:
    for p in model.parameters():
        p.m[...] = 0.0
        p.v[...] = 0.0
        p.step = 0
        p.grad = None
