"""Losses, learning-rate and distillation-weight schedules, and training loops."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor
from .graphio import (
    AlignmentError, AstGraph, DatasetSplit, EmbeddingRecord, LabelNormalizer, LabelRecord, LutGraph,
    load_ast_graphs, load_embeddings, load_labels, load_lut_graphs, load_split,
)
from .models import Checkpoint, Model, ModelConfig, build_model

log = logging.getLogger(__name__)

DEFAULT_ALPHA_SCHEDULE: tuple[tuple[int, float], ...] = ((0, 0.5), (150, 0.75), (250, 1.0))


# ------------------------------------------------------------------ losses


def loss_sl(pred: Tensor, target) -> Tensor:
    target = dc.as_tensor(target)
    if pred.shape != target.shape:
        raise dc.DimensionError(f"loss_sl: prediction {pred.shape} vs target {target.shape}")
    return dc.mse(pred, target)


def loss_kd(z_student: Tensor, z_teacher) -> Tensor:
    """Squared L2 distance per example (summed over features), averaged over the batch."""
    zt = z_teacher.detach() if isinstance(z_teacher, Tensor) else Tensor(z_teacher)
    if z_student.shape != zt.shape:
        raise dc.DimensionError(f"loss_kd: student z {z_student.shape} vs teacher z {zt.shape}")
    return dc.sq_dist_mean(z_student, zt)


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def loss_total(sl, kd, alpha: float):
    alpha = _check_alpha(alpha)
    if isinstance(sl, Tensor) or isinstance(kd, Tensor):
        if alpha == 1.0:
            return dc.as_tensor(sl)
        if alpha == 0.0:
            return dc.as_tensor(kd)
        return dc.add(dc.scale(dc.as_tensor(sl), alpha), dc.scale(dc.as_tensor(kd), 1.0 - alpha))
    return alpha * sl + (1.0 - alpha) * kd


# --------------------------------------------------------------- schedules


@dataclass(frozen=True)
class LossWeights:
    schedule: tuple[tuple[int, float], ...] = DEFAULT_ALPHA_SCHEDULE

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("alpha schedule is empty")
        thresholds = [t for t, _ in self.schedule]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("alpha schedule thresholds must be strictly increasing")
        for _, a in self.schedule:
            _check_alpha(a)

    def at(self, epoch: int) -> float:
        return alpha_at(epoch, self.schedule)

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """``"0:0.5,150:0.75,250:1"`` or a single constant ``"1"``."""
        if ":" not in text:
            return cls(((0, float(text)),))
        pairs = []
        for part in text.split(","):
            e, a = part.split(":")
            pairs.append((int(e), float(a)))
        return cls(tuple(pairs))


def alpha_at(epoch: int, schedule: Sequence[tuple[int, float]] = DEFAULT_ALPHA_SCHEDULE) -> float:
    """Right-continuous step function: the value of the last threshold <= epoch."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    value = schedule[0][1]
    for threshold, a in schedule:
        if epoch >= threshold:
            value = a
        else:
            break
    return float(value)


@dataclass
class CosineScheduler:
    lr_max: float = 1e-3
    lr_min: float = 0.0
    period: int = 50

    def lr(self, epoch: int) -> float:
        t = epoch % self.period
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1 + math.cos(math.pi * t / self.period))


def cosine_lr(epoch: int, lr_max: float = 1e-3, lr_min: float = 0.0, period: int = 50) -> float:
    return CosineScheduler(lr_max, lr_min, period).lr(epoch)


@dataclass
class PlateauScheduler:
    lr: float = 1e-3
    patience: int = 30
    factor: float = 0.5
    best_val: float = math.inf
    epochs_since_best: int = 0

    def step(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise ValueError(f"validation loss is not finite: {val_loss}")
        if val_loss < self.best_val:
            self.best_val = val_loss
            self.epochs_since_best = 0
        else:
            self.epochs_since_best += 1
            if self.epochs_since_best > self.patience:
                self.lr *= self.factor
                self.epochs_since_best = 0
        return self.lr


def plateau_step(scheduler: PlateauScheduler, val_loss: float) -> float:
    return scheduler.step(val_loss)


# -------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.data -= lr * v
            else:
                p.data -= lr * p.grad


class Adam:
    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params: Sequence[Tensor], momentum: float = 0.9):
    if name == "sgd":
        return SGD(params)
    if name == "momentum":
        return SGD(params, momentum=momentum)
    if name == "adam":
        return Adam(params)
    raise ValueError(f"unknown optimizer {name!r}")


# ------------------------------------------------------------------ config


@dataclass
class TrainConfig:
    target: str = "area"
    batch_size: int = 1024
    max_epochs: int = 300
    seed: int = 0
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    lr: float = 1e-3
    scheduler: str = "auto"  # auto | plateau | cosine | constant
    patience: int = 30
    factor: float = 0.5
    cosine_period: int = 50
    alpha_schedule: tuple[tuple[int, float], ...] = DEFAULT_ALPHA_SCHEDULE
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    log_path: str | None = None

    def __post_init__(self):
        if self.target not in ("area", "delay"):
            raise ValueError(f"target must be 'area' or 'delay', got {self.target!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        self.alpha_schedule = tuple((int(e), float(a)) for e, a in self.alpha_schedule)
        LossWeights(self.alpha_schedule)

    def to_json(self) -> dict:
        d = asdict(self)
        d["alpha_schedule"] = [list(p) for p in self.alpha_schedule]
        d.pop("log_path")
        return d


# ----------------------------------------------------------------- dataset


@dataclass
class Corpus:
    labels: dict[str, LabelRecord]
    split: DatasetSplit
    graphs: dict[str, LutGraph] = field(default_factory=dict)
    embeddings: dict[str, EmbeddingRecord] = field(default_factory=dict)
    asts: dict[str, AstGraph] = field(default_factory=dict)

    def modality(self, name: str) -> dict:
        return {"lut": self.graphs, "embedding": self.embeddings, "ast": self.asts}[name]

    def targets(self, ids: Sequence[str], target: str) -> np.ndarray:
        missing = [i for i in ids if i not in self.labels]
        if missing:
            raise AlignmentError(f"no label for {len(missing)} design(s): {missing[:10]}")
        return np.array([self.labels[i].log_target(target) for i in ids])

    def require(self, modality: str, ids: Sequence[str]) -> list:
        table = self.modality(modality)
        missing = [i for i in ids if i not in table]
        if missing:
            raise AlignmentError(f"no {modality} input for {len(missing)} design(s): {missing[:10]}")
        return [table[i] for i in ids]


def load_corpus(data_dir, need: Sequence[str] = ("lut", "embedding", "ast")) -> Corpus:
    d = Path(data_dir)
    corpus = Corpus(load_labels(d / "labels.csv"), load_split(d / "split.json"))
    if "lut" in need and (d / "graphs.jsonl").exists():
        corpus.graphs = {g.design_id: g for g in load_lut_graphs(d / "graphs.jsonl")}
    if "embedding" in need and (d / "embeddings.qdem").exists():
        corpus.embeddings = load_embeddings(d / "embeddings.qdem")
    if "ast" in need:
        if (d / "ast.jsonl").exists():
            corpus.asts = {g.design_id: g for g in load_ast_graphs(d / "ast.jsonl")}
        elif (d / "verilog").is_dir():
            from .verilog_ast import parse, to_ast_graph

            for path in sorted((d / "verilog").glob("*.v")):
                corpus.asts[path.stem] = to_ast_graph(parse(path.read_text()), path.stem)
    return corpus


def minibatches(ids: Sequence[str], batch_size: int, rng: np.random.Generator) -> list[list[str]]:
    """Shuffled batches; the last partial batch is kept, a trailing singleton is merged back."""
    order = [ids[i] for i in rng.permutation(len(ids))]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


# ------------------------------------------------------------------ loops


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    best_val: float


def _eval_sl(model: Model, items: list, y_norm: np.ndarray) -> float:
    pred, _ = model.predict(items)
    return float(np.mean((pred - y_norm) ** 2))


def fit(model: Model, corpus: Corpus, config: TrainConfig, *, teacher: Model | None = None,
        kd: bool = False, scheduler: str = "plateau",
        alpha: Callable[[int], float] | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Generic loop.  With ``kd`` the frozen ``teacher`` supplies z targets."""
    split = corpus.split
    modality = model.config.modality
    train_items = corpus.require(modality, split.train)
    val_items = corpus.require(modality, split.val)
    y_train = corpus.targets(split.train, config.target)
    y_val = corpus.targets(split.val, config.target)
    norm = LabelNormalizer.fit(y_train)
    yt, yv = norm.apply(y_train), norm.apply(y_val)

    z_teacher = None
    if kd:
        if teacher is None:
            raise ValueError("knowledge distillation needs a teacher")
        if not teacher.frozen:
            raise ValueError("teacher must be frozen before distillation")
        t_items = corpus.require(teacher.config.modality, split.train)
        _, z_teacher = teacher.predict(t_items)
        if z_teacher.shape[1] != model.config.hidden:
            raise dc.DimensionError(f"teacher z has {z_teacher.shape[1]} dims, student {model.config.hidden}")
    alpha = alpha or (lambda e: 1.0)

    index = {d: i for i, d in enumerate(split.train)}
    params = model.params.tensors()
    opt = make_optimizer(config.optimizer, params, config.momentum)
    plateau = PlateauScheduler(config.lr, config.patience, config.factor)
    cosine = CosineScheduler(config.lr, 0.0, config.cosine_period)
    rng = np.random.default_rng(config.seed)

    history: list[dict] = []
    best_val, best_epoch = math.inf, -1
    best_state = {k: v.copy() for k, v in model.state().items()}
    log_fh = open(config.log_path, "w") if config.log_path else None
    try:
        for epoch in range(config.max_epochs):
            if scheduler == "cosine":
                lr = cosine.lr(epoch)
            elif scheduler == "plateau":
                lr = plateau.lr
            else:
                lr = config.lr
            a = alpha(epoch) if kd else 1.0
            sl_sum = kd_sum = 0.0
            batches = minibatches(split.train, config.batch_size, rng)
            for ids in batches:
                rows = np.array([index[d] for d in ids])
                batch = model.prepare([train_items[i] for i in rows])
                for p in params:
                    p.zero_grad()
                with Tape() as tape:
                    pred, z = model.forward(batch, mode="train")
                    sl = loss_sl(pred, yt[rows])
                    if kd:
                        kdl = loss_kd(z, z_teacher[rows])
                        loss = loss_total(sl, kdl, a)
                        kd_sum += kdl.item() * len(ids)
                    else:
                        loss = sl
                dc.backward(loss, tape)
                opt.step(lr)
                sl_sum += sl.item() * len(ids)
            n = len(split.train)
            val = _eval_sl(model, val_items, yv)
            rec = {"epoch": epoch, "lr": lr, "alpha": a, "train_sl": sl_sum / n,
                   "train_kd": kd_sum / n if kd else None, "val_metric": val}
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if on_epoch:
                on_epoch(rec)
            if val < best_val:
                best_val, best_epoch = val, epoch
                best_state = {k: v.copy() for k, v in model.state().items()}
            if scheduler == "plateau":
                plateau.step(val)
    finally:
        if log_fh:
            log_fh.close()
    model.load_state(best_state)
    meta = {"target": config.target, "train": config.to_json(), "best_epoch": best_epoch,
            "best_val": best_val, "kd": kd, "scheduler": scheduler}
    return TrainResult(Checkpoint(model, norm, meta), history, best_epoch, best_val)


def _model_config(kind: str, config: TrainConfig, **extra) -> ModelConfig:
    kw = {"seed": config.seed, **extra, **config.model}
    return ModelConfig(kind=kind, **kw)


def _pick(config: TrainConfig, default: str) -> str:
    return default if config.scheduler == "auto" else config.scheduler


def pretrain_teacher(corpus: Corpus, config: TrainConfig, **kw) -> TrainResult:
    ids = corpus.split.train + corpus.split.val
    corpus.targets(ids, config.target)
    corpus.require("lut", ids)
    model = build_model(_model_config("teacher", config))
    return fit(model, corpus, config, scheduler=_pick(config, "plateau"), **kw)


def _student_dim(corpus: Corpus) -> int:
    rec = next(iter(corpus.embeddings.values()), None)
    if rec is None:
        raise AlignmentError("corpus has no embeddings")
    return rec.dim


def train_student_kd(corpus: Corpus, teacher_ckpt: Checkpoint, config: TrainConfig, **kw) -> TrainResult:
    teacher = teacher_ckpt.model
    teacher.freeze()
    ids = corpus.split.train + corpus.split.val
    corpus.require("embedding", ids)
    corpus.require("lut", corpus.split.train)
    model = build_model(_model_config("student", config, dim_embed=_student_dim(corpus)))
    weights = LossWeights(config.alpha_schedule)
    return fit(model, corpus, config, teacher=teacher, kd=True,
               scheduler=_pick(config, "cosine"), alpha=weights.at, **kw)


BASELINES = ("ast_gnn", "ast_gnn_kd", "llm_decoder", "llm_decoder_kd")


def train_baseline(variant: str, corpus: Corpus, config: TrainConfig,
                   teacher_ckpt: Checkpoint | None = None, **kw) -> TrainResult:
    if variant not in BASELINES:
        raise ValueError(f"unknown baseline {variant!r}; choose from {BASELINES}")
    if variant == "llm_decoder_kd":
        if teacher_ckpt is None:
            raise ValueError(f"{variant} needs a teacher checkpoint")
        return train_student_kd(corpus, teacher_ckpt, config, **kw)
    if variant == "llm_decoder":
        model = build_model(_model_config("student", config, dim_embed=_student_dim(corpus)))
        return fit(model, corpus, config, scheduler=_pick(config, "plateau"), **kw)
    model = build_model(_model_config("ast_gnn", config))
    if variant == "ast_gnn":
        return fit(model, corpus, config, scheduler=_pick(config, "plateau"), **kw)
    if teacher_ckpt is None:
        raise ValueError(f"{variant} needs a teacher checkpoint")
    teacher = teacher_ckpt.model
    teacher.freeze()
    weights = LossWeights(config.alpha_schedule)
    return fit(model, corpus, config, teacher=teacher, kd=True,
               scheduler=_pick(config, "cosine"), alpha=weights.at, **kw)
