"""Regression metrics, evaluation reports, and hidden-state export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphio import AlignmentError, EmbeddingRecord, save_embeddings
from .models import Checkpoint
from .training import Corpus

MAPE_GUARD = 1e-12


class DegenerateTargetError(ValueError):
    pass


@dataclass
class MetricReport:
    target: str
    mae: float
    r2: float
    mape: float
    rse: float
    n: int
    space: str = "log"
    mape_guarded: int = 0  # number of terms whose |y| fell below the guard

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def metrics(y: Sequence[float], yhat: Sequence[float], target: str = "area") -> MetricReport:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or y.size == 0:
        raise ValueError(f"metrics needs equal non-empty 1-d inputs, got {y.shape} and {yhat.shape}")
    err = y - yhat
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError("ground truth is constant; RSE/R2 undefined")
    rse = float(np.sum(err ** 2)) / ss_tot
    denom = np.abs(y)
    guarded = denom < MAPE_GUARD
    denom = np.where(guarded, MAPE_GUARD, denom)
    return MetricReport(
        target=target,
        mae=float(np.mean(np.abs(err))),
        r2=1.0 - rse,
        mape=float(np.mean(np.abs(err) / denom)),
        rse=rse,
        n=int(y.size),
        mape_guarded=int(guarded.sum()),
    )


@dataclass
class PerDesignReport:
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)

    @classmethod
    def build(cls, ids: Sequence[str], gt, pred) -> "PerDesignReport":
        rows = [(d, float(g), float(p), abs(float(g) - float(p))) for d, g, p in zip(ids, gt, pred)]
        return cls(sorted(rows))

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["design_id", "gt", "pred", "ae"])
            for d, g, p, ae in self.rows:
                w.writerow([d, repr(g), repr(p), repr(ae)])

    @classmethod
    def load(cls, path) -> "PerDesignReport":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            return cls([(r["design_id"], float(r["gt"]), float(r["pred"]), float(r["ae"])) for r in reader])


def evaluate(ckpt: Checkpoint, corpus: Corpus, part: str = "test",
             target: str | None = None) -> tuple[MetricReport, PerDesignReport]:
    """Eval-mode predictions, un-standardized back to log space, scored against log labels."""
    target = target or ckpt.meta.get("target", "area")
    ids = sorted(corpus.split.part(part))
    modality = ckpt.model.config.modality
    table = corpus.modality(modality)
    missing = [i for i in ids if i not in table or i not in corpus.labels]
    if missing:
        raise AlignmentError(f"missing {modality} input or label for: {missing[:10]}")
    pred_norm, _ = ckpt.model.predict([table[i] for i in ids])
    pred = ckpt.normalizer.invert(pred_norm)
    gt = corpus.targets(ids, target)
    return metrics(gt, pred, target), PerDesignReport.build(ids, gt, pred)


def export_hidden(ckpt: Checkpoint, corpus: Corpus, path, ids: Sequence[str] | None = None) -> list[str]:
    """Write last-hidden activations as pooled QDEM records (one 512-dim row per design)."""
    modality = ckpt.model.config.modality
    table = corpus.modality(modality)
    ids = sorted(table) if ids is None else sorted(ids)
    missing = [i for i in ids if i not in table]
    if missing:
        raise AlignmentError(f"missing {modality} input for: {missing[:10]}")
    _, z = ckpt.model.predict([table[i] for i in ids])
    save_embeddings(path, [EmbeddingRecord(d, z[k][None, :].astype(np.float32), pooled=True)
                           for k, d in enumerate(ids)])
    return ids


def save_report(path, report: MetricReport) -> None:
    Path(path).write_text(report.to_json() + "\n")
