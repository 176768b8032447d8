"""End-to-end spotting metrics under the None and Full lexicon protocols.

A prediction scores iff its polygon overlaps an unmatched ground truth at
IoU >= iou_match AND the transcriptions agree case-insensitively; under the
Full protocol predictions are first corrected to the nearest lexicon word
by edit distance.  Matching is greedy in confidence order, one-to-one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bezier import polygon_iou
from .errors import ConfigError
from .synth import Lexicon


@dataclass(frozen=True)
class LexiconMode:
    kind: str  # "none" | "full"
    lexicon: Lexicon | None = None

    def __post_init__(self):
        if self.kind not in ("none", "full"):
            raise ConfigError(f"lexicon mode must be 'none' or 'full', got {self.kind!r}")
        if self.kind == "full" and (self.lexicon is None or len(self.lexicon) == 0):
            raise ConfigError("full lexicon mode requires a non-empty lexicon")

    @classmethod
    def none(cls) -> "LexiconMode":
        return cls("none")

    @classmethod
    def full(cls, lexicon: Lexicon) -> "LexiconMode":
        return cls("full", lexicon)


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f_measure: float
    n_matched: int
    n_pred: int
    n_gt: int

    def to_dict(self, mode: str) -> dict:
        return {
            "mode": mode,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "n_matched": self.n_matched,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
        }


@dataclass(frozen=True)
class Prediction:
    polygon: np.ndarray
    text: str
    confidence: float


@dataclass(frozen=True)
class GroundTruth:
    polygon: np.ndarray
    text: str


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lexicon_correct(pred: str, lexicon: Lexicon) -> str:
    """Nearest lexicon word by edit distance; ties go lexicographically."""
    pred = pred.lower()
    best_word, best_dist = None, None
    for word in sorted(lexicon):
        d = edit_distance(pred, word)
        if best_dist is None or d < best_dist:
            best_word, best_dist = word, d
    return best_word


def evaluate_end_to_end(predictions: list[list[Prediction]], gts: list[list[GroundTruth]],
                        mode: LexiconMode, iou_match: float = 0.5) -> EvalResult:
    """Accumulate greedy one-to-one matches over images into P/R/F."""
    if len(predictions) != len(gts):
        raise ConfigError("predictions and ground truths must cover the same images")
    n_matched = n_pred = n_gt = 0
    for preds, truths in zip(predictions, gts):
        n_pred += len(preds)
        n_gt += len(truths)
        order = sorted(
            range(len(preds)),
            key=lambda i: (-preds[i].confidence, preds[i].text,
                           tuple(np.asarray(preds[i].polygon).ravel())),
        )
        taken = [False] * len(truths)
        for i in order:
            text = preds[i].text
            if mode.kind == "full":
                text = lexicon_correct(text, mode.lexicon)
            best_j, best_iou = -1, 0.0
            for j, gt in enumerate(truths):
                if taken[j] or text.lower() != gt.text.lower():
                    continue
                iou = polygon_iou(np.asarray(preds[i].polygon), gt.polygon)
                if iou >= iou_match and iou > best_iou:
                    best_j, best_iou = j, iou
            if best_j >= 0:
                taken[best_j] = True
                n_matched += 1
    precision = n_matched / n_pred if n_pred else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalResult(precision=precision, recall=recall, f_measure=f,
                      n_matched=n_matched, n_pred=n_pred, n_gt=n_gt)
