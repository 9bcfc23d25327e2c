"""Detection metrics (F1, D-Acc, AP, AUC, confusion) and threshold calibration."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import InvalidInput
from ..sentinel import DetectionMetrics, GateThresholds, VerdictClass, attack_score, classify

CLASSES = (VerdictClass.CLEAN, VerdictClass.GLOBAL, VerdictClass.LOCAL)


@dataclass(frozen=True)
class EvalRecord:
    id: str
    truth: VerdictClass
    predicted: VerdictClass
    attack_score: float

    def __post_init__(self):
        if not math.isfinite(self.attack_score):
            raise InvalidInput(f"record {self.id}: attack score must be finite")


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = truth, cols = predicted, order CLASSES
    f1_binary: float
    d_acc: float
    ap: float
    auc: float
    three_way_accuracy: float
    precision: float
    recall: float
    ranking_defined: bool = True
    counts: dict = field(default_factory=dict)

    def summary_lines(self) -> list[str]:
        def fmt(v):
            return "undefined" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"

        lines = [
            f"f1_binary,{fmt(self.f1_binary)}",
            f"d_acc,{fmt(self.d_acc)}",
            f"ap,{fmt(self.ap)}",
            f"auc,{fmt(self.auc)}",
            f"three_way_accuracy,{fmt(self.three_way_accuracy)}",
            f"precision,{fmt(self.precision)}",
            f"recall,{fmt(self.recall)}",
        ]
        names = [c.value for c in CLASSES]
        lines.append("confusion(truth\\pred)," + ",".join(names))
        for name, row in zip(names, self.confusion):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return lines


def confusion_matrix(truth: Sequence[VerdictClass], predicted: Sequence[VerdictClass]) -> np.ndarray:
    idx = {c: i for i, c in enumerate(CLASSES)}
    cm = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[idx[t], idx[p]] += 1
    return cm


def binary_counts(truth: Sequence[bool], predicted: Sequence[bool]) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` for boolean labels."""
    t = np.asarray(truth, dtype=bool)
    p = np.asarray(predicted, dtype=bool)
    return (int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # average 1-based ranks over runs of tied scores
    start = 0
    for end in range(1, len(s) + 1):
        if end == len(s) or sorted_s[end] != sorted_s[start]:
            ranks[order[start:end]] = 0.5 * (start + 1 + end)
            start = end
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def average_precision(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Step-wise area under precision-recall: sum of (R_k - R_{k-1}) P_k over distinct thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return math.nan
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # keep the last index of each run of equal scores (threshold >= score)
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def evaluate(records: Sequence[EvalRecord]) -> EvalReport:
    """Binary (attack vs clean) and three-way metrics for a batch of records."""
    records = list(records)
    if not records:
        raise InvalidInput("evaluate needs at least one record")
    truth = [r.truth for r in records]
    pred = [r.predicted for r in records]
    t_bin = [t.is_attack for t in truth]
    p_bin = [p.is_attack for p in pred]
    tp, fp, fn, tn = binary_counts(t_bin, p_bin)
    n = len(records)
    cm = confusion_matrix(truth, pred)
    scores = [r.attack_score for r in records]
    defined = 0 < sum(t_bin) < n
    return EvalReport(
        confusion=cm,
        f1_binary=f1_from_counts(tp, fp, fn),
        d_acc=(tp + tn) / n,
        ap=average_precision(scores, t_bin) if defined else math.nan,
        auc=roc_auc(scores, t_bin) if defined else math.nan,
        three_way_accuracy=float(np.trace(cm) / n),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        ranking_defined=defined,
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    )


# -- calibration -------------------------------------------------------------

@dataclass(frozen=True)
class LabeledMetrics:
    id: str
    truth: VerdictClass
    metrics: DetectionMetrics


def default_grid(samples: Sequence[LabeledMetrics], n_s: int = 60, n_cc: int = 99) -> dict[str, np.ndarray]:
    """Log-spaced magnitude thresholds spanning the data, linear concentration thresholds."""
    m = np.array([s.metrics.m_anom for s in samples])
    pos = m[m > 0]
    lo = pos.min() if pos.size else 1e-9
    hi = max(m.max(), lo * 10)
    cc = np.round(np.linspace(0.01, 0.99, n_cc), 10)
    return {"t_s": np.geomspace(lo / 2, hi * 2, n_s), "t_cc1": cc, "t_cc2": cc}


def _median_pick(items: list) -> object:
    return items[(len(items) - 1) // 2]


def calibrate(samples: Iterable[LabeledMetrics], grid: Mapping[str, Sequence[float]] | None = None,
              base: GateThresholds | None = None) -> GateThresholds:
    """Exhaustive search over ``(t_s, t_cc1, t_cc2)`` for the best binary F1.

    Ties go to higher three-way accuracy, then smaller ``t_s``. Candidates
    still tied are the plateau of equally good concentration thresholds; the
    median ``t_cc2`` (then median ``t_cc1``) of that plateau is returned,
    which keeps the chosen cut away from both neighbouring classes.
    """
    samples = sorted(samples, key=lambda s: s.id)
    if not samples:
        raise InvalidInput("calibration needs labelled samples")
    if {s.truth for s in samples} != set(CLASSES):
        raise InvalidInput("calibration samples must contain all three classes")
    base = base or GateThresholds()
    grid = dict(grid) if grid is not None else default_grid(samples)
    axes = [sorted({float(v) for v in grid.get(k, ())}) for k in ("t_s", "t_cc1", "t_cc2")]
    if any(not ax for ax in axes):
        raise InvalidInput("threshold grid is empty")

    m = np.array([s.metrics.m_anom for s in samples])
    c = np.array([s.metrics.c_enh for s in samples])
    truth_idx = np.array([CLASSES.index(s.truth) for s in samples])
    t_attack = truth_idx != 0
    n = len(samples)

    cc2 = np.array(axes[2])
    above_cc2 = c[None, :] > cc2[:, None]  # (n_cc2, n)
    best_key, ties = None, []
    for t_s, t_cc1 in itertools.product(axes[0], axes[1]):
        if t_s <= 0:
            continue
        attacked = (m > t_s) | (c > t_cc1)
        tp = int(np.sum(attacked & t_attack))
        fp = int(np.sum(attacked & ~t_attack))
        fn = int(np.sum(~attacked & t_attack))
        f1 = f1_from_counts(tp, fp, fn)
        pred_idx = np.where(attacked[None, :], np.where(above_cc2, 2, 1), 0)
        correct = np.sum(pred_idx == truth_idx[None, :], axis=1)
        for j, t_cc2 in enumerate(axes[2]):
            if t_cc2 > t_cc1 or t_cc2 <= 0:
                continue
            key = (f1, int(correct[j]) / n, -t_s)
            if best_key is None or key > best_key:
                best_key, ties = key, [(t_s, t_cc1, t_cc2)]
            elif key == best_key:
                ties.append((t_s, t_cc1, t_cc2))
    if best_key is None:
        raise InvalidInput("no admissible grid point (t_cc2 <= t_cc1 never holds)")

    t_cc2 = _median_pick(sorted({t[2] for t in ties}))
    t_cc1 = _median_pick(sorted({t[1] for t in ties if t[2] == t_cc2}))
    t_s = ties[0][0]
    return GateThresholds(t_s, t_cc1, t_cc2, base.alpha, base.beta)


def records_from_metrics(samples: Iterable[LabeledMetrics], th: GateThresholds) -> list[EvalRecord]:
    """Gate stored metrics under ``th`` without recomputing error maps."""
    return [
        EvalRecord(s.id, s.truth, classify(s.metrics.m_anom, s.metrics.c_enh, th), attack_score(s.metrics, th))
        for s in samples
    ]
