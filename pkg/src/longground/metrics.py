"""Grounding metrics (R@n at IoU > m) and 1-D non-maximum suppression."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

DEFAULT_N = (1, 5)
DEFAULT_M = (0.1, 0.3, 0.5)


def _span(p):
    return (p.t_s, p.t_e) if hasattr(p, "t_s") else (float(p[0]), float(p[1]))


def _score(p):
    return p.score if hasattr(p, "score") else float(p[2])


def _ious(spans: np.ndarray, gt) -> np.ndarray:
    if len(spans) == 0:
        return np.zeros(0)
    s, e = spans[:, 0], spans[:, 1]
    inter = np.clip(np.minimum(e, gt[1]) - np.maximum(s, gt[0]), 0.0, None)
    union = (e - s) + (gt[1] - gt[0]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def key(n: int, m: float) -> str:
    return f"R@{n}-{m:g}"


@dataclass
class EvalResult:
    recall: dict[tuple[int, float], float] = field(default_factory=dict)
    best_iou: dict[int, np.ndarray] = field(default_factory=dict)
    n_queries: int = 0

    def __getitem__(self, nm) -> float:
        return self.recall[nm]

    def as_dict(self) -> dict[str, float]:
        return {key(n, m): float(v) for (n, m), v in sorted(self.recall.items())}

    def to_json(self) -> str:
        return json.dumps({"n_queries": self.n_queries, **self.as_dict()}, sort_keys=True)


def recall_at(predictions, gts, n_list=DEFAULT_N, m_list=DEFAULT_M) -> EvalResult:
    """Fraction of queries with a top-``n`` prediction whose IoU with the
    ground truth is strictly larger than ``m``.

    ``predictions[i]`` is the score-sorted list for query ``i`` (``Prediction``
    objects or ``(start, end[, score])`` tuples). An empty list is a miss.
    """
    if len(predictions) != len(gts):
        raise UsageError(f"{len(predictions)} prediction lists for {len(gts)} queries")
    res = EvalResult(n_queries=len(gts))
    n_list, m_list = sorted(set(int(n) for n in n_list)), sorted(set(float(m) for m in m_list))
    best = {n: np.zeros(len(gts)) for n in n_list}
    for i, (preds, gt) in enumerate(zip(predictions, gts)):
        spans = np.array([_span(p) for p in preds], dtype=float).reshape(-1, 2)
        ious = _ious(spans, gt)
        for n in n_list:
            best[n][i] = ious[:n].max() if len(ious[:n]) else 0.0
    for n in n_list:
        for m in m_list:
            res.recall[(n, m)] = float(np.mean(best[n] > m)) if len(gts) else 0.0
    res.best_iou = best
    return res


def recall_reference(predictions, gts, n: int, m: float) -> float:
    """Plain double loop; kept deliberately naive as an oracle."""
    hits = 0
    for preds, gt in zip(predictions, gts):
        for p in preds[:n]:
            s, e = _span(p)
            inter = max(0.0, min(e, gt[1]) - max(s, gt[0]))
            union = (e - s) + (gt[1] - gt[0]) - inter
            if union > 0 and inter / union > m:
                hits += 1
                break
    return hits / len(gts) if gts else 0.0


def _rank_sorted(preds):
    # stable: equal scores keep their incoming (rank) order
    return sorted(preds, key=lambda p: -_score(p))


def nms_1d(predictions, iou_threshold: float = 0.5):
    """Greedy suppression of predictions overlapping a better one by IoU > threshold."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise UsageError(f"NMS threshold must lie in [0, 1], got {iou_threshold}")
    preds = _rank_sorted(list(predictions))
    if not preds:
        return []
    spans = np.array([_span(p) for p in preds], dtype=float)
    s, e = spans[:, 0], spans[:, 1]
    alive = np.ones(len(preds), bool)
    keep = []
    for i in range(len(preds)):
        if not alive[i]:
            continue
        keep.append(i)
        rest = np.flatnonzero(alive[i + 1:]) + i + 1
        if rest.size == 0:
            break
        inter = np.clip(np.minimum(e[rest], e[i]) - np.maximum(s[rest], s[i]), 0.0, None)
        union = (e[rest] - s[rest]) + (e[i] - s[i]) - inter
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        alive[rest[iou > iou_threshold]] = False
    return [preds[i] for i in keep]


def nms_reference(predictions, iou_threshold: float = 0.5):
    """O(k^2) greedy NMS written without vectorisation."""
    kept = []
    for p in _rank_sorted(list(predictions)):
        ps, pe = _span(p)
        ok = True
        for k in kept:
            ks, ke = _span(k)
            inter = max(0.0, min(pe, ke) - max(ps, ks))
            union = (pe - ps) + (ke - ks) - inter
            if union > 0 and inter / union > iou_threshold:
                ok = False
                break
        if ok:
            kept.append(p)
    return kept
