from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix

from utils import EntailmentLogger, calc


logger = EntailmentLogger(logger_level='i').get_logger()

# metric keys aggregated over seeds, per task
METRIC_KEYS = {"graded": ("rho", "dev_metric"), "binary": ("precision", "recall", "f1", "dev_metric")}


class UndefinedCorrelationError(ValueError):
    """a rank correlation with a constant input"""


def spearman(pred, gold):
    """Pearson correlation of average-of-ties ranks"""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ValueError(f"expect two lists of equal length but got {pred.shape} and {gold.shape}")
    if len(pred) < 2:
        raise ValueError(f"spearman needs at least 2 values but got {len(pred)}")
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        raise UndefinedCorrelationError("spearman correlation is undefined for a constant input")

    rank_p = rankdata(pred, method="average")
    rank_g = rankdata(gold, method="average")
    rank_p -= rank_p.mean()
    rank_g -= rank_g.mean()
    rho = np.dot(rank_p, rank_g) / np.sqrt(np.dot(rank_p, rank_p) * np.dot(rank_g, rank_g))
    return float(np.clip(rho, -1.0, 1.0))


def select_threshold(scores, gold):
    """
    Threshold maximising F1 of "score >= t" over the lowest score and the midpoints
    of consecutive distinct scores; the lowest candidate wins ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=bool)
    if len(scores) == 0 or scores.shape != gold.shape:
        raise ValueError(f"expect non-empty scores and labels of equal length "
                         f"but got {scores.shape} and {gold.shape}")

    distinct = np.unique(scores)
    candidates = np.concatenate([distinct[:1], (distinct[:-1] + distinct[1:]) / 2.0])
    all_sorted = np.sort(scores)
    pos_sorted = np.sort(scores[gold])
    predicted = len(all_sorted) - np.searchsorted(all_sorted, candidates, side="left")
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, candidates, side="left")
    # 2PR/(P+R) == 2tp/(predicted + actual positives)
    f1 = np.where(tp > 0, 2.0 * tp / (predicted + len(pos_sorted)), 0.0)
    return float(candidates[int(np.argmax(f1))])


def binary_counts(scores, gold, threshold):
    """(tp, fp, fn) of classifying score >= threshold as positive"""
    pred = np.asarray(scores, dtype=np.float64) >= threshold
    gold = np.asarray(gold, dtype=bool)
    if pred.shape != gold.shape:
        raise ValueError(f"expect scores and labels of equal length but got {pred.shape} and {gold.shape}")
    _, fp, fn, tp = confusion_matrix(gold, pred, labels=[False, True]).ravel()
    return int(tp), int(fp), int(fn)


def binary_metrics(scores, gold, threshold):
    """precision, recall, f1 at a frozen threshold; no positive predictions gives P = 0"""
    tp, fp, fn = binary_counts(scores, gold, threshold)
    return calc(tp, tp + fp, tp + fn)


def resolve_threshold(policy, max_score, dev_scores=None, dev_gold=None):
    if policy == "half":
        return max_score / 2.0
    elif policy == "dev_f1":
        if dev_scores is None or len(dev_scores) == 0:
            raise ValueError("threshold policy dev_f1 needs scored dev pairs")
        return select_threshold(dev_scores, dev_gold)
    raise ValueError(f"threshold policy must be dev_f1 or half but got {policy}")


@dataclass
class EvalReport:
    task: str
    rho: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    threshold: Optional[float] = None
    n_scored: int = 0
    n_skipped: int = 0
    seed: Optional[int] = None
    # dev score of the selected epoch (rho or f1)
    dev_metric: Optional[float] = None
    variant: Optional[str] = None
    per_seed: List[dict] = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rho is not None and not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [-1, 1] but got {self.rho}")
        for name in ("precision", "recall", "f1"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1] but got {value}")

    def metric(self):
        return self.rho if self.task == "graded" else self.f1

    def to_dict(self):
        report = asdict(self)
        if not self.per_seed:
            for key in ("per_seed", "mean", "std"):
                report.pop(key)
        return report

    def summary(self):
        if self.per_seed:
            return "; ".join(f"{k}: {self.mean[k]:.4f} (std {self.std[k]:.4f})" for k in sorted(self.mean)) \
                + f"; seeds: {len(self.per_seed)}"
        if self.task == "graded":
            text = f"rho: {self.rho:.4f}"
        else:
            text = f"precision: {self.precision:.4f}; recall: {self.recall:.4f}; f1: {self.f1:.4f}; " \
                   f"threshold: {self.threshold:.4f}"
        return f"{text}; scored: {self.n_scored}; skipped: {self.n_skipped}"


def evaluate_scores(scores, gold, task, threshold=None, n_skipped=0, seed=None):
    """EvalReport of the task metric over already scored in-vocabulary pairs"""
    if len(scores) == 0:
        raise ValueError("no pair could be scored: every pair has an out-of-vocabulary word")
    report = EvalReport(task=task, n_scored=int(len(scores)), n_skipped=int(n_skipped), seed=seed)
    if task == "graded":
        report.rho = spearman(scores, gold)
    elif task == "binary":
        if threshold is None:
            raise ValueError("binary evaluation needs a threshold")
        report.threshold = float(threshold)
        report.precision, report.recall, report.f1 = binary_metrics(scores, gold, threshold)
    else:
        raise ValueError(f"task must be graded or binary but got {task}")
    return report


def evaluate(bundle, pairs, task, threshold=None, seed=None):
    """score pairs with a model bundle and compute the task metric over the in-vocabulary ones"""
    pairs = list(pairs)
    scores, skipped = bundle.score_pairs(pairs)
    if skipped:
        logger.warning(f"{len(skipped)} of {len(pairs)} pairs skipped (out of vocabulary)")
    scored = ~np.isnan(scores)
    gold = [p.gold for p, ok in zip(pairs, scored) if ok]
    return evaluate_scores(scores[scored], gold, task, threshold, len(skipped), seed)


def aggregate(reports):
    """
        mean and (population) standard deviation of the per-seed metrics;
        the top-level metric fields of the aggregate stay empty
    """
    if not reports:
        raise ValueError("nothing to aggregate")
    task = reports[0].task
    result = EvalReport(task=task, n_scored=reports[0].n_scored, n_skipped=reports[0].n_skipped,
                        variant=reports[0].variant, per_seed=[r.to_dict() for r in reports])
    for key in METRIC_KEYS[task] + (("threshold",) if task == "binary" else ()):
        values = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if values:
            result.mean[key] = float(np.mean(values))
            result.std[key] = float(np.std(values))
    return result
