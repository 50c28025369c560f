"""Pixel-level segmentation metrics: confusion counts, Acc/Se/Sp, ROC/AUC, Otsu.

Vessel pixels are the positive class.  When a field-of-view mask is given,
only pixels with mask == 1 are counted.
"""
import json
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .data import quantize
from .errors import DataError, ShapeError
from .netpbm import write_netpbm

MAX_DISTINCT_SCORES = 10 ** 6


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.tn + self.fp

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass
class MetricsReport:
    id: str
    acc: float
    se: float
    sp: float
    counts: ConfusionCounts
    auc: float = None
    threshold: float = None
    flags: list = field(default_factory=list)

    def to_dict(self):
        d = {"id": self.id, **asdict(self.counts)}
        d.update(acc=self.acc, se=self.se, sp=self.sp, auc=self.auc, threshold=self.threshold, flags=list(self.flags))
        return d


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def _selected(arr, mask):
    arr = np.asarray(arr)
    if mask is None:
        return arr.reshape(-1)
    mask = np.asarray(mask)
    if mask.shape != arr.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {arr.shape}")
    return arr[mask.astype(bool)]


def _check_binary(arr, what):
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ShapeError(f"{what} must be binary (0/1)")
    return arr.astype(bool)


def confusion(pred, gt, mask=None):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    p = _selected(_check_binary(pred, "prediction"), mask)
    g = _selected(_check_binary(gt, "ground truth"), mask)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, fp=fp, tn=int(p.size) - tp - fp - fn, fn=fn)


def metrics(counts, id="", auc=None, threshold=None):
    """Acc, Se, Sp from counts; an empty class reports 1.0 with a flag."""
    if counts.total <= 0:
        raise ShapeError("metrics need at least one evaluated pixel")
    flags = []
    if counts.positives:
        se = counts.tp / counts.positives
    else:
        se = 1.0
        flags.append("se_undefined_no_positives")
    if counts.negatives:
        sp = counts.tn / counts.negatives
    else:
        sp = 1.0
        flags.append("sp_undefined_no_negatives")
    acc = (counts.tp + counts.tn) / counts.total
    return MetricsReport(id, acc, se, sp, counts, auc=auc, threshold=threshold, flags=flags)


def roc_auc(scores, gt, mask=None):
    """ROC curve over every distinct score, area by the trapezoidal rule.

    Pixels with equal scores form one threshold step, so ties contribute a
    diagonal segment (half credit), matching the Mann-Whitney statistic.
    """
    s = _selected(np.asarray(scores, dtype=np.float64), mask)
    g = _selected(_check_binary(gt, "ground truth"), mask)
    if s.shape != g.shape:
        raise ShapeError("score map and ground truth differ in shape")
    pos = int(np.count_nonzero(g))
    neg = int(g.size) - pos
    if pos == 0 or neg == 0:
        raise ShapeError("AUC is undefined: ground truth contains a single class inside the mask")
    if np.unique(s).size > MAX_DISTINCT_SCORES:
        s = quantize(s).astype(np.float64) / 255.0
    order = np.argsort(-s, kind="stable")
    s, g = s[order], g[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(g, dtype=np.int64)[ends]
    fp = (ends + 1) - tp
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * pos * neg)
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fp / neg, tp / pos, thresholds, auc)


def score_bins(scores):
    """Scores in [0, 1] -> integer bins 0..255 (round-half-up)."""
    return quantize(scores).astype(np.int64)


@dataclass
class OtsuResult:
    bin: int
    threshold: float
    degenerate: bool = False


def otsu_threshold(scores, mask=None):
    """Bin k maximizing between-class variance of {<= k} vs {> k}; lowest k on ties.

    Vessel pixels are those whose bin exceeds ``bin`` (equivalently score
    quantized above ``threshold``).
    """
    bins = _selected(score_bins(scores), mask)
    hist = np.bincount(bins, minlength=256)
    result = otsu_from_histogram(hist)
    if result is None:
        value = int(bins[0]) if bins.size else 0
        return OtsuResult(value, value / 255.0, degenerate=True)
    return OtsuResult(result, result / 255.0)


def otsu_from_histogram(hist):
    """Best split bin for an integer histogram, or None when no split separates anything.

    Between-class variance is proportional to (T*s0 - w0*S)^2 / (w0*w1) for
    class weight w0 and level sum s0 below the split and totals T, S.  It is
    compared exactly in rational arithmetic so ties resolve deterministically.
    """
    hist = [int(h) for h in np.asarray(hist).reshape(-1)]
    total = sum(hist)
    level_sum = sum(i * h for i, h in enumerate(hist))
    best, best_k = Fraction(0), None
    w0 = s0 = 0
    for k in range(len(hist) - 1):
        w0 += hist[k]
        s0 += k * hist[k]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        score = Fraction((total * s0 - w0 * level_sum) ** 2, w0 * w1)
        if score > best:
            best, best_k = score, k
    return best_k


def binarize(scores, threshold_bin):
    return (score_bins(scores) > threshold_bin).astype(np.uint8)


def fixed_threshold_bin(threshold):
    """Bin index equivalent to classifying score > threshold on 8-bit maps."""
    return int(np.floor(threshold * 255 + 1e-9))


def evaluate_image(id, scores, gt, mask=None, fixed_threshold=None):
    """Binarize (Otsu unless a fixed threshold is given) and score one map."""
    flags = []
    if fixed_threshold is None:
        otsu = otsu_threshold(scores, mask)
        tbin = otsu.bin
        if otsu.degenerate:
            flags.append("otsu_degenerate")
            binary = np.zeros(np.shape(scores), dtype=np.uint8)
        else:
            binary = binarize(scores, tbin)
    else:
        tbin = fixed_threshold_bin(fixed_threshold)
        binary = binarize(scores, tbin)
    counts = confusion(binary, gt, mask)
    try:
        auc = roc_auc(scores, gt, mask).auc
    except ShapeError:
        auc = None
        flags.append("auc_undefined_single_class")
    report = metrics(counts, id=id, auc=auc, threshold=tbin / 255.0)
    report.flags = flags + report.flags
    return report, binary


def pooled_report(reports, scores=None, gts=None, masks=None, id="__aggregate__"):
    """Micro-average: sum counts over images; AUC over all pooled in-mask pixels."""
    total = ConfusionCounts()
    for r in reports:
        total = total + r.counts
    auc = None
    flags = []
    if scores is not None:
        s = np.concatenate([_selected(np.asarray(sc, np.float64), m) for sc, m in zip(scores, masks)])
        g = np.concatenate([_selected(np.asarray(gt), m) for gt, m in zip(gts, masks)])
        try:
            auc = roc_auc(s, g).auc
        except ShapeError:
            flags.append("auc_undefined_single_class")
    out = metrics(total, id=id, auc=auc, threshold=None)
    out.flags = flags + out.flags
    return out


class ReportWriter:
    """Appends one JSON object per line; the only writer of a report file."""

    def __init__(self, path):
        self.path = os.fspath(path)
        parent = os.path.dirname(self.path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self._fh = open(self.path, "a")

    def append(self, report):
        row = report.to_dict() if isinstance(report, MetricsReport) else report
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_report(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def emit_outputs(out_dir, id, prob, binary=None, report=None, writer=None):
    """Write <id>.pgm (probabilities), binary/<id>.pgm ({0,255}) and a report row."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        prob_path = os.path.join(out_dir, f"{id}.pgm")
        write_netpbm(prob_path, quantize(np.squeeze(prob)))
        paths = {"prob": prob_path}
        if binary is not None:
            bdir = os.path.join(out_dir, "binary")
            os.makedirs(bdir, exist_ok=True)
            paths["binary"] = os.path.join(bdir, f"{id}.pgm")
            write_netpbm(paths["binary"], (np.squeeze(binary) > 0).astype(np.uint8) * 255)
    except OSError as exc:
        raise DataError(f"could not write outputs for {id!r} under {out_dir}: {exc}") from None
    if report is not None and writer is not None:
        writer.append(report)
    return paths
