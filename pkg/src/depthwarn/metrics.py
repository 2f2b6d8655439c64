"""Video-level evaluation: threshold-swept precision/recall, AP, P@80%R,
TTA statistics and ROC/AUC.

A positive video counts as a true positive at threshold q only if its
probability reaches q strictly before the accident frame; a negative
video is a false positive if it ever reaches q. All sweeps run over the
union of per-video peak scores plus {0, 1}, descending.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError

TTA_CONVENTIONS = ("standard", "shifted")


@dataclass
class EvalReport:
    ap: float
    p_at_r: float | None
    mtta_s: float
    tta_at_r_s: float | None
    auc: float
    r0: float = 0.8
    q: float = 0.5
    pr_points: list = field(default_factory=list)       # (q, precision, recall)
    roc_points: list = field(default_factory=list)      # (fpr, tpr)
    n_positive: int = 0
    n_negative: int = 0

    def to_dict(self):
        return {
            "ap": self.ap,
            "p_at_80r": self.p_at_r,
            "mtta_s": self.mtta_s,
            "tta_at_80r_s": self.tta_at_r_s,
            "auc": self.auc,
            "r0": self.r0,
            "q": self.q,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "pr_points": [[float(a), float(b), float(c)] for a, b, c in self.pr_points],
            "roc_points": [[float(a), float(b)] for a, b in self.roc_points],
        }

    def table(self):
        def pct(v):
            return "   undef" if v is None else "%8.1f" % (100.0 * v)

        def sec(v):
            return "   undef" if v is None else "%8.2f" % v

        head = "%8s %8s %8s %8s %8s" % ("AP(%)", "P@80%R", "mTTA(s)", "TTA@80%R", "AUC")
        row = "%s %s %s %s %8.3f" % (pct(self.ap), pct(self.p_at_r),
                                     sec(self.mtta_s), sec(self.tta_at_r_s), self.auc)
        return head + "\n" + row


def _pre_accident(curve):
    """Frame probabilities eligible for a positive firing (i < y, 1-based)."""
    if curve.positive:
        return curve.probs[:curve.accident_frame - 1]
    return curve.probs


def peak_score(curve):
    # empty pre-accident range (y = 1) can never fire: peak -inf
    probs = _pre_accident(curve)
    return float(probs.max()) if probs.size else float("-inf")


def video_outcome(curve, q):
    """Classify one curve at threshold q; returns (outcome, firing_frame).

    firing_frame is 1-based, None when the curve never fires. Positives
    only fire before the accident frame.
    """
    probs = _pre_accident(curve)
    hits = np.flatnonzero(probs >= q)
    fired = hits.size > 0
    frame = int(hits[0]) + 1 if fired else None
    if curve.positive:
        return ("TP" if fired else "FN"), frame
    return ("FP" if fired else "TN"), frame


def _check_two_classes(curves):
    n_pos = sum(1 for c in curves if c.positive)
    n_neg = len(curves) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ProtocolError("need at least one positive and one negative video "
                            "(got %d positive, %d negative)" % (n_pos, n_neg))
    return n_pos, n_neg


def sweep_thresholds(curves):
    """Union of per-video peak scores and {0, 1}, descending."""
    qs = {0.0, 1.0}
    qs.update(p for p in (peak_score(c) for c in curves) if np.isfinite(p))
    return sorted(qs, reverse=True)


def pr_curve(curves):
    """(q, precision, recall) per sweep threshold, threshold-descending.

    Precision is defined as 1 when nothing fires (TP + FP = 0).
    """
    n_pos, _ = _check_two_classes(curves)
    pos_peaks = np.array([peak_score(c) for c in curves if c.positive])
    neg_peaks = np.array([peak_score(c) for c in curves if not c.positive])
    points = []
    for q in sweep_thresholds(curves):
        tp = int((pos_peaks >= q).sum())
        fp = int((neg_peaks >= q).sum())
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / n_pos
        points.append((q, precision, recall))
    return points


def average_precision(pr_points):
    """Step integration sum (R_k - R_{k-1}) * P_k over descending thresholds."""
    ap = 0.0
    prev_r = 0.0
    for _, p, r in pr_points:
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def precision_at_recall(pr_points, r0=0.8):
    """Precision linearly interpolated at recall r0; None when unreachable.

    Repeated recall levels collapse to their best precision first, so the
    curve is single-valued in recall.
    """
    best = {}
    for _, p, r in pr_points:
        if r not in best or p > best[r]:
            best[r] = p
    recalls = sorted(best)
    if not recalls or recalls[-1] < r0:
        return None
    pts = [(r, best[r]) for r in recalls]
    for (r1, p1), (r2, p2) in zip(pts, pts[1:]):
        if r1 <= r0 <= r2:
            if r2 == r1:
                return p1
            return p1 + (r0 - r1) / (r2 - r1) * (p2 - p1)
    # r0 below the smallest achieved recall: clamp to the first point
    return pts[0][1]


def tta_seconds(curve, firing_frame, convention="standard"):
    """Lead time in seconds between firing and the accident frame."""
    if convention not in TTA_CONVENTIONS:
        raise ProtocolError("unknown TTA convention %r" % convention)
    gap = curve.accident_frame - firing_frame
    if convention == "shifted":
        gap -= 1
    return gap / curve.fps


def tta_stats(curves, q=0.5, convention="standard"):
    """(mean TTA, per-video TTAs) over all positive curves at threshold q.

    Positives that never fire before the accident contribute 0.
    """
    ttas = []
    for c in curves:
        if not c.positive:
            continue
        outcome, frame = video_outcome(c, q)
        ttas.append(tta_seconds(c, frame, convention) if outcome == "TP" else 0.0)
    if not ttas:
        raise ProtocolError("tta_stats: no positive curves")
    return float(np.mean(ttas)), ttas


def tta_at_recall(curves, r0=0.8, convention="standard"):
    """Mean TTA over true positives at the largest q with recall >= r0."""
    n_pos, _ = _check_two_classes(curves)
    pos = [c for c in curves if c.positive]
    for q in sweep_thresholds(curves):
        fired = [(c, video_outcome(c, q)) for c in pos]
        tps = [(c, frame) for c, (outcome, frame) in fired if outcome == "TP"]
        if len(tps) / n_pos >= r0:
            return float(np.mean([tta_seconds(c, f, convention) for c, f in tps]))
    return None


def roc_auc(curves):
    """(AUC, ROC points) from the video-level peak scores.

    Trapezoidal integration over the unique-score sweep; equal to the
    pair-counting (Wilcoxon, ties counted half) estimator.
    """
    _check_two_classes(curves)
    pos = np.array([peak_score(c) for c in curves if c.positive])
    neg = np.array([peak_score(c) for c in curves if not c.positive])
    thresholds = sorted(set(pos) | set(neg), reverse=True)
    points = [(0.0, 0.0)]
    for q in thresholds:
        tpr = float((pos >= q).mean())
        fpr = float((neg >= q).mean())
        points.append((fpr, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    auc = 0.0
    for (f1, t1), (f2, t2) in zip(points, points[1:]):
        auc += (f2 - f1) * (t1 + t2) / 2.0
    return auc, points


def pair_count_auc(curves):
    """Independent Wilcoxon estimator: P(pos outscores neg), ties half."""
    pos = [peak_score(c) for c in curves if c.positive]
    neg = [peak_score(c) for c in curves if not c.positive]
    if not pos or not neg:
        raise ProtocolError("pair_count_auc: need both classes")
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def evaluate(curves, q=0.5, r0=0.8, convention="standard"):
    """Full report over a set of prediction curves."""
    n_pos, n_neg = _check_two_classes(curves)
    points = pr_curve(curves)
    mtta, _ = tta_stats(curves, q, convention)
    auc, roc_points = roc_auc(curves)
    return EvalReport(
        ap=average_precision(points),
        p_at_r=precision_at_recall(points, r0),
        mtta_s=mtta,
        tta_at_r_s=tta_at_recall(curves, r0, convention),
        auc=auc,
        r0=r0, q=q,
        pr_points=points, roc_points=roc_points,
        n_positive=n_pos, n_negative=n_neg)
