"""Exact verification metrics: threshold at FAR, TAR@FAR, ROC, d-prime.

Acceptance rule everywhere is ``score >= threshold``; thresholds are drawn
from observed scores, with ``inf`` meaning nothing is accepted.
"""
import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, InsufficientDataError, ParseError, RangeError


@dataclass(frozen=True)
class ScoreSet:
    authentic: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        for name in ("authentic", "impostor"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def require_nonempty(self):
        if self.authentic.size == 0 or self.impostor.size == 0:
            raise EmptyInputError("authentic and impostor scores must both be non-empty")


@dataclass(frozen=True)
class EvalResult:
    far_target: float
    threshold: float
    tar: float
    achieved_far: float

    def to_dict(self):
        return {
            "far_target": self.far_target,
            "threshold": "inf" if math.isinf(self.threshold) else self.threshold,
            "tar": self.tar,
            "achieved_far": self.achieved_far,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        thr = d["threshold"]
        thr = math.inf if thr == "inf" else float(thr)
        return cls(float(d["far_target"]), thr, float(d["tar"]), float(d["achieved_far"]))


def _check_far(far_target):
    far = float(far_target)
    if not 0.0 <= far < 1.0:
        raise RangeError(f"far_target must lie in [0, 1), got {far_target!r}")
    return far


def max_false_accepts(n_impostor, far_target):
    """Largest count c with ``c / n_impostor <= far_target``."""
    c = int(math.floor(far_target * n_impostor))
    while c < n_impostor and (c + 1) / n_impostor <= far_target:
        c += 1
    while c > 0 and c / n_impostor > far_target:
        c -= 1
    return c


def threshold_at_far(impostor, far_target):
    """Smallest observed impostor score whose false-accept rate meets the target.

    Returns ``math.inf`` when no observed value qualifies.
    """
    far = _check_far(far_target)
    imp = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    n = imp.size
    if n == 0:
        raise EmptyInputError("impostor scores are empty")
    allowed = max_false_accepts(n, far)
    if allowed == 0:
        return math.inf
    # need a value whose first occurrence sits at index >= n - allowed
    below = imp[n - allowed - 1]
    nxt = np.searchsorted(imp, below, side="right")
    return float(imp[nxt]) if nxt < n else math.inf


def tar_at_far(scores, far_target):
    scores.require_nonempty()
    threshold = threshold_at_far(scores.impostor, far_target)
    auth = scores.authentic
    imp = scores.impostor
    if math.isinf(threshold):
        above = auth[auth > imp.max()]
        if above.size == 0:
            return EvalResult(float(far_target), math.inf, 0.0, 0.0)
        threshold = float(above.min())
    tar = np.count_nonzero(auth >= threshold) / auth.size
    achieved = np.count_nonzero(imp >= threshold) / imp.size
    return EvalResult(float(far_target), threshold, float(tar), float(achieved))


def roc_points(scores):
    """(far, tar, threshold) arrays, one point per distinct observed score plus inf.

    Points are ordered by increasing far (ties by tar), so the first point is
    (0, 0) at threshold inf and the last is (1, 1) at the minimum score.
    """
    scores.require_nonempty()
    auth = np.sort(scores.authentic)
    imp = np.sort(scores.impostor)
    thr = np.unique(np.concatenate([auth, imp]))[::-1]
    thr = np.concatenate([[np.inf], thr])
    far = (imp.size - np.searchsorted(imp, thr, side="left")) / imp.size
    tar = (auth.size - np.searchsorted(auth, thr, side="left")) / auth.size
    order = np.lexsort((tar, far))
    return far[order], tar[order], thr[order]


def d_prime(scores):
    auth, imp = scores.authentic, scores.impostor
    if auth.size < 2 or imp.size < 2:
        raise InsufficientDataError("d-prime needs at least two scores per side")
    pooled = (np.var(auth, ddof=1) + np.var(imp, ddof=1)) / 2.0
    gap = abs(auth.mean() - imp.mean())
    if pooled == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return float(gap / math.sqrt(pooled))


QUANTILES = (0.01, 0.25, 0.5, 0.75, 0.99)


def score_stats(scores):
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInputError("no scores")
    q = np.quantile(s, QUANTILES)
    return {
        "n": int(s.size),
        "mean": float(s.mean()),
        "std": float(s.std(ddof=1)) if s.size > 1 else 0.0,
        "min": float(s.min()),
        "max": float(s.max()),
        "quantiles": {f"{p:g}": float(v) for p, v in zip(QUANTILES, q)},
    }


def parse_far(text):
    """Accept "0.01%" or "0.0001"; always return a fraction."""
    t = str(text).strip()
    try:
        value = float(t[:-1]) / 100.0 if t.endswith("%") else float(t)
    except ValueError:
        raise RangeError(f"cannot parse FAR {text!r}") from None
    return _check_far(value)


def read_score_file(path):
    """Load ``pair_type,selfie_subject,doc_subject,score`` CSV into a ScoreSet."""
    auth, imp = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pair_type", "selfie_subject", "doc_subject", "score"]:
            raise ParseError("unexpected score file header", 1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError("expected 4 fields", row_no)
            try:
                val = float(row[3])
            except ValueError:
                raise ParseError(f"bad score {row[3]!r}", row_no) from None
            if row[0] == "authentic":
                auth.append(val)
            elif row[0] == "impostor":
                imp.append(val)
            else:
                raise ParseError(f"bad pair_type {row[0]!r}", row_no)
    return ScoreSet(np.array(auth), np.array(imp))


def write_score_file(path, pairs):
    """``pairs`` yields (pair_type, selfie_subject, doc_subject, score)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("pair_type,selfie_subject,doc_subject,score\n")
        for kind, s, d, score in pairs:
            fh.write(f"{kind},{s},{d},{float(score)!r}\n")
