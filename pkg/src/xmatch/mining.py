"""Mini-batch sampling and cross-modal semi-hard triplet selection.

A batch of ``B`` slots holds ``B/2`` subjects. Slot ``k`` is the selfie of
the k-th sampled subject and slot ``k + B/2`` its document. Positives and
negatives always come from the modality opposite to the anchor.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import UNIT_TOL, check_vector_pair
from .errors import ConfigError, NormalizationError, RangeError

SELFIE, DOCUMENT = 0, 1
ANCHOR_MODES = ("both", "selfie_only")


@dataclass(frozen=True)
class MiningBatch:
    subject_ids: tuple
    dataset_indices: np.ndarray
    subject: np.ndarray
    modality: np.ndarray
    features: np.ndarray

    @property
    def size(self):
        return self.subject.size


@dataclass(frozen=True)
class Triplet:
    anchor_idx: int
    positive_idx: int
    negative_idx: int
    margin_used: float
    d_ap: float
    d_an: float
    semi_hard: bool

    @property
    def loss(self):
        return max(0.0, self.d_ap - self.d_an + self.margin_used)


def make_batch(dataset, indices):
    """Batch holding both images of the subjects at ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    half = idx.size
    return MiningBatch(
        subject_ids=tuple(dataset.subject_ids[i] for i in idx),
        dataset_indices=idx,
        subject=np.concatenate([np.arange(half), np.arange(half)]),
        modality=np.concatenate([np.full(half, SELFIE, np.int8),
                                 np.full(half, DOCUMENT, np.int8)]),
        features=np.vstack([dataset.selfie[idx], dataset.doc[idx]]),
    )


def sample_batch(dataset, batch_size, rng):
    """Draw ``batch_size // 2`` distinct subjects uniformly, both images each."""
    if batch_size <= 0 or batch_size % 2:
        raise ConfigError(f"batch_size must be a positive even number, got {batch_size}")
    if batch_size > 2 * dataset.n_subjects:
        raise ConfigError(f"batch_size {batch_size} needs {batch_size // 2} subjects, "
                          f"dataset has {dataset.n_subjects}")
    chosen = rng.choice(dataset.n_subjects, size=batch_size // 2, replace=False)
    return make_batch(dataset, chosen)


def batch_distances(embeddings):
    """Squared Euclidean distances between unit rows, as ``2 - 2 cos``."""
    cos = np.clip(embeddings @ embeddings.T, -1.0, 1.0)
    return 2.0 - 2.0 * cos


def mine_arrays(batch, embeddings, margin, rng, anchor_modality="both"):
    """Array form of :func:`mine_semi_hard`.

    Returns (anchor, positive, negative, semi_hard, d_ap, d_an) restricted
    to anchors that produced a triplet, in anchor order.
    """
    if not margin > 0:
        raise RangeError(f"margin must be positive, got {margin}")
    if anchor_modality not in ANCHOR_MODES:
        raise ConfigError(f"anchor_modality must be one of {ANCHOR_MODES}")
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] != batch.size:
        raise ConfigError("one embedding per batch slot is required")
    norms = np.linalg.norm(emb, axis=1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        raise NormalizationError("mining needs unit-norm embeddings")

    if anchor_modality == "both":
        anchors = np.arange(batch.size, dtype=np.int64)
    else:
        anchors = np.flatnonzero(batch.modality == SELFIE).astype(np.int64)
    u = rng.random(anchors.size)
    dist = batch_distances(emb)
    pos, neg, kind = kernels.select_negatives(dist, batch.subject, batch.modality,
                                              anchors, float(margin), u)
    keep = kind != kernels.SKIP
    a, p, n = anchors[keep], pos[keep], neg[keep]
    return a, p, n, kind[keep] == kernels.SEMI_HARD, dist[a, p], dist[a, n]


def mine_semi_hard(batch, embeddings, margin, rng, anchor_modality="both"):
    """One triplet per anchor: a random semi-hard negative, else the fallback.

    The semi-hard window is ``d_ap < d_an < d_ap + margin``. With no
    candidate in it, the closest negative with ``d_an > d_ap`` is used; with
    none of those either, the anchor is skipped.
    """
    a, p, n, semi, d_ap, d_an = mine_arrays(batch, embeddings, margin, rng, anchor_modality)
    return [Triplet(int(a[i]), int(p[i]), int(n[i]), float(margin), float(d_ap[i]),
                    float(d_an[i]), bool(semi[i])) for i in range(a.size)]


def triplet_loss(a, p, n, margin):
    a, p = check_vector_pair(a, p)
    a, n = check_vector_pair(a, n)
    if not margin > 0:
        raise RangeError("margin must be positive")
    d_ap = float(np.sum((a - p) ** 2))
    d_an = float(np.sum((a - n) ** 2))
    return max(0.0, d_ap - d_an + margin)


def write_triplet_dump(path, triplets):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("anchor,positive,negative,d_ap,d_an,loss\n")
        for t in triplets:
            fh.write(f"{t.anchor_idx},{t.positive_idx},{t.negative_idx},"
                     f"{t.d_ap!r},{t.d_an!r},{t.loss!r}\n")
