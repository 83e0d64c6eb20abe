"""Subject-disjoint train/validation split and the hard-pair validation set."""
import csv
from dataclasses import dataclass

import numpy as np

from .core import cross_modal_scores
from .errors import ConfigError, InsufficientDataError, ParseError
from .metrics import ScoreSet, tar_at_far


@dataclass(frozen=True)
class ValidationFold:
    subject_ids: tuple      # every subject assigned to the fold
    selected_ids: tuple     # the hard subset, ascending subject_id
    authentic: tuple        # (selfie_subject, doc_subject) pairs
    impostor: tuple


@dataclass(frozen=True)
class ValidationSet:
    dataset: object
    folds: tuple

    @property
    def n_pairs(self):
        return sum(len(f.authentic) + len(f.impostor) for f in self.folds)

    def pair_indices(self):
        """Per fold: (auth_selfie, auth_doc, imp_selfie, imp_doc) dataset row indices."""
        idx = self.dataset.index_of
        out = []
        for f in self.folds:
            a = np.array([(idx(s), idx(d)) for s, d in f.authentic], dtype=np.int64).reshape(-1, 2)
            i = np.array([(idx(s), idx(d)) for s, d in f.impostor], dtype=np.int64).reshape(-1, 2)
            out.append((a[:, 0], a[:, 1], i[:, 0], i[:, 1]))
        return out

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("fold,pair_type,selfie_subject,doc_subject\n")
            for k, f in enumerate(self.folds):
                for kind, pairs in (("authentic", f.authentic), ("impostor", f.impostor)):
                    for s, d in pairs:
                        fh.write(f"{k},{kind},{s},{d}\n")

    @classmethod
    def read(cls, path, dataset):
        """Rebuild from a validation CSV. Fold membership is the set of paired subjects."""
        rows = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["fold", "pair_type", "selfie_subject", "doc_subject"]:
                raise ParseError("unexpected validation header", 1)
            for row_no, row in enumerate(reader, start=2):
                if len(row) != 4 or row[1] not in ("authentic", "impostor"):
                    raise ParseError("malformed validation row", row_no)
                for sid in row[2:]:
                    if sid not in dataset:
                        raise ParseError(f"unknown subject {sid!r}", row_no)
                fold = rows.setdefault(int(row[0]), {"authentic": [], "impostor": []})
                fold[row[1]].append((row[2], row[3]))
        folds = []
        for k in sorted(rows):
            auth, imp = tuple(rows[k]["authentic"]), tuple(rows[k]["impostor"])
            sel = tuple(sorted(s for s, _ in auth))
            folds.append(ValidationFold(sel, sel, auth, imp))
        return cls(dataset, tuple(folds))


def split_subjects(dataset, train_fraction=0.9, rng=None):
    """Uniform random subject-level split; both sides keep dataset order."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = dataset.n_subjects
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ConfigError(f"split of {n} subjects at {train_fraction} leaves one side empty")
    perm = rng.permutation(n)
    return dataset.take(np.sort(perm[:n_train])), dataset.take(np.sort(perm[n_train:]))


def default_per_fold(n_subjects, folds=10, cap=300):
    """Hard subjects kept per fold when not configured: half a fold, at most ``cap``."""
    return max(2, min(cap, (n_subjects // folds) // 2))


def _hardest_impostors(scores, ids, both_directions):
    """Row-wise argmax excluding the diagonal. ``ids`` ascend, so ties go to the lower id.

    ``scores[i, j]`` is selfie i vs document j. Returns (selfie_subject, doc_subject) pairs.
    """
    s = scores.copy()
    np.fill_diagonal(s, -np.inf)
    pairs = []
    for i in range(s.shape[0]):
        j = int(np.argmax(s[i]))
        pair = (ids[i], ids[j])
        if both_directions:
            col = s[:, i]
            k = int(np.argmax(col))
            if col[k] > s[i, j]:
                pair = (ids[k], ids[i])
        pairs.append(pair)
    return pairs


def build_hard_validation(val, scorer, folds=10, per_fold=300, rng=None,
                          both_directions=False):
    """Select the lowest-scoring genuine pairs and their highest-scoring impostors.

    Args:
      val: validation PairedDataset.
      scorer: maps an (n, d_in) feature array to unit embeddings (n, d_out).
      folds: number of subject-disjoint groups.
      per_fold: subjects kept per group.
      rng: numpy Generator driving the group assignment.
      both_directions: also consider the subject's document against the
        other selected selfies when picking its impostor.
    """
    if folds < 1:
        raise ConfigError("folds must be positive")
    if per_fold < 2:
        raise ConfigError("per_fold must be at least 2 so every subject has an impostor")
    n = val.n_subjects
    groups = np.array_split(rng.permutation(n), folds)
    small = min(len(g) for g in groups)
    if small < per_fold:
        raise InsufficientDataError(
            f"{n} subjects in {folds} folds gives {small} per fold, need {per_fold}")

    emb_s = np.asarray(scorer(val.selfie), dtype=np.float64)
    emb_d = np.asarray(scorer(val.doc), dtype=np.float64)
    genuine = np.clip(np.einsum("ij,ij->i", emb_s, emb_d), -1.0, 1.0)
    ids = np.array(val.subject_ids, dtype=object)

    out = []
    for grp in groups:
        order = sorted(grp.tolist(), key=lambda i: (genuine[i], val.subject_ids[i]))
        chosen = sorted(order[:per_fold], key=lambda i: val.subject_ids[i])
        chosen = np.array(chosen, dtype=np.int64)
        chosen_ids = [str(s) for s in ids[chosen]]
        scores = cross_modal_scores(emb_d[chosen], emb_s[chosen])
        impostor = _hardest_impostors(scores, chosen_ids, both_directions)
        out.append(ValidationFold(
            subject_ids=tuple(sorted(str(s) for s in ids[grp])),
            selected_ids=tuple(chosen_ids),
            authentic=tuple((s, s) for s in chosen_ids),
            impostor=tuple(impostor)))
    return ValidationSet(val, tuple(out))


def validation_tar(validation, embed, far_target, pair_indices=None):
    """Mean over folds of TAR at ``far_target`` with embeddings from ``embed``."""
    ds = validation.dataset
    emb_s = embed(ds.selfie)
    emb_d = embed(ds.doc)
    if pair_indices is None:
        pair_indices = validation.pair_indices()
    tars = []
    for a_s, a_d, i_s, i_d in pair_indices:
        auth = np.clip(np.einsum("ij,ij->i", emb_s[a_s], emb_d[a_d]), -1.0, 1.0)
        imp = np.clip(np.einsum("ij,ij->i", emb_s[i_s], emb_d[i_d]), -1.0, 1.0)
        tars.append(tar_at_far(ScoreSet(auth, imp), far_target).tar)
    return float(np.mean(tars))
