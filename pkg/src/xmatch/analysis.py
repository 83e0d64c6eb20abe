"""Per-subset evaluation and the gender / card-format breakdowns."""
import numpy as np

from .core import CardFormat, Gender, cross_modal_scores, l2_normalize_rows
from .errors import InsufficientDataError
from .metrics import ScoreSet, d_prime, score_stats, tar_at_far

HIST_BINS = 64
HIST_RANGE = (-1.0, 1.0)


def embed_dataset(ds, head=None):
    """(selfie, doc) unit embeddings; ``head=None`` is the identity baseline."""
    if head is None:
        return l2_normalize_rows(ds.selfie), l2_normalize_rows(ds.doc)
    return head.embed(ds.selfie), head.embed(ds.doc)


def subset_score_matrix(ds, head=None):
    """``M[i, j]``: selfie of subject i vs document of subject j."""
    if ds.n_subjects < 2:
        raise InsufficientDataError(f"need at least 2 subjects, got {ds.n_subjects}")
    emb_s, emb_d = embed_dataset(ds, head)
    return cross_modal_scores(emb_d, emb_s)


def split_scores(matrix, members=None):
    """Authentic = diagonal; impostor = every off-diagonal cell, n*(n-1) of them."""
    if members is not None:
        matrix = matrix[np.ix_(members, members)]
    n = matrix.shape[0]
    auth = np.diagonal(matrix).copy()
    imp = matrix[~np.eye(n, dtype=bool)]
    return ScoreSet(auth, imp)


def evaluate_subset(ds, head, far_targets):
    scores = split_scores(subset_score_matrix(ds, head))
    return scores, [tar_at_far(scores, far) for far in far_targets]


def score_pairs(ds, matrix):
    """Rows for the score CSV: (pair_type, selfie_subject, doc_subject, score)."""
    ids = ds.subject_ids
    n = len(ids)
    for i in range(n):
        for j in range(n):
            yield ("authentic" if i == j else "impostor", ids[i], ids[j], matrix[i, j])


def histogram(scores, bins=HIST_BINS, value_range=HIST_RANGE):
    counts, edges = np.histogram(scores, bins=bins, range=value_range)
    return counts, edges


def gender_analysis(subsets, head, far_targets):
    """Scores pooled over subsets, impostors restricted to same-gender pairs.

    ``subsets`` maps a subset name to its dataset.
    """
    pooled = {Gender.MALE: ([], []), Gender.FEMALE: ([], [])}
    per_subset = {}
    for name, ds in subsets.items():
        matrix = subset_score_matrix(ds, head)
        per_subset[name] = {}
        for g, (auth, imp) in pooled.items():
            members = np.flatnonzero([x is g for x in ds.gender])
            if members.size < 2:
                continue
            s = split_scores(matrix, members)
            auth.append(s.authentic)
            imp.append(s.impostor)
            per_subset[name][g.value] = [tar_at_far(s, f).to_dict() for f in far_targets]
    report = {"per_subset": per_subset, "pooled": {}}
    score_sets = {}
    for g, (auth, imp) in pooled.items():
        if not auth:
            raise InsufficientDataError(f"no subset has two or more {g.value} subjects")
        s = ScoreSet(np.concatenate(auth), np.concatenate(imp))
        score_sets[g.value] = s
        report["pooled"][g.value] = {
            "tar_at_far": [tar_at_far(s, f).to_dict() for f in far_targets],
            "d_prime": d_prime(s),
            "authentic": score_stats(s.authentic),
            "impostor": score_stats(s.impostor),
        }
    return report, score_sets


def _group_means(matrix, members):
    """Mean genuine score of ``members`` and mean impostor score of their documents.

    Impostors pair each member's document with every other subject's selfie
    in the subset.
    """
    auth = matrix[members, members]
    cols = matrix[:, members]
    mask = np.ones(cols.shape, dtype=bool)
    mask[members, np.arange(members.size)] = False
    return float(auth.mean()), float(cols[mask].mean())


def card_format_analysis(subsets, head, n_draws, rng, min_group=10):
    """Resample the majority card format down to the minority count.

    Subsets where the minority format has fewer than ``min_group``
    subjects are skipped. Returns a list of row dicts.
    """
    rows = []
    for name, ds in subsets.items():
        fmt = np.array([c.value for c in ds.card_format])
        yellow = np.flatnonzero(fmt == CardFormat.YELLOW.value)
        blue = np.flatnonzero(fmt == CardFormat.BLUE.value)
        if min(yellow.size, blue.size) < max(min_group, 1):
            continue
        if yellow.size <= blue.size:
            minority, majority = (CardFormat.YELLOW, yellow), (CardFormat.BLUE, blue)
        else:
            minority, majority = (CardFormat.BLUE, blue), (CardFormat.YELLOW, yellow)
        matrix = subset_score_matrix(ds, head)
        k = minority[1].size
        m_auth, m_imp = _group_means(matrix, minority[1])
        rows.append({"subset": name, "card_format": minority[0].value, "draw": "all",
                     "n": int(k), "mean_authentic": m_auth, "mean_impostor": m_imp})
        for draw in range(n_draws):
            pick = np.sort(rng.choice(majority[1], size=k, replace=False))
            a, i = _group_means(matrix, pick)
            rows.append({"subset": name, "card_format": majority[0].value, "draw": draw,
                         "n": int(k), "mean_authentic": a, "mean_impostor": i})
    if not rows:
        raise InsufficientDataError(
            f"no subset has at least {min_group} subjects of each card format")
    return rows


def card_format_verdicts(rows):
    """Per subset: does every draw put yellow authentic mean below blue?"""
    out = {}
    by_subset = {}
    for r in rows:
        by_subset.setdefault(r["subset"], []).append(r)
    for name, group in by_subset.items():
        ref = next(r for r in group if r["draw"] == "all")
        draws = [r for r in group if r["draw"] != "all"]
        if ref["card_format"] == CardFormat.BLUE.value:
            ok = [d["mean_authentic"] < ref["mean_authentic"] for d in draws]
        else:
            ok = [ref["mean_authentic"] < d["mean_authentic"] for d in draws]
        out[name] = {"yellow_below_blue": ok, "all_draws": bool(ok) and all(ok)}
    return out
