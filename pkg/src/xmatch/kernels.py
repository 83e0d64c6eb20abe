"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Both paths are always importable so they can be benchmarked and compared;
the module-level names (``cosine_matrix``, ``select_negatives``) point at
whichever backend ``_accel`` selected.
"""
import numpy as np

from ._accel import USE_NUMBA

# select_negatives outcome codes
SKIP, SEMI_HARD, FALLBACK = 0, 1, 2


def cosine_matrix_numpy(rows, cols, block=1024):
    """Clamped dot products ``rows @ cols.T`` computed in row blocks."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    out = np.empty((rows.shape[0], cols.shape[0]), dtype=np.float64)
    ct = cols.T
    for start in range(0, rows.shape[0], block):
        stop = min(start + block, rows.shape[0])
        np.matmul(rows[start:stop], ct, out=out[start:stop])
    np.clip(out, -1.0, 1.0, out=out)
    return out


def select_negatives_numpy(dist, subject, modality, anchors, margin, u):
    """Pick one negative per anchor from a within-batch distance matrix.

    Args:
      dist: (B, B) squared distances.
      subject: (B,) integer subject index per batch slot.
      modality: (B,) 0 for selfie, 1 for document.
      anchors: (A,) anchor slots, processed in the given order.
      margin: hinge margin.
      u: (A,) uniforms in [0, 1) used to choose among semi-hard candidates.

    Returns:
      (positive, negative, kind) arrays of length A. ``kind`` is SKIP,
      SEMI_HARD or FALLBACK; slots with SKIP hold -1.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    n_anchor = anchors.size
    positive = np.full(n_anchor, -1, dtype=np.int64)
    negative = np.full(n_anchor, -1, dtype=np.int64)
    kind = np.zeros(n_anchor, dtype=np.int8)
    if n_anchor == 0:
        return positive, negative, kind

    a_subj = subject[anchors]
    a_mod = modality[anchors]
    partner = (subject[None, :] == a_subj[:, None]) & (modality[None, :] != a_mod[:, None])
    has_pos = partner.any(axis=1)
    pos = np.argmax(partner, axis=1)

    d_row = dist[anchors]
    d_ap = d_row[np.arange(n_anchor), pos]
    cand = (subject[None, :] != a_subj[:, None]) & (modality[None, :] != a_mod[:, None])
    cand &= has_pos[:, None]
    above = cand & (d_row > d_ap[:, None])
    semi = above & (d_row < (d_ap + margin)[:, None])

    n_semi = semi.sum(axis=1)
    pick = np.minimum((u * n_semi).astype(np.int64), np.maximum(n_semi - 1, 0))
    # position of the (pick+1)-th True in each row
    rank = np.cumsum(semi, axis=1)
    semi_choice = np.argmax(semi & (rank == (pick + 1)[:, None]), axis=1)

    masked = np.where(above, d_row, np.inf)
    hard_choice = np.argmin(masked, axis=1)
    has_above = above.any(axis=1)

    use_semi = n_semi > 0
    use_fb = ~use_semi & has_above
    negative[use_semi] = semi_choice[use_semi]
    negative[use_fb] = hard_choice[use_fb]
    kind[use_semi] = SEMI_HARD
    kind[use_fb] = FALLBACK
    keep = kind != SKIP
    positive[keep] = pos[keep]
    return positive, negative, kind


if USE_NUMBA:
    import numba as nb

    @nb.njit(parallel=True, fastmath=True, cache=True, nogil=True)
    def _cosine_rows(rows, cols, out):
        n, d = rows.shape
        m = cols.shape[0]
        for i in nb.prange(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    acc += rows[i, k] * cols[j, k]
                if acc > 1.0:
                    acc = 1.0
                elif acc < -1.0:
                    acc = -1.0
                out[i, j] = acc

    @nb.njit(cache=True, nogil=True)
    def _select_negatives(dist, subject, modality, anchors, margin, u,
                          positive, negative, kind):
        n_slot = dist.shape[0]
        for t in range(anchors.shape[0]):
            a = anchors[t]
            p = -1
            for j in range(n_slot):
                if subject[j] == subject[a] and modality[j] != modality[a]:
                    p = j
                    break
            if p < 0:
                continue
            d_ap = dist[a, p]
            upper = d_ap + margin
            n_semi = 0
            best = -1
            best_d = np.inf
            for j in range(n_slot):
                if subject[j] == subject[a] or modality[j] == modality[a]:
                    continue
                d_an = dist[a, j]
                if d_an > d_ap:
                    if d_an < upper:
                        n_semi += 1
                    if d_an < best_d:
                        best_d = d_an
                        best = j
            if n_semi > 0:
                pick = int(u[t] * n_semi)
                if pick > n_semi - 1:
                    pick = n_semi - 1
                seen = 0
                for j in range(n_slot):
                    if subject[j] == subject[a] or modality[j] == modality[a]:
                        continue
                    d_an = dist[a, j]
                    if d_an > d_ap and d_an < upper:
                        if seen == pick:
                            negative[t] = j
                            break
                        seen += 1
                positive[t] = p
                kind[t] = SEMI_HARD
            elif best >= 0:
                positive[t] = p
                negative[t] = best
                kind[t] = FALLBACK

    def cosine_matrix_numba(rows, cols):
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        cols = np.ascontiguousarray(cols, dtype=np.float64)
        out = np.empty((rows.shape[0], cols.shape[0]), dtype=np.float64)
        _cosine_rows(rows, cols, out)
        return out

    def select_negatives_numba(dist, subject, modality, anchors, margin, u):
        anchors = np.ascontiguousarray(anchors, dtype=np.int64)
        positive = np.full(anchors.size, -1, dtype=np.int64)
        negative = np.full(anchors.size, -1, dtype=np.int64)
        kind = np.zeros(anchors.size, dtype=np.int8)
        _select_negatives(np.ascontiguousarray(dist, dtype=np.float64),
                          np.ascontiguousarray(subject, dtype=np.int64),
                          np.ascontiguousarray(modality, dtype=np.int8),
                          anchors, float(margin),
                          np.ascontiguousarray(u, dtype=np.float64),
                          positive, negative, kind)
        return positive, negative, kind

    cosine_matrix = cosine_matrix_numba
    select_negatives = select_negatives_numba
else:
    cosine_matrix_numba = None
    select_negatives_numba = None
    cosine_matrix = cosine_matrix_numpy
    select_negatives = select_negatives_numpy
