"""Pure-numpy kernels: CTC forward-backward, CTC prefix scoring, edit counts.

These are the loop-heavy inner kernels; asrkit.kernels._ctc_ext holds a
compiled twin with identical signatures and semantics.  All probability
math is float64 log-space regardless of caller dtype.
"""

import numpy as np

NEG_INF = -np.float64(np.inf)


def ctc_loss_grad(log_post: np.ndarray, labels: np.ndarray):
    """CTC negative log-likelihood and its gradient w.r.t. log_post.

    log_post: (T, V) float64 log-posteriors (rows normalized), blank id 0.
    labels:   (U,) int32 label ids, no blanks.  The caller guarantees the
              label fits in T frames.
    Returns (loss: float, grad: (T, V) float64).
    """
    log_post = np.ascontiguousarray(log_post, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T, V = log_post.shape
    U = labels.shape[0]
    S = 2 * U + 1
    ext = np.zeros(S, dtype=np.int64)
    ext[1::2] = labels

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_post[0, 0]
    if S > 1:
        alpha[0, 1] = log_post[0, ext[1]]
    same_as_two_back = np.zeros(S, dtype=bool)
    if S > 2:
        same_as_two_back[2:] = ext[2:] == ext[:-2]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.full(S, NEG_INF)
        step[1:] = prev[:-1]
        skip = np.full(S, NEG_INF)
        skip[2:] = prev[:-2]
        # the skip transition is illegal into blanks and repeated labels
        skip[(ext == 0) | same_as_two_back] = NEG_INF
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + log_post[t, ext]

    total = alpha[T - 1, S - 1]
    if S > 1:
        total = np.logaddexp(total, alpha[T - 1, S - 2])
    loss = -float(total)

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = log_post[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = log_post[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.full(S, NEG_INF)
        step[:-1] = nxt[1:]
        skip = np.full(S, NEG_INF)
        skip[:-2] = nxt[2:]
        blocked = np.zeros(S, dtype=bool)
        blocked[:-2] = (ext[2:] == 0) | (ext[2:] == ext[:-2])
        skip[blocked] = NEG_INF
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip) + log_post[t, ext]

    # state occupancy: alpha and beta both include the frame-t emission,
    # so subtract it once
    gamma = alpha + beta - log_post[:, ext] - total
    grad = np.zeros_like(log_post)
    occ = np.exp(gamma)
    occ[~np.isfinite(gamma)] = 0.0
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return loss, grad


def ctc_prefix_all(log_post: np.ndarray, last: int, r_prev: np.ndarray,
                   empty: bool):
    """Extend one CTC prefix by every vocabulary token at once.

    log_post: (T, V) float64 log-posteriors, blank id 0.
    last:     id of the prefix's final token (ignored when empty=True).
    r_prev:   (T, 2) float64; column 0 = log p(prefix, last frame non-blank),
              column 1 = log p(prefix, last frame blank), per frame.
    empty:    True when the prefix has no tokens yet.

    Returns (psi: (V,) prefix scores for each one-token extension,
             r_new: (V, T, 2) the extensions' state arrays).
    Columns for blank or other never-extended ids are computed but
    meaningless; callers mask them out.
    """
    log_post = np.ascontiguousarray(log_post, dtype=np.float64)
    T, V = log_post.shape
    r_prev = np.asarray(r_prev, dtype=np.float64)

    # phi[t, c]: mass of the old prefix at frame t usable before emitting c;
    # an extension repeating the last token may only come out of blank.
    phi = np.broadcast_to(
        np.logaddexp(r_prev[:, 0], r_prev[:, 1])[:, None], (T, V)).copy()
    if not empty and last >= 0:
        phi[:, last] = r_prev[:, 1]

    r_nb = np.full((T, V), NEG_INF)
    r_b = np.full((T, V), NEG_INF)
    psi = np.full(V, NEG_INF)

    phi_start = np.full(V, 0.0 if empty else NEG_INF)
    r_nb[0] = log_post[0] + phi_start
    psi = phi_start + log_post[0]
    for t in range(1, T):
        r_nb[t] = log_post[t] + np.logaddexp(r_nb[t - 1], phi[t - 1])
        r_b[t] = log_post[t, 0] + np.logaddexp(r_b[t - 1], r_nb[t - 1])
        psi = np.logaddexp(psi, phi[t - 1] + log_post[t])

    r_new = np.stack([r_nb.T, r_b.T], axis=2)  # (V, T, 2)
    return psi, r_new


def edit_counts(ref: np.ndarray, hyp: np.ndarray):
    """Levenshtein alignment counts (substitutions, deletions, insertions).

    Among all minimum-total-edit alignments, the one maximizing the number
    of substitutions is chosen (equivalently, minimizing deletions +
    insertions), which makes the count triple unique.
    """
    ref = np.asarray(ref, dtype=np.int64)
    hyp = np.asarray(hyp, dtype=np.int64)
    n, m = len(ref), len(hyp)
    # per cell: (total edits, deletions + insertions), minimized
    # lexicographically
    total = np.zeros((n + 1, m + 1), dtype=np.int64)
    di = np.zeros((n + 1, m + 1), dtype=np.int64)
    total[:, 0] = np.arange(n + 1)
    di[:, 0] = np.arange(n + 1)
    total[0, :] = np.arange(m + 1)
    di[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub_cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            best_t = total[i - 1, j - 1] + sub_cost
            best_di = di[i - 1, j - 1]
            t_del = total[i - 1, j] + 1
            d_del = di[i - 1, j] + 1
            if (t_del, d_del) < (best_t, best_di):
                best_t, best_di = t_del, d_del
            t_ins = total[i, j - 1] + 1
            d_ins = di[i, j - 1] + 1
            if (t_ins, d_ins) < (best_t, best_di):
                best_t, best_di = t_ins, d_ins
            total[i, j] = best_t
            di[i, j] = best_di
    t, d_plus_i = int(total[n, m]), int(di[n, m])
    # d - i is pinned by the length difference
    deletions = (d_plus_i + (n - m)) // 2
    insertions = d_plus_i - deletions
    subs = t - d_plus_i
    return subs, deletions, insertions
