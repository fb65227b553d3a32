"""Pure-Python/NumPy versions of the hot kernels.

Every function here has a typed twin in ``_kernels.pyx`` with the same
signature and semantics. ``_backend`` picks one at import time.
"""

import numpy as np

NEG_INF = -np.inf


def _lse2(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


def ctc_alpha_beta(logprobs, ext_labels):
    """Log-domain CTC forward and backward variables.

    ``ext_labels`` is the blank-augmented target (blank id 0 at even
    positions). ``beta[t, s]`` excludes the emission at ``t`` so that
    ``alpha[t, s] + beta[t, s]`` is the log joint of all paths through
    state ``s`` at frame ``t``.
    """
    logprobs = np.ascontiguousarray(logprobs, dtype=np.float64)
    ext = np.ascontiguousarray(ext_labels, dtype=np.int64)
    T = logprobs.shape[0]
    S = ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)

    skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        skip[s] = ext[s] != 0 and ext[s] != ext[s - 2]

    alpha[0, 0] = logprobs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logprobs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        row = logprobs[t]
        for s in range(S):
            acc = prev[s]
            if s >= 1:
                acc = _lse2(acc, prev[s - 1])
            if skip[s]:
                acc = _lse2(acc, prev[s - 2])
            if acc != NEG_INF:
                alpha[t, s] = acc + row[ext[s]]

    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        row = logprobs[t + 1]
        for s in range(S):
            acc = NEG_INF
            if nxt[s] != NEG_INF:
                acc = nxt[s] + row[ext[s]]
            if s + 1 < S and nxt[s + 1] != NEG_INF:
                acc = _lse2(acc, nxt[s + 1] + row[ext[s + 1]])
            if s + 2 < S and skip[s + 2] and nxt[s + 2] != NEG_INF:
                acc = _lse2(acc, nxt[s + 2] + row[ext[s + 2]])
            beta[t, s] = acc
    return alpha, beta


def levinson_durbin(r, order):
    """Solve the autocorrelation normal equations.

    Returns ``(a, k, err)`` where ``a[0] == 1`` and the prediction-error
    filter is ``1 + a[1] z^-1 + ... + a[p] z^-p``.
    """
    r = np.asarray(r, dtype=np.float64)
    a = np.zeros(order + 1)
    k = np.zeros(order)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i]
        for j in range(1, i):
            acc += a[j] * r[i - j]
        ki = -acc / err
        k[i - 1] = ki
        prev = a.copy()
        for j in range(1, i):
            a[j] = prev[j] + ki * prev[i - j]
        a[i] = ki
        err *= 1.0 - ki * ki
    return a, k, err


def edit_distance_table(ref_ids, hyp_ids):
    """Unit-cost Levenshtein DP table, shape ``(len(ref)+1, len(hyp)+1)``."""
    n = len(ref_ids)
    m = len(hyp_ids)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref_ids[i - 1]
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (0 if ri == hyp_ids[j - 1] else 1)
            ins = d[i, j - 1] + 1
            dele = d[i - 1, j] + 1
            d[i, j] = min(sub, ins, dele)
    return d


def overlap_add(frames, hop, length):
    frames = np.asarray(frames, dtype=np.float64)
    out = np.zeros(length)
    flen = frames.shape[1]
    for i in range(frames.shape[0]):
        start = i * hop
        out[start:start + flen] += frames[i]
    return out
