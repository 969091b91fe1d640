"""Numba-jitted hot kernels.

Imported lazily by :mod:`embattr.kernels`; importing this module pulls in
numba and compiles on first call (cached on disk afterwards).  Reductions
run in ascending index order, matching the numpy fallbacks' contracts.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def supcon_kernel(z, labels, tau, want_grad):
    """Supervised contrastive loss over a batch of latent rows.

    Returns (loss, n_contributing, grad, dloss_dtau); anchors without a
    same-class partner are excluded and n_contributing counts the rest.
    When want_grad is False the grad array is empty and dloss_dtau is 0.
    """
    n, d = z.shape
    sim = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        sim[i, i] = 0.0
        for j in range(i + 1, n):
            s = 0.0
            for t in range(d):
                s += z[i, t] * z[j, t]
            s /= tau
            sim[i, j] = s
            sim[j, i] = s

    row_max = np.empty(n, dtype=np.float64)
    row_denom = np.empty(n, dtype=np.float64)
    pos_count = np.zeros(n, dtype=np.int64)
    loss_sum = 0.0
    n_contrib = 0
    for i in range(n):
        m = -np.inf
        for j in range(n):
            if j != i and sim[i, j] > m:
                m = sim[i, j]
        denom = 0.0
        pos_sum = 0.0
        cnt = 0
        for j in range(n):
            if j == i:
                continue
            denom += np.exp(sim[i, j] - m)
            if labels[j] == labels[i]:
                pos_sum += sim[i, j]
                cnt += 1
        row_max[i] = m
        row_denom[i] = denom
        pos_count[i] = cnt
        if cnt > 0:
            n_contrib += 1
            loss_sum += (m + np.log(denom)) - pos_sum / cnt

    if n_contrib == 0:
        return 0.0, 0, np.zeros((0, 0), dtype=np.float64), 0.0
    loss = loss_sum / n_contrib

    if not want_grad:
        return loss, n_contrib, np.zeros((0, 0), dtype=np.float64), 0.0

    grad = np.zeros((n, d), dtype=np.float64)
    dtau_acc = 0.0
    for i in range(n):
        if pos_count[i] == 0:
            continue
        inv_pos = 1.0 / pos_count[i]
        for j in range(n):
            if j == i:
                continue
            g = np.exp(sim[i, j] - row_max[i]) / row_denom[i]
            if labels[j] == labels[i]:
                g -= inv_pos
            for t in range(d):
                grad[i, t] += g * z[j, t]
                grad[j, t] += g * z[i, t]
            dtau_acc += g * sim[i, j]
    scale = 1.0 / (n_contrib * tau)
    for i in range(n):
        for t in range(d):
            grad[i, t] *= scale
    dtau = -dtau_acc * scale
    return loss, n_contrib, grad, dtau


@njit(cache=True)
def knn_select_kernel(sims, support_labels, k, n_classes):
    """Top-k vote counts and per-class summed similarity, row by row.

    Ranking is by descending similarity with ties going to the smaller
    exemplar index (an equal latecomer never displaces the incumbent).
    """
    n, m = sims.shape
    votes = np.zeros((n, n_classes), dtype=np.int64)
    simsum = np.zeros((n, n_classes), dtype=np.float64)
    top_idx = np.empty(k, dtype=np.int64)
    top_sim = np.empty(k, dtype=np.float64)
    for qi in range(n):
        size = 0
        for j in range(m):
            s = sims[qi, j]
            if size < k:
                pos = size
                while pos > 0 and top_sim[pos - 1] < s:
                    top_sim[pos] = top_sim[pos - 1]
                    top_idx[pos] = top_idx[pos - 1]
                    pos -= 1
                top_sim[pos] = s
                top_idx[pos] = j
                size += 1
            elif s > top_sim[k - 1]:
                pos = k - 1
                while pos > 0 and top_sim[pos - 1] < s:
                    top_sim[pos] = top_sim[pos - 1]
                    top_idx[pos] = top_idx[pos - 1]
                    pos -= 1
                top_sim[pos] = s
                top_idx[pos] = j
        for r in range(k):
            c = support_labels[top_idx[r]]
            votes[qi, c] += 1
            simsum[qi, c] += top_sim[r]
    return votes, simsum
