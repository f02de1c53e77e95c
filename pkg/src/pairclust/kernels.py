"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``pair_kl_terms``, ``min_cost_assignment``) dispatch on
``PAIRCLUST_NUMBA``; ``.numba_impl`` / ``.numpy_impl`` reach either path
directly, which the tests use to cross-check them.
"""

import numpy as np

from ._accel import dispatch, njit


# --------------------------------------------------------------------------
# contrastive KL pair loss


@njit
def _pair_kl_terms_numba(probs, log_probs, first, second, labels, margin):
    n_rows, n_cols = probs.shape
    grad = np.zeros((n_rows, n_cols))
    total = 0.0
    active = 0
    for t in range(first.shape[0]):
        a = first[t]
        b = second[t]
        kl_ab = 0.0
        kl_ba = 0.0
        for k in range(n_cols):
            diff = log_probs[a, k] - log_probs[b, k]
            kl_ab += probs[a, k] * diff
            kl_ba -= probs[b, k] * diff
        if labels[t] == 1:
            total += kl_ab + kl_ba
            c_ab = 1.0
            c_ba = 1.0
        else:
            c_ab = 0.0
            c_ba = 0.0
            if margin - kl_ab > 0.0:
                total += margin - kl_ab
                c_ab = -1.0
                active += 1
            if margin - kl_ba > 0.0:
                total += margin - kl_ba
                c_ba = -1.0
                active += 1
        # KL(a* || b) only moves b, KL(b* || a) only moves a
        if c_ab != 0.0:
            for k in range(n_cols):
                grad[b, k] -= c_ab * probs[a, k] / probs[b, k]
        if c_ba != 0.0:
            for k in range(n_cols):
                grad[a, k] -= c_ba * probs[b, k] / probs[a, k]
    return total, grad, active


def _pair_kl_terms_numpy(probs, log_probs, first, second, labels, margin):
    n_rows = probs.shape[0]
    diff = log_probs[first] - log_probs[second]
    kl_ab = np.einsum("ij,ij->i", probs[first], diff)
    kl_ba = -np.einsum("ij,ij->i", probs[second], diff)

    similar = labels == 1
    hinge_ab = np.where(similar, 0.0, margin - kl_ab)
    hinge_ba = np.where(similar, 0.0, margin - kl_ba)
    on_ab = ~similar & (hinge_ab > 0.0)
    on_ba = ~similar & (hinge_ba > 0.0)
    total = (kl_ab[similar].sum() + kl_ba[similar].sum()
             + hinge_ab[on_ab].sum() + hinge_ba[on_ba].sum())

    c_ab = np.where(similar, 1.0, np.where(on_ab, -1.0, 0.0))
    c_ba = np.where(similar, 1.0, np.where(on_ba, -1.0, 0.0))
    # coeff[s, r]: weight with which row s (held constant) pulls on row r
    flat = np.concatenate([first * n_rows + second, second * n_rows + first])
    weights = np.concatenate([c_ab, c_ba])
    coeff = np.bincount(flat, weights=weights, minlength=n_rows * n_rows)
    coeff = coeff.reshape(n_rows, n_rows)
    grad = -(coeff.T @ probs) / probs
    return float(total), grad, int(on_ab.sum() + on_ba.sum())


pair_kl_terms = dispatch(_pair_kl_terms_numba, _pair_kl_terms_numpy)
pair_kl_terms.__doc__ = """Summed hinged-KL pair loss and its gradient w.r.t. the probabilities.

Parameters are a clamped ``B x M`` probability array, its elementwise log,
two index arrays and a 0/1 label array of equal length, and the margin.
Returns ``(loss_sum, grad_probs, active_hinges)``. The starred side of each
KL term is held constant, so ``KL(P_a || P_b)`` only contributes gradient to
row ``b``.
"""


# --------------------------------------------------------------------------
# square min-cost assignment (shortest augmenting path with potentials)


@njit
def _min_cost_assignment_numba(cost):
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def _min_cost_assignment_numpy(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[owner[1:] - 1] = np.arange(n)
    return col_of_row


min_cost_assignment = dispatch(_min_cost_assignment_numba, _min_cost_assignment_numpy)
min_cost_assignment.__doc__ = """Column assigned to each row of a square cost matrix, minimising total cost."""


# --------------------------------------------------------------------------
# row scatter-add (pair-level gradients back onto per-sample rows)


@njit
def _scatter_add_rows_numba(target, index, rows):
    for t in range(index.shape[0]):
        r = index[t]
        for k in range(rows.shape[1]):
            target[r, k] += rows[t, k]
    return target


def _scatter_add_rows_numpy(target, index, rows):
    np.add.at(target, index, rows)
    return target


scatter_add_rows = dispatch(_scatter_add_rows_numba, _scatter_add_rows_numpy)
scatter_add_rows.__doc__ = """In place ``target[index[t]] += rows[t]`` for every t; returns ``target``."""
