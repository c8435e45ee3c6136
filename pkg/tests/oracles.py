"""Independent brute-force oracles used by the test suite.

Nothing here imports the code under test beyond plain data containers.
"""

import itertools

import numpy as np


def lasso_objective(k_yy, k_dy, k_dd, lam, x):
    return k_yy - 2 * x @ k_dy + x @ k_dd @ x + lam * np.abs(x).sum()


def exhaustive_lasso(k_yy, k_dy, k_dd, lam):
    """Global minimum of the kernel lasso by enumerating every signed support.

    For each support S and sign pattern s the stationarity system
    K_SS x_S = k_S - lam*s/2 is solved; sign-consistent solutions are candidates.
    """
    k = len(k_dy)
    best_x = np.zeros(k)
    best_f = lasso_objective(k_yy, k_dy, k_dd, lam, best_x)
    for size in range(1, k + 1):
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=size))).T  # size x 2^size
        for support in itertools.combinations(range(k), size):
            idx = np.array(support)
            G = k_dd[np.ix_(idx, idx)]
            rhs = k_dy[idx][:, None] - 0.5 * lam * signs
            try:
                sol = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError:
                continue
            feasible = np.all(np.sign(sol) == signs, axis=0)
            for col in np.flatnonzero(feasible):
                x = np.zeros(k)
                x[idx] = sol[:, col]
                f = lasso_objective(k_yy, k_dy, k_dd, lam, x)
                if f < best_f:
                    best_f, best_x = f, x
    return best_x, best_f


def best_support_error(k_yy, k_dy, k_dd, s):
    """Smallest unpenalized residual over all supports of size s."""
    best = np.inf
    for support in itertools.combinations(range(len(k_dy)), s):
        idx = np.array(support)
        coef = np.linalg.lstsq(k_dd[np.ix_(idx, idx)], k_dy[idx], rcond=None)[0]
        r = k_yy - 2 * coef @ k_dy[idx] + coef @ k_dd[np.ix_(idx, idx)] @ coef
        best = min(best, r)
    return best


def random_rbf_problem(rng, k=8, dim=2, gamma=1.0, spread=1.5):
    """A coding problem whose atoms and sample are random points under an RBF kernel."""
    atoms = rng.normal(scale=spread, size=(k, dim))
    y = rng.normal(scale=spread, size=dim)
    d_dd = ((atoms[:, None, :] - atoms[None, :, :]) ** 2).sum(-1)
    d_dy = ((atoms - y) ** 2).sum(-1)
    return 1.0, np.exp(-gamma * d_dy), np.exp(-gamma * d_dd)


def kernel_klines_direct(Y, k, seed, max_iters=100):
    """Plain K-lines clustering on raw vectors (rows of Y).

    Mirrors the seeding, tie and repair rules of the kernel version but works with
    explicit unit-norm atoms and an SVD of each member block.
    """
    T = Y.shape[0]
    rng = np.random.default_rng(seed)
    sq = (Y * Y).sum(1)
    first = int(rng.integers(T))
    chosen = [first]
    dmin = sq + sq[first] - 2 * Y @ Y[first]
    while len(chosen) < k:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, sq + sq[nxt] - 2 * Y @ Y[nxt])
    D = Y[chosen] / np.linalg.norm(Y[chosen], axis=1, keepdims=True)  # k x M

    prev = None
    for _ in range(max_iters):
        corr = Y @ D.T
        labels = np.argmax(np.abs(corr), axis=1)
        weights = corr[np.arange(T), labels]
        repaired = False
        for c in range(k):
            if np.any(labels == c):
                continue
            resid = sq - weights ** 2
            m = int(np.argmax(resid))
            if resid[m] <= 1e-12:
                continue
            D[c] = Y[m] / np.linalg.norm(Y[m])
            labels[m] = c
            weights[m] = np.linalg.norm(Y[m])
            repaired = True
        if prev is not None and not repaired and np.array_equal(labels, prev):
            break
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            U, s, Vt = np.linalg.svd(Y[members].T, full_matrices=False)
            D[c] = U[:, 0]
        prev = labels.copy()
    corr = Y @ D.T
    w = corr[np.arange(T), labels]
    return labels, sq - w ** 2
