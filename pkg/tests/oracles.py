"""
Slow reference computations used to check the package.

None of these share code with the package: they enumerate, grid-search or
call general-purpose scipy solvers.
"""

import itertools

import numpy as np
from scipy import optimize


def connected_subsets(p, edges, m):
    """All connected node sets of size <= m, by brute force over subsets."""
    adj = {i: set() for i in range(p)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    out = set()
    for k in range(1, m + 1):
        for sub in itertools.combinations(range(p), k):
            seen = {sub[0]}
            stack = [sub[0]]
            members = set(sub)
            while stack:
                v = stack.pop()
                for w in adj[v] & members:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if seen == members:
                out.add(sub)
    return out


def box_quadratic_min(M):
    """
    ``min x'Mx`` over ``|x_i| >= 1`` for positive definite ``M``.

    Inside each sign orthant the problem is a convex quadratic over a box,
    solved by L-BFGS-B.
    """
    k = M.shape[0]
    best = np.inf
    for signs in itertools.product((1.0, -1.0), repeat=k):
        s = np.array(signs)
        A = M * np.outer(s, s)
        res = optimize.minimize(lambda y: y @ A @ y, np.ones(k) * 1.5, jac=lambda y: 2 * A @ y,
                                bounds=[(1, None)] * k, method="L-BFGS-B",
                                options=dict(ftol=1e-15, gtol=1e-12, maxiter=10000))
        best = min(best, float(res.fun))
    return best


def grid_quadratic_min(M, step=0.01, hi=2.5):
    """
    Grid search of ``x'Mx`` over ``1 <= |x_i| <= hi``.

    All coordinates but the last run over the grid; the last is a scalar
    convex problem over ``|x| >= 1``, solved by clamping. The first sign is
    fixed since the form is even.
    """
    k = M.shape[0]
    side = np.arange(1.0, hi + step / 2, step)
    if k == 1:
        return float(M[0, 0])
    both = np.concatenate([-side[::-1], side])
    grids = np.meshgrid(*([side] + [both] * (k - 2)), indexing="ij")
    Y = np.stack([g.ravel() for g in grids], axis=1)
    A, b, c = M[:-1, :-1], M[:-1, -1], M[-1, -1]
    best = np.inf
    for chunk in np.array_split(Y, max(1, Y.shape[0] // 500000)):
        lin = chunk @ b
        x = -lin / c
        x = np.where(np.abs(x) >= 1, x, np.where(x >= 0, 1.0, -1.0))
        vals = np.einsum("ni,ij,nj->n", chunk, A, chunk) + 2 * lin * x + c * x * x
        best = min(best, float(vals.min()))
    return best


def l0_objective(X, y, theta, u):
    r = y - X @ theta
    return 0.5 * r @ r + u * u / 2 * np.count_nonzero(theta)


def l0_enumeration(X, y, u, v):
    """
    Enumerate the ``3^k`` zero/sign states; each is a nonnegative least
    squares problem in the excess magnitude over ``v``.
    """
    k = X.shape[1]
    best = 0.5 * y @ y
    for state in itertools.product((0, 1, -1), repeat=k):
        S = [i for i in range(k) if state[i]]
        if not S:
            continue
        s = np.array([state[i] for i in S], dtype=float)
        A = X[:, S] * s
        x, _ = optimize.nnls(A, y - v * A.sum(axis=1))
        theta = np.zeros(k)
        theta[S] = s * (v + x)
        best = min(best, l0_objective(X, y, theta, u))
    return best


def l0_grid(X, y, u, v, width=6.0, step=0.05):
    """Dense magnitude grid over every state, for |I| <= 3."""
    k = X.shape[1]
    mags = np.arange(v, v + width + step / 2, step)
    axis = np.concatenate([[0.0], mags, -mags])
    grids = np.meshgrid(*[axis] * k, indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    R = y[None, :] - T @ X.T
    obj = 0.5 * np.sum(R * R, axis=1) + u * u / 2 * np.count_nonzero(T, axis=1)
    return float(obj.min())


def projection_T(R, y, Npos):
    """``y' (P_R - P_{R_N}) y`` with orthogonal projections from ``lstsq``."""
    def proj(A):
        if A.shape[1] == 0:
            return np.zeros((A.shape[0], A.shape[0]))
        return A @ np.linalg.pinv(A)
    return float(y @ (proj(R) - proj(R[:, Npos])) @ y)


def lasso_reference(X, y, lam):
    """Lasso through the split ``b = b+ - b-`` with bound constraints."""
    p = X.shape[1]

    def f(z):
        b = z[:p] - z[p:]
        r = y - X @ b
        return 0.5 * r @ r + lam * z.sum()

    def grad(z):
        b = z[:p] - z[p:]
        g = -X.T @ (y - X @ b)
        return np.concatenate([g + lam, -g + lam])

    res = optimize.minimize(f, np.zeros(2 * p), jac=grad, bounds=[(0, None)] * (2 * p),
                            method="L-BFGS-B", options=dict(ftol=1e-16, gtol=1e-12, maxiter=50000))
    return res.x[:p] - res.x[p:]


def naive_hamming(a, b):
    return sum(1 for x, y in zip(a, b) if np.sign(x) != np.sign(y))


def random_spd(rng, k, cond=20.0):
    Qm, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = np.exp(rng.uniform(0, np.log(cond), k))
    return (Qm * ev) @ Qm.T
