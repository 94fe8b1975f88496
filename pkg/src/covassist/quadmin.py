"""Exact minimization of a PSD quadratic form outside the unit box."""

from __future__ import annotations

import itertools

import numpy as np

from .errors import InvalidInput


def min_quadratic(M, sum_zero: bool = False, return_argmin: bool = False):
    """
    Minimize ``x' M x`` over ``|x_i| >= 1`` for every coordinate.

    Parameters
    ----------
    M : (k, k) array
        Symmetric positive semidefinite matrix.
    sum_zero : bool
        Also impose ``sum(x) == 0``.
    return_argmin : bool
        Return ``(value, x)`` instead of the value alone.

    Notes
    -----
    Within a sign orthant the problem is convex, so its minimizer is the
    feasible stationary point of some face. Every face is a choice of
    coordinates clamped at ``+-1``; the free coordinates solve the reduced
    KKT system. The first sign is fixed by the symmetry ``x -> -x``.
    Returns ``inf`` when no feasible point exists.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k = M.shape[0]
    if M.shape != (k, k) or k == 0:
        raise InvalidInput("M must be a nonempty square matrix")
    M = (M + M.T) / 2
    best, arg = np.inf, None
    tol = 1e-10
    for tail in itertools.product((1.0, -1.0), repeat=k - 1):
        s = np.array((1.0,) + tail)
        for nfree in range(k + 1):
            for free in itertools.combinations(range(k), nfree):
                free = list(free)
                clamp = [i for i in range(k) if i not in free]
                x = s.copy()
                if free:
                    rhs = -M[np.ix_(free, clamp)] @ s[clamp]
                    A = M[np.ix_(free, free)]
                    if sum_zero:
                        n = len(free)
                        A = np.block([[A, np.ones((n, 1))], [np.ones((1, n)), np.zeros((1, 1))]])
                        rhs = np.append(rhs, -s[clamp].sum())
                    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
                    x[free] = sol[: len(free)]
                    if np.any(s[free] * x[free] < 1 - tol):
                        continue
                if sum_zero and abs(x.sum()) > 1e-9 * max(1.0, np.abs(x).max()):
                    continue
                val = float(x @ M @ x)
                if val < best - 1e-14:
                    best, arg = val, x
    best = max(best, 0.0) if np.isfinite(best) else best
    return (best, arg) if return_argmin else best


def schur_complement(M, F, N):
    """``M_FF - M_FN M_NN^{-1} M_NF`` with ``F``, ``N`` index lists."""
    M = np.asarray(M, dtype=float)
    F = list(F)
    N = list(N)
    S = M[np.ix_(F, F)]
    if N:
        S = S - M[np.ix_(F, N)] @ np.linalg.solve(M[np.ix_(N, N)], M[np.ix_(N, F)])
    return (S + S.T) / 2
