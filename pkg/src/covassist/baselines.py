"""
Comparison methods: a moving-window jump scan, naive hard thresholding,
the lasso by coordinate descent, a BIC-type score and ideal tuning sweeps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidInput, InvalidParameter, NoSignalDetected
from .gram import GramModel


@dataclass(frozen=True)
class SaraConfig:
    lam: float
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise InvalidParameter("h must be at least 1")
        if not self.lam > 0:
            raise InvalidParameter("lambda must be positive")


def sara_scan(y, h: int) -> np.ndarray:
    """
    Local difference of means across each cut.

    ``W[i]`` compares the ``h`` observations after position ``i`` with the
    ``h`` observations ending at ``i``; it estimates the jump between ``i``
    and ``i + 1``. Positions without a full window on both sides are 0.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if h < 1 or 2 * h >= n:
        raise InvalidParameter(f"window h={h} too large for length {n}")
    c = np.concatenate(([0.0], np.cumsum(y)))
    W = np.zeros(n)
    i = np.arange(h - 1, n - h)
    W[i] = ((c[i + h + 1] - c[i + 1]) - (c[i + 1] - c[i + 1 - h])) / h
    return W


def sara(y, cfg: SaraConfig) -> np.ndarray:
    """Thresholded scan ``W_i 1{|W_i| > lambda}``."""
    W = sara_scan(y, cfg.h)
    return np.where(np.abs(W) > cfg.lam, W, 0.0)


def naive_threshold(w, t: float) -> np.ndarray:
    """Keep ``w_j`` where ``|w_j| > t``."""
    w = np.asarray(w, dtype=float)
    return np.where(np.abs(w) > t, w, 0.0)


def naive_threshold_level(p: int, s_p: float, tau_p: float) -> float:
    """
    Cutoff on ``|d_j|`` for change-point data filtered to ``B = I``.

    The squared cutoff is ``(r + 2 vartheta)^2 / (2 r) log p`` with
    ``vartheta = log(p/s_p)/log p`` and ``r = tau_p^2 / (2 log p)``: the
    optimal orthogonal-design cutoff for noise of variance 2.
    """
    logp = math.log(p)
    th = math.log(p / s_p) / logp
    r = tau_p ** 2 / (2 * logp)
    return math.sqrt((r + 2 * th) ** 2 / (2 * r) * logp)


# ---------------------------------------------------------------------------
# Lasso
# ---------------------------------------------------------------------------


@dataclass
class LassoResult:
    beta: np.ndarray
    n_iter: int
    converged: bool
    objective_trace: list


def lasso_cd(G, xty, lam: float, max_iter: int = 1000, tol: float = 1e-7,
             beta0=None, yty: float = 0.0) -> LassoResult:
    """
    Coordinate descent for ``0.5 ||Y - X b||^2 + lam ||b||_1``.

    Works from the Gram matrix ``G = X'X`` (array or :class:`GramModel`)
    and ``X'Y``. Cyclic sweeps run over a working set until no coordinate
    moves by more than ``tol``; then the optimality conditions are checked
    for all coordinates at once and violators join the working set.
    ``max_iter`` counts sweeps. ``yty`` only shifts the reported objective.
    """
    if lam < 0:
        raise InvalidParameter("lambda must be nonnegative")
    G = G.dense() if isinstance(G, GramModel) else np.asarray(G, dtype=float)
    xty = np.asarray(xty, dtype=float)
    p = xty.size
    if G.shape != (p, p):
        raise InvalidInput("G and X'Y sizes differ")
    diag = np.diag(G).copy()
    if np.any(diag <= 0):
        raise InvalidInput("Gram matrix needs a positive diagonal")
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    grad = G @ beta  # running G beta

    def objective():
        return 0.5 * yty - beta @ xty + 0.5 * beta @ grad + lam * np.abs(beta).sum()

    trace = [objective()]
    work = set(np.flatnonzero(beta).tolist())
    converged = False
    it = 0
    while it < max_iter:
        slack = np.abs(xty - grad) - lam * (1 + 1e-12)
        slack[list(work)] = -np.inf
        viol = np.flatnonzero(slack > 0)
        if it > 0 and viol.size == 0:
            converged = True
            break
        work.update(viol.tolist())
        idx = sorted(work)
        while it < max_iter:
            it += 1
            biggest = 0.0
            for j in idx:
                old = beta[j]
                rho = xty[j] - grad[j] + diag[j] * old
                new = math.copysign(max(abs(rho) - lam, 0.0), rho) / diag[j]
                if new != old:
                    grad += G[:, j] * (new - old)
                    beta[j] = new
                    biggest = max(biggest, abs(new - old))
            trace.append(objective())
            if biggest <= tol:
                break
    if not converged:
        warnings.warn("lasso coordinate descent hit max_iter", RuntimeWarning)
    return LassoResult(beta, it, converged, trace)


def lasso_path_ideal(G, xty, beta_true, lambdas: Optional[Iterable[float]] = None,
                     n_lambda: int = 40, early_stop: bool = True, **kw):
    """
    Ideally tuned lasso: the grid point with the smallest Hamming error.

    The default grid is geometric from ``max|X'Y|`` down to 1e-3 of it,
    with warm starts. A fit with ``k`` more nonzeros than ``beta_true`` has
    Hamming error at least ``k``; with ``early_stop`` the sweep ends at the
    first fit where that bound exceeds the best error so far, since the
    support only keeps growing down the path. Returns ``(beta, lam, errors)``.
    """
    from .simlab import hamming_error

    G = G.dense() if isinstance(G, GramModel) else np.asarray(G, dtype=float)
    xty = np.asarray(xty, dtype=float)
    if lambdas is None:
        top = float(np.max(np.abs(xty)))
        lambdas = top * np.geomspace(1.0, 1e-3, n_lambda)
    n_true = int(np.count_nonzero(beta_true))
    best = None
    errors = []
    beta = None
    for lam in lambdas:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = lasso_cd(G, xty, lam, beta0=beta, **kw)
        beta = fit.beta
        err = hamming_error(beta, beta_true)
        errors.append(err)
        if best is None or err < best[0]:
            best = (err, beta.copy(), float(lam))
        if early_stop and np.count_nonzero(beta) - n_true > best[0]:
            break
    return best[1], best[2], errors


# ---------------------------------------------------------------------------
# Scoring and tuning for the scan
# ---------------------------------------------------------------------------


def bic_score(y, fitted_residual_norm_sq: float, support_size: int, p: int) -> float:
    """``0.5 ||Y - X b||^2 + log(p) ||b||_0``; ``y`` is accepted for symmetry and unused."""
    return 0.5 * float(fitted_residual_norm_sq) + math.log(p) * int(support_size)


def changepoint_fit(beta) -> np.ndarray:
    """Mean vector of the change-point design: ``theta_i = -sum_{k >= i} beta_k``."""
    beta = np.asarray(beta, dtype=float)
    return -np.cumsum(beta[::-1])[::-1]


def sara_bic(y, lambdas, hs):
    """
    Choose ``(lambda, h)`` for the scan by the BIC-type score.

    The thresholded scan is scored as is, without a refit, against the
    change-point design. Ties go to the first grid point. Returns
    ``(beta, lam, h, score)``.
    """
    y = np.asarray(y, dtype=float)
    p = y.size
    best = None
    for h in hs:
        W = sara_scan(y, h)
        for lam in lambdas:
            b = np.where(np.abs(W) > lam, W, 0.0)
            res = y - changepoint_fit(b)
            score = bic_score(y, res @ res, np.count_nonzero(b), p)
            if best is None or score < best[3]:
                best = (b, float(lam), int(h), score)
    return best


def sara_ideal(y, beta_true, lambdas, hs):
    """Scan tuned to the smallest Hamming error. Returns ``(beta, lam, h, error)``."""
    from .simlab import hamming_error

    best = None
    for h in hs:
        W = sara_scan(y, h)
        for lam in lambdas:
            b = np.where(np.abs(W) > lam, W, 0.0)
            err = hamming_error(b, beta_true)
            if best is None or err < best[3]:
                best = (b, float(lam), int(h), err)
    return best


def estimate_sparsity_strength(beta_sara):
    """Number of nonzeros and the median nonzero magnitude."""
    b = np.asarray(beta_sara, dtype=float)
    nz = np.abs(b[b != 0])
    if nz.size == 0:
        raise NoSignalDetected("no nonzero coordinates")
    return int(nz.size), float(np.median(nz))
