"""
Gram matrix families, order-h linear filters and the filtered pair (B, H).

All indices are 0-based. For the change-point family this means
``G[i, j] = min(i, j) + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, linalg, special

from .errors import InvalidDimension, InvalidFilter, InvalidParameter, NumericFailure

CHANGEPOINT = "changepoint"
FARIMA = "farima"
POWERDECAY = "powerdecay"
DENSE = "dense"

TOEPLITZ_KINDS = (FARIMA, POWERDECAY)


@dataclass(frozen=True)
class LinearFilter:
    """Order-h linear filter ``D(i, i+k) = coeffs[k]``, upper banded."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) == 0 or coeffs[0] != 1.0:
            raise InvalidFilter("filter coefficients must start with 1")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def identity(cls) -> "LinearFilter":
        return cls((1.0,))

    @classmethod
    def first_difference(cls) -> "LinearFilter":
        return cls((1.0, -1.0))

    @classmethod
    def second_difference(cls) -> "LinearFilter":
        return cls((1.0, -2.0, 1.0))

    def matrix(self, p: int) -> np.ndarray:
        D = np.zeros((p, p))
        for k, c in enumerate(self.coeffs):
            D += c * np.eye(p, k=k)
        return D

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Compute ``D x`` with rows truncated at the bottom boundary."""
        x = np.asarray(x, dtype=float)
        out = x.copy()
        for k, c in enumerate(self.coeffs[1:], start=1):
            out[:-k] += c * x[k:]
        return out


# ---------------------------------------------------------------------------
# FARIMA(0, phi, 0) autocovariances
# ---------------------------------------------------------------------------


def farima_scale(phi: float) -> float:
    """The constant ``Gamma(1-phi)^2 / Gamma(1-2 phi)`` normalizing gamma(0) to 1."""
    return math.exp(2 * special.gammaln(1 - phi) - special.gammaln(1 - 2 * phi))


def farima_spectral_density(omega, phi: float):
    omega = np.asarray(omega, dtype=float)
    return np.abs(2 * np.sin(omega / 2)) ** (-2 * phi) * farima_scale(phi)


def farima_acf(phi: float, nlags: int) -> np.ndarray:
    """Lag 0..nlags-1 autocovariances from the Gamma-ratio recursion."""
    k = np.arange(1, nlags)
    ratios = (k - 1 + phi) / (k - phi)
    return np.concatenate(([1.0], np.cumprod(ratios)))


def farima_acf_quad(phi: float, lag: int) -> float:
    """
    Autocovariance at ``lag`` by adaptive quadrature of the spectral density.

    The integrand behaves like ``omega**(-2 phi)`` at the origin; the first
    panel integrates that factor exactly through an algebraic weight.
    """
    c = farima_scale(phi)
    split = min(0.5, math.pi / max(1, 4 * lag))

    def smooth(w):
        if w == 0.0:
            return math.cos(lag * w)
        return math.cos(lag * w) * (2 * math.sin(w / 2) / w) ** (-2 * phi)

    head, _ = integrate.quad(smooth, 0.0, split, weight="alg", wvar=(-2 * phi, 0.0),
                             epsabs=1e-13, epsrel=1e-12, limit=200)

    def full(w):
        return math.cos(lag * w) * (2 * math.sin(w / 2)) ** (-2 * phi)

    tail, _ = integrate.quad(full, split, math.pi, epsabs=1e-13, epsrel=1e-12,
                             limit=max(200, 4 * lag))
    return c * (head + tail) / math.pi


# ---------------------------------------------------------------------------
# Gram models
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GramModel:
    """
    Structured Gram matrix with exact entry access.

    Use the ``gram_*`` constructors rather than instantiating directly.
    """

    p: int
    kind: str
    params: dict = field(default_factory=dict)
    acf: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    @property
    def is_toeplitz(self) -> bool:
        return self.kind in TOEPLITZ_KINDS

    def entry(self, i: int, j: int) -> float:
        return float(self.block(np.array([i]), np.array([j]))[0, 0])

    def block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.kind == CHANGEPOINT:
            return np.minimum.outer(rows, cols).astype(float) + 1.0
        if self.is_toeplitz:
            return self.acf[np.abs(np.subtract.outer(rows, cols))]
        return self.values[np.ix_(rows, cols)]

    def dense(self) -> np.ndarray:
        idx = np.arange(self.p)
        return self.block(idx, idx)

    def __repr__(self):
        return f"GramModel(p={self.p}, kind={self.kind!r}, params={self.params})"


def gram_changepoint(p: int) -> GramModel:
    if p < 2:
        raise InvalidDimension(f"change-point model needs p >= 2, got {p}")
    return GramModel(p=int(p), kind=CHANGEPOINT)


def gram_farima(p: int, phi: float) -> GramModel:
    if p < 1:
        raise InvalidDimension(f"p must be positive, got {p}")
    if not 0 < phi < 0.5:
        raise InvalidParameter(f"phi must lie in (0, 1/2), got {phi}")
    return GramModel(p=int(p), kind=FARIMA, params={"phi": float(phi)},
                     acf=farima_acf(phi, p))


def gram_powerdecay(p: int, rate: float, scale: float) -> GramModel:
    if p < 1:
        raise InvalidDimension(f"p must be positive, got {p}")
    if rate <= 0 or scale <= 0:
        raise InvalidParameter("rate and scale must be positive")
    lags = np.arange(p)
    return GramModel(p=int(p), kind=POWERDECAY,
                     params={"rate": float(rate), "scale": float(scale)},
                     acf=(1.0 + scale * lags) ** (-rate))


def gram_dense(values) -> GramModel:
    values = np.array(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
        raise InvalidDimension("dense Gram matrix must be square")
    if not np.allclose(values, values.T, rtol=0, atol=1e-12 * max(1.0, np.abs(values).max())):
        raise InvalidParameter("dense Gram matrix must be symmetric")
    values = (values + values.T) / 2
    values.setflags(write=False)
    return GramModel(p=values.shape[0], kind=DENSE, values=values)


# ---------------------------------------------------------------------------
# Filtered pair
# ---------------------------------------------------------------------------


class SparsifiedPair:
    """
    The filtered model ``d ~ N(B beta, H)`` with ``B = D G`` and ``H = D G D'``.

    Entries are computed on demand from the Gram model; only the
    thresholded neighbor lists are materialized.
    """

    def __init__(self, g: GramModel, filt: LinearFilter, delta: float = 0.0):
        self.g = g
        self.filter = filt
        self.delta = float(delta)

    @property
    def p(self) -> int:
        return self.g.p

    @property
    def stationary(self) -> bool:
        """True when B and H are Toeplitz away from the last ``boundary_rows`` rows."""
        return self.g.is_toeplitz

    @property
    def boundary_rows(self) -> int:
        return self.filter.order

    def B_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros((rows.size, cols.size))
        for k, c in enumerate(self.filter.coeffs):
            shifted = rows + k
            ok = shifted < self.p
            if ok.any():
                out[ok] += c * self.g.block(shifted[ok], cols)
        return out

    def H_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros((rows.size, cols.size))
        for l, c in enumerate(self.filter.coeffs):
            shifted = cols + l
            ok = shifted < self.p
            if ok.any():
                out[:, ok] += c * self.B_block(rows, shifted[ok])
        return out

    def B(self, i: int, j: int) -> float:
        return float(self.B_block([i], [j])[0, 0])

    def H(self, i: int, j: int) -> float:
        return float(self.H_block([i], [j])[0, 0])

    def filter_data(self, ytilde) -> np.ndarray:
        """Map the sufficient statistic ``X'Y`` to ``d = D X'Y``."""
        return self.filter.apply(ytilde)

    def cache_key(self):
        """Hashable identity of the pair, or None when entries are not parametric."""
        if self.g.kind == DENSE:
            return None
        return (type(self).__name__, self.g.kind, self.p,
                tuple(sorted(self.g.params.items())), self.filter.coeffs)

    def strong_neighbors(self, delta: Optional[float] = None, chunk: int = 256):
        """Sorted neighbor arrays of the graph ``max(|B_ij|, |B_ji|, |H_ij|) > delta``."""
        delta = self.delta if delta is None else float(delta)
        key = self.cache_key()
        if key is not None:
            key = key + (delta,)
            hit = _NEIGHBOR_CACHE.get(key)
            if hit is None:
                hit = self._scan_neighbors(delta, chunk)
                if len(_NEIGHBOR_CACHE) >= 16:
                    _NEIGHBOR_CACHE.pop(next(iter(_NEIGHBOR_CACHE)))
                _NEIGHBOR_CACHE[key] = hit
            return hit
        return self._scan_neighbors(delta, chunk)

    def _scan_neighbors(self, delta, chunk):
        p = self.p
        src, dst = [], []
        allcols = np.arange(p)
        for start in range(0, p, chunk):
            rows = np.arange(start, min(p, start + chunk))
            strong = (np.abs(self.B_block(rows, allcols)) > delta) | (
                np.abs(self.H_block(rows, allcols)) > delta)
            r, c = np.nonzero(strong)
            src.append(rows[r])
            dst.append(c)
        src = np.concatenate(src)
        dst = np.concatenate(dst)
        return _symmetric_adjacency(p, src, dst)


class ChangePointPair(SparsifiedPair):
    """
    Change-point model filtered by the exact inverse of ``G``.

    Interior rows of ``D`` are the (sign-flipped, centred) second difference
    ``-e_{i-1} + 2 e_i - e_{i+1}``; the last row is ``-e_{p-2} + e_{p-1}``.
    With this choice ``B = I`` and ``H`` is tridiagonal.
    """

    @property
    def stationary(self) -> bool:
        return True

    @property
    def boundary_rows(self) -> int:
        return 1

    def B_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return np.equal.outer(rows, cols).astype(float)

    def H_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        diff = np.subtract.outer(rows, cols)
        out = 2.0 * (diff == 0) - 1.0 * (np.abs(diff) == 1)
        out -= np.equal.outer(rows, cols) & (rows[:, None] == self.p - 1)
        return out

    def filter_data(self, ytilde) -> np.ndarray:
        y = np.asarray(ytilde, dtype=float)
        d = 2.0 * y
        d[:-1] -= y[1:]
        d[1:] -= y[:-1]
        d[-1] = y[-1] - y[-2]
        return d

    def strong_neighbors(self, delta: Optional[float] = None, chunk: int = 256):
        delta = self.delta if delta is None else float(delta)
        if delta >= 1.0:
            return [np.empty(0, dtype=np.int64) for _ in range(self.p)]
        i = np.arange(self.p - 1)
        return _symmetric_adjacency(self.p, i, i + 1)


_NEIGHBOR_CACHE: dict = {}


def _symmetric_adjacency(p, src, dst):
    keep = src != dst
    src, dst = src[keep], dst[keep]
    a = np.concatenate((src, dst))
    b = np.concatenate((dst, src))
    codes = np.unique(a.astype(np.int64) * p + b)
    a, b = np.divmod(codes, p)
    bounds = np.searchsorted(a, np.arange(p + 1))
    return [b[bounds[i]:bounds[i + 1]] for i in range(p)]


def sparsify(g: GramModel, f: LinearFilter, delta: float = 0.0) -> SparsifiedPair:
    """
    Build the filtered pair for ``g``.

    The change-point model with the second-difference filter gets the exact
    inverse filter (``B = I``); every other combination uses ``D`` as
    defined by the filter coefficients.
    """
    if f.order >= g.p:
        raise InvalidFilter(f"filter order {f.order} must be below p={g.p}")
    if delta < 0:
        raise InvalidParameter("delta must be nonnegative")
    if g.kind == CHANGEPOINT and f.coeffs == (1.0, -2.0, 1.0):
        return ChangePointPair(g, f, delta)
    return SparsifiedPair(g, f, delta)


# ---------------------------------------------------------------------------
# Dense SPD kernel
# ---------------------------------------------------------------------------


def matrix_sqrt_spd(g) -> np.ndarray:
    """Symmetric square root of an SPD matrix (or GramModel)."""
    G = g.dense() if isinstance(g, GramModel) else np.asarray(g, dtype=float)
    G = (G + G.T) / 2
    evals, evecs = np.linalg.eigh(G)
    if evals[0] <= 0:
        raise NumericFailure("matrix is not positive definite",
                             smallest_eigenvalue=float(evals[0]))
    S = (evecs * np.sqrt(evals)) @ evecs.T
    return (S + S.T) / 2


def spd_solve(M, b) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericFailure("matrix is not positive definite") from exc
    return linalg.cho_solve(factor, b, check_finite=False)


def spd_factor(M):
    """Cholesky factor (lower) of an SPD matrix, raising NumericFailure."""
    M = np.asarray(M, dtype=float)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("matrix is not positive definite",
                             condition=float(np.linalg.cond(M))) from exc
    if M.shape[0] and np.min(np.abs(np.diag(L))) ** 2 < 1e-14 * np.max(np.abs(np.diag(M))):
        raise NumericFailure("matrix is numerically singular",
                             condition=float(np.linalg.cond(M)))
    return L
