"""
Exponents of the minimax Hamming rate.

The building block is ``omega(F, N)``: the smallest value of the quadratic
form of the conditional information of ``beta_F`` given ``beta_N`` over
vectors with every coordinate at least 1 in magnitude. ``psi(F, N)``
turns it into a rate exponent and ``rho*`` is the minimum of ``psi`` over
local configurations containing a given node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate, linalg

from .errors import InvalidInput, InvalidParameter, NumericFailure
from .gram import GramModel, LinearFilter, farima_spectral_density, gram_farima, sparsify
from .quadmin import min_quadratic, schur_complement
from .screening import _patched_blocks

CP_PHASE_RATIO = 6 + 2 * math.sqrt(10)


def _split(F, N):
    F = sorted(set(int(v) for v in F))
    N = sorted(set(int(v) for v in N))
    if not F:
        raise InvalidInput("F must be nonempty")
    if set(F) & set(N):
        raise InvalidInput("F and N must be disjoint")
    I = sorted(F + N)
    pos = {v: k for k, v in enumerate(I)}
    return I, [pos[v] for v in F], [pos[v] for v in N]


def _omega_from_matrix(M, Fpos, Npos):
    try:
        S = schur_complement(M, Fpos, Npos)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("singular conditioning block") from exc
    return min_quadratic(S)


def omega(F, N, g: GramModel) -> float:
    """Conditional exponent ``omega(F, N)`` computed from blocks of ``G``."""
    I, Fpos, Npos = _split(F, N)
    return _omega_from_matrix(g.block(I, I), Fpos, Npos)


def omega_tilde(F, N, sp, radius: int) -> float:
    """Counterpart of ``omega`` with ``G`` replaced by the patched ``Q``."""
    I, Fpos, Npos = _split(F, N)
    _, _, Q = _patched_blocks(sp, np.array(I), radius)
    return _omega_from_matrix(Q, Fpos, Npos)


def psi_value(nF: int, nN: int, om: float, vartheta: float, r: float) -> float:
    """``psi`` from the sizes of ``F``, ``N`` and a precomputed ``omega``."""
    base = (nF + 2 * nN) * vartheta / 2
    if math.isinf(om):
        return math.inf
    if nF % 2 == 0:
        return base + om * r / 4
    s = math.sqrt(om * r)
    if s == 0:
        return base + vartheta / 2
    return base + vartheta / 2 + max(s - vartheta / s, 0.0) ** 2 / 4


def psi(F, N, vartheta: float, r: float, g: GramModel) -> float:
    _check_range(vartheta, r)
    nF = len(set(F))
    nN = len(set(N))
    return psi_value(nF, nN, omega(F, N, g), vartheta, r)


def _check_range(vartheta, r):
    if not 0 < vartheta < 1:
        raise InvalidParameter("vartheta must lie in (0, 1)")
    if not r > 0:
        raise InvalidParameter("r must be positive")


def default_gmax(vartheta: float, r: float, m: int = 1) -> int:
    """Size cap ``max((vartheta + r)^2 / (2 vartheta r), m)``, rounded up."""
    return max(int(math.ceil((vartheta + r) ** 2 / (2 * vartheta * r))), int(m))


# ---------------------------------------------------------------------------
# Configuration search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pattern:
    """A configuration ``(F, N)`` around a node together with its exponent."""

    F: tuple
    N: tuple
    omega: float

    def psi(self, vartheta, r):
        return psi_value(len(self.F), len(self.N), self.omega, vartheta, r)


def consecutive_patterns(j: int, block, lo: int, hi: int, max_f: int = 3,
                         max_size: int = 7) -> List[Pattern]:
    """
    Patterns with ``F`` a run containing ``j`` and ``F ∪ N`` a run.

    ``block(rows, cols)`` returns Gram entries; nodes are confined to
    ``lo..hi``. The exponent of each run is obtained from a single inverse:
    ``omega`` is the minimum of the quadratic form of ``[(G_II^{-1})_FF]^{-1}``.
    """
    out = []
    for a in range(max(lo, j - max_size + 1), j + 1):
        for b in range(j, min(hi, a + max_size - 1) + 1):
            I = np.arange(a, b + 1)
            Ginv = np.linalg.inv(block(I, I))
            for f0 in range(a, j + 1):
                for f1 in range(j, min(b, f0 + max_f - 1) + 1):
                    Fpos = list(range(f0 - a, f1 - a + 1))
                    Npos = [k for k in range(I.size) if k < Fpos[0] or k > Fpos[-1]]
                    if Npos:
                        M = np.linalg.inv(Ginv[np.ix_(Fpos, Fpos)])
                    else:
                        M = block(I, I)
                    F = tuple(int(v) for v in I[Fpos])
                    N = tuple(int(v) for v in I[Npos])
                    out.append(Pattern(F, N, min_quadratic((M + M.T) / 2)))
    return out


def exhaustive_patterns(j: int, block, lo: int, hi: int, max_size: int = 4) -> List[Pattern]:
    """Every ``(F, N)`` with ``j`` in ``F`` inside ``lo..hi`` up to ``max_size`` nodes."""
    others = [v for v in range(lo, hi + 1) if v != j]
    out = []
    for size in range(1, max_size + 1):
        for rest in combinations(others, size - 1):
            I = sorted((j,) + rest)
            G = block(np.array(I), np.array(I))
            for nf in range(0, size):
                for extra in combinations(rest, nf):
                    F = tuple(sorted((j,) + extra))
                    N = tuple(v for v in I if v not in F)
                    pos = {v: k for k, v in enumerate(I)}
                    om = _omega_from_matrix(G, [pos[v] for v in F], [pos[v] for v in N])
                    out.append(Pattern(F, N, om))
    return out


def _min_psi(patterns, vartheta, r, gmax):
    best = math.inf
    for pat in patterns:
        if len(pat.F) + len(pat.N) <= gmax:
            best = min(best, pat.psi(vartheta, r))
    return best


def rho_star_j(j: int, vartheta: float, r: float, g: GramModel, gmax: Optional[int] = None,
               radius: int = 3, mode: str = "consecutive", max_f: int = 3,
               max_n: int = 4) -> float:
    """
    ``min psi(F, N)`` over configurations containing ``j``.

    Parameters
    ----------
    gmax : int, optional
        Cap on ``|F ∪ N|``; defaults to :func:`default_gmax`.
    radius : int
        ``exhaustive`` mode only: configurations lie within ``radius`` of ``j``.
    mode : {"consecutive", "exhaustive"}
        ``consecutive`` searches runs ``F ⊆ F ∪ N`` with ``|F| <= max_f`` and
        ``|N| <= max_n``; ``exhaustive`` enumerates all subsets.
    """
    _check_range(vartheta, r)
    if gmax is None:
        gmax = default_gmax(vartheta, r)
    if gmax < 1:
        raise InvalidParameter("gmax must be at least 1")
    if mode == "consecutive":
        pats = consecutive_patterns(j, g.block, 0, g.p - 1, max_f=max_f,
                                    max_size=min(gmax, max_f + max_n))
        pats = [p for p in pats if len(p.N) <= max_n]
    elif mode == "exhaustive":
        pats = exhaustive_patterns(j, g.block, max(0, j - radius), min(g.p - 1, j + radius),
                                   max_size=gmax)
    else:
        raise InvalidParameter(f"unknown search mode {mode!r}")
    return _min_psi(pats, vartheta, r, gmax)


# ---------------------------------------------------------------------------
# Change-point closed forms
# ---------------------------------------------------------------------------


def rho_star_cp(vartheta: float, r: float) -> float:
    """Closed-form change-point exponent with its phase change at ``r/vartheta = 6 + 2 sqrt(10)``."""
    _check_range(vartheta, r)
    if r / vartheta <= CP_PHASE_RATIO:
        return vartheta + r / 4
    return 3 * vartheta + (r / 2 - vartheta) ** 2 / (2 * r)


def omega_infinity_cp(F, N) -> float:
    """
    Limiting change-point exponent for a run ``F ∪ N = {1, ..., k}``.

    Nodes are 1-based positions in the run, ``k <= 5``. With ``N`` nonempty
    the quadratic form is the inverse of the ``F`` block of the tridiagonal
    matrix with diagonal 2 (1 in both corners) and off-diagonal -1. With
    ``N`` empty it is ``min(i, j) - 1`` restricted to ``sum(x) == 0``;
    a single node without neighbors has infinite exponent.
    """
    F = sorted(set(int(v) for v in F))
    N = sorted(set(int(v) for v in N))
    if not F or set(F) & set(N):
        raise InvalidInput("F must be nonempty and disjoint from N")
    k = len(F) + len(N)
    if sorted(F + N) != list(range(1, k + 1)) or k > 5:
        raise InvalidInput("F ∪ N must be {1, ..., k} with k <= 5")
    if not N:
        if k == 1:
            return math.inf
        idx = np.arange(1, k + 1)
        Om = np.minimum.outer(idx, idx) - 1.0
        return min_quadratic(Om, sum_zero=True)
    S = 2 * np.eye(k) - np.eye(k, k=1) - np.eye(k, k=-1)
    S[0, 0] = S[-1, -1] = 1.0
    Fpos = [v - 1 for v in F]
    return min_quadratic(np.linalg.inv(S[np.ix_(Fpos, Fpos)]))


def cp_block_inverse(k: int) -> np.ndarray:
    """``Omega - eta eta' / (k + 1)`` with ``Omega(i, j) = min(i, j)`` and ``eta = (1..k)``."""
    idx = np.arange(1, k + 1, dtype=float)
    return np.minimum.outer(idx, idx) - np.outer(idx, idx) / (k + 1)


# ---------------------------------------------------------------------------
# Long-memory Toeplitz exponents
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _lts_patterns(phi: float, window: int, max_f: int, max_size: int):
    g = gram_farima(window, phi)
    j = window // 2
    lo = max(0, j - max_size + 1)
    hi = min(window - 1, j + max_size - 1)
    return tuple(consecutive_patterns(j, g.block, lo, hi, max_f=max_f, max_size=max_size))


def rho_star_lts(vartheta: float, r: float, phi: float, window: int = 300,
                 gmax: Optional[int] = None, max_f: int = 3, max_size: int = 21) -> float:
    """
    Exponent of the long-memory model at an interior node.

    The infinite Toeplitz matrix is proxied by a ``window``-sized block,
    searched over consecutive configurations with ``|F| <= max_f`` and
    ``|F ∪ N| <= min(gmax, max_size)``.
    """
    _check_range(vartheta, r)
    if window < 50:
        raise InvalidParameter("window must be at least 50")
    if gmax is None:
        gmax = default_gmax(vartheta, r)
    size = int(min(max_size, window))
    pats = _lts_patterns(float(phi), int(window), int(max_f), size)
    return _min_psi(pats, vartheta, r, gmax)


def r_star_boundary(vartheta: float, phi: float, window: int = 300, tol: float = 1e-3,
                    r_max: float = 100.0, **kwargs) -> float:
    """Solve ``rho*_lts(vartheta, r) = 1`` in ``r`` by bisection."""
    if not 0 < vartheta < 1:
        raise InvalidParameter("vartheta must lie in (0, 1)")

    def f(r):
        return rho_star_lts(vartheta, r, phi, window, **kwargs) - 1.0

    lo = vartheta / 2
    hi = 1.0
    if f(lo) >= 0:
        raise NumericFailure("lower bracket already above the boundary", vartheta=vartheta)
    while f(hi) < 0:
        hi *= 2
        if hi > r_max:
            raise NumericFailure("no upper bracket for the boundary", vartheta=vartheta)
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def lts_limit_small_vartheta(phi: float) -> float:
    """``(2/pi) * integral of 1/f`` over ``[-pi, pi]``, the boundary as ``vartheta -> 0``."""
    val, _ = integrate.quad(lambda w: 1.0 / farima_spectral_density(w, phi), 0.0, math.pi,
                            epsabs=1e-12, epsrel=1e-12)
    return (2 / math.pi) * 2 * val


# ---------------------------------------------------------------------------
# Patched Fisher information and screening exponents
# ---------------------------------------------------------------------------


def fisher_info_patched(g: GramModel, f: LinearFilter, I, Iplus) -> np.ndarray:
    """Fisher information of ``beta_I`` from the filtered data on ``Iplus``."""
    I = np.asarray(sorted(set(I)), dtype=np.int64)
    Iplus = np.asarray(sorted(set(Iplus)), dtype=np.int64)
    if not set(I.tolist()) <= set(Iplus.tolist()):
        raise InvalidInput("I must be contained in Iplus")
    sp = sparsify(g, f)
    B = sp.B_block(Iplus, I)
    H = sp.H_block(Iplus, Iplus)
    try:
        Q = B.T @ linalg.solve(H, B, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericFailure("singular H block", condition=float(np.linalg.cond(H))) from exc
    return (Q + Q.T) / 2


def fisher_info_nullspace(g: GramModel, f: LinearFilter, I, Iplus) -> np.ndarray:
    """
    The same information written through the null space of the filter rows.

    ``G_II - [U (U' G_JJ^{-1} U)^{-1} U']_II`` where ``J`` collects the columns
    touched by the filter rows in ``Iplus`` and ``U`` is an orthonormal basis
    of the null space of those rows.
    """
    I = np.asarray(sorted(set(I)), dtype=np.int64)
    Iplus = np.asarray(sorted(set(Iplus)), dtype=np.int64)
    D = np.zeros((Iplus.size, g.p))
    for k, c in enumerate(f.coeffs):
        ok = Iplus + k < g.p
        D[np.flatnonzero(ok), Iplus[ok] + k] = c
    J = np.flatnonzero(np.any(D != 0, axis=0))
    if not set(I.tolist()) <= set(J.tolist()):
        raise InvalidInput("I must be covered by the filter support")
    U = linalg.null_space(D[:, J])
    GJ = g.block(J, J)
    pos = np.searchsorted(J, I)
    out = g.block(I, I)
    if U.shape[1]:
        inner = U.T @ np.linalg.solve(GJ, U)
        P = U @ np.linalg.solve(inner, U.T)
        out = out - P[np.ix_(pos, pos)]
    return (out + out.T) / 2


def q_star(F, N, vartheta: float, r: float, sp, radius: int) -> float:
    """
    Largest ``q`` with ``(|F|+|N|) vartheta + ((sqrt(omega_t r) - sqrt(q |F|))_+)^2 >= psi``.

    Returns ``inf`` when every ``q`` qualifies and 0 when none does.
    """
    _check_range(vartheta, r)
    nF, nN = len(set(F)), len(set(N))
    om_t = omega_tilde(F, N, sp, radius)
    gap = psi(F, N, vartheta, r, sp.g) - (nF + nN) * vartheta
    if gap <= 0:
        return math.inf
    root = math.sqrt(om_t * r) - math.sqrt(gap)
    if root < 0:
        return 0.0
    return root ** 2 / nF


# ---------------------------------------------------------------------------
# Phase-diagram curves
# ---------------------------------------------------------------------------


def cp_boundary_upper(vartheta):
    """
    Left part of the change-point boundary, ``(4 - 10t) + 2 sqrt((2 - 5t)^2 - t^2)``.

    Only meaningful for ``t <= 1/3``; ``nan`` elsewhere.
    """
    t = np.asarray(vartheta, dtype=float)
    disc = (2 - 5 * t) ** 2 - t ** 2
    ok = (t <= 1 / 3) & (disc >= 0)
    return np.where(ok, (4 - 10 * t) + 2 * np.sqrt(np.maximum(disc, 0)), np.nan)


def cp_boundary_lower(vartheta):
    """The line ``4 (1 - t)``."""
    return 4 * (1 - np.asarray(vartheta, dtype=float))


def ht_boundary_upper(vartheta):
    """Exact-recovery boundary of naive hard thresholding, ``2 (1 + sqrt(1 - t))^2``."""
    t = np.asarray(vartheta, dtype=float)
    return 2 * (1 + np.sqrt(1 - t)) ** 2


def ht_boundary_lower(vartheta):
    """Almost-full-recovery boundary of naive hard thresholding, ``2 t``."""
    return 2 * np.asarray(vartheta, dtype=float)


def cp_r_star(vartheta) -> float:
    """Solve ``rho*_cp(vartheta, r) = 1`` in closed form."""
    t = float(vartheta)
    r1 = 4 * (1 - t)
    if r1 / t <= CP_PHASE_RATIO:
        return r1
    # 3t + (r/2 - t)^2 / (2r) = 1  <=>  r^2/4 - r (t + 2 - 6t) + t^2 = 0
    b = 2 - 5 * t
    disc = b * b - t * t
    return 2 * (b + math.sqrt(disc))


@dataclass
class RateReport:
    """Collected exponents for a set of configurations and boundary samples."""

    records: List[dict] = field(default_factory=list)
    rho_star: Dict[int, float] = field(default_factory=dict)
    boundary: List[Tuple[float, float]] = field(default_factory=list)
