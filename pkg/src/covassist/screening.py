"""
The patching-and-screening step.

Connected subgraphs of the GOSD are swept in order. For each one the nodes
not yet retained are tested with a patched chi-square statistic that
measures the utility they add on top of the already retained nodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidInput, InvalidParameter, NumericFailure
from .gram import spd_factor
from .quadmin import min_quadratic, schur_complement

CONSTANT = "constant"
DATA_DRIVEN = "datadriven"


@dataclass(frozen=True)
class ScreenConfig:
    """
    Tuning of the screening sweep.

    Parameters
    ----------
    m : int
        Largest subgraph size.
    l_ps : int
        Patch radius.
    delta : float
        GOSD threshold.
    threshold_mode : {"constant", "datadriven"}
        ``constant`` uses ``2 q_tilde |F| log p``. ``datadriven`` uses
        ``2 q(F, N) log p`` with ``q`` built from ``vartheta``, ``r`` and
        the patched exponent ``omega_tilde(F, N)``.
    q_tilde : float
        Per-node constant for ``constant`` mode.
    vartheta, r : float
        Sparsity and strength exponents for ``datadriven`` mode.
    cap : float
        Shrinkage factor applied to ``q``.
    branch : {"continuous", "literal"}
        Which comparison selects the quadratic branch of ``q``:
        ``r omega_tilde > |F| vartheta`` (the two branches then agree on the
        switching line, and ``q`` is the smaller of the two expressions) or
        ``omega_tilde > |F| vartheta``.
    """

    m: int = 2
    l_ps: int = 0
    delta: float = 0.0
    threshold_mode: str = CONSTANT
    q_tilde: float = 0.1
    vartheta: Optional[float] = None
    r: Optional[float] = None
    cap: float = 0.8
    branch: str = "continuous"

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameter("m must be at least 1")
        if self.l_ps < 0:
            raise InvalidParameter("l_ps must be nonnegative")
        if self.threshold_mode == CONSTANT:
            if not self.q_tilde > 0:
                raise InvalidParameter("q_tilde must be positive")
        elif self.threshold_mode == DATA_DRIVEN:
            if self.vartheta is None or not 0 < self.vartheta < 1:
                raise InvalidParameter("vartheta must lie in (0, 1)")
            if self.r is None or not self.r > 0:
                raise InvalidParameter("r must be positive")
        else:
            raise InvalidParameter(f"unknown threshold mode {self.threshold_mode!r}")
        if self.branch not in ("literal", "continuous"):
            raise InvalidParameter(f"unknown branch rule {self.branch!r}")


@dataclass
class ScreeningState:
    """
    Result of the sweep.

    ``retained`` is sorted; ``accepted_order`` lists nodes in the order they
    were recruited. Trace arrays are aligned with the swept subgraphs:
    ``trace_nmask`` has bit ``b`` set when the ``b``-th node of the subgraph
    was already retained, and skipped stages carry ``nan`` statistics.
    """

    p: int
    retained: tuple = ()
    accepted_order: tuple = ()
    subgraphs: Sequence[tuple] = ()
    trace_nmask: Optional[np.ndarray] = None
    trace_T: Optional[np.ndarray] = None
    trace_threshold: Optional[np.ndarray] = None
    trace_accepted: Optional[np.ndarray] = None

    def trace_rows(self):
        """Yield ``(stage, I, F, N, T, threshold, accepted)`` per stage."""
        for t, sub in enumerate(self.subgraphs):
            mask = int(self.trace_nmask[t])
            N = tuple(v for b, v in enumerate(sub) if mask >> b & 1)
            F = tuple(v for b, v in enumerate(sub) if not mask >> b & 1)
            yield (t, sub, F, N, float(self.trace_T[t]), float(self.trace_threshold[t]),
                   bool(self.trace_accepted[t]))

    def write_trace(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "I", "F", "N", "T", "threshold", "accepted"])
            for t, sub, F, N, T, thr, acc in self.trace_rows():
                w.writerow([t, _fmt_set(sub), _fmt_set(F), _fmt_set(N),
                            "" if math.isnan(T) else repr(T),
                            "" if math.isnan(thr) else repr(thr), int(acc)])


def _fmt_set(s):
    return " ".join(str(v) for v in s)


def patch_set(nodes, radius: int, p: int) -> np.ndarray:
    """Union of the clipped intervals ``[i - radius, i + radius]``."""
    nodes = np.unique(np.asarray(list(nodes), dtype=np.int64))
    if nodes.size and (nodes[0] < 0 or nodes[-1] >= p):
        raise InvalidInput("nodes outside 0..p-1")
    if radius == 0 or nodes.size == 0:
        return nodes
    offsets = np.arange(-radius, radius + 1)
    out = np.unique((nodes[:, None] + offsets).ravel())
    return out[(out >= 0) & (out < p)]


def _patched_blocks(sp, I, radius):
    I = np.asarray(I, dtype=np.int64)
    Ips = patch_set(I, radius, sp.p)
    Bsub = sp.B_block(Ips, I)
    Hsub = sp.H_block(Ips, Ips)
    L = spd_factor(Hsub)
    R = linalg.solve_triangular(L, Bsub, lower=True)
    A = linalg.solve_triangular(L.T, R, lower=False)
    Q = R.T @ R
    return Ips, A, (Q + Q.T) / 2


def wq_statistics(sp, d, I, radius: int):
    """
    Patched statistics ``W = B' H^{-1} d`` and ``Q = B' H^{-1} B``.

    ``B`` is restricted to rows in the patch of ``I`` and columns in ``I``;
    ``H`` to the patch on both sides.
    """
    I = np.asarray(sorted(I), dtype=np.int64)
    if I.size == 0:
        raise InvalidInput("I must be nonempty")
    Ips, A, Q = _patched_blocks(sp, I, radius)
    W = A.T @ np.asarray(d, dtype=float)[Ips]
    return W, Q


def test_statistic(W, Q, F, N) -> float:
    """
    ``W' Q^{-1} W - W_N' Q_NN^{-1} W_N``.

    ``F`` and ``N`` are positions within the subgraph (indices into ``W``).
    """
    W = np.asarray(W, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    F = list(F)
    N = list(N)
    if not F:
        raise InvalidInput("F must be nonempty")
    if set(F) & set(N) or sorted(F + N) != list(range(W.size)):
        raise InvalidInput("F and N must partition the subgraph")
    T = W @ _spd_solve_small(Q, W)
    if N:
        T -= W[N] @ _spd_solve_small(Q[np.ix_(N, N)], W[N])
    return float(T)


def _spd_solve_small(M, b):
    try:
        return linalg.cho_solve(linalg.cho_factor(M, lower=True), b)
    except linalg.LinAlgError as exc:
        raise NumericFailure("singular Q block", condition=float(np.linalg.cond(M))) from exc


def _q_value(omega_t, nF, cfg: ScreenConfig):
    th, r = cfg.vartheta, cfg.r
    lhs = omega_t if cfg.branch == "literal" else r * omega_t
    if lhs > nF * th and omega_t > 0:
        q = (r * omega_t + nF * th) ** 2 / (4 * r * omega_t)
    else:
        q = r * omega_t
    return cfg.cap * q


def _threshold_from_Q(Q, Fpos, Npos, cfg: ScreenConfig, p: int) -> float:
    logp = math.log(p)
    if cfg.threshold_mode == CONSTANT:
        return 2 * cfg.q_tilde * len(Fpos) * logp
    omega_t = min_quadratic(schur_complement(Q, Fpos, Npos))
    return 2 * _q_value(omega_t, len(Fpos), cfg) * logp


def threshold_q(F, N, cfg: ScreenConfig, sp) -> float:
    """Critical value ``t(F, N)`` for the test on node sets ``F`` and ``N``."""
    F = sorted(set(F))
    N = sorted(set(N))
    if not F:
        raise InvalidInput("F must be nonempty")
    if cfg.threshold_mode == CONSTANT:
        return 2 * cfg.q_tilde * len(F) * math.log(sp.p)
    I = sorted(F + N)
    _, _, Q = _patched_blocks(sp, I, cfg.l_ps)
    pos = {v: k for k, v in enumerate(I)}
    return _threshold_from_Q(Q, [pos[v] for v in F], [pos[v] for v in N], cfg, sp.p)


def _geometry_key(sp, I, Ips):
    """Key under which (A, Q) are translation invariant, or None."""
    if not sp.stationary:
        return None
    j0 = Ips[0]
    tail = sp.p - 1 - Ips[-1]
    if tail >= sp.boundary_rows:
        tail = -1
    return (tuple(I - j0), tuple(Ips - j0), tail)


def ps_screen(sp, d, subgraphs, cfg: ScreenConfig) -> ScreeningState:
    """
    Sweep the ordered subgraphs and return the retained set.

    Stage ``t`` splits subgraph ``I`` into ``N`` (already retained) and
    ``F`` (the rest); stages with empty ``F`` are skipped. ``F`` is
    recruited when ``T(F, N)`` exceeds the threshold.

    The statistics of all subgraphs of one size are computed in batches
    before the sequential pass, for every possible split. Subgraphs with
    the same relative geometry on a stationary pair share one
    factorization.
    """
    d = np.asarray(d, dtype=float)
    p = sp.p
    if d.shape != (p,):
        raise InvalidInput(f"d must have length {p}")
    n = len(subgraphs)
    sizes = np.fromiter((len(s) for s in subgraphs), dtype=np.int64, count=n)
    if n and (np.any(np.diff(sizes) < 0) or sizes.min() < 1):
        raise InvalidInput("subgraphs must be nonempty and sorted by size")

    nmask = np.zeros(n, dtype=np.int64)
    T_out = np.full(n, np.nan)
    thr_out = np.full(n, np.nan)
    acc_out = np.zeros(n, dtype=bool)
    retained = np.zeros(p, dtype=bool)
    order = []

    start = 0
    while start < n:
        k = int(sizes[start])
        stop = int(np.searchsorted(sizes, k, side="right"))
        block = np.array(subgraphs[start:stop], dtype=np.int64).reshape(-1, k)
        T_tab, thr_tab = _batch_statistics(sp, d, block, cfg)
        weights = 1 << np.arange(k)
        full = (1 << k) - 1
        for row in range(block.shape[0]):
            nodes = block[row]
            held = retained[nodes]
            mask = int(held @ weights)
            t = start + row
            nmask[t] = mask
            if mask == full:
                continue
            T = T_tab[row, mask]
            thr = thr_tab[row, mask]
            T_out[t] = T
            thr_out[t] = thr
            if T > thr:
                acc_out[t] = True
                fresh = nodes[~held]
                retained[fresh] = True
                order.extend(int(v) for v in fresh)
        start = stop

    return ScreeningState(
        p=p,
        retained=tuple(int(v) for v in np.flatnonzero(retained)),
        accepted_order=tuple(order),
        subgraphs=subgraphs,
        trace_nmask=nmask,
        trace_T=T_out,
        trace_threshold=thr_out,
        trace_accepted=acc_out,
    )


def _batch_statistics(sp, d, block, cfg):
    """Tables ``T[row, mask]`` and ``threshold[row, mask]`` for one size class."""
    nrow, k = block.shape
    nmask = 1 << k
    T_tab = np.full((nrow, nmask), np.nan)
    thr_tab = np.full((nrow, nmask), np.nan)

    groups = {}
    for row in range(nrow):
        I = block[row]
        Ips = patch_set(I, cfg.l_ps, sp.p)
        key = _geometry_key(sp, I, Ips)
        if key is None:
            key = ("abs", row)
        entry = groups.get(key)
        if entry is None:
            groups[key] = entry = [I, Ips, []]
        entry[2].append((row, Ips[0]))

    for (I0, Ips0, members) in groups.values():
        try:
            _, A, Q = _patched_blocks(sp, I0, cfg.l_ps)
        except NumericFailure as exc:
            exc.detail["subgraph"] = tuple(int(v) for v in I0)
            raise
        rows = np.array([m[0] for m in members])
        shifts = np.array([m[1] for m in members]) - Ips0[0]
        idx = Ips0[None, :] + shifts[:, None]
        W = d[idx] @ A
        Qinv = _inverse_small(Q, I0)
        full = W @ Qinv
        base = np.einsum("ij,ij->i", full, W)
        for mask in range(nmask - 1):
            Npos = [b for b in range(k) if mask >> b & 1]
            Fpos = [b for b in range(k) if not mask >> b & 1]
            T = base.copy()
            if Npos:
                QNinv = _inverse_small(Q[np.ix_(Npos, Npos)], I0)
                WN = W[:, Npos]
                T -= np.einsum("ij,jk,ik->i", WN, QNinv, WN)
            T_tab[rows, mask] = T
            thr_tab[rows, mask] = _threshold_from_Q(Q, Fpos, Npos, cfg, sp.p)
    return T_tab, thr_tab


def _inverse_small(M, where):
    try:
        c = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericFailure("singular Q block", subgraph=tuple(int(v) for v in where),
                             condition=float(np.linalg.cond(M))) from exc
    inv = linalg.cho_solve(c, np.eye(M.shape[0]))
    return (inv + inv.T) / 2
