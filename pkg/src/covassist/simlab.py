"""
Rare/Weak signal generation, Hamming error and the Monte Carlo runner.

Every replication draws from its own Philox stream seeded with
``SeedSequence([seed, rep])``; Gaussians come from numpy's ziggurat sampler.
All cells of an experiment therefore share random numbers at a given rep,
and results do not depend on how reps are spread over worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import (estimate_sparsity_strength, lasso_path_ideal, naive_threshold,
                        naive_threshold_level, sara_bic, sara_ideal)
from .errors import CaseError, InvalidInput, InvalidParameter
from .estimation import CaseConfig, case_select, changepoint_xty
from .gram import (CHANGEPOINT, FARIMA, GramModel, LinearFilter, gram_changepoint,
                   gram_farima, matrix_sqrt_spd, sparsify)

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Signal patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IidTwoSided:
    """Independent coordinates, random sign, magnitude ``U(tau, a tau)``."""

    name = "iid2"
    block = 1

    def draw(self, n, eps, tau, a, rng):
        on = rng.random(n) < eps
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        mag = rng.uniform(tau, a * tau, n)
        return np.where(on, sign * mag, 0.0)


@dataclass(frozen=True)
class IidOneSided:
    """Independent coordinates, positive, magnitude ``U(tau, a tau)``."""

    name = "iid1"
    block = 1

    def draw(self, n, eps, tau, a, rng):
        on = rng.random(n) < eps
        mag = rng.uniform(tau, a * tau, n)
        return np.where(on, mag, 0.0)


@dataclass(frozen=True)
class PointMassTwoSided:
    """Independent coordinates equal to ``+-tau``; ``a`` is ignored."""

    name = "pm2"
    block = 1

    def draw(self, n, eps, tau, a, rng):
        on = rng.random(n) < eps
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return np.where(on, sign * tau, 0.0)


@dataclass(frozen=True)
class BlockPattern:
    """
    Consecutive blocks of ``size`` coordinates, each active with
    probability ``eps``. An active block carries one magnitude from
    ``U(tau, a tau)`` with the signs given by ``signs`` (e.g. ``"+-+"``).
    """

    size: int
    signs: str

    def __post_init__(self):
        if self.size < 1 or len(self.signs) != self.size or set(self.signs) - {"+", "-"}:
            raise InvalidParameter(f"bad block sign string {self.signs!r}")

    @property
    def name(self):
        return "block:" + self.signs

    @property
    def block(self):
        return self.size

    def draw(self, n, eps, tau, a, rng):
        if n % self.size:
            raise InvalidParameter(f"{n} coordinates do not split into blocks of {self.size}")
        nb = n // self.size
        on = rng.random(nb) < eps
        mag = rng.uniform(tau, a * tau, nb)
        s = np.array([1.0 if c == "+" else -1.0 for c in self.signs])
        return (np.where(on, mag, 0.0)[:, None] * s).ravel()


class AdjacentPairsOpposite(BlockPattern):
    """Pairs ``(mu, -mu)`` at positions ``(2k, 2k + 1)``."""

    def __init__(self):
        super().__init__(2, "+-")

    @property
    def name(self):
        return "pairs-opposite"


def pattern_from_name(name: str):
    """Parse ``iid2``, ``iid1``, ``pm2``, ``pairs-opposite`` or ``block:<signs>``."""
    simple = {"iid2": IidTwoSided, "iid1": IidOneSided, "pm2": PointMassTwoSided,
              "pairs-opposite": AdjacentPairsOpposite}
    if name in simple:
        return simple[name]()
    if name.startswith("block:"):
        signs = name.split(":", 1)[1]
        return BlockPattern(len(signs), signs)
    raise InvalidParameter(f"unknown signal pattern {name!r}")


# ---------------------------------------------------------------------------
# Designs and data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RwDesign:
    """
    Rare/Weak design. Give exactly one of ``vartheta``/``s_p`` and one of
    ``r``/``tau_p``; the other member of each pair is derived.
    """

    p: int
    vartheta: Optional[float] = None
    s_p: Optional[float] = None
    r: Optional[float] = None
    tau_p: Optional[float] = None
    a: float = 1.0
    pattern: object = field(default_factory=IidTwoSided)

    def __post_init__(self):
        if self.p < 2:
            raise InvalidParameter("p must be at least 2")
        logp = math.log(self.p)
        if (self.vartheta is None) == (self.s_p is None):
            raise InvalidParameter("give exactly one of vartheta and s_p")
        if (self.r is None) == (self.tau_p is None):
            raise InvalidParameter("give exactly one of r and tau_p")
        if self.vartheta is None:
            object.__setattr__(self, "vartheta", math.log(self.p / self.s_p) / logp)
        else:
            object.__setattr__(self, "s_p", self.p ** (1 - self.vartheta))
        if self.tau_p is None:
            if not self.r > 0:
                raise InvalidParameter("r must be positive")
            object.__setattr__(self, "tau_p", math.sqrt(2 * self.r * logp))
        else:
            object.__setattr__(self, "r", self.tau_p ** 2 / (2 * logp))
        if not 0 < self.vartheta < 1:
            raise InvalidParameter("vartheta must lie in (0, 1), i.e. 1 < s_p < p")
        if not self.tau_p > 0:
            raise InvalidParameter("tau_p must be positive")
        if self.a < 1:
            raise InvalidParameter("a must be at least 1")

    @property
    def eps(self) -> float:
        return self.p ** (-self.vartheta)


def gen_beta(design: RwDesign, rng, n: Optional[int] = None) -> np.ndarray:
    """
    Draw a length-``p`` signal vector.

    Only the first ``n`` coordinates (default ``p``) may be nonzero; the
    change-point runner passes ``p - 1`` because the last coordinate has no
    jump after it.
    """
    n = design.p if n is None else int(n)
    beta = np.zeros(design.p)
    beta[:n] = design.pattern.draw(n, design.eps, design.tau_p, design.a, rng)
    return beta


@dataclass
class SimData:
    """Observed data; ``kind`` is ``y`` (change-point response) or ``xty``."""

    kind: str
    values: np.ndarray


_SQRT_MEMO: Dict[tuple, np.ndarray] = {}


def _gram_key(g: GramModel) -> str:
    if g.kind == FARIMA:
        return f"farima_p{g.p}_phi{g.params['phi']!r}"
    if g.values is not None:
        digest = hashlib.sha1(np.ascontiguousarray(g.values).tobytes()).hexdigest()[:16]
        return f"{g.kind}_p{g.p}_{digest}"
    items = "_".join(f"{k}{v!r}" for k, v in sorted(g.params.items()))
    return f"{g.kind}_p{g.p}_{items}"


def gram_sqrt(g: GramModel, cache_dir: Optional[str] = None) -> np.ndarray:
    """
    ``G^{1/2}``, memoized in process and, when ``cache_dir`` is set, on disk
    as ``<key>.npy``.
    """
    key = _gram_key(g)
    if key in _SQRT_MEMO:
        return _SQRT_MEMO[key]
    path = os.path.join(cache_dir, key + ".npy") if cache_dir else None
    if path and os.path.exists(path):
        S = np.load(path)
    else:
        S = matrix_sqrt_spd(g)
        if path:
            os.makedirs(cache_dir, exist_ok=True)
            tmp = f"{path}.{os.getpid()}.tmp.npy"
            np.save(tmp, S)
            os.replace(tmp, path)
    _SQRT_MEMO[key] = S
    return S


def gen_data(g: GramModel, beta, rng, noise_scale: float = 1.0,
             cache_dir: Optional[str] = None) -> SimData:
    """
    Simulate one dataset.

    Change-point: ``Y = theta + z`` with ``theta_i = -sum_{k >= i} beta_k``,
    so the mean steps by ``beta_j`` between ``j`` and ``j + 1``. Otherwise the
    design is ``X = G^{1/2}`` and the sufficient vector
    ``X'Y = G beta + G^{1/2} z`` is returned.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (g.p,):
        raise InvalidInput(f"beta must have length {g.p}")
    z = rng.standard_normal(g.p) * noise_scale
    if g.kind == CHANGEPOINT:
        theta = -np.cumsum(beta[::-1])[::-1]
        return SimData("y", theta + z)
    S = gram_sqrt(g, cache_dir)
    return SimData("xty", S @ (S @ beta + z))


def hamming_error(beta_hat, beta) -> int:
    """Number of coordinates with ``sgn(beta_hat_j) != sgn(beta_j)``."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta_hat.shape != beta.shape:
        raise InvalidInput("length mismatch")
    return int(np.count_nonzero(np.sign(beta_hat) != np.sign(beta)))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

METHODS = ("case", "adcase", "sara", "sara_bic", "naive", "lasso")
SARA_H = (1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 50)
SARA_LAMBDA = tuple(round(0.25 * k, 2) for k in range(1, 41))


@dataclass
class ExperimentSpec:
    """
    A grid of cells run under several methods.

    Each cell is a dict with ``vartheta`` (or ``s_p``), ``tau_p`` (or ``r``),
    optionally ``a``, ``pattern`` and the misspecified tuning values
    ``tune_vartheta``/``tune_tau_p`` used by CASE instead of the truth.
    """

    name: str
    model: str
    p: int
    cells: Sequence[dict]
    methods: Sequence[str] = ("case",)
    reps: int = 10
    seed: int = 0
    phi: Optional[float] = None
    case_overrides: dict = field(default_factory=dict)
    out: Optional[str] = None
    threads: int = 1
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidParameter("repetitions must be at least 1")
        if self.model not in (CHANGEPOINT, FARIMA):
            raise InvalidParameter(f"unsupported model {self.model!r}")
        if self.model == FARIMA and self.phi is None:
            raise InvalidParameter("FARIMA experiments need phi")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise InvalidParameter(f"unknown methods {sorted(bad)}")
        if self.model == CHANGEPOINT and "lasso" in self.methods:
            raise InvalidParameter("lasso is only wired for models with a dense design")
        if self.model != CHANGEPOINT and set(self.methods) & {"sara", "sara_bic", "adcase", "naive"}:
            raise InvalidParameter("scan and naive methods need the change-point model")
        if not self.cells:
            raise InvalidParameter("no cells")
        for c in self.cells:
            design = self.design(c)
            if self.model == FARIMA and self.p % design.pattern.block:
                raise InvalidParameter(f"p={self.p} is not a multiple of the block size")

    def gram(self) -> GramModel:
        return gram_changepoint(self.p) if self.model == CHANGEPOINT else gram_farima(self.p, self.phi)

    def design(self, cell: dict) -> RwDesign:
        pat = cell.get("pattern", "iid2")
        return RwDesign(p=self.p, vartheta=cell.get("vartheta"), s_p=cell.get("s_p"),
                        r=cell.get("r"), tau_p=cell.get("tau_p"), a=cell.get("a", 1.0),
                        pattern=pattern_from_name(pat) if isinstance(pat, str) else pat)


@dataclass
class ResultRow:
    method: str
    cell: dict
    mean: float
    stderr: float
    reps: int
    failures: int
    seconds: float


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: List[ResultRow]

    def csv_text(self) -> str:
        keys = ["vartheta", "s_p", "tau_p", "r", "a", "pattern", "tune_vartheta", "tune_tau_p"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["experiment", "model", "p", "phi", "method"] + keys
                   + ["mean", "stderr", "reps", "failures"])
        for row in self.rows:
            d = _cell_values(self.spec, row.cell)
            w.writerow([self.spec.name, self.spec.model, self.spec.p,
                        "" if self.spec.phi is None else repr(self.spec.phi), row.method]
                       + [_fmt(d.get(k)) for k in keys]
                       + [repr(row.mean), repr(row.stderr), row.reps, row.failures])
        return buf.getvalue()

    def write(self, path: str):
        """Write the table as CSV and append a manifest line to ``<path>.jsonl``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.csv_text())
        manifest = {"spec": {k: v for k, v in asdict(self.spec).items() if k != "cells"},
                    "cells": [dict(c) for c in self.spec.cells],
                    "seconds": [{"method": r.method, "cell": r.cell, "seconds": r.seconds}
                                for r in self.rows]}
        with open(path + ".jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest, default=str) + "\n")


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _cell_values(spec, cell):
    design = spec.design(cell)
    d = dict(cell)
    d.update(vartheta=design.vartheta, s_p=design.s_p, tau_p=design.tau_p, r=design.r,
             a=float(design.a), pattern=design.pattern.name)
    return d


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Philox stream for one replication."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


def _run_method(method, spec, g, design, cell, data, beta):
    p = spec.p
    if method in ("case", "adcase"):
        if method == "adcase":
            b0, _, _, _ = sara_bic(data.values, SARA_LAMBDA, SARA_H)
            s_hat, tau_hat = estimate_sparsity_strength(b0)
            if s_hat >= p - 1:
                raise InvalidInput("scan selected nearly every coordinate")
            s_p, tau_p = max(s_hat, 1.0), tau_hat
        else:
            th = cell.get("tune_vartheta", design.vartheta)
            s_p = p ** (1 - th)
            tau_p = cell.get("tune_tau_p", design.tau_p)
        cfg = CaseConfig.for_experiment(spec.model, p, s_p, tau_p, **spec.case_overrides)
        return case_select(g, data.values, cfg, data.kind).beta_hat
    if method == "sara":
        return sara_ideal(data.values, beta, SARA_LAMBDA, SARA_H)[0]
    if method == "sara_bic":
        return sara_bic(data.values, SARA_LAMBDA, SARA_H)[0]
    if method == "naive":
        sp = sparsify(g, LinearFilter.second_difference())
        d = sp.filter_data(changepoint_xty(data.values))
        out = naive_threshold(d, naive_threshold_level(p, design.s_p, design.tau_p))
        out[-1] = 0.0
        return out
    if method == "lasso":
        return lasso_path_ideal(g, data.values, beta)[0]
    raise InvalidParameter(f"unknown method {method!r}")


def _run_task(args):
    spec, ci, rep = args
    cell = spec.cells[ci]
    g = spec.gram()
    design = spec.design(cell)
    rng = rep_rng(spec.seed, rep)
    n = spec.p - 1 if spec.model == CHANGEPOINT else spec.p
    beta = gen_beta(design, rng, n)
    data = gen_data(g, beta, rng, cache_dir=spec.cache_dir)
    out = []
    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            err = hamming_error(_run_method(method, spec, g, design, cell, data, beta), beta)
        except CaseError as exc:
            log.warning("rep %d cell %d method %s failed: %s", rep, ci, method, exc)
            err = None
        out.append((err, time.perf_counter() - t0))
    return out


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """
    Run every (cell, rep) pair and aggregate mean Hamming error per method.

    Failed replications are logged and excluded; their number is reported.
    Means are exact float sums in rep order, so the table does not depend
    on the number of worker processes.
    """
    tasks = [(spec, ci, rep) for ci in range(len(spec.cells)) for rep in range(spec.reps)]
    if spec.model != CHANGEPOINT:
        gram_sqrt(spec.gram(), spec.cache_dir)
    if spec.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.threads) as ex:
            results = list(ex.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]
    rows = []
    for ci, cell in enumerate(spec.cells):
        block = results[ci * spec.reps:(ci + 1) * spec.reps]
        for k, method in enumerate(spec.methods):
            errs = [r[k][0] for r in block if r[k][0] is not None]
            secs = math.fsum(r[k][1] for r in block)
            n = len(errs)
            mean = math.fsum(errs) / n if n else float("nan")
            if n > 1:
                var = math.fsum((e - mean) ** 2 for e in errs) / (n - 1)
                se = math.sqrt(var / n)
            else:
                se = float("nan") if n == 0 else 0.0
            rows.append(ResultRow(method, dict(cell), mean, se, n, spec.reps - n, secs))
    result = ExperimentResult(spec, rows)
    if spec.out:
        result.write(spec.out)
    return result


# ---------------------------------------------------------------------------
# Experiment presets
# ---------------------------------------------------------------------------


def _grid(thetas, taus_for, **extra):
    return [dict(vartheta=th, tau_p=tau, **extra) for th in thetas for tau in taus_for(th)]


def _exp1_taus(th):
    return [4.0, 4.5, 5.0, 5.5, 6.0, 6.5] if th == 0.3 else [3.0, 3.5, 4.0, 4.5, 5.0, 5.5]


EXPERIMENTS = {
    "1a": dict(model=CHANGEPOINT, p=5000, methods=("case", "sara"), reps=100,
               cells=_grid([0.3, 0.45, 0.6, 0.75], _exp1_taus)),
    "1b": dict(model=CHANGEPOINT, p=5000, methods=("case", "adcase", "sara_bic"), reps=100,
               cells=_grid([0.3, 0.45, 0.6, 0.75], _exp1_taus)),
    "2": dict(model=CHANGEPOINT, p=10 ** 6, methods=("case", "naive"), reps=50,
              cells=_grid([0.35, 0.5, 0.75], lambda th: [float(t) for t in range(5, 14)])),
    "3": dict(model=CHANGEPOINT, p=5000, methods=("case", "sara"), reps=100,
              cells=[dict(vartheta=0.5, tau_p=4.5, a=a, pattern=pat)
                     for pat in ("iid2", "iid1") for a in (1.0, 1.5, 2.0, 2.5, 3.0)]),
    "4a": dict(model=FARIMA, phi=0.35, p=5000, methods=("case", "lasso"), reps=100,
               cells=_grid([0.35, 0.45, 0.55], lambda th: [4.0, 5.0, 6.0, 7.0, 8.0],
                           pattern="pm2")),
    "4b": dict(model=FARIMA, phi=0.35, p=5000, methods=("case", "lasso"), reps=100,
               cells=_grid([0.35, 0.45, 0.55], lambda th: [4.0, 5.0, 6.0, 7.0, 8.0],
                           pattern="pairs-opposite")),
    "5": dict(model=FARIMA, phi=0.35, p=5000, methods=("case",), reps=100,
              cells=[dict(vartheta=th, tau_p=tau, pattern="pairs-opposite",
                          tune_vartheta=round(th + dth, 2), tune_tau_p=tau + dtau)
                     for th, tau in ((0.35, 6.0), (0.55, 5.0))
                     for dth in (-0.1, -0.05, 0.0, 0.05, 0.1)
                     for dtau in (-1.0, -0.5, 0.0, 0.5, 1.0)]),
    "6": dict(model=FARIMA, phi=0.35, p=4998, methods=("case", "lasso"), reps=50,
              cells=[dict(vartheta=0.75, tau_p=float(t), pattern="block:" + s)
                     for s in ("++", "+-", "+++", "++-", "+-+", "+--") for t in range(5, 11)]),
}

TABLES = {1: "1a", 2: "1b", 3: "2", 4: "3", 5: "4a", 6: "4b"}


def experiment_spec(name: str, cells: Optional[Sequence[dict]] = None, **overrides) -> ExperimentSpec:
    """
    Build the spec of a preset experiment.

    ``cells`` replaces the preset grid (partial dicts are completed from the
    preset's first cell); other keyword arguments override spec fields.
    """
    if name not in EXPERIMENTS:
        raise InvalidParameter(f"unknown experiment {name!r}")
    base = dict(EXPERIMENTS[name])
    if cells is not None:
        template = {k: v for k, v in base["cells"][0].items()
                    if k not in ("vartheta", "s_p", "tau_p", "r")}
        base["cells"] = [{**template, **c} for c in cells]
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(name=name, **base)
