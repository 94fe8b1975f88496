"""
Command-line front end.

Subcommands: ``select``, ``simulate``, ``rates``, ``phase-diagram`` and
``gosd-inspect``. Settings may come from a flat ``key = value`` config file
(``--config``); explicit flags win over it. Exit codes: 0 success, 1 usage
or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from typing import List, Optional

import numpy as np

from . import rates
from .errors import CaseError, NumericFailure
from .estimation import CaseConfig, case_select
from .gosd import build_gosd, enumerate_connected_subgraphs
from .gram import (CHANGEPOINT, LinearFilter, gram_changepoint, gram_dense, gram_farima,
                   gram_powerdecay, sparsify)
from .simlab import EXPERIMENTS, TABLES, experiment_spec, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
MODELS = ("changepoint", "farima", "powerdecay", "dense-file")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Argument definitions
# ---------------------------------------------------------------------------


def _model_args(p, need_p=True):
    p.add_argument("--model", choices=MODELS, default="changepoint")
    p.add_argument("--p", type=int, help="number of variables" + ("" if need_p else " (unused)"))
    p.add_argument("--phi", type=float, help="FARIMA long-memory parameter")
    p.add_argument("--rate", type=float, help="power-decay exponent")
    p.add_argument("--scale", type=float, default=1.0, help="power-decay lag scale")
    p.add_argument("--dense-file", help="CSV file with a dense Gram matrix")


def _strength_args(p):
    p.add_argument("--vartheta", type=float, help="sparsity exponent")
    p.add_argument("--s-p", type=float, help="expected number of signals")
    p.add_argument("--r", type=float, help="strength exponent")
    p.add_argument("--tau-p", type=float, help="signal strength")


def _tuning_args(p):
    p.add_argument("--m", type=int, help="largest screened subgraph")
    p.add_argument("--delta", type=float, help="GOSD threshold")
    p.add_argument("--l-ps", type=int, help="screening patch radius")
    p.add_argument("--l-pe", type=int, help="estimation patch radius")
    p.add_argument("--u-pe", type=float, help="L0 penalty level")
    p.add_argument("--v-pe", type=float, help="minimum nonzero magnitude")
    p.add_argument("--q-mode", choices=("constant", "datadriven"), help="screening threshold rule")
    p.add_argument("--q-tilde", type=float, help="per-node constant for --q-mode constant")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="covassist", description=__doc__.strip().splitlines()[0])
    top.add_argument("--config", help="INI-style file of defaults")
    top.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("select", help="run screening and estimation on one dataset")
    _model_args(s)
    _strength_args(s)
    _tuning_args(s)
    s.add_argument("--input", help="CSV with one value per row (header optional)")
    s.add_argument("--input-kind", choices=("y", "xty", "d"),
                   help="response (change-point only), X'Y or filtered data")
    s.add_argument("--trace", help="also write the screening trace to this CSV")
    s.add_argument("--full", action="store_true", help="write every coordinate, not just the support")
    s.add_argument("--out", help="output CSV (default stdout)")

    m = sub.add_parser("simulate", help="run a preset experiment or a cell of it")
    which = m.add_mutually_exclusive_group()
    which.add_argument("--table", type=int, choices=sorted(TABLES), help="table number")
    which.add_argument("--experiment", choices=sorted(EXPERIMENTS), help="experiment name")
    m.add_argument("--cell", action="append",
                   help="key=value,... overriding the grid (repeatable); keys: vartheta, s_p, "
                        "tau/tau_p, r, a, pattern, tune_vartheta, tune_tau_p")
    m.add_argument("--methods", help="comma-separated subset of methods")
    m.add_argument("--p", type=int)
    m.add_argument("--phi", type=float)
    m.add_argument("--a", type=float, help="magnitude ratio applied to every cell")
    m.add_argument("--seed", type=int)
    m.add_argument("--reps", type=int)
    m.add_argument("--threads", type=int, default=1, help="worker processes")
    m.add_argument("--cache-dir", help="directory for cached Gram square roots")
    _tuning_args(m)
    m.add_argument("--out", help="output CSV (default stdout)")

    r = sub.add_parser("rates", help="minimax exponent and boundary at one point")
    _model_args(r)
    _strength_args(r)
    r.add_argument("--window", type=int, default=300, help="Toeplitz proxy size for FARIMA")
    r.add_argument("--out", help="output CSV (default stdout)")

    ph = sub.add_parser("phase-diagram", help="boundary curves on a vartheta grid")
    ph.add_argument("--model", choices=("changepoint", "farima"), default="changepoint")
    ph.add_argument("--phi", type=float)
    ph.add_argument("--grid", type=int, default=50, help="number of vartheta points")
    ph.add_argument("--window", type=int, default=300)
    ph.add_argument("--out", help="output CSV (default stdout)")

    gi = sub.add_parser("gosd-inspect", help="degree histogram and subgraph counts of the GOSD")
    _model_args(gi)
    gi.add_argument("--delta", type=float, default=None, help="GOSD threshold")
    gi.add_argument("--filter", help="filter coefficients, comma separated")
    gi.add_argument("--m", type=int, default=3, help="count connected subgraphs up to this size")
    gi.add_argument("--edges", help="also write the edge list to this CSV")
    gi.add_argument("--out", help="output CSV (default stdout)")
    return top


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cp = configparser.ConfigParser()
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[covassist]\n" + text
        cp.read_string(text)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    values = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            values[k.replace("-", "_")] = v
    known = vars(args)
    unknown = sorted(set(values) - set(known) - {"config", "command"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    # Config values go right after the subcommand, so later explicit flags win.
    injected = []
    for k, v in values.items():
        if k == "verbose":
            args.verbose = args.verbose or v.strip().lower() in ("1", "true", "yes", "on")
            continue
        if isinstance(known[k], bool):
            if v.strip().lower() in ("1", "true", "yes", "on"):
                injected.append(f"--{k.replace('_', '-')}")
        elif k == "cell":
            injected += ["--cell", v]
        else:
            injected += [f"--{k.replace('_', '-')}", v]
    at = argv.index(args.command) + 1
    verbose = args.verbose
    args = parser.parse_args(argv[:at] + injected + argv[at:])
    args.verbose = args.verbose or verbose
    return args


def _gram(args):
    if args.model == "changepoint":
        _need(args.p, "--p")
        return gram_changepoint(args.p)
    if args.model == "farima":
        _need(args.p, "--p")
        _need(args.phi, "--phi")
        return gram_farima(args.p, args.phi)
    if args.model == "powerdecay":
        _need(args.p, "--p")
        _need(args.rate, "--rate")
        return gram_powerdecay(args.p, args.rate, args.scale)
    _need(args.dense_file, "--dense-file")
    return gram_dense(np.loadtxt(args.dense_file, delimiter=",", ndmin=2))


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required here")


def _read_vector(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append(float(row[-1]))
            except ValueError:
                if k == 0:
                    continue
                raise UsageError(f"{path}: non-numeric value on line {k + 1}")
    return np.asarray(rows)


def _strength(args, p):
    if (args.vartheta is None) == (args.s_p is None):
        raise UsageError("give exactly one of --vartheta and --s-p")
    if (args.r is None) == (args.tau_p is None):
        raise UsageError("give exactly one of --r and --tau-p")
    s_p = args.s_p if args.s_p is not None else p ** (1 - args.vartheta)
    tau = args.tau_p if args.tau_p is not None else math.sqrt(2 * args.r * math.log(p))
    return s_p, tau


def _tuning_overrides(args) -> dict:
    out = {}
    for flag, key in (("m", "m"), ("delta", "delta"), ("l_ps", "l_ps"), ("l_pe", "l_pe"),
                      ("u_pe", "u_pe"), ("v_pe", "v_pe"), ("q_mode", "threshold_mode"),
                      ("q_tilde", "q_tilde")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _open_out(path):
    if path:
        return open(path, "w", newline="", encoding="utf-8")
    return _NoClose(sys.stdout)


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _parse_cell(text) -> dict:
    cell = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise UsageError(f"bad --cell entry {part!r}; expected key=value")
        k, v = (x.strip() for x in part.split("=", 1))
        k = {"tau": "tau_p", "s": "s_p", "theta": "vartheta"}.get(k, k)
        if k == "pattern":
            cell[k] = v
        elif k in ("vartheta", "s_p", "tau_p", "r", "a", "tune_vartheta", "tune_tau_p"):
            try:
                cell[k] = float(v)
            except ValueError as exc:
                raise UsageError(f"--cell {k} needs a number") from exc
        else:
            raise UsageError(f"unknown --cell key {k!r}")
    return cell


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_select(args) -> int:
    g = _gram(args)
    _need(args.input, "--input")
    data = _read_vector(args.input)
    s_p, tau = _strength(args, g.p)
    kind = "farima" if g.kind != CHANGEPOINT else CHANGEPOINT
    cfg = CaseConfig.for_experiment(kind, g.p, s_p, tau, **_tuning_overrides(args))
    input_kind = args.input_kind or ("y" if g.kind == CHANGEPOINT else "xty")
    res = case_select(g, data, cfg, input_kind)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["index", "beta_hat"])
        for i, b in enumerate(res.beta_hat):
            if args.full or b != 0:
                w.writerow([i, repr(float(b))])
    if args.trace:
        res.screening.write_trace(args.trace)
    logging.getLogger(__name__).info("selected %d of %d", len(res.support), g.p)
    return EXIT_OK


def cmd_simulate(args) -> int:
    _need(args.seed, "--seed")
    if args.table is None and args.experiment is None:
        raise UsageError("give --table or --experiment")
    name = TABLES[args.table] if args.table is not None else args.experiment
    cells = [_parse_cell(c) for c in args.cell] if args.cell else None
    if args.a is not None:
        base = cells if cells is not None else EXPERIMENTS[name]["cells"]
        cells = [{**c, "a": args.a} for c in base]
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else None
    spec = experiment_spec(name, cells=cells, p=args.p, phi=args.phi, seed=args.seed,
                           reps=args.reps, methods=methods, threads=max(1, args.threads),
                           cache_dir=args.cache_dir, case_overrides=_tuning_overrides(args))
    result = run_experiment(spec)
    if args.out:
        result.write(args.out)
    else:
        sys.stdout.write(result.csv_text())
    return EXIT_OK


def cmd_rates(args) -> int:
    if args.model not in ("changepoint", "farima"):
        raise UsageError("rates supports --model changepoint or farima")
    if args.vartheta is None or args.s_p is not None:
        if args.s_p is None:
            raise UsageError("give --vartheta (or --s-p with --p)")
        _need(args.p, "--p")
        args.vartheta = math.log(args.p / args.s_p) / math.log(args.p)
    if args.r is None:
        _need(args.tau_p, "--r or --tau-p")
        _need(args.p, "--p")
        args.r = args.tau_p ** 2 / (2 * math.log(args.p))
    if args.model == "changepoint":
        rho = rates.rho_star_cp(args.vartheta, args.r)
        boundary = rates.cp_r_star(args.vartheta)
    else:
        _need(args.phi, "--phi")
        rho = rates.rho_star_lts(args.vartheta, args.r, args.phi, args.window)
        boundary = rates.r_star_boundary(args.vartheta, args.phi, args.window)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["model", "vartheta", "r", "rho_star", "r_star"])
        w.writerow([args.model, repr(args.vartheta), repr(args.r), repr(rho), repr(boundary)])
    return EXIT_OK


def cmd_phase(args) -> int:
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    thetas = np.linspace(0, 1, args.grid + 2)[1:-1]
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if args.model == "changepoint":
            w.writerow(["vartheta", "left_curve", "right_line", "r_star", "ht_upper", "ht_lower"])
            cols = (rates.cp_boundary_upper(thetas), rates.cp_boundary_lower(thetas),
                    [rates.cp_r_star(t) for t in thetas], rates.ht_boundary_upper(thetas),
                    rates.ht_boundary_lower(thetas))
            for t, *vals in zip(thetas, *cols):
                w.writerow([repr(float(t))] + ["" if math.isnan(v) else repr(float(v)) for v in vals])
        else:
            _need(args.phi, "--phi")
            w.writerow(["vartheta", "r_star"])
            for t in thetas:
                w.writerow([repr(float(t)), repr(rates.r_star_boundary(float(t), args.phi, args.window))])
    return EXIT_OK


def cmd_gosd(args) -> int:
    g = _gram(args)
    if args.filter:
        filt = LinearFilter(tuple(float(x) for x in args.filter.split(",")))
    elif g.kind == CHANGEPOINT:
        filt = LinearFilter.second_difference()
    else:
        filt = LinearFilter.first_difference()
    delta = args.delta
    if delta is None:
        delta = 0.0 if g.kind == CHANGEPOINT else 2.5 / math.log(g.p)
    sp = sparsify(g, filt, delta)
    graph = build_gosd(sp, delta)
    if args.m < 0:
        raise UsageError("--m must be nonnegative")
    hist = np.bincount(graph.degrees(), minlength=1)
    sizes = np.bincount([len(c) for c in enumerate_connected_subgraphs(graph, args.m)],
                        minlength=args.m + 1) if args.m else np.zeros(1, dtype=int)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["quantity", "value", "count"])
        for d, c in enumerate(hist):
            if c:
                w.writerow(["degree", d, int(c)])
        for k in range(1, args.m + 1):
            w.writerow(["subgraphs", k, int(sizes[k])])
    if args.edges:
        with open(args.edges, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["i", "j"])
            w.writerows(graph.edges())
    logging.getLogger(__name__).info("p=%d delta=%g max_degree=%d", g.p, delta, graph.max_degree)
    return EXIT_OK


COMMANDS = {"select": cmd_select, "simulate": cmd_simulate, "rates": cmd_rates,
            "phase-diagram": cmd_phase, "gosd-inspect": cmd_gosd}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numerical failure: {exc} {exc.detail}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
