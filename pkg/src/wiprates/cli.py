"""Command line entry point: ``wiprates {simulate,decompose,wq,rates}``.

Configuration comes from an optional INI file (``--config``) and flags; a
flag always wins over the file.  The file grammar is ``configparser``'s
``key = value`` lines grouped under section headers::

    [run]
    seed = 7
    output = results

    [system]
    system = lsv
    beta = 0.25
    roof = constant

``;`` and ``#`` start comments, also after a value.  Every key belongs to
exactly one section (see ``FIELDS``); unknown sections
or keys are rejected.  The seed is mandatory.  Output files start with a
``# key = value`` block holding the full resolved configuration, and contain
nothing that varies between runs, so identical configs give identical bytes.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 size cap exceeded.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path


from . import rng as streams
from .dynamics import make_system, sample_initial_arrays
from .errors import ConfigurationError, InputError, NumericalError, SizeError, TruncationError, WipError
from .process import OBSERVABLES, get_observable, paths_from_csv, paths_to_csv, wn_paths
from .rates import FIT_MODES, ExperimentPlan, centred_observable, fit_rate, run_rate_experiment
from .transport import (
    wasserstein_1d,
    wasserstein_assignment,
    wasserstein_bruteforce,
    wasserstein_entropic,
)
from .ulam import build_ulam, cell_average, center, solve_coboundary, suspension_ulam, unit_roof_psi

OUTPUT_ENV = "WIPRATES_OUTPUT"
SUBCOMMANDS = ("simulate", "decompose", "wq", "rates")
SYSTEMS = ("doubling", "lsv", "lsv-induced")
SOLVERS = ("assignment", "sorted", "bruteforce", "entropic")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_SIZE = 0, 1, 2, 3


class UsageError(WipError, ValueError):
    """Bad command line or configuration file."""


def _int_list(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    command: str
    seed: int
    output: str = "."
    threads: int = 1
    system: str = "doubling"
    beta: float | None = None
    roof: str = "constant"
    observable: str = "cos"
    n: int = 1024
    samples: int = 16
    grid: int = 16
    burn_in: int = 1000
    step: float = 0.02
    ulam_n: int = 1024
    height_cells: int = 16
    tol: float = 1e-9
    a: str = ""
    b: str = ""
    q: float = 1.0
    metric: str = "sup"
    solver: str = "assignment"
    epsilon: float = 1e-2
    n_values: tuple = (128, 256, 512, 1024, 2048, 4096, 8192)
    rate_samples: int = 256
    bootstrap: int = 200
    floor_reps: int = 4
    variance_source: str = "auto"
    variance_time: float = 1e7
    fit_mode: str = "fixed"
    allow_small: bool = False

    def header(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return out


# key -> (section, parser, flag help)
FIELDS = {
    "seed": ("run", int, "master seed (required)"),
    "output": ("run", str, f"output directory (default ${OUTPUT_ENV} or .)"),
    "threads": ("run", int, "worker thread cap"),
    "system": ("system", str, "base map: " + ", ".join(SYSTEMS)),
    "beta": ("system", float, "LSV parameter in (0, 1/2)"),
    "roof": ("system", str, "roof function: constant or affine"),
    "observable": ("observable", str, "observable: " + ", ".join(OBSERVABLES)),
    "n": ("simulate", int, "time scale n of W_n"),
    "samples": ("simulate", int, "number of paths"),
    "grid": ("simulate", int, "path grid size m"),
    "burn_in": ("simulate", int, "base-map burn-in steps"),
    "step": ("simulate", float, "height quadrature panel width"),
    "ulam_n": ("decompose", int, "Ulam cells on the base"),
    "height_cells": ("decompose", int, "height cells for height-dependent observables"),
    "tol": ("decompose", float, "series tolerance"),
    "a": ("wq", str, "first sample CSV"),
    "b": ("wq", str, "second sample CSV"),
    "q": ("wq", float, "Wasserstein order q >= 1"),
    "metric": ("wq", str, "sup (paths) or abs (reals)"),
    "solver": ("wq", str, "solver: " + ", ".join(SOLVERS)),
    "epsilon": ("wq", float, "entropic regularisation"),
    "n_values": ("rates", _int_list, "comma-separated increasing n grid"),
    "rate_samples": ("rates", int, "samples per n (N)"),
    "bootstrap": ("rates", int, "bootstrap resamples"),
    "floor_reps": ("rates", int, "self-distance floor repetitions"),
    "variance_source": ("rates", str, "auto, ulam or green-kubo"),
    "variance_time": ("rates", float, "Green-Kubo time budget"),
    "fit_mode": ("rates", str, "free, fixed or zero"),
    "allow_small": ("rates", _bool, "permit N < 32"),
}

# which config keys each subcommand exposes as flags
COMMAND_KEYS = {
    "simulate": ("system", "beta", "roof", "observable", "n", "samples", "grid", "burn_in", "step"),
    "decompose": ("system", "beta", "observable", "ulam_n", "height_cells", "tol"),
    "wq": ("a", "b", "q", "metric", "solver", "epsilon"),
    "rates": ("system", "beta", "roof", "observable", "q", "grid", "burn_in", "step", "ulam_n",
              "n_values", "rate_samples", "bootstrap", "floor_reps", "variance_source", "variance_time",
              "fit_mode", "allow_small"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="wiprates", description="Rates in the weak invariance principle for semiflows.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        for key in ("seed", "output", "threads") + COMMAND_KEYS[name]:
            _, kind, help_ = FIELDS[key]
            flag = "--" + key.replace("_", "-")
            if kind is _bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(flag, dest=key, default=None, help=help_)
    return parser


def _read_file(path):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise UsageError(f"config file not found: {path}")
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            key_n = key.replace("-", "_")
            if key_n not in FIELDS:
                raise UsageError(f"unknown config key {key!r} in section [{section}]")
            if FIELDS[key_n][0] != section:
                raise UsageError(f"config key {key!r} belongs in section [{FIELDS[key_n][0]}], not [{section}]")
            values[key_n] = raw
    return values


def _convert(key, raw):
    try:
        return FIELDS[key][1](raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{key}: cannot parse {raw!r} ({exc})") from None


def _validate(cfg: RunConfig):
    def need(ok, key, msg):
        if not ok:
            raise UsageError(f"{key}: {msg}")

    need(cfg.seed >= 0, "seed", "must be >= 0")
    need(cfg.threads >= 1, "threads", "must be >= 1")
    need(cfg.system in SYSTEMS, "system", f"must be one of {SYSTEMS}")
    if cfg.system == "doubling":
        need(cfg.beta is None, "beta", "only applies to the LSV systems")
    else:
        need(cfg.beta is not None, "beta", f"required for system {cfg.system}")
        need(0.0 < cfg.beta < 0.5, "beta", "must lie in (0, 1/2)")
    need(cfg.roof in ("constant", "affine"), "roof", "must be constant or affine")
    need(cfg.observable in OBSERVABLES, "observable", f"must be one of {sorted(OBSERVABLES)}")
    need(cfg.n >= 1, "n", "must be >= 1")
    need(cfg.samples >= 1, "samples", "must be >= 1")
    need(cfg.grid >= 1, "grid", "must be >= 1")
    need(cfg.burn_in >= 0, "burn_in", "must be >= 0")
    need(0 < cfg.step <= 0.05, "step", "must lie in (0, 0.05]")
    need(cfg.ulam_n >= 16, "ulam_n", "must be >= 16")
    need(cfg.height_cells >= 1, "height_cells", "must be >= 1")
    need(cfg.tol > 0, "tol", "must be positive")
    need(cfg.q >= 1, "q", "must be >= 1")
    need(cfg.metric in ("sup", "abs"), "metric", "must be sup or abs")
    need(cfg.solver in SOLVERS, "solver", f"must be one of {SOLVERS}")
    need(cfg.epsilon > 0, "epsilon", "must be positive")
    need(cfg.bootstrap >= 0, "bootstrap", "must be >= 0")
    need(cfg.floor_reps >= 0, "floor_reps", "must be >= 0")
    need(cfg.variance_source in ("auto", "ulam", "green-kubo"), "variance_source", "must be auto, ulam or green-kubo")
    need(cfg.variance_time > 0, "variance_time", "must be positive")
    need(cfg.fit_mode in FIT_MODES, "fit_mode", f"must be one of {FIT_MODES}")
    if cfg.command == "wq":
        need(bool(cfg.a) and bool(cfg.b), "a/b", "wq needs two sample files")
    if cfg.command == "rates":
        need(len(cfg.n_values) >= 2 and all(y > x for x, y in zip(cfg.n_values, cfg.n_values[1:])),
             "n_values", "must be strictly increasing with >= 2 entries")
        need(cfg.rate_samples >= (1 if cfg.allow_small else 32), "rate_samples", "must be >= 32")


def parse_config(argv=None, environ=None) -> RunConfig:
    """Resolve flags over file values over defaults; raise UsageError on problems."""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    values = _read_file(args.config) if args.config else {}
    for key in FIELDS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    if "seed" not in values:
        raise UsageError("seed: a seed is required (--seed or [run] seed)")
    if "output" not in values and environ.get(OUTPUT_ENV):
        values["output"] = environ[OUTPUT_ENV]
    kwargs = {k: _convert(k, v) for k, v in values.items()}
    cfg = RunConfig(command=args.command, **kwargs)
    _validate(cfg)
    return cfg


# -- subcommands ------------------------------------------------------------------


def _out(cfg, name):
    d = Path(cfg.output)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _simulate(cfg: RunConfig):
    system = make_system(cfg.system, cfg.beta, cfg.roof)
    obs = centred_observable(system, get_observable(cfg.observable), 2048 if cfg.system == "lsv-induced" else 16384)
    gens = streams.streams(cfg.samples, cfg.seed, streams.PATHS, cfg.n)
    y0, u0 = sample_initial_arrays(system, cfg.samples, cfg.burn_in, gens)
    paths = wn_paths(system, obs, cfg.n, cfg.grid, (y0, u0), gens, step=cfg.step)
    path = _out(cfg, "wn_paths.csv")
    header = cfg.header() + [f"mean = {obs.mean!r}", f"mean_source = {obs.mean_source}"]
    paths_to_csv(paths, path, header)
    print(f"wrote {cfg.samples} paths to {path}")


def _decompose(cfg: RunConfig):
    system = make_system(cfg.system, cfg.beta, "constant")
    obs = get_observable(cfg.observable)
    op = build_ulam(system.base, cfg.ulam_n)
    if obs.base_only:
        psi = cell_average(lambda y: obs.raw(y), op.edges)
    else:
        op = suspension_ulam(op, cfg.height_cells)
        psi = unit_roof_psi(lambda y, u: obs.raw(y, u), system.base, op.edges, cfg.height_cells)
    dec = solve_coboundary(center(psi, op), op, tol=cfg.tol)
    header = cfg.header()
    report = _out(cfg, "residuals.txt")
    with open(report, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for k, v in dec.summary().items():
            fh.write(f"{k} = {v!r}\n")
    table = _out(cfg, "decomposition.csv")
    pi = op.stationary
    with open(table, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("cell,pi,psi,m,chi,breve_w\n")
        for i in range(op.size):
            row = (pi[i], dec.psi.values[i], dec.m.values[i], dec.chi.values[i], dec.breve_w.values[i])
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    for k, v in dec.summary().items():
        print(f"{k} = {v!r}")


def _wq(cfg: RunConfig):
    a, b = paths_from_csv(cfg.a), paths_from_csv(cfg.b)
    if cfg.metric == "abs":
        a, b = a[:, -1], b[:, -1]  # real samples: the last column (terminal values for paths)
    if cfg.solver == "sorted":
        if a.ndim != 1:
            raise InputError("the sorted solver needs --metric abs")
        res = wasserstein_1d(a, b, cfg.q)
        value, extra = res.distance, {}
    elif cfg.solver == "bruteforce":
        res = wasserstein_bruteforce(a, b, cfg.q, cfg.metric)
        value, extra = res.distance, {}
    elif cfg.solver == "entropic":
        res = wasserstein_entropic(a, b, cfg.q, cfg.metric, epsilon=cfg.epsilon)
        value, extra = res.distance, {"lower": res.lower, "duality_gap": res.duality_gap}
    else:
        res = wasserstein_assignment(a, b, cfg.q, cfg.metric)
        value, extra = res.distance, {}
    path = _out(cfg, "wq.txt")
    with open(path, "w") as fh:
        for line in cfg.header():
            fh.write(f"# {line}\n")
        fh.write(f"distance = {value!r}\n")
        fh.write(f"N = {len(a)}\n")
        for k, v in extra.items():
            fh.write(f"{k} = {v!r}\n")
    print(f"W_{cfg.q:g} = {value!r}")


def _rates(cfg: RunConfig):
    plan = ExperimentPlan(
        system=cfg.system, beta=cfg.beta, roof=cfg.roof, observable=cfg.observable, q=cfg.q,
        n_values=cfg.n_values, samples=cfg.rate_samples, grid=cfg.grid, seed=cfg.seed,
        bootstrap=cfg.bootstrap, floor_reps=cfg.floor_reps, variance_source=cfg.variance_source,
        ulam_cells=cfg.ulam_n, variance_time=cfg.variance_time, burn_in=cfg.burn_in, step=cfg.step,
        allow_small=cfg.allow_small,
    )
    table = run_rate_experiment(
        plan, progress=lambda r: print(f"n={r.n} estimate={r.estimate:.6g} stderr={r.stderr:.3g} floor={r.floor:.6g}"),
        threads=cfg.threads,
    )
    header = cfg.header() + [
        f"sigma2 = {table.sigma2!r}", f"variance_source = {table.variance_source}",
        f"mean = {table.mean!r}", f"mean_source = {table.mean_source}",
    ]
    table.to_csv(_out(cfg, "rates.csv"), header)
    fit = fit_rate(table, cfg.fit_mode)
    path = _out(cfg, "fit.txt")
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("alpha,logC,gamma,r2,mode\n")
        rec = fit.record()
        fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in rec.values()) + "\n")
    print(fit.to_line())


DISPATCH = {"simulate": _simulate, "decompose": _decompose, "wq": _wq, "rates": _rates}


def dispatch(cfg: RunConfig) -> int:
    try:
        DISPATCH[cfg.command](cfg)
    except SizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except (NumericalError, TruncationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ConfigurationError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
