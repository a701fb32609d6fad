"""Command-line front end.

Commands: ``exponents``, ``detect``, ``simulate`` and ``sweep``.  Configuration
is an INI-style file with ``[model]``, ``[experiment]`` and ``[output]``
sections; list values are comma separated and several anomalous
distributions are separated by ``;``.

Exit codes: 0 success, 2 input error, 3 environment error (for example an
unwritable output directory), 4 solver non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .detector import Outcome, detect
from .exponents import exponent_report
from .gaussian import l_star, second_order_threshold
from .montecarlo import (default_workers, estimate_all, sample_batch, sub_seed,
                         sweep_effect_of_m, sweep_phase_transition)
from .probs import Distribution, ModelSpec, SequenceBatch, parse_hypothesis
from .rejectexp import ConvergenceWarning, f_tradeoff, ld_cap

log = logging.getLogger("osdlab")

SCHEMA = 1
EXIT_INPUT, EXIT_ENV, EXIT_SOLVER = 2, 3, 4
MC_COLUMNS = ["axis_value", "hypothesis", "outcome_kind", "p_hat", "ci_lo", "ci_hi",
              "trials", "seed", "sd2_lo", "sd2_hi"]
FIG1_FACTORS = (0.8, 1.2)
FIG1_N = (500, 2000, 8000)
FIG2_M = (4, 8, 16, 32, 64)
FIG2_N = (100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000, 100000)
FIG3_N = (100, 125, 150, 175, 200, 300, 400, 500, 600, 700, 800, 900, 1000,
          1100, 1200, 1300, 1400, 1500)


class InputError(Exception):
    pass


class EnvironmentFailure(Exception):
    pass


class SolverFailure(Exception):
    pass


# --- configuration ----------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(" ", "").split(",") if tok)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


def _fmt(values) -> str:
    return ", ".join(repr(v) for v in values)


@dataclass(frozen=True)
class RunConfig:
    m: int
    nominal: tuple[float, ...]
    anomalous: tuple[tuple[float, ...], ...]
    t: int = 1
    n: int | None = None
    eps: float | None = None
    exponent: float | None = None
    threshold: float | None = None
    trials: int = 100_000
    seed: int | None = None
    truth: str | None = None
    n_grid: tuple[int, ...] | None = None
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")

    def spec(self) -> ModelSpec:
        try:
            nominal = Distribution(np.array(self.nominal))
            anomalous = tuple(Distribution(np.array(a)) for a in self.anomalous)
        except ValueError as exc:
            raise InputError(f"[model]: {exc}") from None
        if len(anomalous) == 1 and self.t > 1:
            anomalous = anomalous * self.t
        if len(anomalous) != self.t:
            raise InputError(f"[model] anomalous: expected {self.t} distributions, got {len(anomalous)}")
        try:
            return ModelSpec(self.m, nominal, anomalous)
        except ValueError as exc:
            raise InputError(f"[model]: {exc}") from None

    def calibration(self) -> tuple[str, float]:
        given = [(k, getattr(self, k)) for k in ("eps", "exponent", "threshold")
                 if getattr(self, k) is not None]
        if len(given) != 1:
            raise InputError("[experiment]: supply exactly one of eps, exponent, threshold "
                             f"(got {[k for k, _ in given] or 'none'})")
        return given[0]

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["model"] = {"m": str(self.m), "t": str(self.t), "alphabet": str(len(self.nominal)),
                       "nominal": _fmt(self.nominal),
                       "anomalous": "; ".join(_fmt(a) for a in self.anomalous)}
        exp = {"trials": str(self.trials)}
        for key in ("n", "eps", "exponent", "threshold", "seed", "truth"):
            value = getattr(self, key)
            if value is not None:
                exp[key] = repr(value) if isinstance(value, float) else str(value)
        if self.n_grid is not None:
            exp["n_grid"] = _fmt(self.n_grid)
        cp["experiment"] = exp
        cp["output"] = {"directory": self.directory, "formats": ", ".join(self.formats)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise InputError(str(exc)) from None
    if "model" not in cp:
        raise InputError(f"{source}: missing [model] section")

    def get(section, key, conv, default=None, required=False):
        if section not in cp or key not in cp[section]:
            if required:
                raise InputError(f"{source}: [{section}] {key} is required")
            return default
        raw = cp[section][key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise InputError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None

    nominal = get("model", "nominal", _floats, required=True)
    anomalous = get("model", "anomalous",
                    lambda s: tuple(_floats(part) for part in s.split(";") if part.strip()),
                    required=True)
    alphabet = get("model", "alphabet", int, len(nominal))
    if alphabet != len(nominal):
        raise InputError(f"{source}: [model] alphabet = {alphabet} but nominal has {len(nominal)} entries")
    seed = get("experiment", "seed", int)
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise InputError(f"{source}: [experiment] seed must be an unsigned 64-bit integer")
    return RunConfig(
        m=get("model", "m", int, required=True),
        t=get("model", "t", int, len(anomalous)),
        nominal=nominal,
        anomalous=anomalous,
        n=get("experiment", "n", int),
        eps=get("experiment", "eps", float),
        exponent=get("experiment", "exponent", float),
        threshold=get("experiment", "threshold", float),
        trials=get("experiment", "trials", int, 100_000),
        seed=seed,
        truth=get("experiment", "truth", str),
        n_grid=get("experiment", "n_grid", _ints),
        directory=get("output", "directory", str, "out"),
        formats=get("output", "formats",
                    lambda s: tuple(x.strip() for x in s.split(",") if x.strip()), ("csv", "json")),
    )


def _read_config_text(path: str) -> str:
    if path.startswith("bundled:"):
        name = path.split(":", 1)[1]
        try:
            return resources.files("osdlab").joinpath("configs", name).read_text()
        except FileNotFoundError:
            raise InputError(f"no bundled config named {name!r}") from None
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except OSError as exc:
        raise EnvironmentFailure(f"cannot read {path}: {exc}") from None


def bundled_config(name: str = "bern-m4.cfg") -> str:
    return resources.files("osdlab").joinpath("configs", name).read_text()


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(_read_config_text(args.config), args.config)
    updates = {}
    for key in ("n", "trials"):
        if getattr(args, key, None) is not None:
            updates[key] = getattr(args, key)
    overrides = {k: getattr(args, k, None) for k in ("eps", "exponent", "threshold")}
    if any(v is not None for v in overrides.values()):
        updates.update(overrides)
    if getattr(args, "out", None):
        updates["directory"] = args.out
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None and os.environ.get("OSD_LAB_SEED"):
        try:
            seed = int(os.environ["OSD_LAB_SEED"])
        except ValueError:
            raise InputError("OSD_LAB_SEED must be an integer") from None
    updates["seed"] = 0 if seed is None else seed
    if not 0 <= updates["seed"] < 2 ** 64:
        raise InputError("seed must be an unsigned 64-bit integer")
    return replace(cfg, **updates)


# --- output -----------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EnvironmentFailure(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise EnvironmentFailure(f"output directory {path} is not writable")
    return path


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise EnvironmentFailure(f"cannot write {path}: {exc}") from None
    log.info("wrote %s", path)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[_cell(v) for v in row] for row in rows])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _mc_row(axis_value, est) -> list:
    sd = 2 * est.stderr
    return [axis_value, est.truth.label(), est.outcome_kind.value, est.p_hat,
            est.wilson_ci[0], est.wilson_ci[1], est.trials, est.seed,
            max(0.0, est.p_hat - sd), min(1.0, est.p_hat + sd)]


def _model_json(spec: ModelSpec) -> dict:
    return {"m": spec.m, "t": spec.t, "nominal": spec.nominal.probs.tolist(),
            "anomalous": [a.probs.tolist() for a in spec.anomalous]}


def _threshold(cfg: RunConfig, spec: ModelSpec, n: int) -> tuple[str, float]:
    kind, value = cfg.calibration()
    if kind == "eps":
        if not 0 < value < 1:
            raise InputError("[experiment] eps must lie in (0, 1)")
        # below zero the rule behaves exactly as at zero, since scores are non-negative
        return kind, max(0.0, second_order_threshold(n, value, spec)[0])
    if kind == "exponent":
        return kind, f_tradeoff(value, spec)
    if value < 0:
        raise InputError("[experiment] threshold must be non-negative")
    return kind, value


# --- commands ---------------------------------------------------------------

def cmd_exponents(cfg: RunConfig, args) -> dict:
    spec = cfg.spec()
    rep = exponent_report(spec)
    eps = cfg.eps if cfg.eps is not None else 0.1
    n = cfg.n or 1000
    lstar = l_star(eps, spec)
    tilde, lam = second_order_threshold(n, eps, spec)
    cap = ld_cap(spec)
    grid = [cap * k / 10 for k in range(10)] + [1.01 * cap]
    f_table = [{"E": e, "f": f_tradeoff(e, spec)} for e in grid]
    report = {
        "schema": SCHEMA, "command": "exponents", "model": _model_json(spec),
        "gd": rep.gd, "var": rep.var, "cov": rep.cov,
        "cov_matrix": rep.cov_matrix.tolist(),
        "pair_key": [list(s) for s in rep.pair_key] if rep.pair_key else None,
        "eps": eps, "l_star": lstar, "n": n, "lambda_tilde": tilde, "lambda": lam,
        "ld_cap": cap, "f_table": f_table,
    }
    out = _out_dir(cfg)
    if "json" in cfg.formats:
        _write(out / "exponents.json", json.dumps(report, indent=2) + "\n")
    if "csv" in cfg.formats:
        rows = [[k, report[k]] for k in ("gd", "var", "cov", "eps", "l_star", "n",
                                          "lambda_tilde", "lambda", "ld_cap")]
        _write(out / "exponents.csv", _csv_text(["quantity", "value"], rows))
        _write(out / "f_table.csv", _csv_text(["E", "f"], [[r["E"], r["f"]] for r in f_table]))
    return report


def read_batch(path: str) -> SequenceBatch:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([int(tok) for tok in line.split()])
        except ValueError:
            raise InputError(f"{path}:{lineno}: symbols must be non-negative integers") from None
    if not rows:
        raise InputError(f"{path}: no sequences found")
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: sequences have different lengths")
    try:
        return SequenceBatch(np.array(rows, dtype=np.int64))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_detect(cfg: RunConfig, args) -> dict:
    spec = cfg.spec()
    batch = read_batch(args.data)
    if batch.m != spec.m:
        raise InputError(f"{args.data}: {batch.m} rows but the model has m={spec.m}")
    try:
        batch.check_alphabet(spec.alphabet_size)
    except ValueError as exc:
        raise InputError(f"{args.data}: {exc}") from None
    kind, thr = _threshold(cfg, spec, batch.n)
    verdict = detect(batch, spec, thr)
    return {"schema": SCHEMA, "command": "detect", "calibration": kind, "n": batch.n,
            **verdict.as_dict()}


def _truth(cfg: RunConfig, spec: ModelSpec):
    if cfg.truth is None:
        return spec.hypotheses()[0]
    try:
        hyp = parse_hypothesis(cfg.truth)
        hyp.check(spec.m, None if hyp.is_reject else spec.t)
    except ValueError as exc:
        raise InputError(f"[experiment] truth: {exc}") from None
    return hyp


def cmd_simulate(cfg: RunConfig, args) -> dict:
    spec = cfg.spec()
    if cfg.n is None:
        raise InputError("[experiment] n is required for simulate")
    out = _out_dir(cfg)
    if args.emit_batch:
        truth = _truth(cfg, spec)
        batch = sample_batch(truth, spec, cfg.n, cfg.seed)
        body = "\n".join(" ".join(map(str, row)) for row in batch.sequences) + "\n"
        _write(out / "batch.txt", body)
        return {"schema": SCHEMA, "command": "simulate", "batch": str(out / "batch.txt"),
                "truth": truth.label(), "n": cfg.n, "seed": cfg.seed}
    kind, thr = _threshold(cfg, spec, cfg.n)
    truths = spec.hypotheses() + [parse_hypothesis("r")]
    rows = []
    for j, truth in enumerate(truths):
        for est in estimate_all(truth, spec, cfg.n, thr, cfg.trials,
                                sub_seed(cfg.seed, j), args.workers):
            rows.append(_mc_row(cfg.n, est))
    _write(out / "simulate.csv", _csv_text(MC_COLUMNS, rows))
    return {"schema": SCHEMA, "command": "simulate", "threshold": thr, "calibration": kind,
            "n": cfg.n, "trials": cfg.trials, "seed": cfg.seed, "csv": str(out / "simulate.csv")}


def cmd_sweep(cfg: RunConfig, args) -> dict:
    spec = cfg.spec()
    out = _out_dir(cfg)
    files = []
    if args.preset == "fig1":
        gd = exponent_report(spec).gd
        n_grid = cfg.n_grid or FIG1_N
        for k, factor in enumerate(FIG1_FACTORS):
            res = sweep_phase_transition(spec, n_grid, cfg.trials, sub_seed(cfg.seed, k),
                                         thresholds=[factor * gd], workers=args.workers)
            rows = [_mc_row(n, row[0]) for n, row in zip(res.axis, res.rows)]
            path = out / f"fig1_{factor:g}gd.csv"
            _write(path, _csv_text(MC_COLUMNS, rows))
            files.append(str(path))
    elif args.preset == "fig2":
        if spec.t != 1:
            raise InputError("fig2 preset needs a single-outlier model")
        eps = cfg.eps if cfg.eps is not None else 0.1
        n_grid = cfg.n_grid or FIG2_N
        res = sweep_effect_of_m(spec.nominal, spec.anomalous[0], eps, n_grid, FIG2_M)
        rows = []
        for n, row in zip(res.axis, res.rows):
            for m, value in zip(FIG2_M, row):
                rows.append([n, m, value, exponent_report(ModelSpec.single(
                    m, spec.nominal, spec.anomalous[0])).gd])
        path = out / "fig2.csv"
        _write(path, _csv_text(["axis_value", "m", "lambda_tilde", "gd"], rows))
        files.append(str(path))
    elif args.preset == "fig3":
        eps = cfg.eps if cfg.eps is not None else 0.1
        n_grid = cfg.n_grid or FIG3_N
        res = sweep_phase_transition(spec, n_grid, cfg.trials, cfg.seed, eps_grid=[eps],
                                     workers=args.workers)
        rows = [_mc_row(n, row[0]) for n, row in zip(res.axis, res.rows)]
        path = out / "fig3.csv"
        _write(path, _csv_text(MC_COLUMNS, rows))
        files.append(str(path))
    return {"schema": SCHEMA, "command": "sweep", "preset": args.preset, "files": files,
            "seed": cfg.seed, "trials": cfg.trials}


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="bundled:bern-m4.cfg",
                        help="config file, or bundled:NAME for a packaged config")
    common.add_argument("--seed", type=int, help="master seed (falls back to OSD_LAB_SEED)")
    common.add_argument("--trials", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--eps", type=float)
    common.add_argument("--exponent", type=float)
    common.add_argument("--threshold", type=float)
    common.add_argument("--workers", type=int, default=default_workers())
    common.add_argument("--out", help="output directory")
    common.add_argument("--strict", action="store_true",
                        help="exit with code 4 if the exponent solver did not converge")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="osdlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("exponents", parents=[common], help="first/second-order exponents and f(E)")
    p = sub.add_parser("detect", parents=[common], help="run the test on a data file")
    p.add_argument("data", help="one sequence per line, whitespace-separated symbols")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo error estimates")
    p.add_argument("--emit-batch", action="store_true",
                   help="write one sampled batch to OUT/batch.txt instead of simulating")
    p = sub.add_parser("sweep", parents=[common], help="figure-style sweeps")
    p.add_argument("preset", choices=["fig1", "fig2", "fig3"])
    return parser


COMMANDS = {"exponents": cmd_exponents, "detect": cmd_detect,
            "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        cfg = load_config(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            result = COMMANDS[args.command](cfg, args)
        solver_warnings = [w for w in caught if issubclass(w.category, ConvergenceWarning)]
        for w in solver_warnings:
            print(f"warning: {w.message}", file=sys.stderr)
        if solver_warnings and args.strict:
            raise SolverFailure(f"{len(solver_warnings)} solver convergence warning(s)")
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EnvironmentFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except SolverFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
