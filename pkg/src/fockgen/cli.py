"""Command-line interface.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` document
whose keys are the long option names (dashes or underscores). Flags given on
the command line override the file.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import (
    ConvergenceError,
    RunData,
    feasibility,
    fit_parameters,
    max_fidelity_at_probability,
    max_herald_probability,
    sweep_gain,
)
from .distributions import (
    EPS_TRUNC,
    K_MAX_DEFAULT,
    LossModel,
    ModeSpectrum,
    TruncationError,
    mu_from_schmidt_number,
)
from .herald import UndefinedFidelityError, herald_reports
from .tes import (
    MixtureFit,
    MixtureFitError,
    TesHistogram,
    allan_variance,
    assign_counts,
    fit_mixture,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

SWEEP_COLUMNS = ["B", "mean_photons_idler", "mean_photons_signal", "n", "p_n", "F_single", "F_photon_number"]
FIT_COLUMNS = ["run_id", "n", "herald_prob", "herald_prob_err_lo", "herald_prob_err_hi",
               "fidelity", "fidelity_err_lo", "fidelity_err_hi", "mean_photons"]


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------- #
# parsing helpers


def _float_list(text):
    """``"a,b,c"`` or ``"start:stop:num"`` (inclusive linspace)."""
    text = str(text).strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:num, got {text!r}")
        return list(np.linspace(float(parts[0]), float(parts[1]), int(parts[2])))
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def read_config(path):
    cfg = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError:
        raise
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = value
    return cfg


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _metadata(command, args):
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {
        "command": command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "eps_trunc": EPS_TRUNC,
        "parameters": params,
    }


def _spectrum_template(args):
    if args.mu is not None and args.K is not None:
        raise ConfigError("give either mu or K, not both")
    if args.K is not None:
        mu = mu_from_schmidt_number(float(args.K))
    else:
        mu = 0.0 if args.mu is None else float(args.mu)
    return ModeSpectrum.from_mu(1.0, mu, int(args.k_max))


def _loss(args):
    return LossModel(float(args.eta_signal), float(args.eta_idler))


def _add_spectrum_args(p):
    p.add_argument("--mu", type=float, default=None, help="Schmidt mode decay in [0, 1)")
    p.add_argument("--K", type=float, default=None, help="Schmidt number (alternative to --mu)")
    p.add_argument("--k-max", type=int, default=K_MAX_DEFAULT)
    p.add_argument("--eta-signal", type=float, default=1.0)
    p.add_argument("--eta-idler", type=float, default=1.0)


# --------------------------------------------------------------------------- #
# commands


def cmd_sweep(args):
    gains = _float_list(args.gains)
    if not gains:
        raise ConfigError("empty gain grid")
    n_list = _int_list(args.n)
    if not n_list:
        raise ConfigError("empty photon-number list")
    res = sweep_gain(_spectrum_template(args), _loss(args), gains, n_list)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for i, b in enumerate(res.gain_grid):
        for j, n in enumerate(res.n_values):
            w.writerow([_fmt(b), _fmt(res.mean_photons_idler[i]), _fmt(res.mean_photons_signal[i]), _fmt(n),
                        _fmt(res.per_n_prob[i, j]), _fmt(res.per_n_fidelity_single[i, j]),
                        _fmt(res.per_n_fidelity_photon_number[i, j])])
    _write_text(args.out, buf.getvalue())
    meta = args.meta or (None if args.out in (None, "-") else str(Path(args.out).with_suffix(".json")))
    if meta:
        _write_text(meta, _dump_json(_metadata("sweep", args)))
    return EXIT_OK


def cmd_max_prob(args):
    template, loss = _spectrum_template(args), _loss(args)
    out = {"metadata": _metadata("max-prob", args), "maxima": []}
    for n in _int_list(args.n):
        b, p = max_herald_probability(template, loss, n)
        out["maxima"].append({"n": n, "gain": b, "prob": p})
        if args.out not in (None, "-"):
            print(f"n={n:3d}  B*={b:.6f}  p*={p:.8g}")
    _write_text(args.out, _dump_json(out))
    return EXIT_OK


def cmd_tradeoff(args):
    template, loss = _spectrum_template(args), _loss(args)
    n = int(args.n)
    _, p_star = max_herald_probability(template, loss, n)
    if args.p_targets:
        targets = _float_list(args.p_targets)
    else:
        targets = list(p_star * np.linspace(0.02, 1.0, int(args.points)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "p_target", "F_single_max"])
    for p in targets:
        w.writerow([n, _fmt(p), _fmt(max_fidelity_at_probability(template, loss, n, p))])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_feasibility(args):
    n_range = range(1, int(args.n_max) + 1)
    rep = feasibility(float(args.rep_rate), float(args.eta_idler), float(args.fidelity_floor),
                      float(args.rate_floor), n_range)
    lines = [f"{'n':>3}  {'gain':>10}  {'max rate [1/s]':>16}"]
    for n, b, r in zip(rep.n_values, rep.per_n_gain, rep.per_n_max_rate):
        mark = "" if r >= rep.rate_floor else "  (below floor)"
        lines.append(f"{n:>3}  {b:>10.5f}  {r:>16.6g}{mark}")
    lines.append(f"max feasible n at {rep.rate_floor:g}/s: {rep.max_feasible_n}")
    report = rep.to_dict()
    report["metadata"] = _metadata("feasibility", args)
    if args.out in (None, "-"):
        sys.stdout.write(_dump_json(report))
    else:
        print("\n".join(lines))
        _write_text(args.out, _dump_json(report))
    return EXIT_OK


def _cell(row, key, lineno, required=False):
    v = (row.get(key) or "").strip()
    if not v:
        if required:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        return math.nan
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key}={v!r} is not a number") from None


def read_fit_dataset(path):
    """Parse the fit dataset CSV into runs, in order of first appearance."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FIT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: line 1: missing columns {missing}")
        rows = {}
        means = {}
        for lineno, row in enumerate(reader, 2):
            rid = (row["run_id"] or "").strip()
            if not rid:
                raise ConfigError(f"line {lineno}: empty run_id")
            n = _cell(row, "n", lineno, required=True)
            if n != int(n) or n < 0:
                raise ConfigError(f"line {lineno}: n must be a nonnegative integer")
            mean = _cell(row, "mean_photons", lineno, required=True)
            if rid in means and not math.isclose(means[rid], mean, rel_tol=1e-12):
                raise ConfigError(f"line {lineno}: mean_photons differs within run {rid!r}")
            means[rid] = mean
            vals = [_cell(row, c, lineno) for c in FIT_COLUMNS[2:8]]
            for c, v in zip(FIT_COLUMNS[2:8], vals):
                if not math.isnan(v) and v < 0:
                    raise ConfigError(f"line {lineno}: {c} must be >= 0")
            rows.setdefault(rid, []).append([int(n)] + vals)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    runs = []
    for rid, data in rows.items():
        a = np.array(data, dtype=np.float64)
        runs.append(RunData(rid, means[rid], a[:, 0].astype(int), *a[:, 1:].T))
    return runs


def write_fit_dataset(path, runs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for r in runs:
            for i, n in enumerate(r.n):
                vals = [r.herald_prob[i], r.herald_prob_err_lo[i], r.herald_prob_err_hi[i],
                        r.fidelity[i], r.fidelity_err_lo[i], r.fidelity_err_hi[i]]
                w.writerow([r.run_id, int(n)] + ["" if math.isnan(v) else repr(float(v)) for v in vals]
                           + [repr(float(r.mean_photons))])


def cmd_fit(args):
    runs = read_fit_dataset(args.dataset)
    res = fit_parameters(runs, int(args.k_max), arm=args.arm, n_refine=int(args.n_refine))
    out = res.to_dict()
    out["metadata"] = _metadata("fit", args)
    _write_text(args.out, _dump_json(out))
    if args.curves:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run_id", "B", "n", "p_n", "F_photon_number", "F_single"])
        template = ModeSpectrum.from_schmidt_number(1.0, res.K, int(args.k_max))
        loss = LossModel(res.eta_signal, res.eta_idler)
        n_hi = int(max(r.n.max() for r in runs))
        for run, b in zip(runs, res.per_run_gain):
            for rep in herald_reports(template.with_gain(b), loss, range(n_hi + 1)):
                w.writerow([run.run_id, _fmt(b), rep.target_n, _fmt(rep.herald_prob),
                            _fmt(rep.fidelity_photon_number), _fmt(rep.fidelity_single_mode)])
        _write_text(args.curves, buf.getvalue())
    return EXIT_OK if res.converged else EXIT_NUMERIC


def read_value_csv(path):
    """Read ``value[, count]`` columns; a header row is optional."""
    values, counts = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            try:
                nums = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise ConfigError(f"{path}: line {lineno}: non-numeric entry") from None
            if len(nums) > 2:
                raise ConfigError(f"{path}: line {lineno}: expected value[, count]")
            values.append(nums[0])
            counts.append(nums[1] if len(nums) == 2 else math.nan)
    values, counts = np.array(values), np.array(counts)
    if counts.size and np.all(np.isnan(counts)):
        return values, None
    if np.any(np.isnan(counts)):
        raise ConfigError(f"{path}: count column present on some rows only")
    return values, counts


def cmd_tes_fit(args):
    values, counts = read_value_csv(args.input)
    if counts is None:
        hist = TesHistogram.from_events(values, int(args.bins))
    else:
        hist = TesHistogram.from_centers(values, counts.astype(np.int64))
    fit = fit_mixture(hist, int(args.n_peaks), prominence=float(args.prominence))
    _write_text(args.out, _dump_json(fit.to_dict()))
    return EXIT_OK


def cmd_tes_assign(args):
    values, counts = read_value_csv(args.events)
    if counts is not None:
        raise ConfigError("tes-assign expects a single column of event values")
    fit = MixtureFit.from_dict(json.loads(Path(args.fit).read_text()))
    rec = assign_counts(values, fit, confidence=float(args.confidence))
    _write_text(args.out, _dump_json(rec.to_dict()))
    return EXIT_OK


def cmd_allan(args):
    values, counts = read_value_csv(args.input)
    if counts is not None:
        raise ConfigError("allan expects a single column of values")
    blocks = _int_list(args.blocks) if args.blocks else [2**k for k in range(int(math.log2(values.size // 2)) + 1)]
    av = allan_variance(values, blocks)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block_size", "allan_variance"])
    for m, v in zip(blocks, av):
        w.writerow([m, _fmt(v)])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="fockgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fockgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="tabulate p_n and fidelities over a gain grid")
    _add_spectrum_args(p)
    p.add_argument("--gains", default="0.05:2.0:40", help="comma list or start:stop:num")
    p.add_argument("--n", default="1,2,5", help="comma list or lo:hi")
    p.add_argument("--out", default="-")
    p.add_argument("--meta", default=None, help="metadata JSON path (default: next to --out)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("max-prob", help="gain maximising the heralding probability")
    _add_spectrum_args(p)
    p.add_argument("--n", default="1:7")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_max_prob)

    p = sub.add_parser("tradeoff", help="best single-mode fidelity at a required heralding probability")
    _add_spectrum_args(p)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--p-targets", default=None)
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("feasibility", help="highest Fock number at a rate floor")
    p.add_argument("--rep-rate", type=float, default=1e8)
    p.add_argument("--eta-idler", type=float, default=0.9)
    p.add_argument("--fidelity-floor", type=float, default=0.9)
    p.add_argument("--rate-floor", type=float, default=0.1)
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("fit", help="fit K, eta_idler, eta_signal to a dataset CSV")
    p.add_argument("dataset")
    p.add_argument("--k-max", type=int, default=K_MAX_DEFAULT)
    p.add_argument("--arm", choices=("idler", "signal"), default="idler",
                   help="arm whose mean photon number the dataset reports")
    p.add_argument("--n-refine", type=int, default=3)
    p.add_argument("--out", default="-")
    p.add_argument("--curves", default=None, help="fitted-curve CSV path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tes-fit", help="fit Gaussian photon-number responses to a TES histogram")
    p.add_argument("input", help="CSV of value,count (bin centres) or value (events)")
    p.add_argument("--n-peaks", type=int, required=True)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--prominence", type=float, default=0.01)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tes_fit)

    p = sub.add_parser("tes-assign", help="assign events to photon numbers")
    p.add_argument("events")
    p.add_argument("--fit", required=True, help="JSON written by tes-fit")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tes_assign)

    p = sub.add_parser("allan", help="Allan variance of a measurement series")
    p.add_argument("input")
    p.add_argument("--blocks", default=None, help="block sizes; default powers of two")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_allan)

    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.add_argument("--config", default=None, help="flat key = value file")
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = read_config(args.config)
    sp = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sp._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    typed = {}
    for a in sp._actions:
        if a.dest in cfg:
            typed[a.dest] = a.type(cfg[a.dest]) if a.type else cfg[a.dest]
    sp.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except ConfigError as e:
        code, kind, msg = EXIT_CONFIG, "config", str(e)
    except (ConvergenceError, MixtureFitError, TruncationError, UndefinedFidelityError, ArithmeticError) as e:
        code, kind, msg = EXIT_NUMERIC, "numerical", str(e)
    except OSError as e:
        code, kind, msg = EXIT_IO, "io", str(e)
    except ValueError as e:
        code, kind, msg = EXIT_CONFIG, "config", str(e)
    sys.stderr.write(json.dumps({"error": msg, "kind": kind, "exit_code": code}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
