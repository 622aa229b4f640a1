"""coopsync command line: scenario file in, CSV out.

    coopsync <subcommand> --scenario FILE [--out FILE] [--seed N] [--sweep KEY=START:STOP:STEP]

Subcommands: crb-sweep, simulate, seq-search, gamma-opt. Every scalar
scenario key can also be overridden with ``--set KEY=VALUE`` (repeatable).
On failure a single JSON line ``{"error": ..., "type": ..., ...}`` goes to
stderr and the exit status is nonzero: 2 for invalid input, 3 for I/O
problems, 1 for numerical failures.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import metadata

import numpy as np

from .errors import CoopSyncError, InvalidParameter
from .montecarlo import crb_sweep, gamma_sweep, run_cooperation, run_listening
from .scenario import KEY_SECTION, ScenarioError, parse_scenario, scenario_hash
from .sequences import MAX_EXHAUSTIVE, SearchCriterion, exhaustive_search, randomized_search, sylvester_sequence

log = logging.getLogger("coopsync")

SUBCOMMANDS = ("crb-sweep", "simulate", "seq-search", "gamma-opt")
CSV_COLUMNS = ("sweep_param", "sweep_value", "estimator", "mse_fsd", "mse_frd", "mse_total",
               "crb_fsd", "crb_frd", "crb_total", "bias_fsd", "bias_frd", "trials", "failures")
GAMMA_COLUMNS = ("sweep_param", "sweep_value", "gamma_opt", "crb_total_opt", "crb_total_gamma1", "penalty_db")
SEQ_COLUMNS = ("n", "method", "criterion", "sylvester_criterion", "gap_db", "beat_fraction", "extrapolated",
               "sequence")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    scenario_path: str
    output_path: str | None
    seed_override: int | None
    verbosity: int
    listening: bool = False


def version() -> str:
    try:
        return metadata.version("coopsync")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else format(float(value), ".16e")
    return str(value)


def _write_rows(stream, header_lines, columns, rows):
    for line in header_lines:
        stream.write(f"# {line}\n")
    stream.write(",".join(columns) + "\n")
    for row in rows:
        stream.write(",".join(fmt(v) for v in row) + "\n")


def curve_rows(curve):
    for p in curve.points:
        yield (curve.sweep_param, p.sweep_value, p.estimator, p.mse_fsd, p.mse_frd, p.mse_total,
               p.crb_fsd, p.crb_frd, p.crb_total, p.bias_fsd, p.bias_frd, p.trials, p.failures)


def emit_csv(curve, destination=None, header_lines=()) -> str:
    """Write an MseCurve (or bound curve) as CSV; returns the text.

    ``destination`` is a path, a text stream, or None (return only).
    """
    buf = io.StringIO()
    _write_rows(buf, header_lines, CSV_COLUMNS, curve_rows(curve))
    text = buf.getvalue()
    _deliver(text, destination)
    return text


def _deliver(text: str, destination):
    if destination is None:
        return
    if hasattr(destination, "write"):
        destination.write(text)
        return
    try:
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {destination}: {exc.strerror}") from exc


def _seq_rows(scenario):
    sizes = [int(round(v)) for v in scenario.values] if scenario.param == "n" else [scenario.n_coop]
    crit = SearchCriterion()
    rng = np.random.default_rng([scenario.seed, 0])
    for n in sizes:
        syl = crit(sylvester_sequence(n).entries)
        if n <= MAX_EXHAUSTIVE:
            method, best, frac = "exhaustive", exhaustive_search(n, crit), math.nan
        else:
            method = "randomized"
            best, frac = randomized_search(n, scenario.search_iterations, rng, crit, return_stats=True)
        val = crit(best.entries)
        seq = "".join("+" if v > 0 else "-" for v in best.entries)
        yield (n, method, val, syl, 10 * math.log10(val / syl), frac, best.extrapolated, seq)


def _gamma_rows(scenario):
    for g in gamma_sweep(scenario):
        yield (scenario.param, g.sweep_value, g.gamma_opt, g.crb_total_opt, g.crb_total_gamma1, g.penalty_db)


def run(config: RunConfig, overrides: dict) -> str:
    try:
        with open(config.scenario_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {config.scenario_path}: {exc.strerror}") from exc
    if config.seed_override is not None:
        overrides = {**overrides, "seed": str(config.seed_override)}
    scenario = parse_scenario(text, overrides)
    header = [f"coopsync {version()}", f"subcommand {config.subcommand}",
              f"scenario_hash {scenario_hash(scenario)}", f"seed {scenario.seed}"]
    buf = io.StringIO()
    if config.subcommand == "crb-sweep":
        header.append(f"bound {scenario.bound}")
        _write_rows(buf, header, CSV_COLUMNS, curve_rows(crb_sweep(scenario)))
    elif config.subcommand == "simulate":
        curve = run_listening(scenario) if config.listening else run_cooperation(scenario)
        _write_rows(buf, header, CSV_COLUMNS, curve_rows(curve))
    elif config.subcommand == "gamma-opt":
        _write_rows(buf, header, GAMMA_COLUMNS, _gamma_rows(scenario))
    else:
        _write_rows(buf, header, SEQ_COLUMNS, _seq_rows(scenario))
    out = buf.getvalue()
    _deliver(out, config.output_path or sys.stdout)
    return out


def _parse_assignment(text: str, flag: str) -> tuple[str, str]:
    if "=" not in text:
        raise InvalidParameter(f"{flag} expects KEY=VALUE, got {text!r}")
    key, value = (p.strip() for p in text.split("=", 1))
    return key, value


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors become exceptions so they can be reported on one line."""

    def error(self, message):
        raise _ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="coopsync",
        description="Frequency-offset bounds and estimator simulations for a source/relay/destination link.",
        epilog="Scenario defaults: n_listen = n_coop = 16, sigma_f_sq = 1e-4, trials = 2000, "
               "snr_sd_db swept over -20:30:5. Keys: " + ", ".join(KEY_SECTION),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, metavar="FILE")
        p.add_argument("--out", metavar="FILE", help="output CSV (default stdout)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--sweep", action="append", default=[], metavar="KEY=START:STOP:STEP",
                       help="sweep axis and values (one axis only)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="assign",
                       help="override any scalar scenario key")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "simulate":
            p.add_argument("--listening", action="store_true", help="simulate the relay's listening phase only")
    return parser


def _error_line(kind: str, message: str, **extra) -> str:
    payload = {"error": message, "type": kind}
    payload.update({k: v for k, v in extra.items() if v is not None})
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(_error_line("usage", str(exc)), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = dict(_parse_assignment(a, "--set") for a in args.assign)
        if len(args.sweep) > 1:
            raise InvalidParameter("only one --sweep axis is allowed")
        for item in args.sweep:
            key, values = _parse_assignment(item, "--sweep")
            overrides.update(param=key, values=values)
        config = RunConfig(args.subcommand, args.scenario, args.out, args.seed, args.verbose,
                           getattr(args, "listening", False))
        run(config, overrides)
    except ScenarioError as exc:
        print(_error_line("scenario", str(exc), key=exc.key, line=exc.line), file=sys.stderr)
        return 2
    except InvalidParameter as exc:
        print(_error_line("invalid-parameter", str(exc)), file=sys.stderr)
        return 2
    except OSError as exc:
        print(_error_line("io", str(exc)), file=sys.stderr)
        return 3
    except CoopSyncError as exc:
        print(_error_line(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
