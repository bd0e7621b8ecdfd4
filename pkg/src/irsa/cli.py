"""Command-line interface.

Every subcommand takes its settings from an optional flat ``key = value``
file (``--config``) and from flags of the same names; flags win. SNR and
capture threshold are always given in dB. Results go to CSV (stdout unless
``--output``), and each run writes a JSON manifest with the fully resolved
configuration next to the output, or to stderr when writing to stdout.

Exit codes: 0 success, 2 configuration error, 3 numerical diagnostic.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .capture import ChannelModel
from .de import DeConfig, NumericalDiagnostic, ThresholdSearch, de_fixed_point, decoding_threshold
from .degree import KNOWN_DISTRIBUTIONS, format_polynomial, known_distribution, resolve_distribution
from .opt import OptConfig, OptConstraints, optimize_distribution
from .sim import SimConfig, load_sweep, run_simulation, write_sweep_csv

log = logging.getLogger("irsa")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SECTION = "irsa"


class ConfigError(ValueError):
    pass


def parse_bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_loads(text: str) -> list[float]:
    """``"a,b,c"`` or an inclusive range ``"start:stop:step"``."""
    text = str(text).strip()
    if not text:
        raise ConfigError("no loads")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"load range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"bad load range {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        loads = [round(start + i * step, 10) for i in range(count)]
    else:
        loads = [float(x) for x in text.split(",") if x.strip()]
    if not loads:
        raise ConfigError("no loads")
    if any(g < 0 for g in loads):
        raise ConfigError("loads must be nonnegative")
    return loads


@dataclass(frozen=True)
class Key:
    type: Callable[[Any], Any]
    default: Any
    help: str


CHANNEL = {
    "snr_db": Key(float, 20.0, "average SNR per replica [dB]"),
    "threshold_db": Key(float, 3.0, "capture threshold [dB]"),
}
DIST = {"distribution": Key(str, "L1", "degree distribution: L1..L5, polynomial text or JSON")}
TARGET = {"plr_target": Key(float, 1e-2, "target packet loss rate")}
DE_KEYS = {
    "max_iterations": Key(int, DeConfig.max_iterations, "DE iteration cap"),
    "convergence_eps": Key(float, DeConfig.convergence_eps, "fixed-point stop tolerance"),
    "series_term_tol": Key(float, DeConfig.series_term_tol, "series truncation tolerance"),
    "series_max_terms": Key(int, DeConfig.series_max_terms, "series term cap"),
}
SEARCH = {
    "g_lo": Key(float, ThresholdSearch.g_lo, "lower load bracket"),
    "g_hi": Key(float, ThresholdSearch.g_hi, "upper load bracket"),
    "resolution": Key(float, ThresholdSearch.resolution, "threshold resolution"),
    "coarse_step": Key(float, ThresholdSearch.coarse_step, "coarse scan step"),
}
OUTPUT = {
    "output": Key(str, None, "result file (default stdout)"),
    "manifest": Key(str, None, "manifest path (default <output>.manifest.json or stderr)"),
}

COMMANDS: dict[str, dict[str, Key]] = {
    "analyze": {**DIST, **CHANNEL, **DE_KEYS, **OUTPUT,
                "loads": Key(str, None, "loads: a,b,c or start:stop:step")},
    "threshold": {**DIST, **CHANNEL, **TARGET, **DE_KEYS, **SEARCH, **OUTPUT},
    "simulate": {**DIST, **CHANNEL, **OUTPUT,
                 "loads": Key(str, None, "loads: a,b,c or start:stop:step"),
                 "n_users": Key(int, None, "fixed users per frame instead of a load sweep"),
                 "n_slots": Key(int, 200, "slots per frame"),
                 "n_frames": Key(int, 1000, "frames per load point"),
                 "max_sic_iterations": Key(int, 20, "SIC iteration cap"),
                 "seed": Key(int, 0, "master seed"),
                 "workers": Key(int, None, "worker processes (default $IRSA_THREADS or 1)")},
    "optimize": {**CHANNEL, **TARGET, **DE_KEYS, **OUTPUT,
                 "avg_degree": Key(float, 4.0, "average degree constraint"),
                 "avg_degree_upper_bound": Key(parse_bool, False, "treat avg_degree as an upper bound"),
                 "d_max": Key(int, 16, "maximum degree"),
                 "min_degree": Key(int, 2, "minimum degree"),
                 "population": Key(int, OptConfig.population_size, "population size"),
                 "generations": Key(int, OptConfig.max_generations, "generations"),
                 "mutation_factor": Key(float, OptConfig.mutation_factor, "DE mutation factor F"),
                 "dither": Key(float, OptConfig.dither, "F is drawn from [F, F + dither] per generation"),
                 "crossover_rate": Key(float, OptConfig.crossover_rate, "DE crossover rate CR"),
                 "seed": Key(int, 0, "optimizer seed"),
                 "resolution": Key(float, 1e-2, "threshold resolution during the search"),
                 "final_resolution": Key(float, 1e-3, "resolution of the final re-evaluation"),
                 "stop_at": Key(float, None, "stop once the best threshold reaches this"),
                 "history": Key(str, None, "per-generation history CSV")},
    "designs": {**CHANNEL, **TARGET, **OUTPUT,
                "resolution": Key(float, 1e-3, "threshold resolution")},
}
COMMANDS["sweep"] = COMMANDS["simulate"]

HELP = {
    "analyze": "asymptotic PLR over a load grid",
    "threshold": "asymptotic decoding threshold of one distribution",
    "simulate": "finite-frame Monte Carlo throughput/PLR",
    "sweep": "alias of simulate",
    "optimize": "search for the degree distribution with the largest threshold",
    "designs": "thresholds of the built-in reference distributions",
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` comments allowed, no sections."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser[SECTION])


def resolve_config(command: str, file_values: dict[str, str], flags: dict[str, Any]) -> dict[str, Any]:
    keys = COMMANDS[command]
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {}
    for name, key in keys.items():
        raw = flags.get(name)
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            cfg[name] = key.default
            continue
        try:
            cfg[name] = key.type(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return cfg


def _channel(cfg) -> ChannelModel:
    return ChannelModel.from_db(cfg["snr_db"], cfg["threshold_db"])


def _de_config(cfg) -> DeConfig:
    return DeConfig(cfg["max_iterations"], cfg["convergence_eps"], cfg["series_term_tol"], cfg["series_max_terms"])


def _distribution(cfg):
    try:
        return resolve_distribution(cfg["distribution"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad distribution {cfg['distribution']!r}: {exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


@contextlib.contextmanager
def _open_output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def cmd_analyze(cfg) -> tuple[int, list[str]]:
    if cfg["loads"] is None:
        raise ConfigError("no loads")
    loads = parse_loads(cfg["loads"])
    dist, ch, de_cfg = _distribution(cfg), _channel(cfg), _de_config(cfg)
    rows = [(g, de_fixed_point(dist, g, ch, de_cfg)) for g in loads]
    with _open_output(cfg["output"]) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["load", "p_inf", "plr", "iterations"])
        for g, r in rows:
            w.writerow([_fmt(g), _fmt(r.p_inf), _fmt(r.plr), r.iterations_used])
    bad = [g for g, r in rows if not r.converged]
    if bad:
        log.error("density evolution did not converge at loads %s", bad)
        return EXIT_NUMERIC, _outputs(cfg)
    return EXIT_OK, _outputs(cfg)


def cmd_threshold(cfg) -> tuple[int, list[str]]:
    dist, ch = _distribution(cfg), _channel(cfg)
    search = ThresholdSearch(cfg["g_lo"], cfg["g_hi"], cfg["resolution"], cfg["coarse_step"])
    g = decoding_threshold(dist, ch, cfg["plr_target"], _de_config(cfg), search)
    if g == 0.0:
        print("diagnostic: PLR target not met even at vanishing load; threshold is 0", file=sys.stderr)
    with _open_output(cfg["output"]) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dist", "snr_db", "threshold_db", "target", "threshold"])
        w.writerow([format_polynomial(dist), _fmt(cfg["snr_db"]), _fmt(cfg["threshold_db"]),
                    _fmt(cfg["plr_target"]), _fmt(g)])
    return EXIT_OK, _outputs(cfg)


def cmd_simulate(cfg) -> tuple[int, list[str]]:
    dist, ch = _distribution(cfg), _channel(cfg)
    common = dict(n_slots=cfg["n_slots"], channel=ch, n_frames=cfg["n_frames"],
                  max_sic_iterations=cfg["max_sic_iterations"], seed=cfg["seed"], workers=cfg["workers"])
    if cfg["n_users"] is not None:
        if cfg["loads"] is not None:
            raise ConfigError("give either loads or n_users, not both")
        rows = [run_simulation(SimConfig(n_users=cfg["n_users"], **common), dist)]
    else:
        if cfg["loads"] is None:
            raise ConfigError("no loads")
        loads = parse_loads(cfg["loads"])
        rows = load_sweep(SimConfig(load=loads[0], **common), dist, loads)
    with _open_output(cfg["output"]) as fh:
        write_sweep_csv(rows, fh)
    return EXIT_OK, _outputs(cfg)


def cmd_optimize(cfg) -> tuple[int, list[str]]:
    ch = _channel(cfg)
    constraints = OptConstraints(target_avg_degree=cfg["avg_degree"], d_max=cfg["d_max"],
                                 min_degree=cfg["min_degree"], plr_target=cfg["plr_target"],
                                 avg_degree_is_upper_bound=cfg["avg_degree_upper_bound"])
    opt_cfg = OptConfig(population_size=cfg["population"], max_generations=cfg["generations"],
                        mutation_factor=cfg["mutation_factor"], dither=cfg["dither"],
                        crossover_rate=cfg["crossover_rate"], seed=cfg["seed"], de=_de_config(cfg),
                        search=ThresholdSearch(resolution=cfg["resolution"]),
                        final_resolution=cfg["final_resolution"], stop_at=cfg["stop_at"])
    res = optimize_distribution(constraints, ch, opt_cfg)
    print(format_polynomial(res.distribution, digits=2))
    print(f"threshold {res.threshold!r}")
    if cfg["output"] is not None:
        payload = json.loads(res.distribution.to_json())
        payload.update(polynomial=format_polynomial(res.distribution), threshold=res.threshold,
                       avg_degree=res.distribution.avg_degree(), evaluations=res.evaluations)
        Path(cfg["output"]).write_text(json.dumps(payload, indent=2) + "\n")
    if cfg["history"] is not None:
        with open(cfg["history"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "best_threshold"])
            for i, v in enumerate(res.history):
                w.writerow([i, _fmt(v)])
    return EXIT_OK, [p for p in (cfg["output"], cfg["history"]) if p is not None]


def cmd_designs(cfg) -> tuple[int, list[str]]:
    ch = _channel(cfg)
    search = ThresholdSearch(resolution=cfg["resolution"])
    with _open_output(cfg["output"]) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "dist", "avg_degree", "threshold"])
        for name in sorted(KNOWN_DISTRIBUTIONS):
            d = known_distribution(name)
            g = decoding_threshold(d, ch, cfg["plr_target"], DeConfig(), search)
            w.writerow([name, format_polynomial(d), _fmt(d.avg_degree()), _fmt(g)])
    return EXIT_OK, _outputs(cfg)


def _outputs(cfg) -> list[str]:
    return [cfg["output"]] if cfg["output"] is not None else []


RUNNERS = {"analyze": cmd_analyze, "threshold": cmd_threshold, "simulate": cmd_simulate,
           "sweep": cmd_simulate, "optimize": cmd_optimize, "designs": cmd_designs}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsa", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--log-level", default="WARNING")
        for key, spec in keys.items():
            default = "" if spec.default is None else f" (default {spec.default})"
            # every key defaults to None here so file values can show through
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=spec.help + default)
    return parser


def write_manifest(command, cfg, outputs, started, duration, code) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": __version__,
        "outputs": outputs,
        "exit_code": code,
        "started_at": started,
        "duration_s": duration,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True)
    target = cfg.get("manifest")
    if target is None and cfg.get("output") is not None:
        target = cfg["output"] + ".manifest.json"
    if target is None:
        print(text, file=sys.stderr)
    else:
        Path(target).write_text(text + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, flags)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    outputs: list[str] = []
    try:
        code, outputs = RUNNERS[args.command](cfg)
    except NumericalDiagnostic as exc:
        print(f"numerical diagnostic: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(args.command, cfg, outputs, started, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
