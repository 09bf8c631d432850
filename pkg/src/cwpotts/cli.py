"""Command-line experiment runner.

Settings are resolved in three layers, later ones winning: built-in
defaults, the YAML file given by ``--config``, explicit command-line flags.
Logs go to stderr.  Results go to stdout as JSON, and to ``--out`` (a
directory) as ``summary.json`` plus ``table.csv`` when requested.  Every
output embeds the resolved configuration.  Failures exit with

    2  configuration error     3  numeric error     4  size guard

and print a JSON error record on stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .concentration import (FUNCTIONALS, annealed_gap_report, annealed_reference,
                            compute_realizations, empirical_tail_report)
from .disorder import (CouplingDistribution, annealed_identity_check, make_rng,
                       sample_couplings, xi_event)
from .errors import ConfigError, CwpError
from .landscape import classify_regime
from .lumped_chain import build_chain, enumerate_lattice
from .microscopic import (MAX_MICRO_STATES, ModelSpec, all_configurations, metastable_sets,
                          metropolis_kernel, simulate_hitting_time)
from .potential_theory import mean_hitting_time, metastability_ratio

log = logging.getLogger("cwpotts")

COMMANDS = ("landscape", "lumped-cap", "micro-exact", "micro-sim", "disorder-check",
            "concentration", "ratio-experiment", "scaling")


def parse_grid(value: Any) -> list[int]:
    """``6``, ``"50:200:25"`` (inclusive stop), ``"6,7,8"`` or a list of ints."""
    if isinstance(value, bool):
        raise ConfigError("N must be an integer or a grid", N=value)
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        out = [v for v in value if isinstance(v, int) and not isinstance(v, bool)]
        if len(out) != len(value) or not out:
            raise ConfigError("N list must contain integers", N=value)
        return list(out)
    text = str(value).strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise ConfigError("cannot parse N grid", N=value) from exc


@dataclass
class ExperimentConfig:
    command: str
    q: int = 3
    beta: float = 2.9
    N: list[int] = field(default_factory=lambda: [6])
    dist: str = "one"
    seed: int = 0
    samples: int = 200
    out: str | None = None
    eps: float = 0.15
    eps_annealed: float = 0.1
    delta: float = 0.05
    t_grid: list[float] = field(default_factory=lambda: [round(0.05 * k, 10) for k in range(1, 11)])
    workers: int = 1
    transition: str = "auto"
    step_cap: int = 10**9
    xi_level: float | None = None

    def distribution(self) -> CouplingDistribution:
        return CouplingDistribution.parse(self.dist)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_TYPES: dict[str, Callable[[Any], Any]] = {
    "q": int, "beta": float, "seed": int, "samples": int, "eps": float,
    "eps_annealed": float, "delta": float, "workers": int, "step_cap": int,
}


def _coerce(key: str, value: Any) -> Any:
    if key == "N":
        return parse_grid(value)
    if key == "t_grid":
        if not isinstance(value, (list, tuple)):
            raise ConfigError("t_grid must be a list of numbers")
        return [float(v) for v in value]
    if key in ("dist", "transition", "command"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string", value=value)
        return value
    if key in ("out",):
        return None if value is None else str(value)
    if key == "xi_level":
        return None if value is None else float(value)
    conv = _TYPES[key]
    if isinstance(value, bool) or (conv is int and isinstance(value, float) and not value.is_integer()):
        raise ConfigError(f"{key} has the wrong type", value=value)
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} has the wrong type", value=value) from exc


def validate(raw: dict[str, Any]) -> ExperimentConfig:
    """Check keys and types, then value ranges; unknown keys are rejected."""
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError("unknown configuration keys", keys=unknown)
    if raw.get("command") not in COMMANDS:
        raise ConfigError("unknown command", command=raw.get("command"))
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in raw.items()})
    if cfg.q < 2:
        raise ConfigError("q must be >= 2", q=cfg.q)
    if not (math.isfinite(cfg.beta) and cfg.beta > 0):
        raise ConfigError("beta must be positive", beta=cfg.beta)
    if any(n < 1 for n in cfg.N):
        raise ConfigError("N must be positive", N=cfg.N)
    if cfg.samples < 1 or cfg.workers < 1 or cfg.step_cap < 1:
        raise ConfigError("samples, workers and step_cap must be positive")
    if cfg.transition not in ("auto", "to_m0", "from_m0", "tunnelling"):
        raise ConfigError("unknown transition", transition=cfg.transition)
    try:
        cfg.distribution()
    except CwpError as exc:
        raise ConfigError(str(exc), **exc.details) from exc
    return cfg


# ----------------------------------------------------------------------
# Output helpers
# ----------------------------------------------------------------------
def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_csv(rows: list[dict[str, Any]], cfg: ExperimentConfig) -> str:
    """CSV with a timestamp line, a config line and ``repr`` floats."""
    buf = io.StringIO()
    buf.write(f"# generated: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
    buf.write(f"# config: {json.dumps(_jsonable(cfg.to_dict()), sort_keys=True)}\n")
    if rows:
        cols = list(rows[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                        for c in cols])
    return buf.getvalue()


def emit(result: dict[str, Any], rows: list[dict[str, Any]], cfg: ExperimentConfig) -> None:
    payload = _jsonable({"version": __version__, "config": cfg.to_dict(), **result})
    text = json.dumps(payload, indent=2, sort_keys=True)
    sys.stdout.write(text + "\n")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text + "\n")
        (out / "table.csv").write_text(render_csv(rows, cfg))
        log.info("wrote %s", out)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def _lumped_sets(N: int, q: int, beta: float, transition: str) -> tuple[list[int], list[int]]:
    # Fibre enumeration is skipped above the micro size guard; only lattice points are used.
    sets = metastable_sets(ModelSpec(N, q, beta), transition)
    lat = enumerate_lattice(N, q)
    return ([lat.index(p) for p in sets.A_points], [lat.index(p) for p in sets.B_points])


def cmd_landscape(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    rep = classify_regime(cfg.beta, cfg.q)
    sys.stderr.write(rep.text_table() + "\n")
    d = rep.to_dict()
    rows = [{"label": p["label"], "kind": p["kind"], "value": p["value"]}
            for p in d["minima"] + d["saddles"]]
    return {"landscape": d}, rows


def _lumped_record(N: int, cfg: ExperimentConfig) -> dict[str, Any]:
    chain = build_chain(N, cfg.q, cfg.beta)
    A, B = _lumped_sets(N, cfg.q, cfg.beta, cfg.transition)
    ht = mean_hitting_time(chain, A, B)
    rec = ht.solution.to_record(A=[chain.states[a].tolist() for a in A],
                                B=[chain.states[b].tolist() for b in B])
    rec["N"] = N
    rec["log_partition"] = chain.log_partition
    return rec


def cmd_lumped_cap(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    recs = [_lumped_record(N, cfg) for N in cfg.N]
    rows = [{k: r[k] for k in ("N", "capacity_log", "harmonic_sum_log", "hitting_time_log",
                               "log_partition", "residual")} for r in recs]
    return {"records": recs}, rows


def _model(N: int, cfg: ExperimentConfig, stream: int = 0) -> ModelSpec:
    dist = cfg.distribution()
    couplings = None if dist.variance == 0 else sample_couplings(dist, N, cfg.seed, stream)
    return ModelSpec(N, cfg.q, cfg.beta, couplings)


def cmd_micro_exact(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    recs = []
    for N in cfg.N:
        model = _model(N, cfg)
        chain = metropolis_kernel(model)
        sets = metastable_sets(model, cfg.transition)
        ht = mean_hitting_time(chain, sets.A, sets.B)
        rec = ht.solution.to_record(A=[p.counts for p in sets.A_points],
                                    B=[p.counts for p in sets.B_points])
        rec.update(N=N, log_partition=chain.log_partition, method=ht.solution.method)
        recs.append(rec)
    rows = [{k: r[k] for k in ("N", "capacity_log", "harmonic_sum_log", "hitting_time_log",
                               "log_partition", "residual")} for r in recs]
    return {"records": recs}, rows


def cmd_micro_sim(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    out, rows = [], []
    for N in cfg.N:
        model = _model(N, cfg)
        sets = metastable_sets(model, cfg.transition)
        exact = None
        if cfg.q**N <= MAX_MICRO_STATES:
            chain = metropolis_kernel(model)
            ht = mean_hitting_time(chain, sets.A, sets.B)
            start = (all_configurations(N, cfg.q)[ht.A], ht.nu)
            exact = ht.time
        else:
            counts = sets.A_points[0].counts
            start = np.repeat(np.arange(cfg.q), counts)
        summ = simulate_hitting_time(model, start, sets.B_points, cfg.seed, cfg.samples,
                                     step_cap=cfg.step_cap, workers=cfg.workers)
        rec = {"N": N, **summ.to_dict(), "exact_mean": exact}
        out.append(rec)
        rows.append(rec)
    return {"records": out}, rows


def cmd_disorder_check(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    dist = cfg.distribution()
    out, rows = [], []
    for N in cfg.N:
        sigma = make_rng(cfg.seed, 2).integers(0, cfg.q, size=N)
        chk = annealed_identity_check(dist, N, cfg.beta, sigma, cfg.samples, cfg.seed,
                                      eps=cfg.eps_annealed, q=cfg.q)
        rec: dict[str, Any] = {"N": N, "sigma": sigma.tolist(), **chk.to_dict()}
        if cfg.q**N <= MAX_MICRO_STATES:
            model = _model(N, cfg)
            level = cfg.xi_level if cfg.xi_level is not None else \
                2 * math.sqrt(max(dist.variance, 0.0) * math.log(cfg.q))
            xi = xi_event(model, level)
            rec.update(xi_holds=xi.holds, max_abs_delta=xi.max_abs_delta,
                       xi_threshold=xi.threshold, xi_bound=xi.bound)
        out.append(rec)
        rows.append({k: v for k, v in rec.items() if k != "sigma"})
    return {"records": out}, rows


def cmd_concentration(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    dist = cfg.distribution()
    N = cfg.N[0]
    if len(cfg.N) != 1:
        raise ConfigError("concentration takes a single N", N=cfg.N)
    recs = compute_realizations(N, cfg.q, cfg.beta, dist, cfg.samples, cfg.seed,
                                a=cfg.xi_level, transition=cfg.transition, workers=cfg.workers)
    ref = annealed_reference(N, cfg.q, cfg.beta, cfg.transition)
    tails = {f: empirical_tail_report(f, N, cfg.q, cfg.beta, dist, cfg.samples, cfg.seed,
                                      t_grid=cfg.t_grid, records=recs, annealed=ref,
                                      eps=cfg.eps, a=cfg.xi_level).to_dict()
             for f in FUNCTIONALS}
    gap = annealed_gap_report(N, cfg.q, cfg.beta, dist, cfg.samples, cfg.seed, eps=cfg.eps,
                              delta=cfg.delta, a=cfg.xi_level, records=recs, annealed=ref)
    rows = [r.to_dict() for r in recs]
    summary = {"annealed": ref, "tails": tails, "gap": gap.to_dict()}
    return {"summary": summary, "records": rows}, rows


def cmd_ratio(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    rows = []
    for N in cfg.N:
        chain = build_chain(N, cfg.q, cfg.beta)
        lat = enumerate_lattice(N, cfg.q)
        sets = metastable_sets(ModelSpec(N, cfg.q, cfg.beta), cfg.transition)
        M = [[lat.index(p)] for p in sets.lattice.values()]
        ratio = metastability_ratio(chain, M)
        rows.append({"N": N, "ratio": ratio,
                     "log_ratio_over_N": math.log(ratio) / N if ratio > 0 else -math.inf})
    fit = np.polyfit([r["N"] for r in rows], [r["log_ratio_over_N"] for r in rows], 1) \
        if len(rows) >= 2 else [math.nan, math.nan]
    return {"records": rows, "trend_slope": float(fit[0])}, rows


def barrier_for(cfg: ExperimentConfig, transition: str) -> float:
    rep = classify_regime(cfg.beta, cfg.q)
    if transition == "from_m0":
        return rep.barrier((0, 1), 0)
    if transition == "to_m0":
        return rep.barrier((0, 1), 1)
    return rep.barrier((1, 2), 1)


def cmd_scaling(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    rows = []
    transition = cfg.transition
    for N in cfg.N:
        rec = _lumped_record(N, cfg)
        rows.append({"N": N, "log_time": rec["hitting_time_log"],
                     "log_time_over_beta_N": rec["hitting_time_log"] / (cfg.beta * N)})
    if transition == "auto":
        transition = metastable_sets(ModelSpec(cfg.N[0], cfg.q, cfg.beta)).transition
    target = barrier_for(cfg, transition)
    result: dict[str, Any] = {"records": rows, "barrier": target, "transition": transition}
    if len(rows) >= 2:
        x = np.array([1.0 / r["N"] for r in rows])
        y = np.array([r["log_time_over_beta_N"] for r in rows])
        slope, intercept = np.polyfit(x, y, 1)
        rel = abs(intercept - target) / abs(target)
        result.update(intercept=float(intercept), inv_N_slope=float(slope),
                      relative_error=float(rel), within_5_percent=bool(rel <= 0.05))
    return result, rows


HANDLERS = {
    "landscape": cmd_landscape,
    "lumped-cap": cmd_lumped_cap,
    "micro-exact": cmd_micro_exact,
    "micro-sim": cmd_micro_sim,
    "disorder-check": cmd_disorder_check,
    "concentration": cmd_concentration,
    "ratio-experiment": cmd_ratio,
    "scaling": cmd_scaling,
}


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cwpotts", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file; flags override its values")
        p.add_argument("--q", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--N", dest="N", help="integer, 'start:stop:step' or comma list")
        p.add_argument("--dist", help="one | ber:p | pois:p | gauss:v")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int)
        p.add_argument("--transition", choices=("auto", "to_m0", "from_m0", "tunnelling"))
        p.add_argument("--eps", type=float)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(argv: Sequence[str] | None) -> ExperimentConfig:
    args = build_parser().parse_args(argv)
    raw: dict[str, Any] = {}
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError("cannot read config file", path=args.config, error=str(exc)) from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        if loaded.get("command") not in (None, args.command):
            raise ConfigError("config command differs from subcommand",
                              config=loaded.get("command"), command=args.command)
        raw.update(loaded)
    for key in ("q", "beta", "N", "dist", "seed", "samples", "out", "workers", "transition", "eps"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    raw["command"] = args.command
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    return validate(raw)


def run(cfg: ExperimentConfig) -> int:
    result, rows = HANDLERS[cfg.command](cfg)
    emit(result, rows, cfg)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = resolve(argv)
        return run(cfg)
    except CwpError as exc:
        record = {"error": type(exc).__name__, "message": str(exc),
                  "details": _jsonable(exc.details), "exit_code": exc.exit_code}
        sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
