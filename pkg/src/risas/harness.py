"""Monte Carlo experiment driver and command-line interface.

Each sweep point and realization index ``i`` gets one channel draw from
seed ``seed0 + i``; every scheme sees the same draw. Reported rates are
always recomputed from the finalized design, never taken from a solver.

Example config (YAML, powers in dBm)::

    system: {N: 8, T: 3, M: 8, K: 2, Nk: 3, Lk: 3, power_dbm: -5,
             noise_dbm: -120, q_bits: 4}
    fading: {pathloss_db: -120}
    sweep: {power_dbm: [-15, -10, -5, 0]}
    schemes: [pdd, so, ao, random]
    realizations: 50
    seed: 0
    pdd: {chi: 0.7}
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .benchmarks import AoOptions, ao_solve, random_design, random_design_rate
from .channels import FadingSpec, channel_checksum, generate_realization
from .errors import IllConditionedError, InternalConsistencyError, NumericalFailure
from .model import CONTINUOUS, SystemConfig, design_rate
from .pdd import PddOptions, pdd_solve
from .so import SoOptions, so_solve

__all__ = [
    "ExperimentResult",
    "ExperimentSpec",
    "SeedRecord",
    "TraceRecord",
    "aggregate",
    "dbm_to_mw",
    "emit_results",
    "load_spec",
    "main",
    "run_experiment",
]

log = logging.getLogger(__name__)

SCHEMES = ("pdd", "so", "ao", "random")
SWEEP_FLAGS = {"power": "power_dbm", "qbits": "q_bits", "rf": "rf_chains"}
SEED_HEADER = ["sweep_var", "sweep_value", "scheme", "seed", "sum_rate_bpshz"]
AGG_HEADER = ["sweep_var", "sweep_value", "scheme", "mean", "std", "n"]
TRACE_HEADER = ["scheme", "seed", "outer_iter", "h", "rho", "sum_rate"]

# failures that are recorded per seed instead of aborting the run
SOLVER_ERRORS = (IllConditionedError, InternalConsistencyError, NumericalFailure,
                 np.linalg.LinAlgError, FloatingPointError)


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (float(dbm) / 10.0)


def _parse_q(q):
    if isinstance(q, str) and q.strip().lower() in ("inf", "infinity", "continuous"):
        return CONTINUOUS
    if isinstance(q, float) and math.isinf(q):
        return CONTINUOUS
    return int(q)


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, float) and v.is_integer():
        return str(int(v)) if abs(v) < 1e15 else repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentSpec:
    base: SystemConfig
    fading: FadingSpec = field(default_factory=FadingSpec)
    # one of power_dbm, q_bits, rf_chains, or None for a single point
    sweep_var: str | None = None
    sweep_values: tuple = ()
    schemes: tuple[str, ...] = ("so", "random")
    n_realizations: int = 50
    seed0: int = 0
    pdd: PddOptions = field(default_factory=PddOptions)
    so: SoOptions = field(default_factory=SoOptions)
    ao: AoOptions = field(default_factory=AoOptions)
    trace: bool = False

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be at least 1")
        bad = set(self.schemes) - set(SCHEMES)
        if bad or not self.schemes:
            raise ValueError(f"schemes must be a non-empty subset of {SCHEMES}, got {self.schemes}")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_FLAGS.values():
                raise ValueError(f"unknown sweep variable {self.sweep_var!r}")
            if not self.sweep_values:
                raise ValueError("sweep values must be non-empty")
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        self.points()  # validates every sweep point

    def points(self) -> list[tuple[object, SystemConfig]]:
        """``(sweep_value, config)`` for every sweep point."""
        if self.sweep_var is None:
            return [(None, self.base)]
        out = []
        for v in self.sweep_values:
            if self.sweep_var == "power_dbm":
                cfg = self.base.replace(pk=(dbm_to_mw(v),) * self.base.K)
            elif self.sweep_var == "q_bits":
                cfg = self.base.replace(q_bits=_parse_q(v))
            else:
                cfg = self.base.replace(T=int(v))
            out.append((v, cfg))
        return out


@dataclass(frozen=True)
class SeedRecord:
    sweep_value: object
    scheme: str
    seed: int
    sum_rate: float
    checksum: str = ""
    error: str | None = None


@dataclass(frozen=True)
class TraceRecord:
    sweep_value: object
    scheme: str
    seed: int
    outer_iter: int
    h: float
    rho: float
    sum_rate: float


@dataclass
class ExperimentResult:
    sweep_var: str | None
    records: list[SeedRecord] = field(default_factory=list)
    traces: list[TraceRecord] = field(default_factory=list)

    @property
    def failures(self) -> list[SeedRecord]:
        return [r for r in self.records if r.error is not None]

    def values(self, sweep_value, scheme: str) -> list[float]:
        """Per-seed rates in seed order; failed seeds are NaN."""
        return [r.sum_rate for r in self.records
                if r.sweep_value == sweep_value and r.scheme == scheme]


def aggregate(values) -> tuple[float, float, int]:
    """Mean, sample standard deviation and count of the finite values."""
    vals = [float(v) for v in values if math.isfinite(v)]
    n = len(vals)
    if n == 0:
        return math.nan, math.nan, 0
    mean = math.fsum(vals) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else math.nan
    return mean, std, n


def _run_task(task):
    point, value, cfg, seed, spec = task
    channels = generate_realization(cfg, spec.fading, seed)
    digest = channel_checksum(channels)
    records, traces = [], []
    for scheme in spec.schemes:
        try:
            if scheme == "pdd":
                design, diag = pdd_solve(channels, cfg, spec.pdd, seed)
                if spec.trace:
                    traces.extend(TraceRecord(value, scheme, seed, r["outer_iter"], r["h"],
                                              r["rho"], r["sum_rate"]) for r in diag.outer)
                rate = design_rate(design, channels, cfg.sigma2)
            elif scheme == "so":
                rate = design_rate(so_solve(channels, cfg, spec.so, seed), channels, cfg.sigma2)
            elif scheme == "ao":
                design, _ = ao_solve(channels, cfg, spec.ao, seed)
                rate = design_rate(design, channels, cfg.sigma2)
            else:
                rate = random_design_rate(random_design(channels, cfg, seed), channels, cfg)
            records.append(SeedRecord(value, scheme, seed, float(rate), digest))
        except SOLVER_ERRORS as exc:
            log.warning("%s failed on seed %d: %s", scheme, seed, exc)
            records.append(SeedRecord(value, scheme, seed, math.nan, digest,
                                      f"{type(exc).__name__}: {exc}"))
    return point, records, traces


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Run every scheme on every (sweep point, realization) pair."""
    tasks = [(i, value, cfg, spec.seed0 + r, spec)
             for i, (value, cfg) in enumerate(spec.points())
             for r in range(spec.n_realizations)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        outputs = [_run_task(t) for t in tasks]
    order = {s: i for i, s in enumerate(spec.schemes)}
    recs = sorted(((p, rec) for p, rs, _ in outputs for rec in rs),
                  key=lambda x: (x[0], order[x[1].scheme], x[1].seed))
    trs = sorted(((p, tr) for p, _, ts in outputs for tr in ts),
                 key=lambda x: (x[0], order[x[1].scheme], x[1].seed, x[1].outer_iter))
    return ExperimentResult(spec.sweep_var, [r for _, r in recs], [t for _, t in trs])


# --------------------------------------------------------------------------
# emission


def _num(x: float) -> str:
    return repr(float(x))


def _seed_rows(result: ExperimentResult):
    var = result.sweep_var or "none"
    for r in result.records:
        yield [var, _fmt_value(r.sweep_value), r.scheme, str(r.seed), _num(r.sum_rate)]


def _agg_rows(result: ExperimentResult):
    var = result.sweep_var or "none"
    seen = []
    for r in result.records:
        key = (r.sweep_value, r.scheme)
        if key not in seen:
            seen.append(key)
    for value, scheme in seen:
        mean, std, n = aggregate(result.values(value, scheme))
        yield [var, _fmt_value(value), scheme, _num(mean), _num(std), str(n)]


def _trace_groups(result: ExperimentResult):
    groups: dict[str, list] = {}
    for t in result.traces:
        groups.setdefault(_fmt_value(t.sweep_value), []).append(
            [t.scheme, str(t.seed), str(t.outer_iter), _num(t.h), _num(t.rho), _num(t.sum_rate)])
    return groups


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def emit_results(result: ExperimentResult, fmt: str, path) -> list[Path]:
    """Write per-seed, aggregate and trace files into directory ``path``.

    Returns the written paths. CSV rows follow the record order, which is
    sorted by sweep point, scheme and seed.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"could not create output directory {out}: {exc}") from exc
    var = result.sweep_var or "none"
    written = []
    if fmt == "csv":
        files = {"results.csv": _csv_text(SEED_HEADER, _seed_rows(result)),
                 "aggregate.csv": _csv_text(AGG_HEADER, _agg_rows(result))}
        for value, rows in _trace_groups(result).items():
            name = f"trace_{var}_{value}.csv" if value else "trace.csv"
            files[name] = _csv_text(TRACE_HEADER, rows)
    elif fmt == "json":
        def table(header, rows):
            return [dict(zip(header, row)) for row in rows]

        files = {
            "results.json": json.dumps(table(SEED_HEADER, _seed_rows(result)), indent=1) + "\n",
            "aggregate.json": json.dumps(table(AGG_HEADER, _agg_rows(result)), indent=1) + "\n",
        }
        for value, rows in _trace_groups(result).items():
            name = f"trace_{var}_{value}.json" if value else "trace.json"
            files[name] = json.dumps(table(TRACE_HEADER, rows), indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    for name, text in files.items():
        _write(out / name, text)
        written.append(out / name)
    return written


# --------------------------------------------------------------------------
# configuration


DEFAULT_SYSTEM = {"N": 16, "T": 6, "M": 32, "K": 4, "Nk": 3, "Lk": 3,
                  "power_dbm": -5.0, "noise_dbm": -120.0, "q_bits": 4}
DEFAULT_SWEEPS = {"power_dbm": [-15, -10, -5, 0, 5],
                  "q_bits": [1, 2, 3, 4, 5, 6, "inf"],
                  "rf_chains": [2, 3, 4, 5, 6]}


def _options(cls, raw, name):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown {name} options: {sorted(unknown)}")
    if cls is AoOptions and "so" in raw:
        raw["so"] = _options(SoOptions, raw["so"], "ao.so")
    return cls(**raw)


def _per_user(v, K):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,) * K


def spec_from_dict(raw: dict, sweep: str | None = None) -> ExperimentSpec:
    """Build a spec from parsed config data; dBm values are converted here."""
    raw = dict(raw or {})
    sysd = {**DEFAULT_SYSTEM, **(raw.get("system") or {})}
    unknown = set(sysd) - set(DEFAULT_SYSTEM)
    if unknown:
        raise ValueError(f"unknown system keys: {sorted(unknown)}")
    K = int(sysd["K"])
    base = SystemConfig(
        N=int(sysd["N"]), T=int(sysd["T"]), M=int(sysd["M"]), K=K,
        Nk=_per_user(sysd["Nk"], K), Lk=_per_user(sysd["Lk"], K),
        pk=tuple(dbm_to_mw(p) for p in _per_user(sysd["power_dbm"], K)),
        sigma2=dbm_to_mw(sysd["noise_dbm"]), q_bits=_parse_q(sysd["q_bits"]))
    fading = FadingSpec(**(raw.get("fading") or {}))
    sweeps = {**DEFAULT_SWEEPS, **(raw.get("sweep") or {})}
    sweep_var = SWEEP_FLAGS[sweep] if sweep else None
    values = tuple(sweeps[sweep_var]) if sweep_var else ()
    if sweep_var == "q_bits":
        values = tuple(_parse_q(v) for v in values)
    return ExperimentSpec(
        base=base, fading=fading, sweep_var=sweep_var, sweep_values=values,
        schemes=tuple(raw.get("schemes", SCHEMES)),
        n_realizations=int(raw.get("realizations", 50)), seed0=int(raw.get("seed", 0)),
        pdd=_options(PddOptions, raw.get("pdd"), "pdd"),
        so=_options(SoOptions, raw.get("so"), "so"),
        ao=_options(AoOptions, raw.get("ao"), "ao"),
        trace=bool(raw.get("trace", False)))


def load_spec(path, sweep: str | None = None) -> ExperimentSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"could not read config {path}: {exc}") from exc
    return spec_from_dict(yaml.safe_load(text) or {}, sweep)


# --------------------------------------------------------------------------
# CLI


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="risas",
        description="Sum-rate experiments for RIS-aided multiuser MIMO uplinks with "
                    "antenna selection.")
    ap.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    ap.add_argument("--schemes", help="comma-separated subset of pdd,so,ao,random")
    ap.add_argument("--realizations", type=int, help="channel realizations per sweep point")
    ap.add_argument("--seed", type=int, help="seed of the first realization")
    ap.add_argument("--sweep", choices=sorted(SWEEP_FLAGS), help="sweep variable")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--trace", action="store_true", help="write PDD convergence traces")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = {}
        if args.config:
            raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if args.schemes:
            raw["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
        if args.realizations is not None:
            raw["realizations"] = args.realizations
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.trace:
            raw["trace"] = True
        spec = spec_from_dict(raw, args.sweep)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        ap.error(str(exc))
    if args.jobs < 1:
        ap.error("--jobs must be positive")

    result = run_experiment(spec, jobs=args.jobs)
    for p in emit_results(result, args.format, args.out):
        log.info("wrote %s", p)
    if result.failures:
        print(f"{len(result.failures)} solver failure(s):", file=sys.stderr)
        for r in result.failures:
            print(f"  {result.sweep_var or 'none'}={_fmt_value(r.sweep_value)} "
                  f"scheme={r.scheme} seed={r.seed}: {r.error}", file=sys.stderr)
        return 1
    return 0
