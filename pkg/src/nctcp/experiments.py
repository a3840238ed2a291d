"""Experiment specs, seeded replication and CSV output.

An experiment is described by a flat TOML file; ``load_spec`` validates it
and reports the offending field. Replication ``r`` always runs with seed
``base_seed + r`` and results are written in replication order whatever the
completion order of parallel workers.
"""

from __future__ import annotations

import csv
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model_nc import nc_average_throughput, recommend_redundancy, rounds_for_duration
from .model_tcp import DomainError, FlowParams, tcp_throughput
from .provisioning import FILE_PRESETS, SWEEP_COLUMNS, ProvisioningScenario, monte_carlo_occupancy, provision_sweep
from .sim import FlowSpec, PathConfig, SimConfig, run_nc_flow, run_shared_link, run_tcp_flow

KINDS = ("erasure_sweep", "redundancy_sweep", "congestion", "table1", "provision_sweep", "analytic_only")

# Loss rates and redundancy factors of the reference throughput table
TABLE1_ROWS = ((0.0, 1.0), (0.0199, 1.03), (0.0587, 1.09), (0.0963, 1.13), (0.1855, 1.29))

RAW_COLUMNS = ("case", "replication", "seed", "flow_id", "protocol", "p", "R", "C_mbps",
               "mean_throughput_mbps", "mean_srtt_s")
AGG_COLUMNS = ("case", "flow_id", "protocol", "p", "R", "C_mbps", "n",
               "mean_throughput_mbps", "std_throughput_mbps", "mean_srtt_s", "std_srtt_s")
TABLE1_COLUMNS = ("p", "srtt_s", "R", "nc_sim_mbps", "nc_analysis_mbps", "tcp_sim_mbps", "tcp_analysis_mbps")
ANALYTIC_COLUMNS = ("p", "R", "srtt_s", "tcp_mbps", "nc_mbps", "recommended_R")
OCCUPANCY_COLUMNS = ("B_mbps", "q_user", "mu_f_mb", "protocol", "seed", "mean_active_fraction", "mean_n_bs_ceil")
DEVIATION_COLUMNS = ("label", "analytic", "simulated", "abs_dev", "rel_dev", "flagged")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    p: tuple[float, ...] = ()
    q_link: tuple[float, ...] = ()
    R: tuple[float, ...] = (1.0,)
    C: tuple[float, ...] = ()
    protocols: tuple[str, ...] = ("nc", "tcp")
    flows: int = 1
    stagger: tuple[float, ...] = ()
    measure: tuple[float, ...] = ()
    warmup_s: float = 0.0
    wmax: int = 50
    table_rows: tuple[tuple[float, float], ...] = TABLE1_ROWS
    B: tuple[float, ...] = ()
    q_user: tuple[float, ...] = ()
    mu_f: tuple[str, ...] = ("mu3.2",)
    rtt_s: float = 0.1
    users: int = 1000
    monte_carlo: bool = False
    replications: int = 100
    duration_s: float = 1000.0
    base_seed: int = 0
    output: str = "out"

    def __post_init__(self):
        check = _Checker()
        check.that(self.kind in KINDS, "kind", f"must be one of {', '.join(KINDS)}")
        check.that(self.replications >= 1, "replications", "must be >= 1")
        check.that(self.duration_s > 0, "duration_s", "must be positive")
        check.that(0 <= self.base_seed < 2**64 - self.replications, "base_seed", "must fit in 64 bits")
        check.that(self.flows >= 1, "flows", "must be >= 1")
        check.that(all(0 <= x < 1 for x in self.p), "p", "values must lie in [0, 1)")
        check.that(all(0 <= x < 1 for x in self.q_link), "q_link", "values must lie in [0, 1)")
        check.that(all(x >= 1 for x in self.R), "R", "values must be >= 1")
        check.that(all(x > 0 for x in self.C), "C", "values must be positive")
        check.that(all(x in ("nc", "tcp") for x in self.protocols), "protocols", "entries must be 'nc' or 'tcp'")
        check.that(len(self.stagger) in (0, 2), "stagger", "must be [start, end]")
        check.that(len(self.measure) in (0, 2), "measure", "must be [start, end]")
        check.that(all(m in FILE_PRESETS for m in self.mu_f), "mu_f",
                   f"presets must be among {', '.join(FILE_PRESETS)}")
        check.that(self.warmup_s >= 0, "warmup_s", "must be >= 0")
        if self.kind in ("erasure_sweep", "analytic_only"):
            check.that(bool(self.losses), "p", "grid is empty (give p or q_link)")
        if self.kind == "redundancy_sweep":
            check.that(bool(self.losses) and bool(self.R), "R", "needs non-empty p and R grids")
        if self.kind == "congestion":
            check.that(bool(self.C), "C", "congestion runs need at least one capacity")
            check.that(bool(self.losses), "p", "grid is empty")
        if self.kind == "table1":
            check.that(bool(self.table_rows), "table_rows", "must not be empty")
        if self.kind == "provision_sweep":
            for name in ("B", "q_user"):
                check.that(bool(getattr(self, name)), name, "grid is empty")
            check.that(bool(self.losses), "p", "grid is empty")
        check.done()

    @property
    def losses(self) -> tuple[float, ...]:
        """End-to-end loss grid; per-link ``q_link`` values are converted over 4 hops."""
        return tuple(self.p) + tuple(PathConfig(per_link_loss=q).loss_prob for q in self.q_link)

    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.replications)]


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def that(self, ok: bool, name: str, message: str):
        if not ok:
            self.errors.append(f"field '{name}': {message}")

    def done(self):
        if self.errors:
            raise ConfigError("; ".join(self.errors))


_TUPLE_FIELDS = {f.name for f in fields(ExperimentSpec) if str(f.type).startswith("tuple")}


def spec_from_mapping(data: Mapping[str, Any], source: str = "<config>") -> ExperimentSpec:
    known = {f.name for f in fields(ExperimentSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
    if "kind" not in data:
        raise ConfigError(f"{source}: field 'kind' is required")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{source}: field '{key}': expected a list, got {type(value).__name__}")
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return ExperimentSpec(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_spec(path: str | os.PathLike, **overrides) -> ExperimentSpec:
    """Parse a TOML experiment file; ``overrides`` with value None are ignored."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    return spec_from_mapping(data, str(path))


def with_overrides(spec: ExperimentSpec, **overrides) -> ExperimentSpec:
    data = {f.name: getattr(spec, f.name) for f in fields(ExperimentSpec)}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**data)


# --- simulation jobs ----------------------------------------------------------


@dataclass(frozen=True)
class _SimCase:
    label: str
    config_args: tuple  # (p, R, C, protocols per flow, stagger, wmax, duration, warmup)
    measure: tuple[float, ...] = ()


def _build_config(case: _SimCase, seed: int) -> SimConfig:
    p, r, cap, protocols, stagger, wmax, duration, warmup = case.config_args
    path = PathConfig.from_end_to_end(p, capacity_mbps=cap)
    params = FlowParams(loss_prob=path.loss_prob, rtt=path.base_rtt, wmax=wmax, redundancy=r)
    flows = []
    for k, proto in enumerate(protocols):
        if stagger and k == len(protocols) - 1 and len(protocols) > 1:
            flows.append(FlowSpec(proto, params, stagger[0], stagger[1]))
        else:
            flows.append(FlowSpec(proto, params))
    return SimConfig(path, tuple(flows), duration, seed, warmup)


def _run_case(job: tuple[_SimCase, int, int]) -> list[dict]:
    case, rep, seed = job
    config = _build_config(case, seed)
    if config.path.capacity_mbps is None and len(config.flows) == 1:
        runner = run_nc_flow if config.flows[0].protocol == "nc" else run_tcp_flow
        traces = [runner(config)]
    else:
        traces = run_shared_link(config)
    rows = []
    for tr in traces:
        if case.measure:
            thr = tr.throughput_between(*case.measure)
        else:
            thr = tr.throughput_mbps
        rows.append({
            "case": case.label,
            "replication": rep,
            "seed": seed,
            "flow_id": tr.flow_id,
            "protocol": tr.protocol,
            "p": config.path.loss_prob,
            "R": config.flows[tr.flow_id].params.redundancy,
            "C_mbps": config.path.capacity_mbps,
            "mean_throughput_mbps": thr,
            "mean_srtt_s": tr.mean_srtt,
        })
    return rows


def _sim_cases(spec: ExperimentSpec) -> list[_SimCase]:
    caps: tuple = spec.C or (None,)
    cases = []
    if spec.kind == "table1":
        for p, r in spec.table_rows:
            for proto in ("nc", "tcp"):
                cases.append(_SimCase(f"{proto}_p{p}_R{r}",
                                      (p, r, None, (proto,), (), spec.wmax, spec.duration_s, spec.warmup_s)))
        return cases
    for p in spec.losses:
        for r in spec.R:
            for cap in caps:
                for proto in spec.protocols:
                    if proto == "tcp" and spec.kind == "redundancy_sweep":
                        continue
                    if proto == "tcp" and len(spec.R) > 1 and r != spec.R[0]:
                        continue  # TCP ignores R
                    label = f"{proto}_p{p}_R{r}_C{cap if cap is not None else 'inf'}"
                    args = (p, r, cap, (proto,) * spec.flows, tuple(spec.stagger), spec.wmax,
                            spec.duration_s, spec.warmup_s)
                    cases.append(_SimCase(label, args, tuple(spec.measure)))
    return cases


def run_simulations(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Raw per-replication, per-flow rows ordered by case then replication."""
    jobs = [(case, rep, seed) for case in _sim_cases(spec) for rep, seed in enumerate(spec.seeds())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_case, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_case(j) for j in jobs]
    return [row for rows in results for row in rows]


def _std(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(raw: Sequence[dict]) -> list[dict]:
    """Mean and sample standard deviation per (case, flow)."""
    groups: dict[tuple, list[dict]] = {}
    for row in raw:
        groups.setdefault((row["case"], row["flow_id"]), []).append(row)
    out = []
    for (case, flow), rows in groups.items():
        thr = [r["mean_throughput_mbps"] for r in rows]
        srtt = [r["mean_srtt_s"] for r in rows]
        first = rows[0]
        out.append({
            "case": case,
            "flow_id": flow,
            "protocol": first["protocol"],
            "p": first["p"],
            "R": first["R"],
            "C_mbps": first["C_mbps"],
            "n": len(rows),
            "mean_throughput_mbps": statistics.fmean(thr),
            "std_throughput_mbps": _std(thr),
            "mean_srtt_s": statistics.fmean(srtt),
            "std_srtt_s": _std(srtt),
        })
    return out


# --- experiment kinds -----------------------------------------------------------


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    tables: dict[str, tuple[tuple[str, ...], list[dict]]] = field(default_factory=dict)

    def table(self, name: str) -> list[dict]:
        return self.tables[name][1]

    def write(self, out_dir: str | os.PathLike | None = None) -> list[Path]:
        out = Path(out_dir if out_dir is not None else self.spec.output)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, (columns, rows) in self.tables.items():
            path = out / f"{name}.csv"
            write_csv(path, columns, rows)
            paths.append(path)
        return paths


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Sequence[Mapping]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    """Read a CSV written by :func:`write_csv`, converting numeric fields back."""

    def parse(v: str):
        if v == "":
            return None
        if v in ("true", "false"):
            return v == "true"
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
        return v

    with open(path, newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def analytic_rows(spec: ExperimentSpec) -> list[dict]:
    rows = []
    rtt = PathConfig().base_rtt
    for p in spec.losses:
        for r in spec.R:
            prm = FlowParams(loss_prob=p, rtt=rtt, wmax=spec.wmax, redundancy=r)
            try:
                tcp = tcp_throughput(prm).mbps
            except DomainError:
                tcp = math.nan
            n = rounds_for_duration(spec.duration_s, prm.srtt)
            rows.append({
                "p": p,
                "R": r,
                "srtt_s": prm.srtt,
                "tcp_mbps": tcp,
                "nc_mbps": nc_average_throughput(prm, n).mbps,
                "recommended_R": recommend_redundancy(p, spec.wmax),
            })
    return rows


def table1_rows(spec: ExperimentSpec, aggregated: Sequence[dict]) -> list[dict]:
    """Rows shaped like the reference table; NC analysis uses the simulated SRTT."""
    by_case = {row["case"]: row for row in aggregated if row["flow_id"] == 0}
    rtt = PathConfig().base_rtt
    rows = []
    for p, r in spec.table_rows:
        nc = by_case[f"nc_p{p}_R{r}"]
        tcp = by_case[f"tcp_p{p}_R{r}"]
        srtt = nc["mean_srtt_s"]
        prm = FlowParams(loss_prob=nc["p"], rtt=rtt, wmax=spec.wmax, redundancy=r, srtt=srtt)
        rows.append({
            "p": p,
            "srtt_s": srtt,
            "R": r,
            "nc_sim_mbps": nc["mean_throughput_mbps"],
            "nc_analysis_mbps": nc_average_throughput(prm, rounds_for_duration(spec.duration_s, srtt)).mbps,
            "tcp_sim_mbps": tcp["mean_throughput_mbps"],
            "tcp_analysis_mbps": tcp_throughput(FlowParams(loss_prob=nc["p"], rtt=rtt, wmax=spec.wmax)).mbps,
        })
    return rows


def _occupancy_job(job) -> dict:
    scenario, b, q, mu_name, seed, duration = job
    tr = monte_carlo_occupancy(scenario, duration, seed)
    return {
        "B_mbps": b,
        "q_user": q,
        "mu_f_mb": scenario.mean_file_size / 8e6,
        "protocol": scenario.protocol,
        "seed": seed,
        "mean_active_fraction": tr.mean_active_fraction,
        "mean_n_bs_ceil": tr.mean_n_bs_ceil,
    }


def _provision(spec: ExperimentSpec, workers: int) -> ExperimentResult:
    dists = [FILE_PRESETS[m] for m in spec.mu_f]
    result = ExperimentResult(spec)
    rows = provision_sweep(spec.B, spec.losses, spec.q_user, dists, rtt=spec.rtt_s,
                           users=spec.users, wmax=spec.wmax, duration_s=spec.duration_s)
    result.tables["provision"] = (SWEEP_COLUMNS, rows)
    if spec.monte_carlo:
        jobs = []
        for p in spec.losses:
            r = recommend_redundancy(p, spec.wmax)
            prm = FlowParams(loss_prob=p, rtt=spec.rtt_s, wmax=spec.wmax, redundancy=r)
            for b in spec.B:
                for q in spec.q_user:
                    for name, dist in zip(spec.mu_f, dists):
                        sc = ProvisioningScenario(spec.users, q, dist, b, prm, "ideal", duration_s=spec.duration_s)
                        jobs.extend((sc, b, q, name, seed, spec.duration_s) for seed in spec.seeds())
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                occ = list(pool.map(_occupancy_job, jobs))
        else:
            occ = [_occupancy_job(j) for j in jobs]
        result.tables["occupancy"] = (OCCUPANCY_COLUMNS, occ)
    return result


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run ``spec`` and return its tables; nothing is written to disk."""
    if spec.kind == "analytic_only":
        result = ExperimentResult(spec)
        result.tables["analytic"] = (ANALYTIC_COLUMNS, analytic_rows(spec))
        return result
    if spec.kind == "provision_sweep":
        return _provision(spec, workers)
    raw = run_simulations(spec, workers)
    agg = aggregate(raw)
    result = ExperimentResult(spec)
    result.tables["raw"] = (RAW_COLUMNS, raw)
    result.tables["aggregate"] = (AGG_COLUMNS, agg)
    if spec.kind == "table1":
        result.tables["table1"] = (TABLE1_COLUMNS, table1_rows(spec, agg))
    return result


# --- model vs simulation ----------------------------------------------------------


@dataclass(frozen=True)
class Deviation:
    label: str
    analytic: float
    simulated: float
    abs_dev: float
    rel_dev: float
    flagged: bool


def compare_model_vs_sim(
    analytic: Mapping[str, float],
    simulated: Mapping[str, float],
    *,
    rel_tol: float | None = None,
    factor: float | None = None,
) -> list[Deviation]:
    """Per-label deviation of simulation from model.

    A row is flagged when ``|sim - model| / model`` exceeds ``rel_tol`` or the
    two differ by more than ``factor`` in either direction.
    """
    if set(analytic) != set(simulated):
        missing = sorted(set(analytic) ^ set(simulated))
        raise ValueError(f"row sets differ: {', '.join(map(str, missing))}")
    out = []
    for label in analytic:
        a, s = float(analytic[label]), float(simulated[label])
        abs_dev = abs(s - a)
        rel = abs_dev / abs(a) if a != 0 else (0.0 if s == 0 else math.inf)
        flagged = False
        if rel_tol is not None and rel > rel_tol:
            flagged = True
        if factor is not None and (a <= 0 or s <= 0 or max(a / s, s / a) > factor):
            flagged = True
        out.append(Deviation(label, a, s, abs_dev, rel, flagged))
    return out


def table1_deviations(rows: Sequence[dict], nc_rel_tol: float = 0.05, tcp_factor: float = 2.0) -> list[Deviation]:
    """NC rows against the relative tolerance, TCP rows against the factor band (p > 0 only)."""
    nc = compare_model_vs_sim({f"nc p={r['p']}": r["nc_analysis_mbps"] for r in rows},
                              {f"nc p={r['p']}": r["nc_sim_mbps"] for r in rows}, rel_tol=nc_rel_tol)
    lossy = [r for r in rows if r["p"] > 0]
    tcp = compare_model_vs_sim({f"tcp p={r['p']}": r["tcp_analysis_mbps"] for r in lossy},
                               {f"tcp p={r['p']}": r["tcp_sim_mbps"] for r in lossy}, factor=tcp_factor)
    return nc + tcp


def deviation_rows(devs: Sequence[Deviation]) -> list[dict]:
    return [{c: getattr(d, c) for c in DEVIATION_COLUMNS} for d in devs]
