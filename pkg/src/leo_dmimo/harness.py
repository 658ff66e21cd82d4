"""
Experiment orchestration around the seeded Monte Carlo drop loop.

Configs are YAML files validated into dataclasses; results go to
line-delimited JSON plus a CSV summary.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import RadioConfig
from .clustering import ClusterPolicy, EventKind, RsapCriterion
from .constellation import GeometryConfig, UserRegion, build_constellation
from .downlink import PrecoderMode
from .scenario import (
    coverage_times,
    estimate_channels,
    evaluate_policy,
    form_clusters,
    make_drop,
    sample_channels,
)

OUTPUT_ENV = "LEO_DMIMO_OUTPUT_DIR"
REFERENCE_CONFIG = Path(__file__).parent / "configs" / "reference.yaml"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class PilotConfig:
    tau_p: int = 30
    tau_c: int = 200

    def __post_init__(self):
        if self.tau_p < 1:
            raise ValueError("tau_p must be >= 1")
        if self.tau_c <= self.tau_p:
            raise ValueError("tau_c must exceed tau_p")


@dataclass
class PolicyConfig:
    clusters: list = field(default_factory=lambda: ["uc", "fc", "nct"])
    criteria: list = field(default_factory=lambda: ["best_channel", "max_service_time"])
    modes: list = field(default_factory=lambda: ["phase_aware", "asynchronous"])
    csi: str = "lmmse"  # or "perfect"

    def __post_init__(self):
        for name, enum in (("clusters", ClusterPolicy), ("criteria", RsapCriterion),
                           ("modes", PrecoderMode)):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals:
                raise ValueError(f"{name} must be a non-empty list")
            allowed = [e.value for e in enum]
            bad = [v for v in vals if v not in allowed]
            if bad:
                raise ValueError(f"{name}: unknown {bad}, expected a subset of {allowed}")
        if self.csi not in ("lmmse", "perfect"):
            raise ValueError("csi must be 'lmmse' or 'perfect'")


@dataclass
class MonteCarloConfig:
    seed: int | None = None
    num_drops: int = 200
    trials_per_drop: int = 200
    batches: int = 10
    coverage: bool = True
    epoch_step_s: float = 10.0
    horizon_s: float = 3600.0

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is required")
        if self.num_drops < 0:
            raise ValueError("num_drops must be >= 0")
        if self.trials_per_drop < 1:
            raise ValueError("trials_per_drop must be >= 1")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.epoch_step_s <= 0:
            raise ValueError("epoch_step_s must be positive")
        if self.horizon_s < self.epoch_step_s:
            raise ValueError("horizon_s must be at least one epoch step")


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: list = field(default_factory=lambda: ["jsonl", "csv"])

    def __post_init__(self):
        bad = [f for f in self.formats if f not in ("jsonl", "csv")]
        if bad:
            raise ValueError(f"unknown formats {bad}")


@dataclass
class ExperimentConfig:
    geometry: GeometryConfig
    radio: RadioConfig
    pilot: PilotConfig
    policy: PolicyConfig
    monte_carlo: MonteCarloConfig
    output: OutputConfig

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self) -> dict:
        """Config plus the derived physical parameters it implies."""
        r = self.radio
        return {
            "config": self.to_dict(),
            "derived": {
                "wavelength_m": r.wavelength,
                "symbol_duration_s": r.symbol_duration,
                "noise_power_w": r.noise_power,
                "max_power_w": r.max_power,
                "pilot_power_w": r.pilot_power,
                "prelog": 1.0 - self.pilot.tau_p / self.pilot.tau_c,
            },
            "seed": self.monte_carlo.seed,
            "version": __version__,
        }


SECTIONS = {
    "geometry": GeometryConfig,
    "radio": RadioConfig,
    "pilot": PilotConfig,
    "policy": PolicyConfig,
    "monte_carlo": MonteCarloConfig,
    "output": OutputConfig,
}
NESTED = {(GeometryConfig, "user_region"): UserRegion}


def _check_type(value, default, path, errors):
    if default is None or isinstance(default, (list, dict)) or dataclasses.is_dataclass(default):
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
        elif isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                errors.append(f"{path}: expected an integer, got {value!r}")
            return int(value)
        return value
    if isinstance(default, str) and not isinstance(value, str):
        errors.append(f"{path}: expected a string, got {value!r}")
    return value


def _build(cls, data, path, errors):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    n_err = len(errors)
    for key, value in data.items():
        if key not in names:
            errors.append(f"{path}.{key}: unknown field")
            continue
        sub = NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{path}.{key}", errors)
            continue
        f = names[key]
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = None
        if isinstance(default, list) and not isinstance(value, list):
            errors.append(f"{path}.{key}: expected a list")
            continue
        kwargs[key] = _check_type(value, default, f"{path}.{key}", errors)
    if len(errors) > n_err:
        return None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"{path}: {exc}")
        return None


def config_from_dict(data) -> ExperimentConfig:
    """Build and validate a config; raises ConfigError listing every bad field."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config: expected a mapping at the top level"])
    for key in data:
        if key not in SECTIONS:
            errors.append(f"{key}: unknown section")
    if "monte_carlo" not in data or not isinstance(data["monte_carlo"], dict) \
            or "seed" not in data["monte_carlo"]:
        errors.append("monte_carlo.seed: required")
    parts = {}
    for name, cls in SECTIONS.items():
        parts[name] = _build(cls, data.get(name), name, errors)
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(**parts)
    g = cfg.geometry
    if g.scheme == "walker_delta":
        planes = g.num_planes or max(1, round(math.sqrt(g.num_satellites)))
        if g.num_satellites % planes:
            errors.append(
                f"geometry.num_planes: {g.num_satellites} satellites do not split into {planes} planes"
            )
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_dict(data)


@dataclass
class ExperimentResult:
    echo: dict
    records: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    events: list = field(default_factory=list)
    problems: list = field(default_factory=list)

    def cluster_size_histogram(self, policy=None, criterion=None) -> dict[int, int]:
        hist: dict[int, int] = {}
        for r in _unique_cluster_rows(self.records):
            if policy and r["policy"] != policy or criterion and r["criterion"] != criterion:
                continue
            hist[r["cluster_size"]] = hist.get(r["cluster_size"], 0) + 1
        return dict(sorted(hist.items()))


def _unique_cluster_rows(records):
    # cluster sizes do not depend on the precoder mode; keep one mode
    seen = set()
    for r in records:
        key = (r["drop"], r["user"], r["policy"], r["criterion"])
        if key not in seen:
            seen.add(key)
            yield r


def _float(x) -> float:
    x = float(x)
    return x if math.isfinite(x) else None


def run_drop(cfg: ExperimentConfig, d: int, constellation=None) -> dict:
    """All records of drop ``d``; depends only on (config, d)."""
    rng = np.random.default_rng([cfg.monte_carlo.seed, d])
    if constellation is None:
        constellation = build_constellation(cfg.geometry, rng)
    drop = make_drop(d, constellation, cfg.geometry, cfg.radio, rng)
    tau_p, tau_c = cfg.pilot.tau_p, cfg.pilot.tau_c
    mc = cfg.monte_carlo
    chans = sample_channels(drop, mc.trials_per_drop, tau_p)
    perfect = cfg.policy.csi == "perfect"
    out = {"records": [], "coverage": [], "events": [], "problems": []}
    for crit in cfg.policy.criteria:
        for pol in cfg.policy.clusters:
            state = form_clusters(drop, pol, crit, tau_p)
            for e in state.events:
                out["events"].append(_event_row(d, pol, crit, "formation", e))
            sizes = state.cluster_sizes(drop.user_ids)
            est = estimate_channels(drop, chans, state, tau_p, perfect)
            for mode in cfg.policy.modes:
                rep = evaluate_policy(drop, chans, state, mode, tau_p, tau_c, perfect, est,
                                      mc.batches)
                for i, n in enumerate(drop.user_ids):
                    covered = n in state.clusters
                    out["records"].append({
                        "drop": d, "user": n, "policy": pol, "criterion": crit,
                        "mode": mode, "covered": covered,
                        "sinr": _float(rep.sinr[i]) if covered else 0.0,
                        "se": _float(rep.se[i]) if covered else 0.0,
                        "sinr_stderr": _float(rep.sinr_stderr[i]) if covered else None,
                        "imprecise": bool(rep.imprecise[i]) if covered else False,
                        "cluster_size": sizes[i],
                    })
        if mc.coverage:
            cov, zeta, events, problems = coverage_times(
                drop, crit, tau_p, mc.epoch_step_s, mc.horizon_s
            )
            for n in sorted(cov):
                out["coverage"].append({
                    "drop": d, "user": n, "criterion": crit,
                    "coverage_time": cov[n], "service_time": _float(zeta[n]),
                    "censored": not cov[n] < mc.horizon_s,
                })
            for e in events:
                out["events"].append(_event_row(d, "uc", crit, "tracking", e))
            out["problems"].extend(f"drop {d} {crit}: {p}" for p in problems)
    return out


def _event_row(d, policy, criterion, phase, e) -> dict:
    return {"drop": d, "policy": policy, "criterion": criterion, "phase": phase,
            "time": e.time, "kind": EventKind(e.kind).value, "user": e.user,
            "satellite": e.satellite}


def _drop_worker(args):
    data, d = args
    return run_drop(config_from_dict(data), d)


def run(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run every drop; output is identical for any worker count."""
    result = ExperimentResult(cfg.echo())
    n = cfg.monte_carlo.num_drops
    if n == 0:
        return result
    if workers > 1:
        data = cfg.to_dict()
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_drop_worker, [(data, d) for d in range(n)]))
    else:
        shared = None
        if cfg.geometry.scheme == "walker_delta":
            shared = build_constellation(cfg.geometry)
        parts = [run_drop(cfg, d, shared) for d in range(n)]
    for p in parts:  # drop order, single writer
        result.records.extend(p["records"])
        result.coverage.extend(p["coverage"])
        result.events.extend(p["events"])
        result.problems.extend(p["problems"])
    return result


# -- statistics ---------------------------------------------------------------

def empirical_cdf(samples, x) -> np.ndarray:
    """Right-continuous empirical CDF of ``samples`` evaluated at ``x``."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("empty sample set")
    return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / s.size


def summarize_cdf(samples, grid: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF on ``grid`` evenly spaced points spanning [min, max]."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empty sample set")
    if grid < 1:
        raise ValueError("grid must be >= 1")
    x = np.linspace(s.min(), s.max(), grid)
    return x, empirical_cdf(s, x)


def dominance_violation(better, worse) -> float:
    """Largest amount by which the CDF of ``better`` exceeds that of ``worse``."""
    x = np.union1d(np.asarray(better, float), np.asarray(worse, float))
    return float(np.max(np.maximum(empirical_cdf(better, x) - empirical_cdf(worse, x), 0.0)))


def group_summary(records) -> list[dict]:
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r["policy"], r["criterion"], r["mode"]), []).append(r)
    rows = []
    for (pol, crit, mode), rs in groups.items():
        se = np.array([r["se"] for r in rs], dtype=float)
        sizes = np.array([r["cluster_size"] for r in rs])
        rows.append({
            "policy": pol, "criterion": crit, "mode": mode, "samples": len(rs),
            "covered": int(sum(r["covered"] for r in rs)),
            "mean_se": float(se.mean()), "median_se": float(np.median(se)),
            "p10_se": float(np.quantile(se, 0.1)), "p90_se": float(np.quantile(se, 0.9)),
            "mean_cluster_size": float(sizes.mean()), "max_cluster_size": int(sizes.max()),
            "imprecise": int(sum(r["imprecise"] for r in rs)),
        })
    return rows


# -- files --------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _jsonl(echo, rows) -> str:
    lines = [_dumps({"header": echo})] + [_dumps(r) for r in rows]
    return "\n".join(lines) + "\n"


def table_csv(rows, header_echo=None) -> str:
    buf = io.StringIO()
    if header_echo is not None:
        buf.write("# " + _dumps(header_echo) + "\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def output_directory(cfg: ExperimentConfig, override=None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.output.directory)


def write_result(result: ExperimentResult, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats = result.echo["config"]["output"]["formats"]
    written = []

    def put(name, text):
        p = directory / name
        p.write_text(text)
        written.append(p)

    if "jsonl" in formats:
        put("records.jsonl", _jsonl(result.echo, result.records))
        put("coverage.jsonl", _jsonl(result.echo, result.coverage))
        put("events.jsonl", _jsonl(result.echo, result.events))
    if "csv" in formats:
        put("summary.csv", table_csv(group_summary(result.records), result.echo))
    put("config.json", _dumps(result.echo) + "\n")
    return written


def _read_jsonl(path: Path):
    header, rows = None, []
    with path.open() as fh:
        for line in fh:
            obj = json.loads(line)
            if "header" in obj:
                header = obj["header"]
            else:
                rows.append(obj)
    return header, rows


def load_result(directory) -> ExperimentResult:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a result directory")
    cfg_path = directory / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path}: missing")
    result = ExperimentResult(json.loads(cfg_path.read_text()))
    for name in ("records", "coverage", "events"):
        p = directory / f"{name}.jsonl"
        if p.exists():
            setattr(result, name, _read_jsonl(p)[1])
    return result
