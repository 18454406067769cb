"""Experiment configuration and the fit / simulate / grid workflows."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (CategoricalDataset, SimulationSpec, generate_dataset, load_csv, load_dataset,
                   preset_specs, save_dataset)
from .model import Hyperparameters
from .postprocess import (IdentifiedResult, adjusted_rand_index, identify,
                          misclassification_rate)
from .sampler import run_chain, write_trace

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
WORKERS_ENV = "MIXLCA_MAX_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Batch run description; every prior default is built in.

    ``input`` is one of ``{"csv": path, "header": bool}``,
    ``{"dataset": path}`` (a file written by ``simulate``),
    ``{"datasets": directory}``, ``{"preset": name, "replications": n}`` or
    ``{"simulation": {...SimulationSpec fields...}}``.
    """

    input: dict
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    grid: Optional[dict] = None
    output: str = "results"
    max_workers: Optional[int] = None
    selection: str = "max"
    write_traces: bool = True

    def __post_init__(self):
        sources = {"csv", "dataset", "datasets", "preset", "simulation"} & set(self.input)
        if len(sources) != 1:
            raise ConfigError("exactly one input source is required "
                              "(csv, dataset, datasets, preset or simulation)")
        if self.grid:
            for key, values in self.grid.items():
                if key not in ("a_mu", "c_b", "L"):
                    raise ConfigError(f"unknown grid dimension {key!r}")
                if not values or any(v <= 0 for v in values):
                    raise ConfigError(f"grid entries for {key} must be positive")
        if self.selection not in ("max", "mean"):
            raise ConfigError("selection must be 'max' or 'mean'")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        hp_raw = dict(raw.pop("hyperparameters", {}))
        for key in ("num_chains", "iterations", "burn_in", "base_seed"):
            if key in raw:
                hp_raw[key] = raw.pop(key)
        known = {f.name for f in fields(Hyperparameters)}
        unknown = set(hp_raw) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
        known_top = {f.name for f in fields(cls)}
        if set(raw) - known_top:
            raise ConfigError(f"unknown config keys {sorted(set(raw) - known_top)}")
        if "input" not in raw:
            raise ConfigError("config needs an 'input' block")
        return cls(hyperparameters=Hyperparameters(**hp_raw), **raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"schema_version": CONFIG_SCHEMA_VERSION, "input": self.input,
                "hyperparameters": self.hyperparameters.to_dict(), "grid": self.grid,
                "output": str(self.output), "max_workers": self.max_workers,
                "selection": self.selection, "write_traces": self.write_traces}


def resolve_workers(config_value: Optional[int] = None) -> int:
    if config_value:
        return max(1, int(config_value))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# inputs


def load_inputs(cfg: ExperimentConfig) -> list:
    """All datasets named by the config, as ``(name, dataset)`` pairs."""
    src = cfg.input
    if "csv" in src:
        path = Path(src["csv"])
        return [(path.stem, load_csv(path, schema=src.get("schema"),
                                     header=bool(src.get("header", False))))]
    if "dataset" in src:
        path = Path(src["dataset"])
        return [(path.stem, load_dataset(path))]
    if "datasets" in src:
        paths = sorted(Path(src["datasets"]).glob("*.csv"))
        if not paths:
            raise ConfigError(f"no .csv datasets in {src['datasets']}")
        return [(p.stem, load_dataset(p)) for p in paths]
    if "preset" in src:
        specs = preset_specs(src["preset"], base_seed=int(src.get("seed", 0)),
                             replications=src.get("replications"))
        return [(f"{src['preset']}-rep{i + 1:02d}", generate_dataset(s))
                for i, s in enumerate(specs)]
    spec = SimulationSpec(**src["simulation"])
    return [("simulated", generate_dataset(spec))]


def check_writable(directory) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory):
            pass
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc}") from exc
    return directory


# ---------------------------------------------------------------------------
# fitting


def _chain_job(args):
    data, hp, index = args
    return run_chain(data, hp, index)


def run_chains(data: CategoricalDataset, hp: Hyperparameters, max_workers: int = 1) -> list:
    """Run ``hp.num_chains`` independent chains, in parallel when allowed."""
    jobs = [(data, hp, i) for i in range(hp.num_chains)]
    if max_workers <= 1 or hp.num_chains == 1:
        return [_chain_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(max_workers, hp.num_chains)) as pool:
        return list(pool.map(_chain_job, jobs))


@dataclass
class FitResult:
    traces: list
    identified: IdentifiedResult
    summary: dict


def _histogram(values) -> dict:
    vals, counts = np.unique(np.asarray(values, dtype=int), return_counts=True)
    total = counts.sum()
    return {str(v): float(c / total) for v, c in zip(vals, counts)}


def fit_dataset(data: CategoricalDataset, hp: Hyperparameters, max_workers: int = 1,
                selection: str = "max") -> FitResult:
    """Multi-chain fit followed by selection, relabeling and scoring."""
    traces = run_chains(data, hp, max_workers)
    ident = identify(traces, seed=hp.base_seed, criterion=selection)
    chosen = traces[ident.selected_chain]
    summary = {
        "K_hat": ident.K_hat,
        "selected_chain": int(chosen.chain_index),
        "n_obs": data.n_obs,
        "n_vars": data.n_vars,
        "kept_iterations": int(len(ident.kept_iterations)),
        "permutation_failure_rate": ident.permutation_failure_rate,
        "chain_modes_K_plus": [int(np.bincount(t.K_plus).argmax()) for t in traces],
        "posterior_K": _histogram(chosen.K),
        "posterior_K_plus": _histogram(chosen.K_plus),
        "posterior_K_plus_all_chains": _histogram(np.concatenate([t.K_plus for t in traces])),
        "acceptance_rates": chosen.acceptance_rates(),
        "max_log_likelihood": float(np.max(chosen.log_likelihood)),
        "hyperparameters": hp.to_dict(),
        "ARI": None,
        "err": None,
    }
    if data.true_labels is not None:
        summary["ARI"] = adjusted_rand_index(ident.map_partition, data.true_labels)
        summary["err"] = misclassification_rate(ident.map_partition, data.true_labels)
    return FitResult(traces, ident, summary)


def write_fit_outputs(result: FitResult, directory, layout_sizes, write_traces: bool = True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if write_traces:
        for trace in result.traces:
            write_trace(trace, directory / "traces")
    ident = result.identified
    with (directory / "map_partition.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["observation", "cluster"])
        for i, k in enumerate(ident.map_partition):
            writer.writerow([i + 1, int(k) + 1])
    means = ident.posterior_means()
    with (directory / "clusters.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "eta", "variable", "category", "mu", "pi_tilde"])
        for k in range(ident.K_hat):
            col = 0
            for j, size in enumerate(layout_sizes):
                for d in range(size):
                    writer.writerow([k + 1, repr(float(means["eta"][k])), j + 1, d + 1,
                                     repr(float(means["mu"][k, col])),
                                     repr(float(means["functionals"][k, col]))])
                    col += 1
    (directory / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: ExperimentConfig) -> list:
    """Fit every input dataset; returns the list of summaries."""
    out = check_writable(cfg.output)
    workers = resolve_workers(cfg.max_workers)
    datasets = load_inputs(cfg)
    summaries = []
    for name, data in datasets:
        target = out if len(datasets) == 1 else out / name
        result = fit_dataset(data, cfg.hyperparameters, workers, cfg.selection)
        result.summary["dataset"] = name
        write_fit_outputs(result, target, data.num_categories.tolist(), cfg.write_traces)
        summaries.append(result.summary)
        logger.info("%s: K_hat=%d ARI=%s", name, result.summary["K_hat"], result.summary["ARI"])
    return summaries


def cmd_simulate(cfg: ExperimentConfig) -> list:
    """Write the simulated datasets (codes CSV + JSON sidecar); returns the paths."""
    out = check_writable(cfg.output)
    if not ({"preset", "simulation"} & set(cfg.input)):
        raise ConfigError("simulate needs a preset or a simulation spec as input")
    paths = []
    for name, data in load_inputs(cfg):
        path = out / f"{name}.csv"
        save_dataset(data, path)
        paths.append(path)
    return paths


GRID_COLUMNS = ["L", "a_mu", "c_b", "mean_K_hat", "mean_ARI", "n_datasets", "n_failed", "failures"]


def cmd_grid(cfg: ExperimentConfig) -> list:
    """Fit every dataset for every grid cell and tabulate mean ``K_hat`` and ARI."""
    out = check_writable(cfg.output)
    workers = resolve_workers(cfg.max_workers)
    datasets = load_inputs(cfg)
    if any(d.true_labels is None for _, d in datasets):
        raise ConfigError("grid runs need datasets with true labels")
    base = cfg.hyperparameters
    grid = cfg.grid or {}
    dims = {"L": grid.get("L", [base.L]), "a_mu": grid.get("a_mu", [base.a_mu]),
            "c_b": grid.get("c_b", [base.c_b])}
    rows, runs = [], []
    for L, a_mu, c_b in itertools.product(dims["L"], dims["a_mu"], dims["c_b"]):
        hp = base.updated(L=int(L), a_mu=float(a_mu), c_b=float(c_b))
        k_hats, aris, failures = [], [], []
        for name, data in datasets:
            try:
                summary = fit_dataset(data, hp, workers, cfg.selection).summary
            except Exception as exc:  # per-cell failures are tabulated, not fatal
                failures.append(f"{name}: {exc}")
                runs.append([L, a_mu, c_b, name, "", "", str(exc)])
                continue
            k_hats.append(summary["K_hat"])
            aris.append(summary["ARI"])
            runs.append([L, a_mu, c_b, name, summary["K_hat"], repr(summary["ARI"]), ""])
        rows.append([L, a_mu, c_b,
                     repr(float(np.mean(k_hats))) if k_hats else "",
                     repr(float(np.mean(aris))) if aris else "",
                     len(datasets), len(failures), "; ".join(failures)])
    with (out / "grid.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_COLUMNS)
        writer.writerows(rows)
    with (out / "grid_runs.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "a_mu", "c_b", "dataset", "K_hat", "ARI", "error"])
        writer.writerows(runs)
    return [dict(zip(GRID_COLUMNS, row)) for row in rows]
