"""Seeded Monte-Carlo experiment harness: config parsing, sweeps over SNR /
sounding interval / antenna count, estimator orchestration, CSV results and a
run manifest.

Determinism contract: every random draw derives from
(master_seed, sweep_index, trial_index, purpose), so results are identical
across reruns and worker counts; rows are emitted in (sweep, estimator,
trial) order regardless of scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import AmpOptions, em_bg_amp, omp, somp
from .channel import make_pilots, sample_paths, synth_fst_channel, \
    synth_fst_slice, synth_received
from .config import (GridSpec, OffGridParams, Scenario, SystemConfig,
                     desk_config, doppler_from_velocity, paper_config)
from .dictionary import build_dictionary
from .hmp import HmpDivergence, HmpOptions
from .hmp import run as hmp_run
from .predict import extrapolate, horizon_times, nmse

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "run_experiment",
           "summarize", "replay", "RESULT_COLUMNS"]

RESULT_COLUMNS = ["sweep_value", "estimator", "trial", "seed",
                  "estimation_nmse_db", "prediction_nmse_db",
                  "iterations_used", "wall_time_ms", "divergence"]

SWEEP_AXES = ("snr_db", "delta_T", "m_h")
ESTIMATORS = ("hmp", "em_bg_amp", "em_bg_amp_mmv", "omp", "somp")


class ConfigError(ValueError):
    """Config parse/validation failure with a field-path diagnostic."""


@dataclass
class ExperimentConfig:
    profile: str
    system: dict
    scenario: dict
    sweep_axis: str
    sweep_values: list
    snr_db: float
    estimators: list          # list of {"name": ..., **options}
    trials: int
    master_seed: int
    output_dir: str
    prediction: dict
    record_timing: bool = True

    def resolved(self) -> dict:
        return asdict(self)


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"missing field '{context}.{key}'" if context else
                          f"missing field '{key}'")
    return mapping[key]


def load_config(source) -> ExperimentConfig:
    """Parse and validate a YAML experiment config (path, text, or dict)."""
    if isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text() if isinstance(source, (str, Path)) \
            and "\n" not in str(source) else str(source)
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    profile = raw.get("profile", "desk")
    if profile not in ("desk", "paper"):
        raise ConfigError(f"profile must be 'desk' or 'paper', got {profile!r}")

    sweep = _require(raw, "sweep", "")
    axis = _require(sweep, "axis", "sweep")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = _require(sweep, "values", "sweep")
    if not isinstance(values, (list, tuple)) or len(values) == 0:
        raise ConfigError("sweep.values must be a non-empty list")

    scenario = dict(_require(raw, "scenario", ""))
    _require(scenario, "n_paths", "scenario")
    if "doppler_max" not in scenario and "velocity_kmh" not in scenario:
        raise ConfigError("scenario needs 'doppler_max' (Hz) or 'velocity_kmh'")

    estimators = raw.get("estimators", [{"name": "hmp"}])
    norm_estimators = []
    for i, est in enumerate(estimators):
        if isinstance(est, str):
            est = {"name": est}
        name = _require(est, "name", f"estimators[{i}]")
        if name not in ESTIMATORS:
            raise ConfigError(
                f"estimators[{i}].name must be one of {ESTIMATORS}, got {name!r}")
        norm_estimators.append(dict(est))

    trials = int(raw.get("trials", 1))
    if trials < 1:
        raise ConfigError("trials must be >= 1")

    prediction = dict(raw.get("prediction", {}))
    prediction.setdefault("horizon", "delta_T")
    prediction.setdefault("n_samples", 8)
    prediction.setdefault("doppler_phase", "exact")

    return ExperimentConfig(
        profile=profile,
        system=dict(raw.get("system", {})),
        scenario=scenario,
        sweep_axis=axis,
        sweep_values=list(values),
        snr_db=float(raw.get("snr_db", 0.0)),
        estimators=norm_estimators,
        trials=trials,
        master_seed=int(raw.get("master_seed", 0)),
        output_dir=str(raw.get("output_dir", "results")),
        prediction=prediction,
        record_timing=bool(raw.get("record_timing", True)),
    )


def _base_system(cfg: ExperimentConfig) -> SystemConfig:
    builder = desk_config if cfg.profile == "desk" else paper_config
    return builder(**cfg.system)


def _system_for_sweep(cfg: ExperimentConfig, value) -> tuple[SystemConfig, float]:
    """SystemConfig and SNR for one sweep point."""
    sys_cfg = _base_system(cfg)
    snr_db = cfg.snr_db
    if cfg.sweep_axis == "snr_db":
        snr_db = float(value)
    elif cfg.sweep_axis == "delta_T":
        sys_cfg = sys_cfg.with_updates(delta_T=float(value))
    elif cfg.sweep_axis == "m_h":
        sys_cfg = sys_cfg.with_updates(m_h=int(value))
    return sys_cfg, snr_db


def _scenario_for(cfg: ExperimentConfig, sys_cfg: SystemConfig) -> Scenario:
    sc = cfg.scenario
    if "doppler_max" in sc:
        doppler_max = float(sc["doppler_max"])
    else:
        doppler_max = doppler_from_velocity(
            float(sc["velocity_kmh"]) / 3.6, sys_cfg.carrier_freq)
    nyquist = 0.5 / sys_cfg.delta_T
    if doppler_max >= nyquist:
        raise ConfigError(
            f"scenario Doppler {doppler_max:.1f} Hz reaches the Nyquist limit "
            f"{nyquist:.1f} Hz of delta_T={sys_cfg.delta_T}")
    delay_spread = float(sc.get("delay_spread", 0.5 / sys_cfg.delta_f))
    return Scenario(n_paths=int(sc["n_paths"]), delay_spread=delay_spread,
                    doppler_max=doppler_max, on_grid=bool(sc.get("on_grid", False)))


def _trial_seed(master: int, sweep_idx: int, trial: int, purpose: int) -> list:
    return [master, sweep_idx, trial, purpose]


def _prediction_request(cfg: ExperimentConfig, sys_cfg: SystemConfig):
    horizon = cfg.prediction["horizon"]
    horizon_s = sys_cfg.delta_T if horizon == "delta_T" else float(horizon)
    return horizon_times(sys_cfg, horizon_s, int(cfg.prediction["n_samples"]))


def _run_estimator(name: str, options: dict, rx, dset, g_true, paths,
                   sys_cfg, grid, request, doppler_phase: str):
    """Returns (estimation_nmse_db, prediction_nmse_db, iterations)."""
    y, s, sigma_z = rx.y, rx.pilots, rx.noise_var
    opts = {k: v for k, v in options.items() if k != "name"}
    omega = OffGridParams.zeros(grid)

    if name == "hmp":
        res = hmp_run(y, s, sigma_z, dset, HmpOptions(**opts))
        h_hat, omega, g_est, iters = res.h_hat, res.omega, res.g_est, res.iterations_used
    elif name in ("em_bg_amp", "em_bg_amp_mmv"):
        res = em_bg_amp(y, s, dset.w_dense(), sigma_z, AmpOptions(**opts),
                        mmv=(name == "em_bg_amp_mmv"))
        h_hat, g_est, iters = res.h_hat, res.g_est, res.iterations_used
    elif name in ("omp", "somp"):
        k = int(opts.get("sparsity_k", len(paths)))
        stop_tol = opts.get("stop_tol")
        w = dset.w_dense()
        if name == "somp":
            res = somp(y, s, w, k, stop_tol=stop_tol)
            h_hat = res.embed(dset.n_cols)
            iters = len(res.support)
        else:
            cols = []
            iters = 0
            for l in range(y.shape[1]):
                r = omp(y[:, l], s, w, k, stop_tol=stop_tol)
                cols.append(r.embed(dset.n_cols)[:, 0])
                iters += len(r.support)
            h_hat = np.stack(cols, axis=1)
        g_est = w @ h_hat
    else:
        raise ConfigError(f"unknown estimator {name!r}")

    est_nmse = nmse(g_true, g_est)
    t0 = (sys_cfg.n_soundings - 1) * sys_cfg.delta_T
    truth = synth_fst_slice(paths, sys_cfg, t0 + request.horizon_times)
    pred = extrapolate(h_hat, omega, grid, sys_cfg, request,
                       doppler_phase=doppler_phase)
    pred_nmse = nmse(truth, pred)
    return est_nmse, pred_nmse, iters


def _run_trial(cfg: ExperimentConfig, sweep_idx: int, trial: int,
               sys_cfg: SystemConfig, snr_db: float, scenario: Scenario,
               grid: GridSpec, dset) -> list:
    master = cfg.master_seed
    paths = sample_paths(scenario, grid, sys_cfg,
                         seed=_trial_seed(master, sweep_idx, trial, 0))
    g_true = synth_fst_channel(paths, sys_cfg)
    pilots = make_pilots(sys_cfg, seed=_trial_seed(master, sweep_idx, trial, 2))
    rx = synth_received(g_true, pilots, snr_db,
                        seed=_trial_seed(master, sweep_idx, trial, 1))
    request = _prediction_request(cfg, sys_cfg)
    doppler_phase = cfg.prediction["doppler_phase"]

    rows = []
    for est in cfg.estimators:
        name = est["name"]
        started = time.perf_counter()
        try:
            est_nmse, pred_nmse, iters = _run_estimator(
                name, est, rx, dset, g_true, paths, sys_cfg, grid, request,
                doppler_phase)
            diverged = False
        except (HmpDivergence, RuntimeError):
            est_nmse, pred_nmse, iters, diverged = float("nan"), float("nan"), 0, True
        wall_ms = (time.perf_counter() - started) * 1e3
        rows.append({
            "sweep_value": cfg.sweep_values[sweep_idx],
            "estimator": name,
            "trial": trial,
            "seed": f"{master}:{sweep_idx}:{trial}",
            "estimation_nmse_db": est_nmse,
            "prediction_nmse_db": pred_nmse,
            "iterations_used": iters,
            "wall_time_ms": wall_ms,
            "divergence": diverged,
        })
    return rows


def _format_row(row: dict, record_timing: bool) -> list:
    def num(x):
        return "nan" if isinstance(x, float) and np.isnan(x) else format(x, ".10g")

    return [
        format(row["sweep_value"], ".10g") if isinstance(row["sweep_value"], float)
        else str(row["sweep_value"]),
        row["estimator"],
        str(row["trial"]),
        row["seed"],
        num(row["estimation_nmse_db"]),
        num(row["prediction_nmse_db"]),
        str(row["iterations_used"]),
        format(row["wall_time_ms"], ".3f") if record_timing else "",
        "1" if row["divergence"] else "0",
    ]


_SWEEP_CACHE: dict = {}


def _sweep_context(cfg: ExperimentConfig, sweep_idx: int):
    key = (id(cfg), sweep_idx)
    if key not in _SWEEP_CACHE:
        sys_cfg, snr_db = _system_for_sweep(cfg, cfg.sweep_values[sweep_idx])
        scenario = _scenario_for(cfg, sys_cfg)
        grid = GridSpec.from_config(sys_cfg)
        dset = build_dictionary(grid, sys_cfg)
        _SWEEP_CACHE.clear()  # keep at most one sweep point resident
        _SWEEP_CACHE[key] = (sys_cfg, snr_db, scenario, grid, dset)
    return _SWEEP_CACHE[key]


def _task(cfg: ExperimentConfig, sweep_idx: int, trial: int) -> list:
    sys_cfg, snr_db, scenario, grid, dset = _sweep_context(cfg, sweep_idx)
    return _run_trial(cfg, sweep_idx, trial, sys_cfg, snr_db, scenario, grid, dset)


def run_experiment(config_source, workers: int = 1, output_dir=None,
                   profile: str | None = None) -> dict:
    """Execute the configured sweep; write results.csv and manifest.yaml.

    Returns {"csv": path, "manifest": path, "rows": list}.
    """
    cfg = load_config(config_source)
    if profile:
        cfg.profile = profile
    if output_dir is not None:
        cfg.output_dir = str(output_dir)
    # validate every sweep point up front so config errors surface immediately
    for idx in range(len(cfg.sweep_values)):
        sys_cfg, _ = _system_for_sweep(cfg, cfg.sweep_values[idx])
        _scenario_for(cfg, sys_cfg)

    tasks = [(idx, trial)
             for idx in range(len(cfg.sweep_values))
             for trial in range(cfg.trials)]

    results: dict = {}
    if workers <= 1:
        for idx, trial in tasks:
            results[(idx, trial)] = _task(cfg, idx, trial)
    else:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            payload = [(cfg, idx, trial) for idx, trial in tasks]
            for (idx, trial), rows in zip(tasks, pool.starmap(_task, payload)):
                results[(idx, trial)] = rows

    est_order = {e["name"]: i for i, e in enumerate(cfg.estimators)}
    flat = [row
            for idx, trial in tasks
            for row in results[(idx, trial)]]
    flat.sort(key=lambda r: (cfg.sweep_values.index(r["sweep_value"]),
                             est_order[r["estimator"]], r["trial"]))

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in flat:
            writer.writerow(_format_row(row, cfg.record_timing))

    manifest_path = out_dir / "manifest.yaml"
    resolved = cfg.resolved()
    base = _base_system(cfg)
    canonical = yaml.safe_dump(resolved, sort_keys=True)
    manifest = {
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "code_version": __version__,
        "numpy_version": np.__version__,
        "config": resolved,
        "resolved_timing": {"delta_t_s": base.delta_t, "delta_T_s": base.delta_T},
        "estimators": cfg.estimators,
    }
    manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=True))
    return {"csv": str(csv_path), "manifest": str(manifest_path), "rows": flat}


def _read_rows(csv_path) -> list:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ValueError(f"unexpected CSV schema: {reader.fieldnames}")
        return list(reader)


def summarize(csv_path, out_path=None) -> list:
    """Aggregate mean/stddev NMSE per (sweep value, estimator).

    Means are taken on the linear scale and reported back in dB (energy-ratio
    semantics); stddev columns are on the linear scale.  Diverged trials are
    excluded and counted.
    """
    rows = _read_rows(csv_path)
    if not rows:
        raise ValueError("empty results CSV")
    groups: dict = {}
    order = []
    for r in rows:
        key = (r["sweep_value"], r["estimator"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)

    def lin(vals):
        return np.array([10.0 ** (float(v) / 10.0) for v in vals])

    out = []
    for key in order:
        grp = groups[key]
        ok = [r for r in grp if r["divergence"] == "0"
              and r["estimation_nmse_db"] != "nan"]
        est = lin([r["estimation_nmse_db"] for r in ok])
        pred = lin([r["prediction_nmse_db"] for r in ok])
        out.append({
            "sweep_value": key[0],
            "estimator": key[1],
            "n_trials": len(grp),
            "n_diverged": len(grp) - len(ok),
            "est_nmse_db_mean": 10 * np.log10(est.mean()) if est.size else float("nan"),
            "est_nmse_lin_std": est.std() if est.size else float("nan"),
            "pred_nmse_db_mean": 10 * np.log10(pred.mean()) if pred.size else float("nan"),
            "pred_nmse_lin_std": pred.std() if pred.size else float("nan"),
        })

    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(out[0].keys()))
            writer.writeheader()
            for row in out:
                writer.writerow({k: (format(v, ".10g") if isinstance(v, float) else v)
                                 for k, v in row.items()})
    return out


def replay(csv_path, row_index: int, manifest_path=None) -> dict:
    """Re-run the single trial behind one CSV row and compare its NMSE values.

    Returns {"recorded": ..., "recomputed": ..., "match": bool}.
    """
    rows = _read_rows(csv_path)
    if not 0 <= row_index < len(rows):
        raise IndexError(f"row {row_index} outside 0..{len(rows) - 1}")
    row = rows[row_index]
    manifest_path = manifest_path or Path(csv_path).parent / "manifest.yaml"
    manifest = yaml.safe_load(Path(manifest_path).read_text())
    cfg = load_config(manifest["config"])

    master, sweep_idx, trial = (int(x) for x in row["seed"].split(":"))
    if master != cfg.master_seed:
        raise ValueError("row seed does not match the manifest master_seed")
    all_rows = _task(cfg, sweep_idx, trial)
    match = [r for r in all_rows if r["estimator"] == row["estimator"]]
    if not match:
        raise ValueError(f"estimator {row['estimator']} not in config")
    new = match[0]
    recomputed = {"estimation_nmse_db": new["estimation_nmse_db"],
                  "prediction_nmse_db": new["prediction_nmse_db"]}
    recorded = {"estimation_nmse_db": float(row["estimation_nmse_db"]),
                "prediction_nmse_db": float(row["prediction_nmse_db"])}

    def close(a, b):
        return (np.isnan(a) and np.isnan(b)) or abs(a - b) <= 1e-6 * max(1.0, abs(b))

    ok = all(close(recorded[k], float(format(recomputed[k], ".10g")))
             for k in recorded)
    return {"recorded": recorded, "recomputed": recomputed, "match": ok}
