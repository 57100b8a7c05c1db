"""Configured experiment runner: data, BLA, initialisations, fits, evaluation.

A run lives in one output directory::

    config.json                  full configuration with every default filled in
    manifest.json                versions, config hash, seeds, per-stage status and errors
    data/                        estimation and test records (CSV + JSON side-car)
    models/bla.json              the BLA (LtiStateSpace)
    models/init/*.json           initial NL-LFR models, index.json holds their start states
    models/fit/*.json            fitted NL-LFR models, one per structure and seed
    models/best_nz*_nw*.json     per structure, the fit with the lowest estimation cost
    reports/*.json, *_cost.csv   FitReports and their cost traces
    metrics.csv                  one row per model (schema below)
    plots/residual_time_*.csv    measured, simulated and error signals per test set
    plots/residual_spectrum_*.csv  DFT magnitudes (dB) of output and error per test set

``metrics.csv`` columns are ``dataset, model, n_z, n_w, seed, selected,
rmse_estimation`` followed by ``rmse_<test name>`` for each configured test
set.  For several outputs the RMSE is pooled over channels.  The BLA row
has ``n_z = n_w = 0`` and an empty seed.  ``rmse_estimation`` is the RMSE
minimised by the fit (start state included); test RMSEs follow the test
protocol of :mod:`lfrid.metrics`.

Each stage reads what the previous ones wrote, so they can be rerun one at
a time from the command line.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .boucwen import SWEEP_BAND, SWEEP_RATE, BoucWenParams, make_boucwen_dataset
from .errors import ConfigError, DivergedAt, InvalidSpec, LfrIdError
from .initialize import InitSpec, init_nllfr, periodic_x0
from .lm import LmOptions, fit_nllfr
from .lti import BlaOptions, LtiStateSpace, estimate_bla, simulate_lti
from .metrics import MODES, evaluate_model, residual_spectrum, residual_trace, rmse
from .nllfr import NlLfrModel
from .signals import SignalRecord, load_record, save_record

log = logging.getLogger(__name__)

STAGES = ("generate", "bla", "init", "fit", "eval")


# -- configuration -------------------------------------------------------------

@dataclass
class TestSetConfig:
    """One test record.

    For generated Bouc-Wen data ``kind``, ``seed`` and ``amplitude_rms``
    define the excitation; for external data ``path`` points at a CSV.
    """

    name: str
    mode: str = "steady-state"
    discard_n: int = 2000
    kind: str = "multisine"
    seed: int = 2
    amplitude_rms: float = 50.0
    path: Optional[str] = None


def _default_tests() -> list:
    # the sweep amplitude is a 40 N peak sine, i.e. 40/sqrt(2) N rms
    return [TestSetConfig("multisine", "steady-state", 0, "multisine", 2, 50.0),
            TestSetConfig("sweep", "transient", 2000, "sweep", 3, 40.0 / np.sqrt(2.0))]


@dataclass
class DataConfig:
    source: str = "boucwen"
    estimation_seed: int = 1
    amplitude_rms: float = 50.0
    settle_periods: int = 2
    noise_std: float = 0.0
    boucwen: dict = field(default_factory=lambda: BoucWenParams().as_dict())
    estimation_path: Optional[str] = None
    n_u: Optional[int] = None
    n_y: Optional[int] = None
    tests: list = field(default_factory=_default_tests)


@dataclass
class ModelConfig:
    structures: list = field(default_factory=lambda: [[1, 1], [2, 1], [2, 2]])
    n_n: int = 15
    activation: str = "tanh"
    restarts: int = 5
    seeds: Optional[list] = None
    bound: float = 1.0
    estimate_x0: bool = True

    def seed_list(self) -> list:
        return list(self.seeds) if self.seeds is not None else list(range(self.restarts))


@dataclass
class ExperimentConfig:
    name: str = "boucwen"
    data: DataConfig = field(default_factory=DataConfig)
    bla: BlaOptions = field(default_factory=BlaOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    lm: LmOptions = field(default_factory=lambda: LmOptions(max_iter=1000))
    workers: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["tests"] = [asdict(t) for t in self.data.tests]
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        """Build a config from (possibly partial) JSON data; unknown keys are errors.

        Relative paths are resolved against ``base_dir``.
        """
        d = dict(d)
        try:
            data = dict(d.pop("data", {}))
            tests = data.pop("tests", None)
            data_cfg = _build(DataConfig, data, "data")
            if tests is not None:
                data_cfg.tests = [_build(TestSetConfig, t, f"data.tests[{i}]")
                                  for i, t in enumerate(tests)]
            cfg = cls(data=data_cfg,
                      bla=_build(BlaOptions, d.pop("bla", {}), "bla"),
                      model=_build(ModelConfig, d.pop("model", {}), "model"),
                      lm=_build(LmOptions, {"max_iter": 1000, **d.pop("lm", {})}, "lm"))
            for key, value in d.items():
                if key not in ("name", "workers"):
                    raise ConfigError(f"unknown config key {key!r}")
                setattr(cfg, key, value)
        except InvalidSpec as err:
            raise ConfigError(str(err)) from err
        if base_dir is not None:
            cfg.resolve_paths(Path(base_dir))
        return cfg

    def resolve_paths(self, base: Path) -> None:
        def res(p):
            return None if p is None else str((base / p).resolve())

        self.data.estimation_path = res(self.data.estimation_path)
        for t in self.data.tests:
            t.path = res(t.path)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    try:
        return cls(**d)
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from err


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


def _csv_channels(path: str) -> tuple[int, int]:
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    return sum(h.startswith("u") for h in header), sum(h.startswith("y") for h in header)


def validate_config(cfg: ExperimentConfig) -> None:
    """Cheap consistency checks, run before any computation.

    Raises
    ------
    ConfigError
        On any inconsistency, including missing files and channel counts
        of external CSV data that disagree with ``data.n_u`` / ``data.n_y``.
    """
    d, m = cfg.data, cfg.model
    if d.source not in ("boucwen", "csv"):
        raise ConfigError(f"data.source must be 'boucwen' or 'csv', not {d.source!r}")
    if m.restarts < 1:
        raise ConfigError("model.restarts must be at least 1")
    if m.seeds is not None and len(m.seeds) != m.restarts:
        raise ConfigError("model.seeds must list exactly model.restarts seeds")
    if not m.structures or any(len(s) != 2 or min(s) < 1 for s in m.structures):
        raise ConfigError("model.structures must be a list of [n_z, n_w] pairs >= 1")
    try:
        for n_z, n_w in m.structures:
            InitSpec(n_z, n_w, m.n_n, m.activation, 0, m.bound)
    except InvalidSpec as err:
        raise ConfigError(str(err)) from err
    if cfg.bla.n_x < 1:
        raise ConfigError("bla.n_x must be at least 1 for an NL-LFR initialisation")
    if cfg.workers is not None and cfg.workers < 1:
        raise ConfigError("workers must be positive")
    names = [t.name for t in d.tests]
    if len(set(names)) != len(names) or "estimation" in names:
        raise ConfigError("test set names must be unique and differ from 'estimation'")
    for t in d.tests:
        if t.mode not in MODES:
            raise ConfigError(f"test {t.name!r}: mode must be one of {MODES}")
        if t.mode == "transient" and t.discard_n < 0:
            raise ConfigError(f"test {t.name!r}: discard_n must be >= 0")
    if d.source == "boucwen":
        try:
            BoucWenParams(**d.boucwen)
        except (TypeError, InvalidSpec) as err:
            raise ConfigError(f"data.boucwen: {err}") from err
        for t in d.tests:
            if t.kind not in ("multisine", "sweep"):
                raise ConfigError(f"test {t.name!r}: kind must be multisine or sweep")
        return
    if d.estimation_path is None:
        raise ConfigError("data.estimation_path is required for csv data")
    paths = [("estimation", d.estimation_path)] + [(t.name, t.path) for t in d.tests]
    expected = None
    for name, p in paths:
        if p is None or not Path(p).exists():
            raise ConfigError(f"data file for {name!r} not found: {p}")
        n_u, n_y = _csv_channels(p)
        if (d.n_u is not None and n_u != d.n_u) or (d.n_y is not None and n_y != d.n_y):
            raise ConfigError(f"{p} has {n_u} input / {n_y} output columns, config expects "
                              f"{d.n_u} / {d.n_y}")
        if n_u < 1 or n_y < 1:
            raise ConfigError(f"{p} needs at least one u* and one y* column")
        if expected is not None and (n_u, n_y) != expected:
            raise ConfigError(f"{p} channel counts differ from the estimation record")
        expected = (n_u, n_y)


# -- manifest --------------------------------------------------------------------

def _versions() -> dict:
    import numba
    import scipy

    return {"lfrid": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "platform": platform.platform()}


class Manifest:
    """Machine-readable record of a run, rewritten after every change."""

    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.path = out / "manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {}
        cfg_dict = cfg.to_dict()
        digest = hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()
        self.data.update({"config": cfg_dict, "config_sha256": digest,
                          "versions": _versions()})
        self.data.setdefault("stages", {})
        self.save()

    def stage(self, name: str, **info) -> None:
        entry = self.data["stages"].setdefault(name, {})
        entry.update(info)
        self.save()

    def save(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# -- stages -------------------------------------------------------------------------

def _tag(n_z, n_w, seed=None) -> str:
    return f"nz{n_z}_nw{n_w}" + ("" if seed is None else f"_seed{seed}")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise LfrIdError(f"{path} is missing; run the '{stage}' stage first")
    return path


def _load_data(out: Path, cfg: ExperimentConfig):
    est = load_record(_require(out / "data" / "estimation.csv", "generate"))
    tests = {t.name: load_record(_require(out / "data" / f"test_{t.name}.csv", "generate"))
             for t in cfg.data.tests}
    return est, tests


def stage_generate(cfg: ExperimentConfig, out: Path, man: Manifest) -> dict:
    """Simulate the Bouc-Wen records, or copy external CSV data into the run."""
    d = cfg.data
    records = {}
    if d.source == "boucwen":
        p = BoucWenParams(**d.boucwen)
        common = dict(params=p, settle_periods=d.settle_periods, noise_std=d.noise_std)
        records["estimation"] = (make_boucwen_dataset(d.estimation_seed, d.amplitude_rms,
                                                      "multisine", **common),
                                 {"seed": d.estimation_seed, "kind": "multisine",
                                  "amplitude_rms": d.amplitude_rms})
        for t in d.tests:
            meta = {"seed": t.seed, "kind": t.kind, "amplitude_rms": t.amplitude_rms}
            if t.kind == "sweep":
                meta.update(band_hz=list(SWEEP_BAND), rate_hz_per_min=SWEEP_RATE)
            records[f"test_{t.name}"] = (make_boucwen_dataset(t.seed, t.amplitude_rms, t.kind,
                                                              **common), meta)
        for key in records:
            records[key][1].update(boucwen=p.as_dict(), noise_std=d.noise_std,
                                   settle_periods=d.settle_periods)
    else:
        records["estimation"] = (load_record(d.estimation_path), {"source": d.estimation_path})
        for t in d.tests:
            records[f"test_{t.name}"] = (load_record(t.path), {"source": t.path})
    n_ch = {(r.n_u, r.n_y) for r, _ in records.values()}
    if len(n_ch) != 1:
        raise ConfigError(f"records disagree on channel counts: {sorted(n_ch)}")
    for key, (rec, meta) in records.items():
        save_record(rec, out / "data" / key, meta)
    return {k: {"n_samples": r.n_samples, "n_u": r.n_u, "n_y": r.n_y,
                "excitation": r.excitation} for k, (r, _) in records.items()}


def _bla_start(bla: LtiStateSpace, est: SignalRecord) -> np.ndarray:
    """Start state for the BLA on the estimation record: periodic steady
    state for a multisine period, rest otherwise."""
    if est.excitation == "multisine":
        return periodic_x0(bla, est.u[:est.period_length])
    return np.zeros(bla.n_x)


def stage_bla(cfg: ExperimentConfig, out: Path, man: Manifest) -> dict:
    est, _ = _load_data(out, cfg)
    bla, rep = estimate_bla(est, cfg.bla, return_report=True)
    (out / "models").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    bla.save(out / "models" / "bla.json")
    rep.save(out / "reports" / "bla.json")
    if rep.cost:
        rep.save_cost_csv(out / "reports" / "bla_cost.csv")
    return {"termination": rep.termination, "warning": rep.warning, "n_iter": max(rep.n_iter, 0)}


def stage_init(cfg: ExperimentConfig, out: Path, man: Manifest) -> dict:
    est, _ = _load_data(out, cfg)
    bla = LtiStateSpace.load(_require(out / "models" / "bla.json", "bla"))
    x0_bla = _bla_start(bla, est)
    m = cfg.model
    folder = out / "models" / "init"
    folder.mkdir(parents=True, exist_ok=True)
    index, failures = [], []
    for n_z, n_w in m.structures:
        for seed in m.seed_list():
            spec = InitSpec(n_z, n_w, m.n_n, m.activation, seed, m.bound)
            tag = _tag(n_z, n_w, seed)
            try:
                model, tr = init_nllfr(bla, est.u, spec, x0=x0_bla, return_transforms=True)
            except LfrIdError as err:
                failures.append({"model": tag, "error": type(err).__name__, "message": str(err)})
                continue
            model.save(folder / f"{tag}.json")
            index.append({"tag": tag, "n_z": n_z, "n_w": n_w, "seed": seed,
                          "x0": tr.x0.tolist()})
    (folder / "index.json").write_text(json.dumps(index, indent=2))
    if not index:
        raise LfrIdError("every initialisation failed")
    return {"n_models": len(index), "failures": failures}


def _fit_one(entry: dict, init: NlLfrModel, est: SignalRecord, cfg: ExperimentConfig):
    t0 = time.perf_counter()
    model, rep = fit_nllfr(init, est, cfg.lm, estimate_x0=cfg.model.estimate_x0,
                           x0=np.asarray(entry["x0"]))
    rep.seeds = {"init": entry["seed"]}
    rep.options = asdict(cfg.lm)
    return model, rep, time.perf_counter() - t0


def stage_fit(cfg: ExperimentConfig, out: Path, man: Manifest) -> dict:
    """Run all fits concurrently and pick, per structure, the lowest estimation cost."""
    est, _ = _load_data(out, cfg)
    folder = out / "models" / "init"
    index = json.loads(_require(folder / "index.json", "init").read_text())
    inits = {e["tag"]: NlLfrModel.load(folder / f"{e['tag']}.json") for e in index}
    workers = cfg.workers or min(len(index), os.cpu_count() or 1)
    fit_dir = out / "models" / "fit"
    fit_dir.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)

    results, failures = {}, []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {e["tag"]: pool.submit(_fit_one, e, inits[e["tag"]], est, cfg) for e in index}
        for e in index:
            tag = e["tag"]
            try:
                model, rep, secs = futures[tag].result()
            except LfrIdError as err:
                failures.append({"model": tag, "error": type(err).__name__, "message": str(err)})
                log.warning("fit %s failed: %s", tag, err)
                continue
            model.save(fit_dir / f"{tag}.json")
            rep.save(out / "reports" / f"fit_{tag}.json")
            rep.save_cost_csv(out / "reports" / f"fit_{tag}_cost.csv")
            results[tag] = {"n_z": e["n_z"], "n_w": e["n_w"], "seed": e["seed"],
                            "final_cost": rep.final_cost, "initial_cost": rep.initial_cost,
                            "termination": rep.termination, "n_iter": rep.n_iter,
                            "seconds": round(secs, 3)}
            log.info("fit %s: %s, rmse %.3e -> %.3e", tag, rep.termination,
                     np.sqrt(rep.initial_cost), np.sqrt(rep.final_cost))
    if not results:
        raise LfrIdError("every fit failed")

    selection = {}
    for n_z, n_w in cfg.model.structures:
        cands = [(r["final_cost"], r["seed"], tag) for tag, r in results.items()
                 if (r["n_z"], r["n_w"]) == (n_z, n_w)]
        if not cands:
            continue
        _, seed, tag = min(cands)
        best = _tag(n_z, n_w)
        NlLfrModel.load(fit_dir / f"{tag}.json").save(out / "models" / f"best_{best}.json")
        selection[best] = {"tag": tag, "seed": seed}
    (out / "models" / "selection.json").write_text(json.dumps(selection, indent=2))
    return {"fits": results, "failures": failures, "selection": selection, "workers": workers}


def _write_table(path: Path, header, table) -> None:
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.10g")


def stage_eval(cfg: ExperimentConfig, out: Path, man: Manifest) -> dict:
    est, tests = _load_data(out, cfg)
    bla = LtiStateSpace.load(_require(out / "models" / "bla.json", "bla"))
    selection = json.loads(_require(out / "models" / "selection.json", "fit").read_text())
    chosen = {v["tag"] for v in selection.values()}
    plots = out / "plots"
    plots.mkdir(exist_ok=True)

    y_bla = simulate_lti(bla, est.u, _bla_start(bla, est))[0]
    rows = [{"model": "bla", "n_z": 0, "n_w": 0, "seed": "", "selected": True,
             "rmse_estimation": float(np.sqrt(np.mean(rmse(est.y, y_bla) ** 2)))}]
    evaluated = [("bla", bla, rows[0])]
    fit_dir = out / "models" / "fit"
    for n_z, n_w in cfg.model.structures:
        for seed in cfg.model.seed_list():
            tag = _tag(n_z, n_w, seed)
            if not (fit_dir / f"{tag}.json").exists():
                continue
            rep = json.loads((out / "reports" / f"fit_{tag}.json").read_text())
            cost = min(c for c, a in zip(rep["cost"], rep["accepted"]) if a)
            row = {"model": "nllfr", "n_z": n_z, "n_w": n_w, "seed": seed,
                   "selected": tag in chosen, "rmse_estimation": float(np.sqrt(cost))}
            rows.append(row)
            evaluated.append((tag, NlLfrModel.load(fit_dir / f"{tag}.json"), row))

    problems = []
    for tag, model, row in evaluated:
        for t in cfg.data.tests:
            key = f"rmse_{t.name}"
            try:
                ev = evaluate_model(model, tests[t.name], t.mode, t.discard_n)
            except DivergedAt as err:
                row[key] = float("nan")
                problems.append({"model": tag, "test": t.name, "diverged_at": err.k})
                continue
            row[key] = ev.total_rmse
            if row["selected"]:
                name = "bla" if tag == "bla" else f"nllfr_{tag.rsplit('_seed', 1)[0]}"
                _write_table(plots / f"residual_time_{name}_{t.name}.csv", *residual_trace(ev))
                _write_table(plots / f"residual_spectrum_{name}_{t.name}.csv",
                             *residual_spectrum(ev))

    columns = ["dataset", "model", "n_z", "n_w", "seed", "selected", "rmse_estimation"] + \
        [f"rmse_{t.name}" for t in cfg.data.tests]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, columns)
        w.writeheader()
        for row in rows:
            w.writerow({"dataset": cfg.name, **{k: _fmt(v) for k, v in row.items()}})
    return {"n_models": len(rows), "diverged": problems}


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else v


STAGE_FUNCS = {"generate": stage_generate, "bla": stage_bla, "init": stage_init,
               "fit": stage_fit, "eval": stage_eval}


def run_stage(name: str, cfg: ExperimentConfig, out) -> dict:
    """Run one stage, recording its outcome in the manifest.

    Errors are written to the manifest and then re-raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    man = Manifest(out, cfg)
    man.stage(name, status="running", started=time.strftime("%Y-%m-%dT%H:%M:%S"))
    t0 = time.perf_counter()
    try:
        validate_config(cfg)
        info = STAGE_FUNCS[name](cfg, out, man)
    except Exception as err:
        man.stage(name, status="failed", error=type(err).__name__, message=str(err),
                  seconds=round(time.perf_counter() - t0, 3))
        raise
    man.stage(name, status="ok", seconds=round(time.perf_counter() - t0, 3), **info)
    return info


def run_pipeline(cfg: ExperimentConfig, out) -> Path:
    """All stages in order.  Returns the run directory."""
    validate_config(cfg)
    for name in STAGES:
        run_stage(name, cfg, out)
    return Path(out)


def read_metrics(path) -> list[dict]:
    """Rows of a metrics table with numeric fields converted."""
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            for k, v in row.items():
                if k.startswith("rmse_"):
                    row[k] = float(v)
                elif k in ("n_z", "n_w"):
                    row[k] = int(v)
                elif k == "seed":
                    row[k] = int(v) if v != "" else None
                elif k == "selected":
                    row[k] = v == "True"
            rows.append(row)
    return rows


__all__ = ["ExperimentConfig", "DataConfig", "ModelConfig", "TestSetConfig", "load_config",
           "validate_config", "run_stage", "run_pipeline", "read_metrics", "STAGES"]
