"""End-to-end pipeline: matching, reconstruction, fitting and cross-validation.

Every scenario is written to a temporary directory first, its files are
checked against their schemas, and only then is the directory moved into
place, so a failure never leaves a half-written scenario behind.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
import os
import re
import shutil
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from . import __version__
from .crossval import (
    CV_FIELDS,
    CVSummary,
    compare_cv,
    take_one_out,
    write_comparison_csv,
    write_cv_csv,
    write_forest_csv,
)
from .errors import ConfigurationError, InputError, SurrexError, ValidationError
from .evidence import (
    EvidenceBase,
    EvidenceClass,
    StudyRecord,
    build_evidence_base,
    parse_classes,
    read_studies_csv,
    write_studies_csv,
)
from .ipd import ArmCurve, derive_effect_pair, read_curve_csv, read_risk_csv
from .matching import (
    DEFAULT_COVARIATES,
    derive_threshold,
    match_studies,
    rct_arm_pairs,
    read_arms_csv,
    read_covariate_spec,
    write_match_report,
)
from .mcmc.diagnostics import write_autocorr_csv, write_summary_csv, write_trace_csv
from .mcmc.sampler import SamplerConfig
from .surrogacy.config import MODELS, ModelConfig
from .surrogacy.models import SurrogacyFit, fit_model, stream_key, write_parameter_csv

__all__ = [
    "Scenario",
    "PipelineConfig",
    "RunManifest",
    "ScatterData",
    "run_pipeline",
    "collect_evidence",
    "emit_scatter_data",
    "write_scatter_data",
    "load_pipeline_config",
    "stage",
]

log = logging.getLogger(__name__)

PARAMETER_FIELDS = ["parameter", "estimate", "statistic", "cri_low", "cri_high", "mean", "median", "sd", "rhat", "ess"]
SCATTER_FIELDS = ["study_id", "class", "y1", "se1", "y2", "se2"]

_SCENARIO_NAMES = {
    frozenset({EvidenceClass.RCT}): "RCT",
    frozenset({EvidenceClass.RCT, EvidenceClass.CRWE}): "RCT+cRWE",
    frozenset({EvidenceClass.RCT, EvidenceClass.CRWE, EvidenceClass.SRWE}): "RCT+cRWE+sRWE",
}


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any error escaping the block with the stage it came from."""
    try:
        yield
    except SurrexError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
        raise
    except OSError as exc:
        err = InputError(f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
        err.stage = name
        raise err from exc


@dataclass(frozen=True)
class Scenario:
    name: str
    classes: frozenset[EvidenceClass]

    @classmethod
    def parse(cls, raw: str | Mapping[str, Any]) -> "Scenario":
        if isinstance(raw, str):
            classes = parse_classes(raw)
            return cls(_SCENARIO_NAMES.get(classes, raw.replace(",", "+")), classes)
        classes = parse_classes(raw.get("classes", []))
        name = raw.get("name") or _SCENARIO_NAMES.get(classes) or "+".join(sorted(c.value for c in classes))
        if not re.fullmatch(r"[A-Za-z0-9_.+-]+", name):
            raise ConfigurationError(f"scenario name {name!r} is not a safe directory name")
        return cls(name, classes)


@dataclass
class PipelineConfig:
    """Everything one pipeline run needs. Paths are absolute after loading."""

    studies: Path | None = None
    scale: str = "log"
    arms: Path | None = None
    covariates: Path | None = None
    threshold: float | None = None
    curves: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)
    scenarios: list[Scenario] = field(default_factory=lambda: [Scenario.parse("RCT")])
    models: list[str] = field(default_factory=lambda: ["dh"])
    model_config: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cv_sampler: SamplerConfig = field(default_factory=SamplerConfig.cv_default)
    cross_validate: bool = True
    cv_models: list[str] | None = None
    trace_every: int = 10
    out: Path = Path("surrex-out")
    raw: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ConfigurationError("at least one scenario is required")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigurationError("scenario names must be unique")
        for m in self.models:
            if m not in MODELS:
                raise ConfigurationError(f"unknown model {m!r}")
        if self.studies is None and self.arms is None:
            raise ConfigurationError("config needs a studies file, an arms file, or both")
        for p in (self.studies, self.arms, self.covariates):
            if p is not None and not Path(p).is_file():
                raise InputError(f"file not found: {p}")
        if self.trace_every < 1:
            raise ConfigurationError("trace_every must be >= 1")

    @property
    def seed(self) -> int:
        return self.sampler.seed

    def with_overrides(self, seed: int | None = None, out: str | Path | None = None,
                       iterations: int | None = None, burn_in: int | None = None) -> "PipelineConfig":
        sampler = self.sampler.replace(seed=seed, iterations=iterations, burn_in=burn_in)
        cv_sampler = self.cv_sampler.replace(seed=seed)
        raw = dict(self.raw)
        raw["_overrides"] = {"seed": seed, "iterations": iterations, "burn_in": burn_in}
        return PipelineConfig(
            studies=self.studies, scale=self.scale, arms=self.arms, covariates=self.covariates,
            threshold=self.threshold, curves=self.curves, scenarios=self.scenarios, models=self.models,
            model_config=self.model_config, sampler=sampler, cv_sampler=cv_sampler,
            cross_validate=self.cross_validate, cv_models=self.cv_models, trace_every=self.trace_every,
            out=Path(out) if out is not None else self.out, raw=raw,
        )

    def digest(self) -> str:
        """Hash of the settings that determine the outputs."""
        payload = {
            "raw": self.raw,
            "sampler": self.sampler.to_dict(),
            "cv_sampler": self.cv_sampler.to_dict(),
            "model_config": self.model_config.to_dict(),
            "inputs": {
                str(p): hashlib.sha256(Path(p).read_bytes()).hexdigest()
                for p in self._input_files()
            },
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    def _input_files(self) -> list[Path]:
        files = [p for p in (self.studies, self.arms, self.covariates) if p is not None]
        for arm in self.curves.values():
            for ep in arm.values():
                for key in ("curve", "risk"):
                    if ep.get(key):
                        p = Path(ep[key])
                        if p.is_file():
                            files.append(p)
        return sorted(files)


def _resolve(base: Path, value: str | None) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Read a pipeline JSON config; relative paths are resolved against it.

    Keys: studies, scale, arms, covariates, threshold, curves, scenarios,
    models, model_config, sampler, cv_sampler, cross_validate, cv_models,
    trace_every, out.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be an object")
    known = {"studies", "scale", "arms", "covariates", "threshold", "curves", "scenarios", "models",
             "model_config", "sampler", "cv_sampler", "cross_validate", "cv_models", "trace_every", "out",
             "seed", "description"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    here = path.parent
    curves = {}
    for arm_id, endpoints in (raw.get("curves") or {}).items():
        curves[arm_id] = {}
        for ep, spec in endpoints.items():
            if ep not in ("pfs", "os"):
                raise ConfigurationError(f"curves[{arm_id}]: unknown endpoint {ep!r}")
            spec = dict(spec)
            if "n_start" not in spec:
                raise ConfigurationError(f"curves[{arm_id}][{ep}]: n_start is required")
            spec["curve"] = _resolve(here, spec.get("curve"))
            spec["risk"] = _resolve(here, spec.get("risk"))
            curves[arm_id][ep] = spec
    sampler = SamplerConfig.from_dict(raw.get("sampler"))
    if "seed" in raw:
        sampler = sampler.replace(seed=int(raw["seed"]))
    cv_sampler = SamplerConfig.from_dict(raw.get("cv_sampler"), SamplerConfig.cv_default(seed=sampler.seed))
    scenarios = [Scenario.parse(s) for s in raw.get("scenarios", ["RCT"])]
    threshold = raw.get("threshold")
    return PipelineConfig(
        studies=_resolve(here, raw.get("studies")),
        scale=raw.get("scale", "log"),
        arms=_resolve(here, raw.get("arms")),
        covariates=_resolve(here, raw.get("covariates")),
        threshold=None if threshold is None else float(threshold),
        curves=curves,
        scenarios=scenarios,
        models=list(raw.get("models", ["dh"])),
        model_config=ModelConfig.from_dict(raw.get("model_config")),
        sampler=sampler,
        cv_sampler=cv_sampler,
        cross_validate=bool(raw.get("cross_validate", True)),
        cv_models=raw.get("cv_models"),
        trace_every=int(raw.get("trace_every", 10)),
        out=_resolve(here, raw.get("out", "surrex-out")),
        raw=raw,
    )


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    sampler: dict[str, int] = field(default_factory=dict)
    cv_sampler: dict[str, int] = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    status: str = "ok"

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ScatterData:
    rows: list[dict[str, Any]]
    lambda0: float
    lambda1: float


def emit_scatter_data(base: EvidenceBase, fit: SurrogacyFit | None) -> ScatterData:
    """Observed effect pairs by class plus the fitted line (posterior means)."""
    if fit is None or fit.sample.n_draws == 0 or not fit.sample.draws:
        raise ValidationError("scatter data needs a fitted model with retained draws")
    rows = [
        {"study_id": s.study_id, "class": s.evidence.value, "y1": s.effects.y1, "se1": s.effects.se1,
         "y2": s.effects.y2, "se2": s.effects.se2}
        for s in base.studies
    ]
    return ScatterData(rows, float(fit.sample["lambda0"].mean()), float(fit.sample["lambda1"].mean()))


def write_scatter_data(directory: Path, data: ScatterData) -> None:
    with (directory / "scatter.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_FIELDS)
        for r in data.rows:
            w.writerow([r["study_id"], r["class"]] + [repr(float(r[k])) for k in SCATTER_FIELDS[2:]])
    (directory / "scatter_line.json").write_text(
        json.dumps({"lambda0": data.lambda0, "lambda1": data.lambda1}, indent=2) + "\n"
    )


# -- schema checks ------------------------------------------------------------


def _check_csv(path: Path, fields: Sequence[str], numeric: Sequence[str]) -> None:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(fields):
            raise ValidationError(f"{path.name}: header {header} does not match schema {list(fields)}")
        idx = [fields.index(c) for c in numeric]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(fields):
                raise ValidationError(f"{path.name}:{lineno}: expected {len(fields)} fields")
            for i in idx:
                if not math.isfinite(float(row[i])):
                    raise ValidationError(f"{path.name}:{lineno}: non-finite {fields[i]}")


def _check_json(path: Path, keys: Sequence[str]) -> None:
    data = json.loads(path.read_text())
    missing = [k for k in keys if k not in data]
    if missing:
        raise ValidationError(f"{path.name}: missing keys {missing}")


_SCHEMAS = {
    "parameters.csv": lambda p: _check_csv(p, PARAMETER_FIELDS, PARAMETER_FIELDS[3:]),
    "diagnostics.csv": lambda p: _check_csv(
        p, ["parameter", "mean", "median", "sd", "cri_low", "cri_high", "rhat", "ess", "skewness", "point"],
        ["mean", "median", "sd", "cri_low", "cri_high", "ess"]),
    "verdict.json": lambda p: _check_json(p, ["intercept_zero", "slope_nonzero", "cond_var_small", "overall"]),
    "convergence.json": lambda p: _check_json(p, ["passed", "failures"]),
    "cv.csv": lambda p: _check_csv(p, CV_FIELDS, CV_FIELDS[1:]),
    "forest.csv": lambda p: _check_csv(p, ["study_id", "kind", "estimate", "lo", "hi"], ["estimate", "lo", "hi"]),
    "cv_summary.json": lambda p: _check_json(p, ["discrepancy_median", "width_ratio_median", "coverage_fraction"]),
    "scatter.csv": lambda p: _check_csv(p, SCATTER_FIELDS, SCATTER_FIELDS[2:]),
    "scatter_line.json": lambda p: _check_json(p, ["lambda0", "lambda1"]),
    "studies.csv": lambda p: None,
    "trace.csv": lambda p: None,
    "autocorr.csv": lambda p: None,
}


def _validate_tree(root: Path) -> None:
    for path in sorted(root.rglob("*")):
        if path.is_file():
            check = _SCHEMAS.get(path.name)
            if check is None:
                raise ValidationError(f"no schema registered for output {path.name}")
            check(path)


@contextlib.contextmanager
def _atomic_dir(final: Path) -> Iterator[Path]:
    tmp = final.parent / f".{final.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
        _validate_tree(tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


# -- stages ---------------------------------------------------------------------


def _match_and_reconstruct(cfg: PipelineConfig, out: Path, manifest: RunManifest) -> list[StudyRecord]:
    specs = read_covariate_spec(cfg.covariates) if cfg.covariates else list(DEFAULT_COVARIATES)
    arms = read_arms_csv(cfg.arms, specs)
    pairs, singles = rct_arm_pairs(arms)
    threshold = derive_threshold(pairs, specs, cfg.threshold)
    treat = [a for a in singles if a.role == "treatment"]
    ctrl = [a for a in singles if a.role == "control"]
    result = match_studies(treat, ctrl, specs, threshold)
    with _atomic_dir(out / "matching") as tmp:
        write_match_report(result, tmp)
        _SCHEMAS.setdefault("match_matrix.csv", lambda p: None)
        _SCHEMAS.setdefault("match_report.csv", lambda p: _check_csv(
            p, ["treatment_arm", "control_arm", "distance", "candidate", "final"], ["distance"]))
        _SCHEMAS.setdefault("match_summary.json", lambda p: _check_json(p, ["threshold", "pairs"]))
    manifest.outputs.append("matching/")
    records = []
    for t_id, c_id, _ in result.pairs:
        curves: dict[str, dict[str, ArmCurve]] = {"pfs": {}, "os": {}}
        for role, arm_id in (("treatment", t_id), ("control", c_id)):
            spec = cfg.curves.get(arm_id)
            if spec is None:
                raise InputError(f"no curve files configured for matched arm {arm_id}")
            for ep in ("pfs", "os"):
                ep_spec = spec.get(ep)
                if ep_spec is None or ep_spec.get("curve") is None:
                    raise InputError(f"missing {ep.upper()} curve file for arm {arm_id}")
                curve = read_curve_csv(ep_spec["curve"], int(ep_spec["n_start"]), ep_spec.get("total_events"))
                risk = read_risk_csv(ep_spec["risk"]) if ep_spec.get("risk") else None
                curves[ep][role] = ArmCurve(curve, risk)
        effects = derive_effect_pair(curves)
        sid = f"{t_id}~{c_id}"
        records.append(StudyRecord(sid, f"{t_id} vs {c_id}", EvidenceClass.SRWE, effects, "reconstructed", (t_id, c_id)))
    return records


def _write_fit(directory: Path, fit: SurrogacyFit, base: EvidenceBase, trace_every: int) -> None:
    write_parameter_csv(directory / "parameters.csv", fit)
    write_summary_csv(directory / "diagnostics.csv", fit.summaries)
    (directory / "verdict.json").write_text(json.dumps(fit.verdict().to_dict(), indent=2, sort_keys=True) + "\n")
    conv = fit.convergence()
    (directory / "convergence.json").write_text(json.dumps(
        {"passed": conv.passed, "failures": conv.failures, "message": conv.message(),
         "accept_rate": {k: [float(x) for x in v] for k, v in fit.sample.accept_rate.items()}},
        indent=2, sort_keys=True) + "\n")
    core = {n: fit.draws(n) for n in fit.parameter_names() if "[" not in n}
    write_trace_csv(directory / "trace.csv", core, every=trace_every)
    write_autocorr_csv(directory / "autocorr.csv", core)
    if fit.model == "dh":
        write_scatter_data(directory, emit_scatter_data(base, fit))


def _write_cv(directory: Path, cv: CVSummary) -> None:
    write_cv_csv(directory / "cv.csv", cv)
    write_forest_csv(directory / "forest.csv", cv)
    (directory / "cv_summary.json").write_text(json.dumps(cv.to_dict(), indent=2, sort_keys=True) + "\n")


def collect_evidence(cfg: PipelineConfig, out: Path, manifest: RunManifest | None = None) -> EvidenceBase:
    """Reported studies plus the sRWE studies built by matching and reconstruction.

    The matching report is written under ``out / "matching"``.
    """
    manifest = manifest if manifest is not None else RunManifest("", cfg.seed, __version__)
    records: list[StudyRecord] = []
    t0 = time.perf_counter()
    with stage("ingest"):
        if cfg.studies is not None:
            records += read_studies_csv(cfg.studies, cfg.scale)
    manifest.timings["ingest"] = round(time.perf_counter() - t0, 3)
    if cfg.arms is not None:
        t0 = time.perf_counter()
        with stage("match+reconstruct"), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            records += _match_and_reconstruct(cfg, out, manifest)
        manifest.warnings += [str(w.message) for w in caught]
        manifest.timings["match+reconstruct"] = round(time.perf_counter() - t0, 3)
    with stage("evidence"):
        return build_evidence_base(records)


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Run every configured stage and write outputs under ``cfg.out``."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config_hash=cfg.digest(), seed=cfg.seed, version=__version__, started=started,
        sampler=cfg.sampler.to_dict(), cv_sampler=cfg.cv_sampler.to_dict(),
    )

    def clock(name: str, t0: float) -> None:
        manifest.timings[name] = round(time.perf_counter() - t0, 3)

    try:
        base_all = collect_evidence(cfg, out, manifest)
        with _atomic_dir(out / "evidence") as tmp:
            write_studies_csv(tmp / "studies.csv", base_all.studies)
        manifest.outputs.append("evidence/studies.csv")

        cv_models = cfg.cv_models if cfg.cv_models is not None else list(cfg.models)
        cv_by_model: dict[str, list[CVSummary]] = {}
        for scenario in cfg.scenarios:
            t0 = time.perf_counter()
            with stage(f"scenario {scenario.name}"):
                base = base_all.filter(scenario.classes)
                with _atomic_dir(out / "scenarios" / scenario.name) as tmp:
                    for model in cfg.models:
                        if model == "pnf-bias" and set(base.counts()) and all(
                            s.evidence is EvidenceClass.RCT for s in base.studies
                        ):
                            msg = f"scenario {scenario.name}: skipped pnf-bias (no non-RCT studies)"
                            log.warning(msg)
                            manifest.warnings.append(msg)
                            continue
                        mc = cfg.model_config.with_model(model)
                        key = (stream_key(scenario.name), stream_key(model))
                        with stage(f"fit {scenario.name}/{model}"):
                            fit = fit_model(base, mc, cfg.sampler, key)
                        mdir = tmp / model
                        mdir.mkdir()
                        _write_fit(mdir, fit, base, cfg.trace_every)
                        conv = fit.convergence()
                        if not conv.passed:
                            manifest.warnings.append(f"{scenario.name}/{model}: {conv.message()}")
                        if cfg.cross_validate and model in cv_models:
                            with stage(f"cv {scenario.name}/{model}"):
                                cv = take_one_out(base, mc, cfg.cv_sampler, label=scenario.name, stream=key)
                            _write_cv(mdir, cv)
                            cv_by_model.setdefault(model, []).append(cv)
            manifest.outputs.append(f"scenarios/{scenario.name}/")
            clock(f"scenario {scenario.name}", t0)

        for model, summaries in cv_by_model.items():
            if len(summaries) >= 2:
                path = out / f"cv_comparison_{model}.csv"
                write_comparison_csv(path, compare_cv(summaries))
                manifest.outputs.append(path.name)
    except SurrexError:
        manifest.status = "error"
        manifest.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
        manifest.write(out / "manifest.json")
        raise
    manifest.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest.write(out / "manifest.json")
    return manifest
