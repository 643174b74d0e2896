"""Pipeline orchestration: ingest -> fit -> poststratify -> figure -> manifest."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import SurveySchema, load_cell_table, load_survey, validate_compatibility
from .figure import FigureOptions, emit_state_grid_figure
from .inference.hmc import fit_hmc
from .inference.optimize import fit_map, fit_mmle
from .inference.results import SamplerConfig, diagnostics_json, save_fit
from .model import ModelSpec, survey_data
from .poststrat import estimate_series
from .replication.manifest import POST, PRE, canonical_json, verify_manifest, write_manifest

log = logging.getLogger(__name__)

METHODS = ("map", "mmle", "hmc")
SEED_ENV = "MRP_SEED"


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class LockError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    survey: str
    cell_table: str
    out_dir: str
    schema: dict | None = None
    spec: dict | None = None  # ModelSpec.to_dict(); default spec when None
    method: str = "hmc"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tolerance: float | None = None
    figure: FigureOptions = field(default_factory=FigureOptions)
    survey_id: str = ""
    allow_unconverged: bool = False
    prereg: bool = False
    pre_manifest: str | None = None
    statement: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, not {self.method!r}")

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec.default() if self.spec is None else ModelSpec.from_dict(self.spec)

    @property
    def survey_schema(self) -> SurveySchema:
        return SurveySchema() if self.schema is None else SurveySchema.from_dict(self.schema)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "sampler" in d and isinstance(d["sampler"], dict):
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        if "figure" in d and isinstance(d["figure"], dict):
            d["figure"] = FigureOptions.from_dict(d["figure"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["sampler"] = asdict(self.sampler)
        d["figure"] = asdict(self.figure)
        return d

    def config_texts(self):
        """Canonical texts hashed into the manifest (paths excluded)."""
        return {
            "model_spec": canonical_json(self.model_spec.to_dict()),
            "sampler_config": canonical_json(asdict(self.sampler)),
            "schema_config": canonical_json(self.survey_schema.to_dict()),
            "run_options": canonical_json({
                "method": self.method, "tolerance": self.tolerance, "figure": asdict(self.figure),
                "survey_id": self.survey_id,
            }),
        }


def default_seed(fallback=0):
    """Seed from the environment (only used when no seed is configured)."""
    raw = os.environ.get(SEED_ENV)
    return fallback if raw in (None, "") else int(raw)


def fit_model(data, method, sampler: SamplerConfig, tolerance=None):
    if method == "map":
        return fit_map(data, tolerance=tolerance or 1e-5, seed=sampler.seed)
    if method == "mmle":
        return fit_mmle(data, tolerance=tolerance or 1e-4, seed=sampler.seed)
    if method == "hmc":
        return fit_hmc(data, sampler)
    raise ValueError(f"unknown method {method!r}")


class _Lock:
    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"{self.path} exists: another run is using this directory") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


@dataclass
class RunResult:
    out_dir: Path
    files: dict
    converged: bool
    allow_unconverged: bool = False
    fit: object = None
    warnings: list = field(default_factory=list)

    @property
    def exit_code(self):
        return 0 if self.converged or self.allow_unconverged else 3


def _stage(name, fn, *args, **kw):
    log.info("stage %s", name)
    try:
        return fn(*args, **kw)
    except (PipelineError, LockError):
        raise
    except Exception as exc:  # surfaced with the stage name
        raise PipelineError(name, exc) from exc


def ingest(config: PipelineConfig):
    if not Path(config.cell_table).is_file():
        raise FileNotFoundError(f"cell table not found: {config.cell_table}")
    if not Path(config.survey).is_file():
        raise FileNotFoundError(f"survey not found: {config.survey}")
    table = load_cell_table(config.cell_table)
    meta = {"survey": config.survey_id or Path(config.survey).stem}
    data = load_survey(config.survey, config.survey_schema, meta=meta)
    report = validate_compatibility(data, table)
    for w in report.warnings:
        log.warning("compatibility: %s", w)
    return data, table, report


def run_pipeline(config: PipelineConfig, timestamp=None) -> RunResult:
    """Execute every stage into ``config.out_dir``.

    Outputs: estimates.csv, diagnostics.json, figure.svg (+ figure.csv),
    fit.json, draws.csv (full Bayes only), compatibility.json and the pre/
    post manifests. On any stage failure, files written by this run are
    removed and PipelineError names the stage.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    with _Lock(out):
        try:
            return _run(config, out, written, timestamp)
        except BaseException:
            for p in written.values():
                Path(p).unlink(missing_ok=True)
            raise


def _run(config, out, written, timestamp):
    texts = config.config_texts()
    if config.prereg:
        pre_path = Path(config.pre_manifest or out / "manifest-pre.json")
        _stage("manifest", verify_manifest, pre_path, configs=texts)
    else:
        pre_path = out / "manifest-pre.json"
        _stage("manifest", write_manifest, PRE, pre_path, configs=texts, statement=config.statement,
               timestamp=timestamp)
        written["manifest_pre"] = pre_path

    data, table, report = _stage("ingest", ingest, config)
    p = out / "compatibility.json"
    p.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    written["compatibility"] = p

    spec = config.model_spec
    binom = _stage("fit", survey_data, data, spec, table.state_share)
    fit = _stage("fit", fit_model, binom, config.method, config.sampler, config.tolerance)
    for w in fit.warnings:
        log.warning("fit: %s", w)
    for p in _stage("fit", save_fit, fit, out):
        written[p.stem] = p
    p = out / "diagnostics.json"
    p.write_text(diagnostics_json(fit), encoding="utf-8")
    written["diagnostics"] = p

    series = _stage("poststratify", estimate_series, fit, table, data,
                    survey_id=config.survey_id or data.source_meta.get("survey", ""))
    p = out / "estimates.csv"
    series.to_csv(p)
    written["estimates"] = p

    svg, csv_path, _ = _stage("figure", emit_state_grid_figure, series, out / "figure.svg", config.figure,
                              table.state_share)
    written["figure"] = svg
    written["figure_csv"] = csv_path

    outputs = {k: v for k, v in written.items() if not k.startswith("manifest")}
    post = out / "manifest-post.json"
    _stage("manifest", write_manifest, POST, post, outputs=outputs, pre_manifest=pre_path, timestamp=timestamp)
    written["manifest_post"] = post
    if not fit.converged and not config.allow_unconverged:
        log.error("fit did not converge; outputs kept for inspection, exit status nonzero")
    return RunResult(out, dict(written), fit.converged, config.allow_unconverged, fit, list(fit.warnings))


def load_config(path, overrides=None) -> PipelineConfig:
    """JSON config file; relative paths resolve against its directory."""
    path = Path(path)
    d = json.loads(path.read_text(encoding="utf-8"))
    for key in ("survey", "cell_table", "out_dir", "pre_manifest"):
        if d.get(key) and not Path(d[key]).is_absolute():
            d[key] = str(path.parent / d[key])
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k.startswith("sampler."):
            d.setdefault("sampler", {})[k.split(".", 1)[1]] = v
        elif k.startswith("figure."):
            d.setdefault("figure", {})[k.split(".", 1)[1]] = v
        else:
            d[k] = v
    return PipelineConfig.from_dict(d)
