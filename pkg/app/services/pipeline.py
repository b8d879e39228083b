"""
End-to-end runs behind the CLI and the HTTP endpoints.
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

from pydantic import ValidationError

from app.core.errors import ConfigError, DataError, WatchError
from app.models.dataset import Dataset, FeatureMatrix
from app.schemas.findings import DatasetCreation, FindingsReport
from app.schemas.ida import IdaReport
from app.schemas.plan import DatasetOptions, RunConfig
from app.schemas.scenario import ScenarioSpec
from app.services import benchgen, cate, displays, hettest, ida, importance, render, report, tabular

logger = logging.getLogger(__name__)

FIGURES_DIR = "figures"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Log a pipeline stage and prefix its failures with the stage name, keeping the class"""
    logger.info(f"Stage {name} started")
    try:
        yield
    except WatchError as e:
        logger.error(f"Stage {name} failed: {e}")
        raise type(e)(f"{name}: {e}") from e
    except ValueError as e:
        logger.error(f"Stage {name} failed: {e}")
        raise ValueError(f"{name}: {e}") from e
    logger.info(f"Stage {name} finished")


def _write_json(path: Path, model) -> None:
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")


def create_analysis_dataset(raw: Dataset, options: Optional[DatasetOptions] = None) -> tuple[Dataset, DatasetCreation]:
    """Impute, merge sparse levels, drop non-informative covariates"""
    options = options or DatasetOptions()
    imputed_cells = {c.name: c.n_missing for c in raw.covariate_columns() if c.n_missing}
    ds = tabular.impute_baseline(raw, options.missing_indicators)
    indicators = [name for name in ds.covariates if name not in raw.covariates]
    merged = tabular.sparse_levels(ds, options.min_frac)
    ds = tabular.merge_sparse_levels(ds, options.min_frac)
    ds, dropped = tabular.drop_noninformative(ds, options.max_dominance)
    if not ds.covariates:
        raise DataError("no informative covariates left after analysis-dataset creation")
    logger.info(f"Analysis dataset: {ds.n_rows} rows, {len(ds.covariates)} covariates, dropped {dropped}")
    return ds, DatasetCreation(n_rows=ds.n_rows, covariates=list(ds.covariates), dropped=dropped,
                               merged_levels=merged, imputed_cells=imputed_cells, indicators=indicators)


def run_ida(config: RunConfig, out_dir: Union[str, Path]) -> IdaReport:
    """IDA report and figures on the raw data; the treatment effect is not looked at"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("tabular"):
        raw = tabular.load_csv(config.data_path, config.plan)
    with stage("ida"):
        result = ida.ida_report(raw, config.dataset.max_dominance)
    with stage("render"):
        manifest = render.render_all(render.ida_figures(raw, result), out_dir / FIGURES_DIR)
    result.figures = [f"{FIGURES_DIR}/{entry.svg}" for entry in manifest.figures]
    _write_json(out_dir / "ida_report.json", result)
    logger.info(f"IDA report written to {out_dir}")
    return result


def analyze(config: RunConfig, raw: Dataset, out_dir: Union[str, Path]) -> FindingsReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = config.plan
    with stage("tabular"):
        ds, creation = create_analysis_dataset(raw, config.dataset)

    with stage("cate"):
        folds = cate.assign_folds(ds, plan.k_folds, plan.seed)
        po = cate.pseudo_outcomes(ds, folds, config.learners, config.clip_epsilon, plan.propensity)
        po.write_csv(out_dir / "pseudo_outcomes.csv")
        cate_summary = cate.cate_summary(po, plan.propensity)

    with stage("hettest"):
        het = hettest.global_test(ds, po, plan.n_permutations, plan.seed)

    with stage("importance"):
        imp = importance.importance_report(FeatureMatrix.from_dataset(ds), po.phi, plan.n_trees, plan.seed,
                                           plan.bootstrap_reps, config.importance)

    with stage("displays"):
        section = displays.display_section(ds, po, imp, config.displays)
        figures = render.findings_figures(imp, section.group_effects, section.curves)
        section.manifest = render.render_all(figures, out_dir / FIGURES_DIR)

    with stage("report"):
        entries = report.credibility(plan, ds, po.phi, imp.ranking, imp.top_k, het.verbal)
        findings = FindingsReport(
            seed=plan.seed,
            dataset=creation,
            het_test=het,
            importance=imp,
            displays=section,
            cate=cate_summary,
            credibility=entries,
            consistency=report.consistency(entries),
            rules=report.RULES,
        )
        findings.sensitivity = report.compare_sensitivity(findings, config.sensitivity, config.base_dir)
        write_findings(findings, out_dir)
    return findings


def write_findings(findings: FindingsReport, out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    _write_json(out_dir / "findings.json", findings)
    (out_dir / "findings.md").write_text(report.render_markdown(findings), encoding="utf-8")
    logger.info(f"Findings written to {out_dir}")


def run_analyze(config: RunConfig, out_dir: Union[str, Path]) -> FindingsReport:
    """Pseudo-outcomes, global test, importance, displays and the findings report"""
    with stage("tabular"):
        raw = tabular.load_csv(config.data_path, config.plan)
    return analyze(config, raw, out_dir)


def run_simulate(spec: ScenarioSpec, out_dir: Union[str, Path]) -> benchgen.GeneratedTrial:
    """Simulated trial.csv and its truth.csv"""
    with stage("benchgen"):
        trial = benchgen.generate(spec)
        trial.write(out_dir)
    return trial


def run_report(config: RunConfig, out_dir: Union[str, Path]) -> FindingsReport:
    """Re-render findings.md from an existing findings.json, refreshing the sensitivity comparison"""
    out_dir = Path(out_dir)
    path = out_dir / "findings.json"
    with stage("report"):
        try:
            findings = FindingsReport.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"no findings.json in {out_dir}; run analyze first") from e
        except ValidationError as e:
            raise ConfigError(f"{path} is not a findings report: {e}") from e
        findings.sensitivity = report.compare_sensitivity(findings, config.sensitivity, config.base_dir)
        write_findings(findings, out_dir)
    return findings
