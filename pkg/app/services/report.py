"""
Credibility-annotated findings.

Data-driven findings are set against the covariates and evidence declared before the
analysis; the global homogeneity test frames how much weight the ranking can carry.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from app.models.dataset import Dataset
from app.models.enums import (
    CredibilityNote,
    DirectionMatch,
    EvidenceCategory,
    ExpectedDirection,
    VerbalCategory,
)
from app.schemas.findings import CovariateCredibility, FindingsReport, SensitivityResult
from app.schemas.plan import AnalysisPlan, SensitivitySlot

logger = logging.getLogger(__name__)

SUPPORTED_EVIDENCE = (EvidenceCategory.MODERATE, EvidenceCategory.HIGH)
WEAK_EVIDENCE = (EvidenceCategory.NONE, EvidenceCategory.LOW)
WEAK_VERBAL = (VerbalCategory.LOW, VerbalCategory.MODERATE)

RULES = [
    "high credibility: among the top-k, moderate or high a-priori evidence, observed direction matches "
    "the pre-declared one, and the global evidence against homogeneity is noteworthy or stronger",
    "notable: among the top-k with moderate or high a-priori evidence otherwise",
    "low credibility: among the top-k with no or low a-priori evidence while the global evidence "
    "against homogeneity is low or moderate",
    "unsupported: every other top-k finding",
    "covariates outside the top-k carry no note and are listed for consistency",
]


def credibility_note(evidence: EvidenceCategory, rank: Optional[int], top_k: int, direction_match: DirectionMatch,
                     verbal: VerbalCategory) -> Optional[CredibilityNote]:
    if rank is None or rank > top_k:
        return None
    if evidence in SUPPORTED_EVIDENCE:
        if direction_match == DirectionMatch.MATCH and verbal.rank >= VerbalCategory.NOTEWORTHY.rank:
            return CredibilityNote.HIGH_CREDIBILITY
        return CredibilityNote.NOTABLE
    if evidence in WEAK_EVIDENCE and verbal in WEAK_VERBAL:
        return CredibilityNote.LOW_CREDIBILITY
    return CredibilityNote.UNSUPPORTED


def observed_direction(ds: Dataset, name: str, phi: np.ndarray) -> Optional[ExpectedDirection]:
    """
    Sign of the association between the pseudo-outcome and a covariate: the correlation
    for a continuous covariate, mean phi over the non-reference levels minus mean phi at
    the first level for a categorical one. None when there is no contrast.
    """
    col = ds.column(name)
    if col.is_categorical:
        codes = col.codes()
        reference, others = phi[codes == 0], phi[codes > 0]
        if not reference.size or not others.size:
            return None
        contrast = float(others.mean() - reference.mean())
    else:
        x = col.values - col.values.mean()
        contrast = float(x @ (phi - phi.mean()))
    if contrast > 0:
        return ExpectedDirection.POSITIVE
    if contrast < 0:
        return ExpectedDirection.NEGATIVE
    return None


def direction_match(expected: ExpectedDirection, observed: Optional[ExpectedDirection]) -> DirectionMatch:
    if expected == ExpectedDirection.UNSPECIFIED or observed is None:
        return DirectionMatch.UNSPECIFIED
    return DirectionMatch.MATCH if expected == observed else DirectionMatch.MISMATCH


def credibility(plan: AnalysisPlan, ds: Dataset, phi: np.ndarray, ranking: Sequence[str], top_k: int,
                verbal: VerbalCategory) -> list[CovariateCredibility]:
    """One entry per plan covariate, in plan order"""
    ranks = {name: i + 1 for i, name in enumerate(ranking)}
    entries = []
    for covariate in plan.covariates:
        analyzed = covariate.name in ranks
        rank = ranks.get(covariate.name)
        observed = observed_direction(ds, covariate.name, phi) if analyzed else None
        match = direction_match(covariate.expected_direction, observed)
        entries.append(CovariateCredibility(
            name=covariate.name,
            evidence=covariate.evidence,
            expected_direction=covariate.expected_direction,
            source=covariate.source,
            analyzed=analyzed,
            rank=rank,
            in_top_k=rank is not None and rank <= top_k,
            observed_direction=observed,
            direction_match=match,
            note=credibility_note(covariate.evidence, rank, top_k, match, verbal),
        ))
    return entries


def consistency(entries: Sequence[CovariateCredibility]) -> list[str]:
    """Plan covariates with a-priori evidence that did not make the top-k"""
    return [e.name for e in entries if not e.in_top_k and e.evidence != EvidenceCategory.NONE]


def compare_sensitivity(report: FindingsReport, slots: Sequence[SensitivitySlot],
                        base_dir: Optional[Union[str, Path]] = None) -> list[SensitivityResult]:
    """Compare the main findings with each user-provided rerun"""
    top = set(report.importance.ranking[:report.importance.top_k])
    results = []
    for slot in slots:
        path = Path(slot.findings)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        result = SensitivityResult(label=slot.label, description=slot.description, findings=slot.findings,
                                   available=False)
        try:
            rerun = FindingsReport.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            result.error = "findings file not found"
        except (ValidationError, ValueError) as e:
            result.error = f"findings file is not a valid report: {e.__class__.__name__}"
        else:
            rerun_top = set(rerun.importance.ranking[:rerun.importance.top_k])
            result.available = True
            result.p_value = rerun.het_test.p_value
            result.verbal = rerun.het_test.verbal
            result.verbal_changed = rerun.het_test.verbal != report.het_test.verbal
            result.top_k_overlap = len(top & rerun_top)
        if not result.available:
            logger.warning(f"Sensitivity run {slot.label}: {result.error}")
        results.append(result)
    return results


def _g(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4g}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def render_markdown(report: FindingsReport) -> str:
    """Findings as Markdown: global test first, then importance, displays and credibility"""
    test, imp = report.het_test, report.importance
    lines = [
        "# Treatment effect heterogeneity findings",
        "",
        "## Global evidence against homogeneity",
        "",
        f"- p-value: {_g(test.p_value)} ({test.n_permutations} permutations, seed {test.seed})",
        f"- surprise: {test.surprise:.2f} bits, as many heads in a row from a fair coin",
        f"- verbal category: **{test.verbal.value}**",
        f"- maximum standardized statistic: {_g(test.statistic)}",
        "",
        "The p-value is read on a continuum; the verbal category describes its size, not a decision.",
        "",
    ]
    if test.verbal in WEAK_VERBAL:
        lines += [
            f"> **Caution.** The evidence against a homogeneous treatment effect is {test.verbal.value}. "
            "Rankings and displays below are exploratory; findings without a-priori external evidence "
            "are of low credibility and need to be interpreted cautiously.",
            "",
        ]

    lines += ["## Variable importance", ""]
    values = dict(zip(imp.names, imp.vimp))
    lines += _table(["rank", "covariate", "importance"],
                    [[str(i + 1), name, _g(values[name])] for i, name in enumerate(imp.ranking[:imp.top_k])])
    lines += [""]
    if imp.stability is not None:
        lines.append(f"Selection stability of the top {imp.top_k} over bootstrap resamples: {imp.stability:.3f}")
    else:
        lines.append("Selection stability over bootstrap resamples is undefined for this run.")
    lines += ["", "### Strongest pairwise interactions", ""]
    k = len(imp.vint_names)
    pairs = sorted(((imp.vint[i][j], imp.vint_names[i], imp.vint_names[j])
                    for i in range(k) for j in range(i + 1, k)), key=lambda t: -t[0])[:5]
    if pairs:
        lines += _table(["pair", "interaction importance"], [[f"{a} x {b}", _g(v)] for v, a, b in pairs])
    else:
        lines.append("Fewer than two covariates ranked; no interactions.")
    lines += [""]

    lines += ["## Effect displays", ""]
    for table in report.displays.group_effects:
        lines += [f"### By {' x '.join(table.covariates)}", ""]
        lines += _table(
            ["group", "n", "effect", "95% interval", "mean pseudo-outcome"],
            [[" / ".join(g.labels), str(g.n), _g(g.effect) if g.effect_defined else "undefined (single arm)",
              f"{_g(g.ci_low)} to {_g(g.ci_high)}", _g(g.pseudo_mean)] for g in table.groups],
        )
        lines += [""]
    for curve in report.displays.curves:
        stratum = f" ({curve.stratum})" if curve.stratum else ""
        lines.append(f"- effect curve over {curve.covariate}{stratum}: natural spline df={curve.df}, "
                     f"local regression span={curve.span}")
    if report.displays.manifest.figures:
        lines += ["", "Figures:", ""]
        lines += [f"- `{entry.svg}`: {entry.title}" for entry in report.displays.manifest.figures]
    lines += [""]

    lines += ["## Credibility of findings", ""]
    lines += _table(
        ["covariate", "rank", "evidence", "expected", "observed", "direction", "note"],
        [[e.name, str(e.rank) if e.rank is not None else "not analyzed", e.evidence.value,
          e.expected_direction.value, e.observed_direction.value if e.observed_direction else "n/a",
          e.direction_match.value, e.note.value if e.note else "-"] for e in report.credibility],
    )
    lines += [""]
    if report.consistency:
        lines += ["Pre-declared covariates outside the top findings: " + ", ".join(report.consistency), ""]

    ate = report.cate.ate
    lines += [
        "## Pseudo-outcomes",
        "",
        f"- {report.cate.k_folds}-fold cross-fitting, {report.cate.propensity.value} propensity, "
        f"{report.cate.n_clipped} values clipped at {report.cate.clip_epsilon}",
        f"- mean pseudo-outcome (average effect): {_g(ate.estimate)} "
        f"(95% interval {_g(ate.ci_low)} to {_g(ate.ci_high)}, n={ate.n})",
        "",
        "## Analysis dataset",
        "",
        f"- {report.dataset.n_rows} rows, {len(report.dataset.covariates)} covariates analyzed",
        f"- dropped as non-informative: {', '.join(report.dataset.dropped) or 'none'}",
        f"- imputed cells: {sum(report.dataset.imputed_cells.values())}",
        "",
    ]

    if report.sensitivity:
        lines += ["## Sensitivity analyses", ""]
        lines += _table(
            ["label", "p-value", "verbal", "category changed", f"top-{imp.top_k} overlap"],
            [[s.label, _g(s.p_value), s.verbal.value if s.verbal else "n/a",
              "n/a" if s.verbal_changed is None else ("yes" if s.verbal_changed else "no"),
              "n/a" if s.top_k_overlap is None else str(s.top_k_overlap)] if s.available
             else [s.label, "unavailable", s.error or "", "", ""] for s in report.sensitivity],
        )
        lines += [""]

    lines += ["## Credibility rules", ""]
    lines += [f"- {rule}" for rule in report.rules]
    return "\n".join(lines) + "\n"
