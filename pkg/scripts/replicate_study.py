#!/usr/bin/env python3
"""
Replicate studies over simulated trials.

    calibration  constant effect (tau0 = 0.2): rejection rate of the global test
    power        heterogeneous effect: p-value distribution of the global test
    ranking      heterogeneous effect: rank of X1 and X14, interaction importance of (X1, X14)

Writes one CSV row per replicate and a JSON summary into --out.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from joblib import Parallel, delayed  # noqa: E402

from app.core.config import settings  # noqa: E402
from app.core.rng import derive_seed  # noqa: E402
from app.models.dataset import FeatureMatrix  # noqa: E402
from app.schemas.plan import ImportanceOptions, LearnerConfig  # noqa: E402
from app.schemas.scenario import Homogeneous, ScenarioSpec, SubgroupHeterogeneous  # noqa: E402
from app.services import benchgen, cate, hettest, importance  # noqa: E402
from app.services.pipeline import create_analysis_dataset  # noqa: E402

logger = logging.getLogger(__name__)

STUDIES = ("calibration", "power", "ranking")
LEVEL = 0.05


def replicate(study: str, r: int, args: argparse.Namespace) -> dict[str, Any]:
    seed = derive_seed(args.seed, study, r)
    effect = Homogeneous(tau0=0.2) if study == "calibration" else SubgroupHeterogeneous()
    trial = benchgen.generate(ScenarioSpec(n=args.n, seed=seed, effect=effect), n_jobs=1)
    ds, _ = create_analysis_dataset(trial.dataset)

    folds = cate.assign_folds(ds, args.k_folds, seed)
    override = trial.oracle() if args.oracle else None
    po = cate.pseudo_outcomes(ds, folds, LearnerConfig(), override=override, n_jobs=1)
    test = hettest.global_test(ds, po, args.permutations, seed, n_jobs=1)
    row: dict[str, Any] = {"replicate": r, "seed": seed, "p_value": test.p_value, "verbal": test.verbal.value}

    if study == "ranking":
        report = importance.importance_report(
            FeatureMatrix.from_dataset(ds), po.phi, args.trees, seed, bootstrap_reps=0,
            options=ImportanceOptions(pd_covariates=0), n_jobs=1,
        )
        row["rank_X1"] = report.rank_of("X1")
        row["rank_X14"] = report.rank_of("X14")
        names, vint = report.vint_names, np.asarray(report.vint)
        off_diagonal = vint[~np.eye(len(names), dtype=bool)]
        row["vint_X1_X14"] = (vint[names.index("X1"), names.index("X14")]
                              if "X1" in names and "X14" in names else None)
        row["vint_median"] = float(np.median(off_diagonal)) if off_diagonal.size else None
        row["top1"] = report.ranking[0]
    return row


def summarize(study: str, frame: pd.DataFrame) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "study": study,
        "replicates": int(len(frame)),
        "median_p": float(frame["p_value"].median()),
        f"rejection_rate_{LEVEL}": float((frame["p_value"] <= LEVEL).mean()),
    }
    if study == "ranking":
        top1 = frame["top1"].value_counts()
        summary["most_frequent_top1"] = str(top1.index[0])
        summary["x1_top2_rate"] = float((frame["rank_X1"] <= 2).mean())
        summary["x14_top5_rate"] = float((frame["rank_X14"] <= 5).mean())
        detected = frame["vint_X1_X14"].notna() & (frame["vint_X1_X14"] > frame["vint_median"])
        summary["interaction_detected_rate"] = float(detected.mean())
    return summary


def run_study(study: str, args: argparse.Namespace) -> dict[str, Any]:
    logger.info(f"Running {study} study: {args.replicates} replicates of n={args.n}")
    rows = Parallel(n_jobs=args.jobs)(delayed(replicate)(study, r, args) for r in range(args.replicates))
    frame = pd.DataFrame(rows)
    args.out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out / f"{study}.csv", index=False, float_format="%.17g", lineterminator="\n")
    summary = summarize(study, frame)
    logger.info(f"{study}: {summary}")
    return summary


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Replicate studies over simulated trials")
    parser.add_argument("study", choices=STUDIES + ("all",))
    parser.add_argument("--replicates", type=int, default=200)
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--permutations", type=int, default=999)
    parser.add_argument("--trees", type=int, default=500)
    parser.add_argument("--k-folds", type=int, default=5)
    parser.add_argument("--seed", type=int, default=20240101)
    parser.add_argument("--oracle", action="store_true", help="Use the true nuisance functions")
    parser.add_argument("--jobs", type=int, default=settings.N_JOBS)
    parser.add_argument("--out", type=Path, default=Path(settings.OUTPUT_DIR) / "replicates")
    args = parser.parse_args(argv)

    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)
    studies = STUDIES if args.study == "all" else (args.study,)
    summaries = [run_study(study, args) for study in studies]
    (args.out / "summary.json").write_text(json.dumps(summaries, indent=2) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
