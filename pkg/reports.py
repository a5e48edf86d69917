"""
Reports Module
Stage manifests, the results table with regressors as columns, and the merged
report.json / report.csv written at the end of a run.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from errors import MissingFile, MixedArtifacts
from prediction import REGRESSOR_KINDS
from utils import (read_artifact_csv, read_artifact_json, sha256_file, sha256_tree,
                   write_artifact_csv, write_artifact_json)

logger = logging.getLogger(__name__)

REPORT_METRICS = (('MAE', 'mae'), ('RMSE', 'rmse'), ('MAE (seconds)', 'mae_s'))


def input_hashes(paths: Sequence[Path]) -> Dict[str, str]:
    """SHA-256 of every input file or directory tree, keyed by path."""
    hashes = {}
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        hashes[path.as_posix()] = sha256_tree(path) if path.is_dir() else sha256_file(path)
    return hashes


def write_stage_manifest(run_dir, stage: str, config_hash: str, inputs: Sequence[Path],
                         outputs: Sequence[Path], summary: Optional[Mapping[str, Any]] = None) -> Path:
    """
    Record what a stage read and wrote.

    Args:
        run_dir: Run directory
        stage: Stage name
        config_hash: Hash of the run configuration
        inputs: Files or directories read by the stage
        outputs: Files written by the stage
        summary: Optional stage-specific counts

    Returns:
        Path of manifests/<stage>.json
    """
    run_dir = Path(run_dir)
    payload = {
        'stage': stage,
        'inputs': input_hashes(inputs),
        'outputs': sorted(Path(p).relative_to(run_dir).as_posix() if Path(p).is_relative_to(run_dir)
                          else Path(p).as_posix() for p in outputs),
        'summary': dict(summary or {}),
    }
    return write_artifact_json(payload, run_dir / 'manifests' / f"{stage}.json", config_hash)


def check_hashes(hashes: Mapping[str, Optional[str]], expected: Optional[str] = None) -> str:
    """
    Ensure every artifact was produced by the same configuration.

    Args:
        hashes: Artifact name -> recorded config hash
        expected: Hash the artifacts must carry, when known

    Returns:
        The common hash
    """
    found = dict(hashes)
    missing = [name for name, value in found.items() if not value]
    if missing:
        raise MixedArtifacts(f"Artifacts without a config hash: {', '.join(sorted(missing))}")
    distinct = set(found.values()) | ({expected} if expected else set())
    if len(distinct) != 1:
        detail = ', '.join(f"{name}={value[:12]}" for name, value in sorted(found.items()))
        raise MixedArtifacts(f"Artifacts come from different configurations: {detail}"
                             + (f" (expected {expected[:12]})" if expected else ''))
    return distinct.pop()


def results_table(aggregate: pd.DataFrame, regressors: Sequence[str] = REGRESSOR_KINDS) -> pd.DataFrame:
    """
    Aggregate scores with one row per metric and one column per regressor.

    Regressors missing from the aggregate appear with empty cells.
    """
    indexed = aggregate.set_index('regressor') if len(aggregate) else pd.DataFrame()
    rows = []
    for label, column in REPORT_METRICS:
        row = {'metric': label}
        for kind in regressors:
            has_value = kind in indexed.index and column in indexed.columns
            row[kind] = float(indexed.loc[kind, column]) if has_value else np.nan
        rows.append(row)
    return pd.DataFrame(rows, columns=['metric'] + list(regressors))


def build_report(evaluation: Mapping[str, Any], analysis: Mapping[str, Any],
                 regressors: Sequence[str] = REGRESSOR_KINDS) -> Dict[str, Any]:
    """
    Merge evaluation and analysis artifacts into one report.

    Args:
        evaluation: Parsed evaluation.json
        analysis: Parsed analysis.json
        regressors: Column order of the results table

    Returns:
        Report dictionary; the caller adds the config hash on write
    """
    config_hash = check_hashes({'evaluation.json': evaluation.get('config_hash'),
                                'analysis.json': analysis.get('config_hash')})
    aggregate = pd.DataFrame(evaluation.get('aggregate', []))
    table = results_table(aggregate, regressors)
    missing = [kind for kind in regressors if table[kind].isna().all()]
    if missing:
        logger.warning(f"No scores for regressor(s): {', '.join(missing)}")
    return {
        'config_hash': config_hash,
        'results': table.to_dict(orient='records'),
        'aggregate': evaluation.get('aggregate', []),
        'participants': evaluation.get('participants', []),
        'skipped': evaluation.get('skipped', {}),
        'seed': evaluation.get('seed'),
        'ablation': evaluation.get('ablation', []),
        'analysis': {key: value for key, value in analysis.items() if key != 'config_hash'},
    }


def write_report(run_dir, regressors: Sequence[str] = REGRESSOR_KINDS) -> Dict[str, Path]:
    """
    Write report.json and report.csv from the run's evaluation and analysis artifacts.

    Returns:
        Name -> written path
    """
    run_dir = Path(run_dir)
    paths = {name: run_dir / name for name in ('evaluation.json', 'analysis.json')}
    for path in paths.values():
        if not path.exists():
            raise MissingFile(path)
    evaluation = read_artifact_json(paths['evaluation.json'])
    analysis = read_artifact_json(paths['analysis.json'])
    csv_hashes = {}
    for name in ('predictions.csv', 'importance.csv'):
        if (run_dir / name).exists():
            _, csv_hashes[name] = read_artifact_csv(run_dir / name, nrows=0)
    report = build_report(evaluation, analysis, regressors)
    check_hashes(csv_hashes, report['config_hash'])

    config_hash = report.pop('config_hash')
    json_path = write_artifact_json(report, run_dir / 'report.json', config_hash)
    csv_path = write_artifact_csv(pd.DataFrame(report['results']), run_dir / 'report.csv', config_hash)
    logger.info(f"Wrote report for configuration {config_hash[:12]}")
    return {'report.json': json_path, 'report.csv': csv_path}


def report_digest(run_dir) -> str:
    """Hash of report.json, used to compare runs."""
    return sha256_file(Path(run_dir) / 'report.json')
