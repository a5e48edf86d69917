"""
Command Line Module
Runs the pipeline stages (simulate, ingest, label, features, train, evaluate,
analyze, report) from a TOML run configuration.
"""

import argparse
import json
import logging
import os
import sys
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from joblib import Parallel, delayed

import analysis
import evaluation
from config import RunConfig, config_hash, load_run_config
from context_features import LAST_PLACE_COLUMN, split_context
from errors import ConfigError, DataError, EmptyIntersection, MissingFile, MixedArtifacts, PipelineError
from event_model import EventLog, parse_event_log, summarize_event_log
from features import (build_feature_table, feature_columns, feature_groups, feature_manifest,
                      mask_groups)
from labeling import LABEL_COLUMNS, build_app_catalog, load_category_map, pair_response_times
from prediction import save_model
from reports import write_report, write_stage_manifest
from simulation import calibrate, generate, write_dataset
from utils import (canonical_json, configure_logging, read_artifact_csv, stage_context,
                   write_artifact_csv, write_artifact_json)

logger = logging.getLogger(__name__)

PIPELINE = ('ingest', 'label', 'features', 'train', 'evaluate', 'analyze', 'report')
COMMANDS = ('simulate',) + PIPELINE + ('all',)
_ID_DTYPES = {'participant': str, 'notification_id': str, 'app': str, LAST_PLACE_COLUMN: str}


def _participant_features(log: EventLog, labels: pd.DataFrame, config: RunConfig,
                          category_map: Dict[str, str]) -> pd.DataFrame:
    return build_feature_table(log, labels, config.features, top_k=config.labeling.top_k,
                               category=config.labeling.category, category_map=category_map)


def _train_participant(participant: str, group: pd.DataFrame, names: List[str], config: RunConfig):
    specs = evaluation.default_specs(config.model.regressors, config.evaluation.seed)
    settings = evaluation.CvSettings.from_config(config)
    models = evaluation.train_final_models(evaluation.design_matrix(group, names),
                                           group['target'].to_numpy(dtype=float), names, specs,
                                           config.evaluation.seed, settings, context=split_context(group))
    return participant, models


class Run:
    """One configured run: the stages share the config hash and the run directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.config_hash = config_hash(config)
        self.run_dir = Path(config.paths.output_dir) / f"run-{self.config_hash[:12]}"
        self.stage: Optional[str] = None

    @property
    def data_dir(self) -> Path:
        return Path(self.config.paths.data_dir)

    def participant_dirs(self) -> List[Path]:
        if not self.data_dir.is_dir():
            raise ConfigError(f"Input directory not found: {self.data_dir}")
        dirs = sorted(p for p in self.data_dir.iterdir() if p.is_dir() and (p / 'notifications.csv').exists())
        if not dirs:
            raise ConfigError(f"No participant directories under {self.data_dir}")
        return dirs

    @cached_property
    def logs(self) -> List[EventLog]:
        return Parallel(n_jobs=self.config.jobs)(delayed(parse_event_log)(p) for p in self.participant_dirs())

    @cached_property
    def category_map(self) -> Dict[str, str]:
        path = Path(self.config.paths.categories_file)
        if path.exists():
            return load_category_map(path)
        if self.config.labeling.category is not None:
            raise MissingFile(path)
        logger.warning(f"Category map {path} not found; every app is 'other'")
        return {}

    def _read(self, name: str, **kwargs) -> pd.DataFrame:
        path = self.run_dir / name
        if not path.exists():
            raise MissingFile(path)
        table, found = read_artifact_csv(path, **kwargs)
        if found != self.config_hash:
            raise MixedArtifacts(f"{path} was produced by configuration {str(found)[:12]}, "
                                 f"not {self.config_hash[:12]}")
        return table

    def _write_csv(self, table: pd.DataFrame, name: str) -> Path:
        return write_artifact_csv(table, self.run_dir / name, self.config_hash)

    def _manifest(self, inputs: Sequence[Path], outputs: Sequence[Path], **summary):
        write_stage_manifest(self.run_dir, self.stage, self.config_hash, inputs, outputs, summary)

    # --- stages -------------------------------------------------------------

    def simulate(self):
        generator = self.config.simulate
        if generator.calibration.enabled:
            generator = calibrate(generator)
        logs, truth = generate(generator, jobs=self.config.jobs)
        write_dataset(logs, truth, generator, self.data_dir)
        self._manifest([], [self.data_dir / 'manifest.json'], participants=len(logs),
                       notifications=int(sum(len(log.notifications) for log in logs)),
                       intercept=generator.response.intercept, sigma=generator.response.sigma)

    def ingest(self):
        summary = pd.DataFrame([summarize_event_log(log) for log in self.logs])
        path = self._write_csv(summary, 'ingest.csv')
        for log in self.logs:
            for warning in log.warnings:
                logger.warning(warning)
        self._manifest([self.data_dir], [path], participants=len(self.logs))

    def label(self):
        labels = pd.concat([pair_response_times(log, self.config.labeling.max_response_s) for log in self.logs],
                           ignore_index=True)
        path = self._write_csv(labels.loc[:, LABEL_COLUMNS], 'labels.csv')
        self._manifest([self.data_dir], [path], labels=len(labels), censored=int(labels['censored'].sum()))

    def features(self):
        labels = self._read('labels.csv', dtype=_ID_DTYPES)
        by_participant = {p: g.reset_index(drop=True) for p, g in labels.groupby('participant', sort=True)}
        tables = Parallel(n_jobs=self.config.jobs)(
            delayed(_participant_features)(log, by_participant.get(log.participant, labels.iloc[:0]),
                                           self.config, self.category_map)
            for log in self.logs)
        tables = [t for t in tables if len(t)]
        if tables:
            table = pd.concat(tables, ignore_index=True)
        else:
            logger.warning('No participant produced feature rows')
            table = pd.DataFrame(columns=feature_columns(self.config.features))
        path = self._write_csv(table, 'features.csv')
        manifest_path = self._write_csv(feature_manifest(self.config.features), 'feature_manifest.csv')
        self._manifest([self.data_dir, self.run_dir / 'labels.csv'], [path, manifest_path], rows=len(table))

    def _evaluation_columns(self, groups: Sequence[str]) -> List[str]:
        names = feature_groups(self.config.features)
        masks = mask_groups(self.config.features)
        return [c for g in groups for c in names[g]] + [c for g in groups for c in masks[g]]

    def train(self):
        table = self._read('features.csv', dtype=_ID_DTYPES)
        names = self._evaluation_columns(self.config.evaluation.feature_groups)
        eligible = [(p, g.reset_index(drop=True)) for p, g in table.groupby('participant', sort=True)
                    if len(g) >= self.config.evaluation.min_instances]
        skipped = table['participant'].nunique() - len(eligible)
        if skipped:
            logger.warning(f"{skipped} participant(s) below {self.config.evaluation.min_instances} rows not trained")
        results = Parallel(n_jobs=self.config.jobs)(
            delayed(_train_participant)(p, g, names, self.config) for p, g in eligible)
        outputs = []
        for participant, models in results:
            for kind, model in models.items():
                outputs.append(save_model(model, self.run_dir / 'models' / participant / f"{kind}.pkl"))
        self._manifest([self.run_dir / 'features.csv'], outputs, participants=len(results))

    def evaluate(self):
        table = self._read('features.csv', dtype=_ID_DTYPES)
        config = self.config
        specs = evaluation.default_specs(config.model.regressors, config.evaluation.seed)
        settings = evaluation.CvSettings.from_config(config)
        names = self._evaluation_columns(config.evaluation.feature_groups)
        report = evaluation.nested_cv(table, specs, config.evaluation.seed, names, settings, config.jobs)

        evaluated = table[table['participant'].isin(set(report.scores['participant']))]
        importance = evaluation.feature_importance(evaluated, names)

        ablations = []
        skipped_ablations = {}
        all_names = feature_groups(config.features)
        all_masks = mask_groups(config.features)
        for group in config.evaluation.ablations:
            base_groups = [g for g in config.evaluation.feature_groups if g != group]
            try:
                ablations.append(evaluation.ablation(
                    table, {group: all_names[group]}, {group: all_masks[group]},
                    self._evaluation_columns(base_groups), specs, config.evaluation.seed, settings, config.jobs))
            except EmptyIntersection as exc:
                logger.warning(f"Ablation of {group} skipped: {exc}")
                skipped_ablations[group] = str(exc)
        ablation = pd.concat(ablations, ignore_index=True) if ablations \
            else pd.DataFrame(columns=evaluation.ABLATION_COLUMNS)

        outputs = [
            self._write_csv(report.predictions, 'predictions.csv'),
            self._write_csv(report.scores, 'scores.csv'),
            self._write_csv(report.fold_scores, 'folds.csv'),
            self._write_csv(importance, 'importance.csv'),
            self._write_csv(ablation, 'ablation.csv'),
        ]
        payload = report.to_dict()
        payload['ablation'] = ablation.to_dict(orient='records')
        payload['ablation_skipped'] = skipped_ablations
        payload['outer_folds'] = settings.outer_folds
        payload['inner_folds'] = settings.inner_folds
        outputs.append(write_artifact_json(payload, self.run_dir / 'evaluation.json', self.config_hash))
        self._manifest([self.run_dir / 'features.csv'], outputs, participants=len(report.scores['participant'].unique()),
                       skipped=len(report.skipped))

    def analyze(self):
        labels = self._read('labels.csv', dtype=_ID_DTYPES)
        table = self._read('features.csv', dtype=_ID_DTYPES)
        settings = self.config.analysis

        cdf = analysis.cdf_table(labels, settings.cdf_thresholds_s)
        points = analysis.cdf_points(labels, 'participant').assign(by='participant')
        focus = settings.per_app_participant or (str(labels['participant'].iloc[0]) if len(labels) else None)
        if focus is not None:
            app_points = analysis.cdf_points(labels[labels['participant'] == focus], 'app')
            points = pd.concat([points, app_points.assign(by=f"app:{focus}")], ignore_index=True)
        apps, apps_summary = analysis.app_overview(labels)
        catalog = build_app_catalog(labels['app'], self.category_map)
        categories = analysis.category_summary(labels, catalog, self.config.labeling.max_response_s)

        esm = pd.concat([log.esm_responses.assign(participant=log.participant) for log in self.logs],
                        ignore_index=True)
        groupings = [None, *analysis.MOOD_GROUPS, ['time_of_day', 'weekday']]
        mood = pd.concat([analysis.mood_summary(esm, key).assign(
            grouping='overall' if key is None else key if isinstance(key, str) else '/'.join(key))
            for key in groupings], ignore_index=True)
        correlations = analysis.mood_response_correlations(table, permutations=settings.permutations,
                                                           seed=settings.seed)
        correlation_table = pd.DataFrame([c.to_dict() for c in correlations])
        normality = analysis.normality_screen(table)

        outputs = [
            self._write_csv(cdf.table, 'cdf.csv'),
            self._write_csv(points, 'cdf_points.csv'),
            self._write_csv(apps, 'apps.csv'),
            self._write_csv(categories, 'categories.csv'),
            self._write_csv(mood, 'mood.csv'),
            self._write_csv(correlation_table, 'correlations.csv'),
            self._write_csv(normality, 'normality.csv'),
        ]
        payload = {
            'cdf_pooled': {f"{t:g}": share for t, share in cdf.pooled().items()},
            'app_coverage': apps_summary.to_dict(orient='records'),
            'categories': categories.to_dict(orient='records'),
            'mood_overall': mood[mood['grouping'] == 'overall'].drop(columns='grouping').to_dict(orient='records'),
            'correlations': [c.to_dict() for c in correlations if c.group == analysis.POOLED],
            'normality': normality.to_dict(orient='records'),
        }
        outputs.append(write_artifact_json(payload, self.run_dir / 'analysis.json', self.config_hash))
        self._manifest([self.data_dir, self.run_dir / 'labels.csv', self.run_dir / 'features.csv'], outputs)

    def report(self):
        written = write_report(self.run_dir, self.config.model.regressors)
        self._manifest([self.run_dir / 'evaluation.json', self.run_dir / 'analysis.json'], list(written.values()))

    def execute(self, command: str):
        stages = PIPELINE if command == 'all' else (command,)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / 'config.json').write_text(
            canonical_json(self.config.model_dump(mode='json', exclude={'jobs'}), indent=2) + '\n', encoding='utf-8')
        for name in stages:
            self.stage = name
            with stage_context(name):
                logger.info(f"Stage {name} started")
                getattr(self, name)()
                logger.info(f"Stage {name} finished")
        self.stage = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='rtlab', description='Notification response-time prediction pipeline')
    parser.add_argument('command', choices=COMMANDS, help='Stage to run; "all" chains every stage after simulate')
    parser.add_argument('--config', '-c', type=Path, default=None, help='TOML run configuration')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override a configuration value (repeatable)')
    parser.add_argument('--data-dir', type=Path, help='Participant data directory')
    parser.add_argument('--output-dir', type=Path, help='Directory receiving run directories')
    parser.add_argument('--seed', type=int, help='Seed for simulation and evaluation')
    parser.add_argument('--jobs', '-j', type=int, help='Worker processes')
    parser.add_argument('--log-level', default=None, help='Logging level (default from RTLAB_LOG_LEVEL or INFO)')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then --set overrides, then dedicated flags."""
    overrides = list(args.overrides)
    if args.data_dir is not None:
        overrides.append(f"paths.data_dir={json.dumps(str(args.data_dir))}")
    if args.output_dir is not None:
        overrides.append(f"paths.output_dir={json.dumps(str(args.output_dir))}")
    if args.seed is not None:
        overrides.extend([f"simulate.seed={args.seed}", f"evaluation.seed={args.seed}"])
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    return load_run_config(args.config, overrides)


def _error_report(exc: BaseException, code: int, stage: Optional[str]) -> Dict[str, object]:
    report = {'error': type(exc).__name__, 'message': str(exc), 'exit_code': code, 'stage': stage}
    for attribute in ('file', 'line', 'path', 'participant'):
        if hasattr(exc, attribute):
            report[attribute] = getattr(exc, attribute)
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or os.getenv('RTLAB_LOG_LEVEL', 'INFO'))
    run = None
    try:
        run = Run(resolve_config(args))
        run.execute(args.command)
        return 0
    except PipelineError as exc:
        code = exc.exit_code
        error = exc
    except Exception as exc:
        logger.exception('Internal error')
        code = 3
        error = exc
    report = _error_report(error, code, run.stage if run is not None else None)
    print(canonical_json(report), file=sys.stderr)
    if run is not None and run.run_dir.exists():
        (run.run_dir / 'error.json').write_text(canonical_json(report, indent=2) + '\n', encoding='utf-8')
    return code


if __name__ == '__main__':
    sys.exit(main())
