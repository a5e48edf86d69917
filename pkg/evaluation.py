"""
Evaluation Module
Per-participant nested cross-validation, error metrics, feature importance and
feature-group ablations.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import mean_absolute_error, mean_squared_error
from sklearn.model_selection import KFold

from context_features import SplitEncoder, split_context
from errors import EmptyInput, EmptyIntersection, LeakageError, LengthMismatch, TooFewInstances
from prediction import (REGRESSOR_KINDS, RegressorSpec, TrainedModel, f_regression_scores, fit,
                        grid_points, predict)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvSettings:
    outer_folds: int = 5
    inner_folds: int = 5
    min_instances: int = 25
    k_features: Tuple[int, ...] = (8,)
    grids: Mapping[str, Mapping[str, Sequence[Any]]] = field(default_factory=dict)
    top_k_apps: int = 10

    @classmethod
    def from_config(cls, config) -> 'CvSettings':
        return cls(outer_folds=config.evaluation.outer_folds, inner_folds=config.evaluation.inner_folds,
                   min_instances=config.evaluation.min_instances,
                   k_features=tuple(config.model.k_features), grids=dict(config.model.grids),
                   top_k_apps=config.labeling.top_k)


def mae(y, y_hat) -> float:
    """Mean absolute error."""
    y, y_hat = _paired(y, y_hat)
    return float(mean_absolute_error(y, y_hat))


def rmse(y, y_hat) -> float:
    """Root mean squared error."""
    y, y_hat = _paired(y, y_hat)
    return float(np.sqrt(mean_squared_error(y, y_hat)))


def seconds_scale(target) -> np.ndarray:
    """Invert the log10(1 + seconds) target."""
    return np.power(10.0, np.asarray(target, dtype=float)) - 1.0


def _paired(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size != y_hat.size:
        raise LengthMismatch(f"{y.size} targets but {y_hat.size} predictions")
    if y.size == 0:
        raise EmptyInput("No values to score")
    return y, y_hat


@dataclass(frozen=True, eq=False)
class Fold:
    index: int
    train: np.ndarray
    test: np.ndarray
    inner: Tuple[Tuple[np.ndarray, np.ndarray], ...]


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n: int
    seed: int
    outer: Tuple[Fold, ...]

    def test_assignment(self) -> np.ndarray:
        """Outer fold index of every row."""
        assignment = np.full(self.n, -1, dtype=int)
        for fold in self.outer:
            assignment[fold.test] = fold.index
        return assignment


def make_fold_plan(n: int, seed: int, k_outer: int = 5, k_inner: int = 5) -> FoldPlan:
    """
    Seeded shuffle then contiguous split, for the outer folds and for each outer-train set.

    Args:
        n: Number of rows
        seed: Shuffle seed; inner splits use seed + outer index + 1
        k_outer: Outer fold count
        k_inner: Inner fold count

    Returns:
        FoldPlan whose outer test sets partition range(n)
    """
    rows = np.arange(n)
    folds = []
    outer = KFold(n_splits=k_outer, shuffle=True, random_state=seed)
    for index, (train, test) in enumerate(outer.split(rows)):
        inner_split = KFold(n_splits=k_inner, shuffle=True, random_state=seed + index + 1)
        inner = tuple((train[a], train[b]) for a, b in inner_split.split(train))
        folds.append(Fold(index=index, train=train, test=test, inner=inner))
    return FoldPlan(n=n, seed=seed, outer=tuple(folds))


@dataclass(frozen=True, eq=False)
class FitRecord:
    regressor: str
    outer_fold: int
    inner_fold: Optional[int]
    fit_rows: np.ndarray
    encoder_rows: Optional[np.ndarray] = None


def check_no_leakage(plan: FoldPlan, records: Sequence[FitRecord]) -> int:
    """
    Assert every fit, and the context encoding it was given, used only rows of its own training split.

    Returns:
        Number of fits checked
    """
    for record in records:
        fold = plan.outer[record.outer_fold]
        allowed = fold.train if record.inner_fold is None else fold.inner[record.inner_fold][0]
        where = (f"{record.regressor}: fit in outer fold {record.outer_fold}"
                 f"{'' if record.inner_fold is None else f' inner {record.inner_fold}'}")
        if not np.isin(record.fit_rows, allowed).all() or np.isin(record.fit_rows, fold.test).any():
            raise LeakageError(f"{where} used rows outside its training split")
        if record.encoder_rows is not None and (not np.isin(record.encoder_rows, allowed).all()
                                                or np.isin(record.encoder_rows, fold.test).any()):
            raise LeakageError(f"{where} was encoded with rows outside its training split")
    return len(records)


class _SplitMatrices:
    """Design matrices with the split-fitted context columns re-encoded per training split."""

    def __init__(self, X: np.ndarray, feature_names: Sequence[str], context: Optional[pd.DataFrame],
                 top_k: int):
        self.X = X
        self.context = context
        self.top_k = top_k
        self.positions = {name: i for i, name in enumerate(feature_names)}
        self._cache: Dict[Tuple[int, Optional[int]], Tuple[np.ndarray, np.ndarray]] = {}

    def for_split(self, key: Tuple[int, Optional[int]], fit_rows: np.ndarray
                  ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Matrix for one split and the rows its encoder was fit on (None without context)."""
        if self.context is None:
            return self.X, None
        if key not in self._cache:
            encoder = SplitEncoder.fit(self.context.iloc[fit_rows], self.top_k)
            encoded = encoder.transform(self.context)
            X = self.X.copy()
            for name in encoded.columns:
                if name in self.positions:
                    X[:, self.positions[name]] = encoded[name].to_numpy(dtype=float)
            self._cache[key] = (X, np.asarray(fit_rows))
        return self._cache[key]


def _candidates(kind: str, settings: CvSettings) -> List[Tuple[Dict[str, Any], int]]:
    return [(params, k) for params in grid_points(kind, settings.grids.get(kind))
            for k in settings.k_features]


def _select(spec: RegressorSpec, matrices: _SplitMatrices, y, fold: Fold, feature_names,
            settings: CvSettings, records: List[FitRecord]) -> Tuple[Dict[str, Any], int, float]:
    """Grid point and K with the lowest mean inner-validation MAE (first wins ties)."""
    candidates = _candidates(spec.kind, settings)
    if len(candidates) == 1:
        params, k = candidates[0]
        return params, k, float('nan')
    best = None
    for params, k in candidates:
        errors = []
        for inner_index, (train, test) in enumerate(fold.inner):
            X, encoder_rows = matrices.for_split((fold.index, inner_index), train)
            model = fit(spec.with_params(params), X[train], y[train], rows=train,
                        feature_names=feature_names, k_features=k)
            records.append(FitRecord(spec.kind, fold.index, inner_index, np.asarray(model.fit_rows),
                                     encoder_rows))
            errors.append(mae(y[test], predict(model, X[test])))
        score = float(np.mean(errors))
        if best is None or score < best[2]:
            best = (params, k, score)
    return best


@dataclass(frozen=True, eq=False)
class ParticipantResult:
    participant: str
    n_instances: int
    fold_scores: pd.DataFrame
    predictions: pd.DataFrame
    fits_checked: int


def nested_cv_participant(participant: str, X, y, feature_names: Sequence[str],
                          specs: Sequence[RegressorSpec], seed: int,
                          settings: CvSettings = CvSettings(),
                          context: Optional[pd.DataFrame] = None) -> ParticipantResult:
    """
    Nested cross-validation of every regressor on one participant's rows.

    Args:
        participant: Participant id
        X: Feature matrix
        y: Targets
        feature_names: Column names of X
        specs: Regressors to evaluate
        seed: Fold seed
        settings: Fold counts, minimum size, K candidates and grid overrides
        context: Raw place and recent-app columns aligned with X; when given, the
            place and top-k columns of X are re-encoded from each training split

    Returns:
        ParticipantResult with per-fold scores and every outer-test prediction
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < settings.min_instances:
        raise TooFewInstances(participant, n, settings.min_instances)
    if context is not None and len(context) != n:
        raise LengthMismatch(f"{len(context)} context rows for {n} instances")
    plan = make_fold_plan(n, seed, settings.outer_folds, settings.inner_folds)
    matrices = _SplitMatrices(X, feature_names, context, settings.top_k_apps)
    records: List[FitRecord] = []
    scores, predictions = [], []
    for spec in specs:
        for fold in plan.outer:
            params, k, inner_mae = _select(spec, matrices, y, fold, feature_names, settings, records)
            X_outer, encoder_rows = matrices.for_split((fold.index, None), fold.train)
            model = fit(spec.with_params(params), X_outer[fold.train], y[fold.train], rows=fold.train,
                        feature_names=feature_names, k_features=k, fold=f"outer-{fold.index}")
            records.append(FitRecord(spec.kind, fold.index, None, np.asarray(model.fit_rows), encoder_rows))
            y_hat = predict(model, X_outer[fold.test])
            scores.append({
                'participant': participant, 'regressor': spec.kind, 'fold': fold.index,
                'mae': mae(y[fold.test], y_hat), 'rmse': rmse(y[fold.test], y_hat),
                'mae_s': mae(seconds_scale(y[fold.test]), seconds_scale(y_hat)),
                'inner_mae': inner_mae, 'k_features': k,
                'params': json.dumps(params, sort_keys=True),
                'selected': ';'.join(model.selected_names),
            })
            predictions.append(pd.DataFrame({
                'participant': participant, 'regressor': spec.kind, 'fold': fold.index,
                'row': fold.test, 'y_true': y[fold.test], 'y_pred': y_hat,
            }))
    checked = check_no_leakage(plan, records)
    logger.info(f"Participant {participant}: {n} rows, {checked} fits checked for leakage")
    return ParticipantResult(participant=participant, n_instances=n, fold_scores=pd.DataFrame(scores),
                             predictions=pd.concat(predictions, ignore_index=True), fits_checked=checked)


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """Scores per participant and regressor, their aggregate, and the raw predictions."""

    seed: int
    scores: pd.DataFrame
    aggregate: pd.DataFrame
    fold_scores: pd.DataFrame
    predictions: pd.DataFrame
    skipped: Mapping[str, str]
    feature_names: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'feature_names': list(self.feature_names),
            'aggregate': self.aggregate.to_dict(orient='records'),
            'participants': self.scores.to_dict(orient='records'),
            'folds': self.fold_scores.to_dict(orient='records'),
            'skipped': dict(self.skipped),
        }


SCORE_COLUMNS = ['participant', 'regressor', 'n_instances', 'mae', 'rmse', 'mae_s']
AGGREGATE_COLUMNS = ['regressor', 'mae', 'rmse', 'mae_s', 'n_participants']


def _evaluate_one(participant, X, y, feature_names, specs, seed, settings, context):
    try:
        return nested_cv_participant(participant, X, y, feature_names, specs, seed, settings, context)
    except TooFewInstances as exc:
        logger.warning(str(exc))
        return str(exc)


def design_matrix(instances: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    return instances.loc[:, list(columns)].fillna(0.0).to_numpy(dtype=float)


def nested_cv(instances: pd.DataFrame, specs: Sequence[RegressorSpec], seed: int,
              feature_names: Sequence[str], settings: CvSettings = CvSettings(),
              jobs: int = 1) -> EvaluationReport:
    """
    Nested cross-validation for every participant, aggregated by unweighted mean.

    Args:
        instances: Feature table with participant and target columns
        specs: Regressors to evaluate
        seed: Fold seed shared by all participants
        feature_names: Columns used as features
        settings: CV settings
        jobs: Worker processes; results do not depend on it

    Returns:
        EvaluationReport
    """
    groups = [(str(p), g.reset_index(drop=True)) for p, g in instances.groupby('participant', sort=True)]
    outcomes = Parallel(n_jobs=jobs)(
        delayed(_evaluate_one)(participant, design_matrix(group, feature_names),
                               group['target'].to_numpy(dtype=float), list(feature_names),
                               list(specs), seed, settings, split_context(group))
        for participant, group in groups)

    skipped = {}
    results: List[ParticipantResult] = []
    for (participant, _), outcome in zip(groups, outcomes):
        if isinstance(outcome, ParticipantResult):
            results.append(outcome)
        else:
            skipped[participant] = outcome

    fold_scores = (pd.concat([r.fold_scores for r in results], ignore_index=True)
                   if results else pd.DataFrame(columns=['participant', 'regressor', 'fold', 'mae', 'rmse', 'mae_s']))
    predictions = (pd.concat([r.predictions for r in results], ignore_index=True)
                   if results else pd.DataFrame(columns=['participant', 'regressor', 'fold', 'row',
                                                         'y_true', 'y_pred']))
    if results:
        scores = (fold_scores.groupby(['participant', 'regressor'], sort=False)[['mae', 'rmse', 'mae_s']]
                  .mean().reset_index())
        sizes = {r.participant: r.n_instances for r in results}
        scores.insert(2, 'n_instances', scores['participant'].map(sizes))
        aggregate = (scores.groupby('regressor', sort=False)
                     .agg(mae=('mae', 'mean'), rmse=('rmse', 'mean'), mae_s=('mae_s', 'mean'),
                          n_participants=('participant', 'nunique'))
                     .reset_index())
    else:
        scores = pd.DataFrame(columns=SCORE_COLUMNS)
        aggregate = pd.DataFrame(columns=AGGREGATE_COLUMNS)
    logger.info(f"Evaluated {len(results)} participants, skipped {len(skipped)}")
    return EvaluationReport(seed=seed, scores=scores, aggregate=aggregate, fold_scores=fold_scores,
                            predictions=predictions, skipped=skipped, feature_names=tuple(feature_names))


def recompute_scores(predictions: pd.DataFrame) -> pd.DataFrame:
    """Per-participant scores from persisted predictions, averaged over outer folds."""
    per_fold = (predictions.groupby(['participant', 'regressor', 'fold'], sort=False)[['y_true', 'y_pred']]
                .apply(lambda g: pd.Series({'mae': mae(g['y_true'], g['y_pred']),
                                            'rmse': rmse(g['y_true'], g['y_pred'])}))
                .reset_index())
    return per_fold.groupby(['participant', 'regressor'], sort=False)[['mae', 'rmse']].mean().reset_index()


def feature_importance(instances: pd.DataFrame, feature_names: Sequence[str]) -> pd.DataFrame:
    """
    F score of every feature against the target, per participant.

    Returns:
        Long table: participant, feature, f_score, p_value
    """
    frames = []
    for participant, group in instances.groupby('participant', sort=True):
        f_scores, p_values = f_regression_scores(design_matrix(group, feature_names),
                                                 group['target'].to_numpy(dtype=float))
        frames.append(pd.DataFrame({'participant': participant, 'feature': list(feature_names),
                                    'f_score': f_scores, 'p_value': p_values}))
    if not frames:
        return pd.DataFrame(columns=['participant', 'feature', 'f_score', 'p_value'])
    return pd.concat(frames, ignore_index=True)


def unmasked_rows(instances: pd.DataFrame, mask_columns: Sequence[str]) -> pd.DataFrame:
    """Rows where none of the given missing indicators is set."""
    if not mask_columns:
        return instances
    covered = (instances.loc[:, list(mask_columns)] == 0).all(axis=1)
    return instances[covered].reset_index(drop=True)


ABLATION_COLUMNS = ['group', 'variant', 'regressor', 'mae', 'rmse', 'n_rows', 'n_participants', 'n_skipped']


def ablation(instances: pd.DataFrame, feature_groups: Mapping[str, Sequence[str]],
             mask_columns: Mapping[str, Sequence[str]], base_columns: Sequence[str],
             specs: Sequence[RegressorSpec], seed: int, settings: CvSettings = CvSettings(),
             jobs: int = 1) -> pd.DataFrame:
    """
    Compare models with and without each feature group on identical rows.

    Args:
        instances: Feature table
        feature_groups: Group name -> its feature columns
        mask_columns: Group name -> its missing indicators (rows must have all of them 0)
        base_columns: Columns present in both variants
        specs: Regressors to evaluate
        seed: Fold seed
        settings: CV settings
        jobs: Worker processes

    Returns:
        One row per (group, variant, regressor)
    """
    rows = []
    for group, columns in feature_groups.items():
        subset = unmasked_rows(instances, mask_columns.get(group, ()))
        if subset.empty:
            raise EmptyIntersection(f"No rows carry the {group} features")
        extra = [c for c in columns if c not in base_columns]
        for variant, names in (('with', list(base_columns) + extra), ('without', list(base_columns))):
            report = nested_cv(subset, specs, seed, names, settings, jobs)
            for record in report.aggregate.to_dict(orient='records'):
                rows.append({'group': group, 'variant': variant, 'regressor': record['regressor'],
                             'mae': record['mae'], 'rmse': record['rmse'], 'n_rows': len(subset),
                             'n_participants': int(record['n_participants']),
                             'n_skipped': len(report.skipped)})
            if report.aggregate.empty:
                logger.warning(f"Ablation {group}/{variant}: every participant skipped")
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def train_final_models(X, y, feature_names: Sequence[str], specs: Sequence[RegressorSpec], seed: int,
                       settings: CvSettings = CvSettings(),
                       context: Optional[pd.DataFrame] = None) -> Dict[str, TrainedModel]:
    """
    Choose hyperparameters by K-fold CV on all rows, then refit each regressor on everything.

    With ``context``, each inner split re-encodes the place and top-k columns from its
    own training rows; the final fit uses X as given.

    Returns:
        Regressor kind -> fitted model
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    rows = np.arange(len(y))
    splits = tuple(KFold(n_splits=settings.inner_folds, shuffle=True, random_state=seed).split(rows))
    whole = Fold(index=0, train=rows, test=np.empty(0, dtype=int), inner=splits)
    matrices = _SplitMatrices(X, feature_names, context, settings.top_k_apps)
    models = {}
    for spec in specs:
        params, k, _ = _select(spec, matrices, y, whole, feature_names, settings, [])
        models[spec.kind] = fit(spec.with_params(params), X, y, rows=rows, feature_names=feature_names,
                                k_features=k, fold='all')
    return models


def default_specs(kinds: Sequence[str] = REGRESSOR_KINDS, seed: int = 0) -> List[RegressorSpec]:
    return [RegressorSpec(kind, {}, seed) for kind in kinds]
