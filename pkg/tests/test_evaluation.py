import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from context_features import split_context
from errors import EmptyInput, EmptyIntersection, LeakageError, LengthMismatch, TooFewInstances
from evaluation import (ABLATION_COLUMNS, CvSettings, FitRecord, ablation, check_no_leakage, default_specs,
                        design_matrix, feature_importance, mae, make_fold_plan, nested_cv,
                        nested_cv_participant, recompute_scores, rmse, seconds_scale, train_final_models,
                        unmasked_rows)
from features import build_feature_table, feature_groups, mask_groups
from labeling import pair_response_times
from prediction import BASELINE_KINDS, REGRESSOR_KINDS, RegressorSpec
from simulation import GeneratorConfig, calibrate, generate

FAST = CvSettings(outer_folds=5, inner_folds=3, min_instances=25, k_features=(3,))


def _cohort(rng, sizes=(60, 60), masked_share=0.5):
    frames = []
    for i, n in enumerate(sizes):
        X = rng.normal(size=(n, 4))
        frames.append(pd.DataFrame({
            'participant': f"P{i + 1:02d}",
            'a': X[:, 0], 'b': X[:, 1], 'c': X[:, 2], 'extra': X[:, 3],
            'flat': np.ones(n),
            'target': 2.0 + 0.8 * X[:, 0] + 0.5 * X[:, 3] + rng.normal(scale=0.1, size=n),
            'extra_missing': (np.arange(n) < masked_share * n).astype(float) if i else np.zeros(n),
        }))
    return pd.concat(frames, ignore_index=True)


def test_mae_and_rmse():
    assert_allclose(mae([1, 2, 3], [2, 2, 2]), 2 / 3)
    assert_allclose(rmse([1, 2, 3], [2, 2, 2]), np.sqrt(2 / 3))
    assert mae([1.0, 5.0], [1.0, 5.0]) == 0.0
    assert rmse([1.0, 5.0], [1.0, 5.0]) == 0.0


def test_metric_preconditions():
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])
    with pytest.raises(EmptyInput):
        rmse([], [])


def test_seconds_scale_inverts_target():
    assert_allclose(seconds_scale(np.log10(61.0)), 60.0)


def test_outer_folds_of_twenty():
    plan = make_fold_plan(100, seed=3)
    assert [len(fold.test) for fold in plan.outer] == [20] * 5


@given(n=st.integers(10, 150), seed=st.integers(0, 2**31 - 1), k_outer=st.integers(2, 5),
       k_inner=st.integers(2, 3))
def test_fold_plan_partitions_rows(n, seed, k_outer, k_inner):
    plan = make_fold_plan(n, seed, k_outer, k_inner)
    tests = np.concatenate([fold.test for fold in plan.outer])
    assert sorted(tests.tolist()) == list(range(n))
    assert (plan.test_assignment() >= 0).all()
    for fold in plan.outer:
        assert not set(fold.train) & set(fold.test)
        inner_tests = np.concatenate([test for _, test in fold.inner])
        assert sorted(inner_tests.tolist()) == sorted(fold.train.tolist())
        for train, _ in fold.inner:
            assert set(train) <= set(fold.train)


def test_fold_plan_is_seeded():
    first, second = make_fold_plan(40, 9), make_fold_plan(40, 9)
    assert all(np.array_equal(a.test, b.test) for a, b in zip(first.outer, second.outer))


def test_planted_leak_is_caught():
    plan = make_fold_plan(30, 1)
    bad = FitRecord('ols', 0, None, plan.outer[0].test[:2])
    with pytest.raises(LeakageError):
        check_no_leakage(plan, [bad])
    good = FitRecord('ols', 0, 1, plan.outer[0].inner[1][0])
    assert check_no_leakage(plan, [good]) == 1


def test_encoder_rows_are_checked():
    plan = make_fold_plan(30, 1)
    train = plan.outer[0].train
    with pytest.raises(LeakageError, match='encoded'):
        check_no_leakage(plan, [FitRecord('ols', 0, None, train, encoder_rows=np.arange(30))])
    assert check_no_leakage(plan, [FitRecord('ols', 0, None, train, encoder_rows=train)]) == 1


def _place_table(n=60):
    # Every notification comes from its own place, ordered like the target
    return pd.DataFrame({
        'participant': 'P01',
        'app': 'x',
        'last_place': [f"CODE{i:04d}" for i in range(n)],
        'recent_apps_05': '',
        'loc_10': np.arange(1.0, n + 1),
        'target': np.arange(n) / n,
    })


def test_place_ids_are_refit_on_each_training_split():
    table = _place_table()
    settings = CvSettings(inner_folds=3, k_features=(1,))
    refit = nested_cv(table, default_specs(['ols']), 0, ['loc_10'], settings)
    fixed = nested_cv(table.drop(columns='last_place'), default_specs(['ols']), 0, ['loc_10'], settings)
    # Test rows carry places no training row visited, so they fall back to the unseen id
    assert fixed.aggregate['mae'].iloc[0] < 0.01
    assert refit.aggregate['mae'].iloc[0] > 0.2


def test_context_must_line_up_with_rows():
    table = _place_table(40)
    with pytest.raises(LengthMismatch):
        nested_cv_participant('P01', table[['loc_10']], table['target'], ['loc_10'], default_specs(['ols']),
                              seed=0, settings=FAST, context=split_context(table).iloc[:30])


def test_final_models_accept_context():
    table = _place_table(40)
    settings = CvSettings(inner_folds=3, k_features=(1,), grids={'svr_linear': {'C': [0.1, 1.0]}})
    models = train_final_models(design_matrix(table, ['loc_10']), table['target'], ['loc_10'],
                                default_specs(['svr_linear']), 0, settings, context=split_context(table))
    assert set(models) == {'svr_linear'}


def test_leaky_feature_dominates(rng):
    n = 100
    y = rng.normal(size=n)
    X = np.column_stack([rng.normal(size=(n, 5)), y])
    names = ['n1', 'n2', 'n3', 'n4', 'n5', 'leak']
    settings = CvSettings(inner_folds=3, k_features=(1,))
    result = nested_cv_participant('P01', X, y, names, [RegressorSpec('ols'), RegressorSpec('bayesian_ridge')],
                                   seed=0, settings=settings)
    assert (result.fold_scores['selected'] == 'leak').all()
    assert result.fold_scores['mae'].max() < 0.05
    assert result.fits_checked > 10


def test_too_few_instances(rng):
    with pytest.raises(TooFewInstances) as info:
        nested_cv_participant('P07', rng.normal(size=(10, 2)), rng.normal(size=10), ['a', 'b'],
                              default_specs(['ols']), seed=0, settings=FAST)
    assert info.value.participant == 'P07'


def test_cohort_scores_are_unweighted_means(rng):
    instances = _cohort(rng, sizes=(60, 40))
    report = nested_cv(instances, default_specs(['ols', 'mean_baseline']), 5, ['a', 'b', 'c'], FAST)
    for kind in ('ols', 'mean_baseline'):
        per_participant = report.scores[report.scores['regressor'] == kind]
        aggregate = report.aggregate.set_index('regressor').loc[kind]
        assert_allclose(aggregate['mae'], per_participant['mae'].mean())
        assert aggregate['n_participants'] == 2
    assert set(report.scores['n_instances']) == {60, 40}
    by_kind = report.aggregate.set_index('regressor')['mae']
    assert by_kind['ols'] < by_kind['mean_baseline']


def test_scores_match_persisted_predictions(rng):
    report = nested_cv(_cohort(rng), default_specs(['ols', 'gbr']), 2, ['a', 'b', 'c'],
                       CvSettings(inner_folds=3, k_features=(2, 3), grids={'gbr': {'n_estimators': [20, 40]}}))
    recomputed = recompute_scores(report.predictions).set_index(['participant', 'regressor'])
    stored = report.scores.set_index(['participant', 'regressor'])
    assert_allclose(recomputed.loc[stored.index, 'mae'], stored['mae'], atol=1e-12)
    assert_allclose(recomputed.loc[stored.index, 'rmse'], stored['rmse'], atol=1e-12)


@pytest.mark.filterwarnings('error')
def test_recompute_scores_by_hand():
    predictions = pd.DataFrame({
        'participant': ['P01'] * 4, 'regressor': ['ols'] * 4, 'fold': [0, 0, 1, 1], 'row': [0, 1, 2, 3],
        'y_true': [1.0, 2.0, 3.0, 4.0], 'y_pred': [1.5, 2.0, 3.0, 2.0],
    })
    scores = recompute_scores(predictions)
    assert scores.columns.tolist() == ['participant', 'regressor', 'mae', 'rmse']
    assert_allclose(scores['mae'], (0.25 + 1.0) / 2)
    assert_allclose(scores['rmse'], (np.sqrt(0.125) + np.sqrt(2.0)) / 2)


def test_small_participants_are_skipped(rng):
    report = nested_cv(_cohort(rng, sizes=(60, 12)), default_specs(['ols']), 0, ['a', 'b'], FAST)
    assert list(report.skipped) == ['P02']
    assert report.scores['participant'].unique().tolist() == ['P01']
    assert report.to_dict()['skipped'] == {'P02': report.skipped['P02']}


def test_worker_count_does_not_change_results(rng):
    instances = _cohort(rng)
    specs = default_specs(['ols', 'random_forest'])
    settings = CvSettings(inner_folds=3, grids={'random_forest': {'n_estimators': [10]}})
    serial = nested_cv(instances, specs, 4, ['a', 'b', 'c'], settings, jobs=1)
    parallel = nested_cv(instances, specs, 4, ['a', 'b', 'c'], settings, jobs=2)
    pd.testing.assert_frame_equal(serial.predictions, parallel.predictions)


def test_design_matrix_fills_gaps():
    table = pd.DataFrame({'a': [1.0, np.nan], 'b': [np.nan, 2.0]})
    assert design_matrix(table, ['b', 'a']).tolist() == [[0.0, 1.0], [2.0, 0.0]]


def test_feature_importance(rng):
    importance = feature_importance(_cohort(rng), ['a', 'b', 'flat'])
    assert list(importance.columns) == ['participant', 'feature', 'f_score', 'p_value']
    for _, group in importance.groupby('participant'):
        scores = group.set_index('feature')['f_score']
        assert scores.idxmax() == 'a'
        assert scores['flat'] == 0.0


def test_unmasked_rows(rng):
    instances = _cohort(rng)
    kept = unmasked_rows(instances, ['extra_missing'])
    assert len(kept) == 90
    assert unmasked_rows(instances, []) is instances


def test_ablation_compares_on_the_same_rows(rng):
    instances = _cohort(rng, sizes=(60, 80))
    table = ablation(instances, {'extra': ['extra']}, {'extra': ['extra_missing']}, ['a', 'b', 'c'],
                     default_specs(['ols']), 1, CvSettings(inner_folds=3, k_features=(4,)))
    assert list(table.columns) == ABLATION_COLUMNS
    assert set(table['n_rows']) == {100}
    scores = table.set_index('variant')['mae']
    assert scores['with'] < scores['without']


def test_ablating_a_constant_group_changes_nothing(rng):
    table = ablation(_cohort(rng), {'flat': ['flat']}, {}, ['a', 'b', 'c'], default_specs(['ols']), 1, FAST)
    scores = table.set_index('variant')
    assert abs(scores.loc['with', 'mae'] - scores.loc['without', 'mae']) < 1e-9


def test_ablation_without_coverage(rng):
    instances = _cohort(rng)
    instances['extra_missing'] = 1.0
    with pytest.raises(EmptyIntersection):
        ablation(instances, {'extra': ['extra']}, {'extra': ['extra_missing']}, ['a'],
                 default_specs(['ols']), 1, FAST)


def test_final_models_cover_every_regressor(rng):
    instances = _cohort(rng, sizes=(50,))
    models = train_final_models(design_matrix(instances, ['a', 'b', 'c']), instances['target'],
                                ['a', 'b', 'c'], default_specs(['ols', 'svr_linear']), 0,
                                CvSettings(inner_folds=3, k_features=(3,), grids={'svr_linear': {'C': [0.1, 1.0]}}))
    assert set(models) == {'ols', 'svr_linear'}
    assert models['ols'].fit_rows == tuple(range(50))
    assert models['ols'].fold == 'all'


GRIDS = {
    'svr_linear': {'C': [0.1, 1.0], 'epsilon': [0.1]},
    'gbr': {'n_estimators': [100], 'learning_rate': [0.1], 'max_depth': [2, 3]},
    'random_forest': {'n_estimators': [100], 'max_features': ['sqrt']},
}


@pytest.fixture(scope='module')
def simulated_table():
    config = GeneratorConfig.model_validate({
        'seed': 20200127, 'n_participants': 6, 'days': 21, 'physio': {'wear_fraction': 0.0},
    })
    logs, _ = generate(calibrate(config))
    return pd.concat([build_feature_table(log, pair_response_times(log)) for log in logs], ignore_index=True)


def _columns(groups):
    names, masks = feature_groups(), mask_groups()
    return [c for g in groups for c in names[g]] + [c for g in groups for c in masks[g]]


@pytest.mark.slow
def test_regressors_beat_the_mean_baseline(simulated_table):
    settings = CvSettings(inner_folds=3, k_features=(8,), grids=GRIDS)
    report = nested_cv(simulated_table, default_specs(), 7, _columns(['mobile', 'esm']), settings, jobs=2)
    scores = report.aggregate.set_index('regressor')['mae']
    assert report.aggregate['n_participants'].min() == 6
    for kind in REGRESSOR_KINDS:
        if kind not in BASELINE_KINDS:
            assert scores[kind] <= 0.95 * scores['mean_baseline'], kind


@pytest.mark.slow
def test_mood_answers_lower_the_error(simulated_table):
    settings = CvSettings(inner_folds=3, k_features=(8,), grids=GRIDS)
    kinds = [k for k in REGRESSOR_KINDS if k not in BASELINE_KINDS]
    table = ablation(simulated_table, {'esm': feature_groups()['esm']}, {'esm': mask_groups()['esm']},
                     _columns(['mobile']), default_specs(kinds), 7, settings, jobs=2)
    scores = table.groupby('variant')['mae'].mean()
    assert scores['with'] < scores['without']
