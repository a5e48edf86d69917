import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from analysis import (POOLED, CdfTable, app_overview, category_summary, cdf_points, cdf_table,
                      dagostino_k2, mood_response_correlations, mood_summary, normality_screen, spearman)
from conftest import DAY0_MS, MINUTE_MS
from errors import ConstantInput, DataError, TooFewSamples
from labeling import build_app_catalog


def _labels(responses, participant='P01', apps=None):
    responses = list(responses)
    return pd.DataFrame({
        'participant': participant,
        'app': apps or ['A'] * len(responses),
        'response_s': responses,
        'censored': [r is None or np.isnan(r) for r in responses],
    })


def _naive_spearman(x, y):
    def ranks(values):
        out = []
        for v in values:
            below = sum(1 for w in values if w < v)
            equal = sum(1 for w in values if w == v)
            out.append(below + (equal + 1) / 2)
        return out
    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return cov / (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5


def test_spearman_reversal():
    result = spearman([1, 2, 3], [3, 2, 1])
    assert result.rho == -1.0
    assert result.n == 3


def test_spearman_monotone_curve(rng):
    x = rng.normal(size=100)
    assert abs(spearman(x, np.exp(x)).rho - 1.0) < 1e-12


def test_spearman_with_ties():
    x, y = [1, 2, 2, 3], [1, 3, 2, 4]
    assert abs(spearman(x, y).rho - _naive_spearman(x, y)) < 1e-12


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=40))
def test_spearman_ignores_increasing_transforms(pairs):
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        with pytest.raises(ConstantInput):
            spearman(x, y)
        return
    base = spearman(x, y).rho
    assert abs(spearman(x ** 3 + 2 * x, np.exp(y / 10)).rho - base) < 1e-12
    assert abs(base - _naive_spearman(x.tolist(), y.tolist())) < 1e-9


def test_spearman_preconditions():
    with pytest.raises(TooFewSamples):
        spearman([1, 2], [2, 1])
    with pytest.raises(ConstantInput):
        spearman([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(DataError):
        spearman([1, 2, 3], [1, 2])


def test_permutation_p_value_is_seeded(rng):
    x = rng.normal(size=30)
    y = x + rng.normal(size=30)
    first = spearman(x, y, permutations=200, seed=3)
    second = spearman(x, y, permutations=200, seed=3)
    assert first.p_permutation == second.p_permutation
    assert 0 < first.p_permutation <= 1
    assert first.to_dict()['group'] == POOLED


def test_normal_samples_pass_dagostino():
    rng = np.random.default_rng(0)
    passes = sum(dagostino_k2(rng.normal(size=5_000))[1] > 0.05 for _ in range(100))
    assert passes >= 85


def test_lognormal_sample_fails_dagostino(rng):
    assert dagostino_k2(rng.lognormal(sigma=1.0, size=5_000))[1] < 0.001


def test_dagostino_needs_twenty_values():
    with pytest.raises(TooFewSamples):
        dagostino_k2(np.arange(10.0))


def test_cdf_counting():
    cdf = cdf_table(_labels([60, 400, 7_000]))
    pooled = cdf.pooled()
    assert_allclose([pooled[300.0], pooled[3_600.0], pooled[86_400.0]], [1 / 3, 2 / 3, 1.0])
    assert cdf.table['participant'].tolist() == ['P01', POOLED]
    assert CdfTable.column(300.0) == 'le_300s'


def test_cdf_edge_cases():
    assert cdf_table(_labels([])).table.empty
    assert cdf_table(_labels([])).pooled() == {}
    assert set(cdf_table(_labels([1.0] * 5)).pooled().values()) == {1.0}


def test_censored_rows_stay_in_the_denominator():
    pooled = cdf_table(_labels([60.0, np.nan])).pooled()
    assert pooled[86_400.0] == 0.5


def test_cdf_points():
    labels = pd.concat([_labels([30, 10, 20]), _labels([5.0, np.nan], participant='P02')], ignore_index=True)
    points = cdf_points(labels)
    first = points[points['group'] == 'P01']
    assert first['response_s'].tolist() == [10, 20, 30]
    assert_allclose(first['fraction'], [1 / 3, 2 / 3, 1.0])
    assert points[points['group'] == 'P02']['fraction'].tolist() == [1.0]
    with pytest.raises(DataError):
        cdf_points(labels, by='weekday')


def _esm(rows):
    return pd.DataFrame([{'utc_ms': DAY0_MS + minutes * MINUTE_MS, 'tz_offset_min': 0, 'valence': v,
                          'arousal': a, 'social_role': role, 'interruptibility': 'none'}
                         for minutes, v, a, role in rows])


def test_mood_by_time_of_day():
    summary = mood_summary(_esm([(10 * 60, 3, 2, 'work'), (20 * 60, 4, 3, 'private')]), 'time_of_day')
    means = summary.set_index('group')['valence_mean']
    assert means.to_dict() == {'evening': 4.0, 'morning': 3.0}
    assert summary['n'].tolist() == [1, 1]


def test_mood_overall_and_combined():
    esm = _esm([(10 * 60, 3, 2, 'work'), (11 * 60, 5, 4, 'work'), (20 * 60, 4, 3, 'private')])
    overall = mood_summary(esm)
    assert overall['group'].tolist() == ['all']
    assert_allclose(overall['valence_mean'], 4.0)
    assert_allclose(overall['valence_ci'], 1.96 * 1.0 / np.sqrt(3))
    combined = mood_summary(esm, ['time_of_day', 'weekday'])
    assert set(combined['group']) == {'morning/Monday', 'evening/Monday'}
    by_role = mood_summary(esm, 'social_role').set_index('group')
    assert by_role.loc['work', 'arousal_mean'] == 3.0


def test_mood_rejects_unknown_grouping():
    with pytest.raises(DataError):
        mood_summary(_esm([(600, 3, 3, 'work')]), 'season')
    assert mood_summary(_esm([]).reindex(columns=['utc_ms', 'valence']), 'weekday').empty


def test_category_means():
    labels = _labels([60, 120, 600, 30], apps=['whatsapp', 'gmail', 'chrome', 'mystery'])
    catalog = build_app_catalog(labels['app'], {'whatsapp': 'comm', 'gmail': 'comm', 'chrome': 'tools'})
    summary = category_summary(labels, catalog).set_index('category')
    assert summary.loc['comm', 'mean_s'] == 90.0
    assert summary.loc['tools', 'mean_s'] == 600.0
    assert summary.loc['other', 'n'] == 1
    assert category_summary(labels.iloc[:0], catalog).empty


def test_category_summary_skips_censored():
    labels = _labels([60, np.nan], apps=['a', 'a'])
    summary = category_summary(labels, build_app_catalog(labels['app']))
    assert summary['n'].tolist() == [1]


def test_app_overview():
    labels = pd.concat([_labels([1] * 9 + [2], apps=['A'] * 9 + ['B']),
                        _labels([1] * 4, participant='P02', apps=['C'] * 4)], ignore_index=True)
    per_participant, summary = app_overview(labels, ks=(1,))
    assert per_participant['top_1_coverage'].tolist() == [0.9, 1.0]
    assert per_participant['apps'].tolist() == [2, 1]
    row = summary.set_index('statistic').loc['mean']
    assert_allclose(row['top_1_coverage'], 0.95)


def _feature_rows(rng, n=200):
    valence = rng.integers(1, 6, size=n).astype(float)
    response = np.exp(4 - 0.5 * valence + rng.normal(size=n))
    return pd.DataFrame({'participant': np.where(np.arange(n) < n / 2, 'P01', 'P02'),
                         'valence': valence, 'arousal': rng.integers(1, 6, size=n).astype(float),
                         'response_s': response, 'esm_missing': 0.0})


def test_mood_response_correlation_sign(rng):
    results = mood_response_correlations(_feature_rows(rng))
    pooled = {r.x: r for r in results if r.group == POOLED}
    assert pooled['valence'].rho < 0
    assert pooled['valence'].p_value < 0.05
    assert {r.group for r in results} == {POOLED, 'P01', 'P02'}


def test_masked_rows_are_left_out(rng):
    rows = _feature_rows(rng, n=40)
    rows.loc[:34, 'esm_missing'] = 1.0
    results = mood_response_correlations(rows, per_participant=False)
    assert [r.n for r in results] == [5, 5]


def test_mood_correlations_need_five_rows(rng):
    rows = _feature_rows(rng, n=40)
    rows.loc[:35, 'esm_missing'] = 1.0
    assert mood_response_correlations(rows, per_participant=False) == []
    with pytest.raises(TooFewSamples):
        spearman([1, 2, 3, 4], [4, 3, 1, 2], min_n=5)
    assert spearman([1, 2, 3, 4, 5], [5, 4, 3, 1, 2], min_n=5).n == 5


def test_normality_screen(rng):
    screen = normality_screen(_feature_rows(rng))
    assert screen['variable'].tolist() == ['valence', 'arousal', 'response_s']
    assert screen.set_index('variable').loc['response_s', 'p_value'] < 0.001
    tiny = normality_screen(_feature_rows(rng, n=10))
    assert tiny['p_value'].isna().all()
