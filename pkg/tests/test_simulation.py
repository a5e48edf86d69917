import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from analysis import mood_response_correlations
from conftest import MINUTE_MS
from errors import CalibrationFailed, InvalidConfig
from event_model import parse_event_log
from features import build_feature_table, mask_groups
from labeling import pair_response_times
from simulation import (EsmConfig, GeneratorConfig, PhysioConfig, app_catalog, calibrate, check_generator_config,
                        generate, merge_intervals, observed_cdf, popularity, schedule_prompts, top_k_share,
                        write_dataset, _calibration_pool)

HOUR_S = 3_600.0


def test_idle_day_gets_every_scheduled_prompt():
    prompts = schedule_prompts(1, [], [])
    assert len(prompts) == 10
    assert set(prompts['kind']) == {'scheduled'}
    assert prompts['time_s'].iloc[0] == 7 * HOUR_S
    assert prompts['time_s'].iloc[-1] == 20.5 * HOUR_S


def test_long_use_triggers_an_event_prompt():
    prompts = schedule_prompts(1, [8 * HOUR_S], [8 * HOUR_S + 12 * 60])
    event_time = 8 * HOUR_S + 10 * 60
    events = prompts[prompts['kind'] == 'event']
    assert events['time_s'].tolist() == [event_time]
    later = prompts['time_s'][(prompts['time_s'] > event_time) & (prompts['time_s'] < 8 * HOUR_S + 40 * 60)]
    assert later.empty
    assert 8.5 * HOUR_S not in prompts['time_s'].tolist()


def test_short_use_and_night_use_trigger_nothing():
    prompts = schedule_prompts(1, [8 * HOUR_S, 2 * HOUR_S], [8 * HOUR_S + 9 * 60, 3 * HOUR_S])
    assert set(prompts['kind']) == {'scheduled'}


@given(st.lists(st.tuples(st.floats(0, 2 * 86_400), st.floats(0, 3_600)), max_size=30))
def test_prompts_keep_their_distance(sessions):
    starts = [s for s, _ in sessions]
    ends = [s + d for s, d in sessions]
    esm = EsmConfig()
    times = schedule_prompts(2, *merge_intervals(starts, ends), esm=esm)['time_s'].to_numpy()
    assert np.all(np.diff(times) >= esm.min_gap_min * 60.0)
    hours = (times % 86_400) / HOUR_S
    assert np.all((hours >= esm.window_start_hour) & (hours < esm.window_end_hour))


def test_merge_intervals():
    starts, ends = merge_intervals([10, 0, 3], [12, 5, 8])
    assert starts.tolist() == [0, 10]
    assert ends.tolist() == [8, 12]
    empty = merge_intervals([], [])
    assert empty[0].size == 0


def test_popularity_is_a_decreasing_distribution():
    shares = popularity(25, 1.8)
    assert abs(shares.sum() - 1.0) < 1e-12
    assert np.all(np.diff(shares) < 0)
    assert len(app_catalog(30)) == 30
    assert app_catalog(30)[-1] == ('org.example.app30', 'other')


def test_top_k_share_grows_with_skew(tiny_generator_config):
    flat = tiny_generator_config.model_copy(update={'apps': tiny_generator_config.apps.model_copy(
        update={'popularity_exponent': 0.0})})
    assert top_k_share(flat, 10) == pytest.approx(10 / 25)
    assert top_k_share(tiny_generator_config, 10) > 0.9


def test_invalid_generator_settings(tiny_generator_config):
    esm = tiny_generator_config.esm.model_copy(update={'answer_probability': 1.5})
    with pytest.raises(InvalidConfig):
        check_generator_config(tiny_generator_config.model_copy(update={'esm': esm}))
    notifications = tiny_generator_config.notifications.model_copy(update={'rate_per_hour': {'morning': 1.0}})
    with pytest.raises(InvalidConfig):
        check_generator_config(tiny_generator_config.model_copy(update={'notifications': notifications}))


def test_generation_is_deterministic(tiny_generator_config):
    first, truth = generate(tiny_generator_config)
    second, _ = generate(tiny_generator_config, jobs=2)
    assert [log.participant for log in first] == ['P01', 'P02']
    for a, b in zip(first, second):
        pd.testing.assert_frame_equal(a.notifications, b.notifications)
        pd.testing.assert_frame_equal(a.esm_responses, b.esm_responses)
    assert len(truth.notifications) == sum(len(log.notifications) for log in first)


def test_seed_changes_the_cohort(tiny_generator_config):
    other = tiny_generator_config.model_copy(update={'seed': 12})
    assert not generate(tiny_generator_config)[0][0].notifications.equals(generate(other)[0][0].notifications)


def test_unanswered_questionnaires(tiny_generator_config):
    esm = tiny_generator_config.esm.model_copy(update={'answer_probability': 0.0})
    logs, truth = generate(tiny_generator_config.model_copy(update={'esm': esm}))
    assert all(log.esm_responses.empty for log in logs)
    assert len(truth.prompts) > 0
    assert not truth.prompts['answered'].any()


def test_prompts_respect_window_and_gap(tiny_generator_config):
    logs, truth = generate(tiny_generator_config)
    for log in logs:
        prompts = truth.prompts[truth.prompts['participant'] == log.participant]['utc_ms'].to_numpy()
        assert np.all(np.diff(prompts) >= 30 * MINUTE_MS - 1)
        local_hour = ((prompts - log.study_start_ms) / 1000.0 % 86_400) / HOUR_S
        assert np.all((local_hour >= 7.0 - 1e-6) & (local_hour < 22.0))


def test_labels_never_exceed_planted_responses(tiny_generator_config):
    logs, truth = generate(tiny_generator_config)
    planted = truth.notifications.set_index('notification_id')
    for log in logs:
        labels = pair_response_times(log).set_index('notification_id')
        answered = labels['response_s'].notna() & ~planted.loc[labels.index, 'censored']
        assert answered.any()
        gap = labels.loc[answered, 'response_s'] - planted.loc[labels.index[answered], 'response_s']
        assert gap.max() <= 1e-3 + 1e-6


def test_dataset_can_be_parsed_back(tmp_path, tiny_generator_config):
    logs, truth = generate(tiny_generator_config)
    directory = write_dataset(logs, truth, tiny_generator_config, tmp_path / 'cohort')
    manifest = json.loads((directory / 'manifest.json').read_text())
    assert manifest['participants'] == ['P01', 'P02']
    assert len(manifest['generator_hash']) == 64
    assert (directory / 'ground_truth' / 'coefficients.json').exists()
    parsed = parse_event_log(directory / 'P01')
    assert len(parsed.notifications) == len(logs[0].notifications)
    assert parsed.tz_offset_minutes == 60


def test_unreachable_targets_fail(tiny_generator_config):
    with pytest.raises(CalibrationFailed):
        calibrate(tiny_generator_config, (0.9, 0.1, 0.95))
    with pytest.raises(CalibrationFailed):
        calibrate(tiny_generator_config, (0.5, 0.7))


@pytest.mark.slow
def test_calibration_hits_the_targets(tiny_generator_config):
    config = tiny_generator_config.model_copy(update={'n_participants': 3, 'days': 7})
    targets = config.calibration.targets
    calibrated = calibrate(config)
    assert calibrated.response.intercept != config.response.intercept
    shares = observed_cdf(_calibration_pool(calibrated), calibrated.response.intercept, calibrated.response.sigma,
                          calibrated.response.max_response_days * 86_400)
    assert np.all(np.abs(shares - np.array(targets)) <= config.calibration.tolerance)


def test_default_top_ten_coverage(tiny_generator_config):
    assert abs(top_k_share(tiny_generator_config, 10) - 0.943) <= 0.02


@pytest.mark.slow
def test_planted_valence_effect_shows_in_the_features(tiny_generator_config):
    config = tiny_generator_config.model_copy(update={'n_participants': 8, 'days': 14})
    logs, _ = generate(config)
    table = pd.concat([build_feature_table(log, pair_response_times(log)) for log in logs], ignore_index=True)
    pooled = {r.x: r for r in mood_response_correlations(table, per_participant=False)}
    assert pooled['valence'].rho < 0
    assert pooled['valence'].p_value < 0.05


def test_session_start_must_fall_inside_a_day(tiny_generator_config):
    physio = tiny_generator_config.physio.model_copy(update={'session_start_hour': 24.0})
    with pytest.raises(InvalidConfig, match='session_start_hour'):
        check_generator_config(tiny_generator_config.model_copy(update={'physio': physio}))


def test_default_wear_session_covers_a_working_day():
    physio = PhysioConfig()
    assert physio.session_start_hour <= 9.0
    assert physio.session_start_hour + physio.session_hours >= 21.0


@pytest.mark.slow
def test_default_wearers_have_enough_wristband_rows():
    config = GeneratorConfig.model_validate({
        'seed': 5, 'n_participants': 3, 'days': 7,
        'calibration': {'enabled': False}, 'physio': {'wear_fraction': 1.0},
    })
    logs, _ = generate(config)
    e4_masks = mask_groups()['e4']
    for log in logs:
        assert not log.physio.is_empty
        table = build_feature_table(log, pair_response_times(log))
        covered = (table[e4_masks] == 0).all(axis=1)
        # min_instances in config/default.toml
        assert covered.sum() >= 25


@pytest.mark.slow
def test_thirty_days_answer_at_the_configured_rate():
    config = GeneratorConfig.model_validate({
        'seed': 8, 'n_participants': 6, 'days': 30,
        'calibration': {'enabled': False}, 'physio': {'wear_fraction': 0.0},
    })
    logs, truth = generate(config)
    assert len(truth.prompts) > 1_000
    assert abs(truth.prompts['answered'].mean() - 0.2837) <= 0.03
    assert sum(len(log.esm_responses) for log in logs) == int(truth.prompts['answered'].sum())
