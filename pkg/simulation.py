"""
Simulation Module
Synthetic participants: notification streams, phone use, questionnaire prompts and
answers, wristband signals, and response times drawn from a planted log-linear model.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from openlocationcode import openlocationcode as olc
from pydantic import BaseModel, ConfigDict
from scipy import signal

from errors import CalibrationFailed, InvalidConfig
from event_model import (ACC_COUNTS_PER_G, EventLog, IbiSeries, PhysioChannel, PhysioRecording,
                         TABLES, Timestamp, write_event_log)
from utils import TIME_OF_DAY_BUCKETS, canonical_json, convert_df_to_csv, sha256_bytes

logger = logging.getLogger(__name__)

BUCKETS = tuple(name for name, _, _ in TIME_OF_DAY_BUCKETS)
_BUCKET_EDGES = [start for _, start, _ in TIME_OF_DAY_BUCKETS][1:]

DAY_S = 86_400
CDF_HORIZONS_S = (300.0, 3_600.0, 86_400.0)

# Notifying apps in popularity order, with their category
NOTIFYING_APPS: Tuple[Tuple[str, str], ...] = (
    ('com.whatsapp', 'messaging'),
    ('android', 'system'),
    ('com.google.android.gm', 'email'),
    ('com.instagram.android', 'social'),
    ('org.telegram.messenger', 'messaging'),
    ('com.android.systemui', 'system'),
    ('com.google.android.gms', 'system'),
    ('com.facebook.orca', 'messaging'),
    ('com.google.android.calendar', 'calendar'),
    ('com.Slack', 'productivity'),
    ('com.facebook.katana', 'social'),
    ('com.google.android.apps.messaging', 'messaging'),
    ('com.microsoft.office.outlook', 'email'),
    ('com.twitter.android', 'social'),
    ('com.snapchat.android', 'social'),
    ('com.spotify.music', 'music'),
    ('com.google.android.youtube', 'video'),
    ('com.reddit.frontpage', 'social'),
    ('com.microsoft.teams', 'productivity'),
    ('org.thoughtcrime.securesms', 'messaging'),
    ('com.amazon.mShop.android.shopping', 'shopping'),
    ('com.weather.Weather', 'weather'),
    ('com.fitbit.FitbitMobile', 'fitness'),
    ('com.google.android.apps.magazines', 'news'),
    ('com.king.candycrushsaga', 'games'),
)

# Apps opened during free use; they never notify
FREE_USE_APPS: Tuple[str, ...] = (
    'com.android.chrome', 'com.google.android.apps.maps', 'com.android.camera2',
    'com.google.android.apps.photos', 'com.android.settings', 'com.netflix.mediaclient',
    'com.google.android.apps.docs', 'com.android.vending',
)

_CONTACT_CATEGORIES = {'messaging': 1.0, 'email': 0.5}
_RELATION_SETS = ('family', 'friend', 'work', 'none', 'family;friend', 'friend;work')
_RELATION_WEIGHTS = (0.25, 0.35, 0.2, 0.1, 0.05, 0.05)
_ACTIVITY_WEIGHTS = {'still': 0.7, 'walking': 0.1, 'in_vehicle': 0.08, 'on_foot': 0.04,
                     'running': 0.02, 'cycling': 0.02, 'tilting': 0.02, 'unknown': 0.02}
_ROLE_WEIGHTS = {'private': 0.55, 'work': 0.3, 'both': 0.15}
_INTERRUPTIBILITY_WEIGHTS = {'private': 0.35, 'work': 0.2, 'both': 0.25, 'none': 0.2}

_STREAMS = ('mood', 'usage', 'notifications', 'response', 'esm', 'context', 'physio')


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class AppsConfig(_Section):
    count: int = 25
    popularity_exponent: float = 1.8


class NotificationConfig(_Section):
    rate_per_hour: Dict[str, float] = {'midnight': 0.6, 'morning': 3.5, 'afternoon': 4.0, 'evening': 3.8}
    content_length_mean: float = 60.0
    contacts: int = 20


class UsageConfig(_Section):
    session_rate_per_hour: Dict[str, float] = {'midnight': 0.3, 'morning': 4.0, 'afternoon': 4.0, 'evening': 5.0}
    session_median_s: float = 120.0
    session_sigma: float = 1.0
    session_max_s: float = 2_700.0
    activity_rate_per_hour: float = 6.0
    location_interval_min: float = 30.0


class EsmConfig(_Section):
    period_min: float = 90.0
    window_start_hour: float = 7.0
    window_end_hour: float = 22.0
    trigger_min: float = 10.0
    min_gap_min: float = 30.0
    answer_probability: float = 0.2837
    answer_delay_mean_s: float = 60.0
    answer_noise_sd: float = 0.5


class MoodConfig(_Section):
    step_min: float = 15.0
    persistence: float = 0.9
    sd: float = 0.8
    valence_means: Dict[str, float] = {'midnight': 3.28, 'morning': 3.40, 'afternoon': 3.45, 'evening': 3.56}
    arousal_means: Dict[str, float] = {'midnight': 2.97, 'morning': 2.85, 'afternoon': 2.80, 'evening': 2.58}


class ResponseConfig(_Section):
    intercept: float = 5.27
    beta_valence: float = -0.6
    beta_arousal: float = 0.3
    beta_screen_on: float = -3.5
    beta_time_of_day: Dict[str, float] = {'midnight': 1.5, 'morning': 0.0, 'afternoon': 0.0, 'evening': -0.3}
    app_effect_sd: float = 0.5
    sigma: float = 3.5
    max_response_days: float = 7.0
    open_duration_s: float = 30.0


class PhysioConfig(_Section):
    wear_fraction: float = 0.67
    session_hours: float = 12.0
    session_start_hour: float = 9.0
    eda_tonic: float = 2.0
    eda_arousal_gain: float = 0.3
    scr_rate_per_min: float = 1.0
    scr_arousal_gain: float = 0.5
    scr_amplitude: float = 0.3
    scr_rise_s: float = 0.75
    scr_decay_s: float = 4.0
    hr_baseline: float = 70.0
    hr_arousal_gain: float = 4.0
    hr_noise_sd: float = 1.5
    skin_temperature: float = 33.0


class CalibrationConfig(_Section):
    enabled: bool = True
    targets: Tuple[float, float, float] = (0.5432, 0.7586, 0.9390)
    tolerance: float = 0.02
    max_iterations: int = 100


class GeneratorConfig(_Section):
    seed: int
    n_participants: int = 18
    days: int = 30
    start_date: date = date(2020, 1, 27)
    tz_offset_minutes: int = 60
    apps: AppsConfig = AppsConfig()
    notifications: NotificationConfig = NotificationConfig()
    usage: UsageConfig = UsageConfig()
    esm: EsmConfig = EsmConfig()
    mood: MoodConfig = MoodConfig()
    response: ResponseConfig = ResponseConfig()
    physio: PhysioConfig = PhysioConfig()
    calibration: CalibrationConfig = CalibrationConfig()


def check_generator_config(config: GeneratorConfig) -> GeneratorConfig:
    """
    Reject configurations the generator cannot honour.

    Raises:
        InvalidConfig: on the first violated constraint
    """
    problems = []
    for label, mapping in (('notifications.rate_per_hour', config.notifications.rate_per_hour),
                           ('usage.session_rate_per_hour', config.usage.session_rate_per_hour),
                           ('mood.valence_means', config.mood.valence_means),
                           ('mood.arousal_means', config.mood.arousal_means),
                           ('response.beta_time_of_day', config.response.beta_time_of_day)):
        if set(mapping) != set(BUCKETS):
            problems.append(f"{label} needs exactly the keys {', '.join(BUCKETS)}")
    rates = {
        'notifications.rate_per_hour': min(config.notifications.rate_per_hour.values(), default=0.0),
        'usage.session_rate_per_hour': min(config.usage.session_rate_per_hour.values(), default=0.0),
        'usage.activity_rate_per_hour': config.usage.activity_rate_per_hour,
        'usage.location_interval_min': config.usage.location_interval_min,
        'usage.session_median_s': config.usage.session_median_s,
        'esm.period_min': config.esm.period_min,
        'mood.step_min': config.mood.step_min,
        'physio.scr_rate_per_min': config.physio.scr_rate_per_min,
        'physio.session_hours': config.physio.session_hours,
        'physio.scr_decay_s': config.physio.scr_decay_s,
        'physio.scr_rise_s': config.physio.scr_rise_s,
        'physio.hr_baseline': config.physio.hr_baseline,
        'response.sigma': config.response.sigma,
        'response.max_response_days': config.response.max_response_days,
    }
    problems.extend(f"{name} must be > 0" for name, value in rates.items() if not value > 0)
    if config.n_participants < 1 or config.days < 1 or config.apps.count < 1:
        problems.append('n_participants, days and apps.count must be at least 1')
    if not 0.0 <= config.esm.answer_probability <= 1.0:
        problems.append('esm.answer_probability must lie in [0, 1]')
    if not 0.0 <= config.physio.wear_fraction <= 1.0:
        problems.append('physio.wear_fraction must lie in [0, 1]')
    if not 0.0 <= config.physio.session_start_hour < 24.0:
        problems.append('physio.session_start_hour must lie in [0, 24)')
    if not 0.0 <= config.mood.persistence < 1.0:
        problems.append('mood.persistence must lie in [0, 1)')
    if not 0.0 <= config.esm.window_start_hour < config.esm.window_end_hour <= 24.0:
        problems.append('esm window must satisfy 0 <= start < end <= 24')
    if config.physio.scr_decay_s <= config.physio.scr_rise_s:
        problems.append('physio.scr_decay_s must exceed physio.scr_rise_s')
    if config.apps.popularity_exponent < 0 or config.usage.session_sigma < 0 or config.mood.sd < 0:
        problems.append('popularity exponent, session sigma and mood sd must be non-negative')
    if problems:
        raise InvalidConfig('; '.join(problems))
    return config


def app_catalog(count: int) -> List[Tuple[str, str]]:
    """The first ``count`` notifying apps in popularity order; extra apps are numbered."""
    apps = list(NOTIFYING_APPS[:count])
    apps.extend((f"org.example.app{i:02d}", 'other') for i in range(len(apps) + 1, count + 1))
    return apps


def popularity(count: int, exponent: float) -> np.ndarray:
    """Zipf notification shares over app ranks 1..count."""
    weights = 1.0 / np.arange(1, count + 1) ** exponent
    return weights / weights.sum()


def _bucket_index(hours) -> np.ndarray:
    return np.searchsorted(_BUCKET_EDGES, np.asarray(hours), side='right')


def _per_bucket(mapping: Mapping[str, float], hours) -> np.ndarray:
    return np.array([mapping[name] for name in BUCKETS], dtype=float)[_bucket_index(hours)]


def _hour_of_day(local_s) -> np.ndarray:
    return (np.asarray(local_s) % DAY_S) // 3600


def _hourly_poisson(rng, days: int, rate_per_hour: np.ndarray) -> np.ndarray:
    """Event times (seconds from study start) of a process with piecewise-constant hourly rate."""
    counts = rng.poisson(rate_per_hour)
    starts = np.repeat(np.arange(days * 24) * 3600.0, counts)
    return np.sort(starts + rng.uniform(0.0, 3600.0, counts.sum()))


def merge_intervals(starts, ends) -> Tuple[np.ndarray, np.ndarray]:
    """Union of [start, end] intervals as sorted, disjoint, non-touching intervals."""
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    if starts.size == 0:
        return starts, ends
    order = np.argsort(starts, kind='stable')
    starts, ends = starts[order], ends[order]
    reach = np.maximum.accumulate(ends)
    opens = np.ones(starts.size, dtype=bool)
    opens[1:] = starts[1:] > reach[:-1]
    first = np.flatnonzero(opens)
    return starts[first], np.maximum.reduceat(ends, first)


def schedule_prompts(days: int, use_starts, use_ends, esm: EsmConfig = EsmConfig()) -> pd.DataFrame:
    """
    Questionnaire prompts for a participant.

    Scheduled prompts fire every period inside the daily window. An event prompt
    fires once continuous phone use reaches the trigger length. Candidates are
    taken in time order and any prompt closer than the minimum gap to the last
    kept prompt is dropped.

    Args:
        days: Study length
        use_starts: Start of each continuous use interval (seconds from study start)
        use_ends: End of each interval
        esm: Scheduler settings

    Returns:
        DataFrame with columns time_s and kind ('scheduled' or 'event')
    """
    window_start = esm.window_start_hour * 3600.0
    window_end = esm.window_end_hour * 3600.0
    per_day = np.arange(window_start, window_end, esm.period_min * 60.0)
    scheduled = (np.arange(days)[:, None] * DAY_S + per_day[None, :]).ravel()

    use_starts = np.asarray(use_starts, dtype=float)
    use_ends = np.asarray(use_ends, dtype=float)
    trigger = esm.trigger_min * 60.0
    long_use = (use_ends - use_starts) > trigger
    events = use_starts[long_use] + trigger
    time_of_day = events % DAY_S
    events = events[(time_of_day >= window_start) & (time_of_day < window_end) & (events < days * DAY_S)]

    candidates = pd.DataFrame({
        'time_s': np.concatenate([scheduled, events]),
        'kind': ['scheduled'] * len(scheduled) + ['event'] * len(events),
        'order': [0] * len(scheduled) + [1] * len(events),
    }).sort_values(['time_s', 'order'], kind='mergesort')

    kept = []
    last = -math.inf
    gap = esm.min_gap_min * 60.0
    for time_s, kind in zip(candidates['time_s'].to_numpy(), candidates['kind'].to_numpy()):
        if time_s - last >= gap:
            kept.append((float(time_s), kind))
            last = time_s
    return pd.DataFrame(kept, columns=['time_s', 'kind'])


@dataclass(frozen=True, eq=False)
class _Behaviour:
    """Draws shared by generation and calibration; none depends on intercept or sigma."""

    index: int
    participant: str
    start_ms: int
    valence: np.ndarray
    arousal: np.ndarray
    step_s: float
    free_starts: np.ndarray
    free_ends: np.ndarray
    free_apps: np.ndarray
    arrivals_s: np.ndarray
    app_index: np.ndarray
    screen_on: np.ndarray
    bucket: np.ndarray
    app_effects: np.ndarray
    eta: np.ndarray
    noise: np.ndarray

    def mood_at(self, local_s) -> Tuple[np.ndarray, np.ndarray]:
        return _mood_at(self.valence, self.arousal, self.step_s, local_s)

    @property
    def arrival_ms(self) -> np.ndarray:
        return np.round(self.arrivals_s * 1000.0).astype(np.int64)


def _mood_at(valence, arousal, step_s: float, local_s) -> Tuple[np.ndarray, np.ndarray]:
    steps = np.clip((np.asarray(local_s) // step_s).astype(int), 0, len(valence) - 1)
    return valence[steps], arousal[steps]


def _study_start_ms(config: GeneratorConfig) -> int:
    tz = timezone(timedelta(minutes=config.tz_offset_minutes))
    midnight = datetime(config.start_date.year, config.start_date.month, config.start_date.day, tzinfo=tz)
    return int(midnight.timestamp() * 1000)


def _streams(config: GeneratorConfig, index: int) -> Dict[str, np.random.Generator]:
    child = np.random.SeedSequence(config.seed).spawn(config.n_participants)[index]
    return {name: np.random.default_rng(seed) for name, seed in zip(_STREAMS, child.spawn(len(_STREAMS)))}


def _mood_path(mood: MoodConfig, days: int, rng) -> Tuple[np.ndarray, np.ndarray, float]:
    """AR(1) deviations around diurnal means, one value per step."""
    step_s = mood.step_min * 60.0
    steps = int(days * DAY_S // step_s) + 1
    hours = _hour_of_day(np.arange(steps) * step_s)
    innovation = math.sqrt(1.0 - mood.persistence ** 2) * mood.sd
    paths = []
    for means in (mood.valence_means, mood.arousal_means):
        initial = rng.normal(0.0, mood.sd)
        deviation, _ = signal.lfilter([innovation], [1.0, -mood.persistence], rng.standard_normal(steps),
                                      zi=[mood.persistence * initial])
        paths.append(_per_bucket(means, hours) + deviation)
    return paths[0], paths[1], step_s


def _draw_behaviour(config: GeneratorConfig, index: int, streams) -> _Behaviour:
    days = config.days
    hours = _hour_of_day(np.arange(days * 24) * 3600.0)
    valence, arousal, step_s = _mood_path(config.mood, days, streams['mood'])

    usage = config.usage
    rng = streams['usage']
    free_starts = _hourly_poisson(rng, days, _per_bucket(usage.session_rate_per_hour, hours))
    durations = np.minimum(rng.lognormal(math.log(usage.session_median_s), usage.session_sigma,
                                         free_starts.size), usage.session_max_s)
    free_apps = rng.integers(0, len(FREE_USE_APPS), free_starts.size)

    rng = streams['notifications']
    arrivals = _hourly_poisson(rng, days, _per_bucket(config.notifications.rate_per_hour, hours))
    app_index = rng.choice(config.apps.count, size=arrivals.size,
                           p=popularity(config.apps.count, config.apps.popularity_exponent))

    merged_starts, merged_ends = merge_intervals(free_starts, free_starts + durations)
    position = np.searchsorted(merged_starts, arrivals, side='right') - 1
    screen_on = (position >= 0) & (arrivals <= merged_ends[np.maximum(position, 0)])

    response = config.response
    rng = streams['response']
    app_effects = rng.normal(0.0, response.app_effect_sd, config.apps.count)
    noise = rng.standard_normal(arrivals.size)

    bucket = _bucket_index(_hour_of_day(arrivals))
    v, a = _mood_at(valence, arousal, step_s, arrivals)
    tod = np.array([response.beta_time_of_day[name] for name in BUCKETS])[bucket]
    eta = (response.beta_valence * (v - 3.0) + response.beta_arousal * (a - 3.0)
           + response.beta_screen_on * screen_on + tod + app_effects[app_index])
    return _Behaviour(
        index=index, participant=f"P{index + 1:02d}", start_ms=_study_start_ms(config),
        valence=valence, arousal=arousal, step_s=step_s,
        free_starts=free_starts, free_ends=free_starts + durations, free_apps=free_apps,
        arrivals_s=arrivals, app_index=app_index, screen_on=screen_on, bucket=bucket,
        app_effects=app_effects, eta=eta, noise=noise,
    )


def response_seconds(intercept: float, sigma: float, eta, noise) -> np.ndarray:
    """Planted response times: exp(intercept + eta + sigma * noise)."""
    return np.exp(np.minimum(intercept + np.asarray(eta) + sigma * np.asarray(noise), 700.0))


def _open_offsets_ms(seconds: np.ndarray) -> np.ndarray:
    return np.maximum(1, np.ceil(seconds * 1000.0)).astype(np.int64)


def _relation_table(participant: str, config: GeneratorConfig, rng) -> pd.DataFrame:
    hashes = [hashlib.sha256(f"{config.seed}:{participant}:{k}".encode()).hexdigest()[:16]
              for k in range(config.notifications.contacts)]
    relations = rng.choice(_RELATION_SETS, size=len(hashes), p=_RELATION_WEIGHTS)
    return pd.DataFrame({'contact_hash': hashes, 'relations': relations}, columns=list(TABLES['contact_relations'].columns))


def _places(rng, count: int = 8) -> List[str]:
    lat = 47.0 + rng.uniform(0.0, 2.0)
    lon = 8.0 + rng.uniform(0.0, 2.0)
    offsets = rng.uniform(-0.05, 0.05, size=(count, 2))
    return [olc.encode(lat + dy, lon + dx, 10) for dy, dx in offsets]


def _location_table(behaviour: _Behaviour, config: GeneratorConfig, tz: int, rng) -> pd.DataFrame:
    interval = config.usage.location_interval_min * 60.0
    slots = np.arange(0.0, config.days * DAY_S, interval) + rng.uniform(0.0, 60.0)
    hours = _hour_of_day(slots)
    weekday = ((slots // DAY_S).astype(int) + config.start_date.weekday()) % 7 < 5
    places = _places(rng)
    others = popularity(len(places) - 2, 1.0)
    place = 2 + rng.choice(len(places) - 2, size=slots.size, p=others)
    draw = rng.random(slots.size)
    at_work = weekday & (hours >= 9) & (hours < 17) & (draw < 0.8)
    at_home = (hours < 7) | (hours >= 22) | (~at_work & (draw < 0.6))
    place = np.where(at_work, 1, np.where(at_home, 0, place))
    return pd.DataFrame({
        'plus_code': [places[i] for i in place],
        'utc_ms': behaviour.start_ms + np.round(slots * 1000.0).astype(np.int64),
        'tz_offset_min': tz,
    }, columns=list(TABLES['location_events'].columns))


def _activity_table(behaviour: _Behaviour, config: GeneratorConfig, tz: int, rng) -> pd.DataFrame:
    rate = np.full(config.days * 24, config.usage.activity_rate_per_hour)
    times = _hourly_poisson(rng, config.days, rate)
    labels = list(_ACTIVITY_WEIGHTS)
    return pd.DataFrame({
        'activity': rng.choice(labels, size=times.size, p=list(_ACTIVITY_WEIGHTS.values())),
        'confidence': rng.integers(40, 101, times.size),
        'utc_ms': behaviour.start_ms + np.round(times * 1000.0).astype(np.int64),
        'tz_offset_min': tz,
    }, columns=list(TABLES['activity_events'].columns))


def _esm_answers(behaviour: _Behaviour, prompts: pd.DataFrame, config: GeneratorConfig, tz: int,
                 rng) -> Tuple[pd.DataFrame, np.ndarray]:
    esm = config.esm
    answered = rng.random(len(prompts)) < esm.answer_probability
    delays = np.minimum(rng.exponential(esm.answer_delay_mean_s, len(prompts)), 600.0)
    times = prompts['time_s'].to_numpy() + delays
    v, a = behaviour.mood_at(times)
    valence = np.clip(np.rint(v + rng.normal(0.0, esm.answer_noise_sd, len(prompts))), 1, 5).astype(int)
    arousal = np.clip(np.rint(a + rng.normal(0.0, esm.answer_noise_sd, len(prompts))), 1, 5).astype(int)
    roles = rng.choice(list(_ROLE_WEIGHTS), size=len(prompts), p=list(_ROLE_WEIGHTS.values()))
    interrupt = rng.choice(list(_INTERRUPTIBILITY_WEIGHTS), size=len(prompts),
                           p=list(_INTERRUPTIBILITY_WEIGHTS.values()))
    table = pd.DataFrame({
        'utc_ms': behaviour.start_ms + np.round(times * 1000.0).astype(np.int64),
        'tz_offset_min': tz,
        'valence': valence,
        'arousal': arousal,
        'social_role': roles,
        'interruptibility': interrupt,
    }, columns=list(TABLES['esm_responses'].columns))
    return table[answered].reset_index(drop=True), answered


def _eda(t: np.ndarray, arousal: np.ndarray, physio: PhysioConfig, rng) -> np.ndarray:
    rate_hz = 4.0
    tonic = physio.eda_tonic + physio.eda_arousal_gain * (arousal - 3.0) + 0.2 * np.sin(2 * np.pi * t / 3600.0)
    scr_per_s = physio.scr_rate_per_min / 60.0 * np.exp(physio.scr_arousal_gain * (arousal - 3.0))
    onsets = rng.random(t.size) < scr_per_s / rate_hz
    impulses = np.where(onsets, rng.exponential(physio.scr_amplitude, t.size), 0.0)
    k = np.arange(0.0, 6.0 * physio.scr_decay_s, 1.0 / rate_hz)
    kernel = np.exp(-k / physio.scr_decay_s) - np.exp(-k / physio.scr_rise_s)
    kernel /= kernel.max()
    phasic = signal.fftconvolve(impulses, kernel)[:t.size]
    return np.maximum(tonic + phasic + rng.normal(0.0, 0.002, t.size), 0.01)


def _ibi(duration_s: float, hr: np.ndarray, rng) -> Tuple[np.ndarray, np.ndarray]:
    offsets, intervals = [], []
    elapsed = 0.0
    last = hr.size - 1
    while True:
        rate = hr[min(int(elapsed), last)]
        interval = (60.0 / rate + 0.025 * np.sin(2 * np.pi * 0.1 * elapsed)
                    + 0.015 * np.sin(2 * np.pi * 0.25 * elapsed) + rng.normal(0.0, 0.005))
        if elapsed + interval >= duration_s:
            break
        elapsed += interval
        offsets.append(elapsed)
        intervals.append(interval)
    return np.array(offsets), np.array(intervals)


def _physio_recording(behaviour: _Behaviour, config: GeneratorConfig, tz: int, rng) -> Tuple[PhysioRecording, Optional[float]]:
    physio = config.physio
    if not rng.random() < physio.wear_fraction:
        return PhysioRecording(), None
    day = int(rng.integers(0, config.days))
    begin = day * DAY_S + physio.session_start_hour * 3600.0
    duration = physio.session_hours * 3600.0
    start = Timestamp(behaviour.start_ms + int(round(begin * 1000.0)), tz)

    def timeline(rate_hz):
        t = begin + np.arange(int(duration * rate_hz)) / rate_hz
        return t, behaviour.mood_at(t)[1]

    t, arousal = timeline(1.0)
    hr = physio.hr_baseline + physio.hr_arousal_gain * (arousal - 3.0) + rng.normal(0.0, physio.hr_noise_sd, t.size)
    t4, arousal4 = timeline(4.0)
    eda = _eda(t4, arousal4, physio, rng)
    temperature = physio.skin_temperature + 0.3 * np.sin(2 * np.pi * t4 / 7200.0) + rng.normal(0.0, 0.02, t4.size)
    t64 = begin + np.arange(int(duration * 64)) / 64.0
    phase = 2 * np.pi * np.cumsum(np.interp(t64, t, hr) / 60.0) / 64.0
    bvp = 60.0 * np.sin(phase) + rng.normal(0.0, 5.0, t64.size)
    n32 = int(duration * 32)
    axes = {
        'ACC_X': rng.normal(0.0, 0.1, n32),
        'ACC_Y': rng.normal(0.0, 0.05, n32),
        'ACC_Z': 1.0 + rng.normal(0.0, 0.05, n32),
    }
    offsets, intervals = _ibi(duration, hr, rng)

    channels = {
        'EDA': PhysioChannel('EDA', start, 4.0, eda),
        'BVP': PhysioChannel('BVP', start, 64.0, bvp),
        'HR': PhysioChannel('HR', start, 1.0, hr),
        'ST': PhysioChannel('ST', start, 4.0, temperature),
    }
    for kind, values in axes.items():
        channels[kind] = PhysioChannel(kind, start, 32.0, np.round(values * ACC_COUNTS_PER_G) / ACC_COUNTS_PER_G)
    return PhysioRecording(channels=channels, ibi=IbiSeries(start, offsets, intervals)), begin


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Planted quantities behind a generated cohort. The pipeline never reads these."""

    coefficients: Mapping[str, object]
    notifications: pd.DataFrame
    app_effects: pd.DataFrame
    prompts: pd.DataFrame

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / 'coefficients.json').write_text(canonical_json(dict(self.coefficients), indent=2) + '\n',
                                                     encoding='utf-8')
        for name in ('notifications', 'app_effects', 'prompts'):
            (directory / f"{name}.csv").write_text(convert_df_to_csv(getattr(self, name)), encoding='utf-8')
        return directory


def _participant(config: GeneratorConfig, index: int):
    streams = _streams(config, index)
    behaviour = _draw_behaviour(config, index, streams)
    tz = config.tz_offset_minutes
    response = config.response
    catalog = app_catalog(config.apps.count)
    packages = np.array([package for package, _ in catalog], dtype=object)
    n = behaviour.arrivals_s.size

    seconds = response_seconds(response.intercept, response.sigma, behaviour.eta, behaviour.noise)
    censored = seconds > response.max_response_days * DAY_S
    arrival_ms = behaviour.start_ms + behaviour.arrival_ms
    open_ms = arrival_ms[~censored] + _open_offsets_ms(seconds[~censored])

    rng = streams['context']
    relations = _relation_table(behaviour.participant, config, rng)
    contact_share = np.array([_CONTACT_CATEGORIES.get(category, 0.0) for _, category in catalog])
    has_contact = rng.random(n) < contact_share[behaviour.app_index]
    contacts = np.full(n, '', dtype=object)
    if len(relations):
        pick = rng.choice(len(relations), size=n, p=popularity(len(relations), 1.0))
        hashes = relations['contact_hash'].to_numpy(dtype=object)
        contacts[has_contact] = hashes[pick[has_contact]]
    removed = pd.array([pd.NA] * n, dtype='Int64')
    removed[np.flatnonzero(~censored)] = open_ms

    notifications = pd.DataFrame({
        'id': [f"{behaviour.participant}-n{i:05d}" for i in range(n)],
        'app_package': packages[behaviour.app_index],
        'arrival_utc_ms': arrival_ms,
        'tz_offset_min': tz,
        'content_length': streams['notifications'].poisson(config.notifications.content_length_mean, n),
        'contact_hash': contacts,
        'removed_utc_ms': removed,
    }, columns=list(TABLES['notifications'].columns))

    free_ms = behaviour.start_ms + np.round(behaviour.free_starts * 1000.0).astype(np.int64)
    app_events = pd.concat([
        pd.DataFrame({'app_package': np.array(FREE_USE_APPS, dtype=object)[behaviour.free_apps], 'utc_ms': free_ms}),
        pd.DataFrame({'app_package': packages[behaviour.app_index[~censored]], 'utc_ms': open_ms}),
    ], ignore_index=True).sort_values('utc_ms', kind='mergesort')
    app_events['app_name'] = app_events['app_package'].str.rsplit('.', n=1).str[-1]
    app_events['tz_offset_min'] = tz
    app_events = app_events.loc[:, list(TABLES['app_events'].columns)].reset_index(drop=True)

    open_s = (open_ms - behaviour.start_ms) / 1000.0
    use_starts, use_ends = merge_intervals(np.concatenate([behaviour.free_starts, open_s]),
                                           np.concatenate([behaviour.free_ends, open_s + response.open_duration_s]))
    on_ms = behaviour.start_ms + np.round(use_starts * 1000.0).astype(np.int64)
    off_ms = np.maximum(behaviour.start_ms + np.round(use_ends * 1000.0).astype(np.int64), on_ms + 1)
    screen = pd.DataFrame({
        'state': np.tile(['on', 'off'], len(on_ms)),
        'utc_ms': np.column_stack([on_ms, off_ms]).ravel(),
        'tz_offset_min': tz,
    }, columns=list(TABLES['screen_events'].columns))

    prompts = schedule_prompts(config.days, use_starts, use_ends, config.esm)
    esm, answered = _esm_answers(behaviour, prompts, config, tz, streams['esm'])
    physio, worn_from = _physio_recording(behaviour, config, tz, streams['physio'])

    study_end_ms = behaviour.start_ms + int((config.days + math.ceil(response.max_response_days)) * DAY_S * 1000)
    log = EventLog(
        participant=behaviour.participant,
        notifications=notifications,
        app_events=app_events,
        screen_events=screen,
        activity_events=_activity_table(behaviour, config, tz, rng),
        location_events=_location_table(behaviour, config, tz, rng),
        esm_responses=esm,
        contact_relations=relations,
        physio=physio,
        study_start_ms=behaviour.start_ms,
        study_end_ms=study_end_ms,
        tz_offset_minutes=tz,
    )

    v, a = behaviour.mood_at(behaviour.arrivals_s)
    truth_rows = pd.DataFrame({
        'participant': behaviour.participant,
        'notification_id': notifications['id'],
        'app': notifications['app_package'],
        'arrival_utc_ms': arrival_ms,
        'valence': v,
        'arousal': a,
        'screen_on': behaviour.screen_on.astype(int),
        'time_of_day': np.array(BUCKETS, dtype=object)[behaviour.bucket],
        'app_effect': behaviour.app_effects[behaviour.app_index],
        'noise': behaviour.noise,
        'response_s': seconds,
        'censored': censored,
    })
    effects = pd.DataFrame({'participant': behaviour.participant, 'app': packages, 'effect': behaviour.app_effects})
    prompt_log = pd.DataFrame({
        'participant': behaviour.participant,
        'utc_ms': behaviour.start_ms + np.round(prompts['time_s'].to_numpy() * 1000.0).astype(np.int64),
        'kind': prompts['kind'].to_numpy(),
        'answered': answered,
    })
    logger.info(f"Generated {behaviour.participant}: {n} notifications, {int(censored.sum())} censored, "
                f"{len(prompts)} prompts, {len(esm)} answers, physio {'worn' if worn_from is not None else 'absent'}")
    return log, truth_rows, effects, prompt_log


def _coefficients(config: GeneratorConfig) -> Dict[str, object]:
    response = config.response
    return {
        'intercept': response.intercept,
        'beta_valence': response.beta_valence,
        'beta_arousal': response.beta_arousal,
        'beta_screen_on': response.beta_screen_on,
        'beta_time_of_day': dict(response.beta_time_of_day),
        'app_effect_sd': response.app_effect_sd,
        'sigma': response.sigma,
        'max_response_days': response.max_response_days,
    }


def generate(config: GeneratorConfig, jobs: int = 1) -> Tuple[List[EventLog], GroundTruth]:
    """
    Generate a synthetic cohort.

    Args:
        config: Generator settings; participant i draws from the i-th child of the seed
        jobs: Worker processes; the output does not depend on it

    Returns:
        (one EventLog per participant, GroundTruth)
    """
    check_generator_config(config)
    parts = Parallel(n_jobs=jobs)(delayed(_participant)(config, i) for i in range(config.n_participants))
    logs = [part[0] for part in parts]
    truth = GroundTruth(
        coefficients=_coefficients(config),
        notifications=pd.concat([part[1] for part in parts], ignore_index=True),
        app_effects=pd.concat([part[2] for part in parts], ignore_index=True),
        prompts=pd.concat([part[3] for part in parts], ignore_index=True),
    )
    return logs, truth


def generator_hash(config: GeneratorConfig) -> str:
    return sha256_bytes(canonical_json(config.model_dump(mode='json')).encode('utf-8'))


def write_dataset(logs: Sequence[EventLog], truth: GroundTruth, config: GeneratorConfig, path) -> Path:
    """
    Write participant directories, ground truth and manifest.json.

    Args:
        logs: Generated logs
        truth: Their ground truth
        config: Generator settings recorded in the manifest
        path: Dataset directory

    Returns:
        The dataset directory
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    for log in logs:
        write_event_log(log, directory / log.participant)
    truth.write(directory / 'ground_truth')
    manifest = {
        'generator': config.model_dump(mode='json'),
        'generator_hash': generator_hash(config),
        'participants': [log.participant for log in logs],
        'apps': [{'package': package, 'category': category} for package, category in app_catalog(config.apps.count)],
    }
    (directory / 'manifest.json').write_text(canonical_json(manifest, indent=2) + '\n', encoding='utf-8')
    logger.info(f"Wrote {len(logs)} participants to {directory}")
    return directory


# --- calibration ------------------------------------------------------------

_KEY_STRIDE = 10 ** 12


@dataclass(frozen=True, eq=False)
class _Pool:
    arrival_ms: np.ndarray
    group: np.ndarray
    eta: np.ndarray
    noise: np.ndarray


def _calibration_pool(config: GeneratorConfig) -> _Pool:
    behaviours = [_draw_behaviour(config, i, _streams(config, i)) for i in range(config.n_participants)]
    return _Pool(
        arrival_ms=np.concatenate([b.arrival_ms for b in behaviours]),
        group=np.concatenate([b.index * config.apps.count + b.app_index for b in behaviours]).astype(np.int64),
        eta=np.concatenate([b.eta for b in behaviours]),
        noise=np.concatenate([b.noise for b in behaviours]),
    )


def observed_cdf(pool: _Pool, intercept: float, sigma: float, max_response_s: float,
                 horizons: Sequence[float] = CDF_HORIZONS_S) -> np.ndarray:
    """Share of notifications whose first later open of the same app falls within each horizon."""
    if pool.eta.size == 0:
        return np.zeros(len(horizons))
    seconds = response_seconds(intercept, sigma, pool.eta, pool.noise)
    opened = seconds <= max_response_s
    open_keys = np.sort(pool.group[opened] * _KEY_STRIDE + pool.arrival_ms[opened] + _open_offsets_ms(seconds[opened]))
    arrival_keys = pool.group * _KEY_STRIDE + pool.arrival_ms
    observed = np.full(arrival_keys.size, np.inf)
    if open_keys.size:
        position = np.searchsorted(open_keys, arrival_keys, side='right')
        following = open_keys[np.minimum(position, open_keys.size - 1)]
        paired = (position < open_keys.size) & (following // _KEY_STRIDE == pool.group)
        observed[paired] = (following[paired] - arrival_keys[paired]) / 1000.0
    return np.array([np.mean(observed <= horizon) for horizon in horizons])


def _fit_intercept(pool: _Pool, sigma: float, target: float, max_response_s: float) -> float:
    # Share within the first horizon falls as the intercept grows
    low, high = -30.0, 30.0
    for _ in range(50):
        middle = 0.5 * (low + high)
        if observed_cdf(pool, middle, sigma, max_response_s)[0] >= target:
            low = middle
        else:
            high = middle
    return low


def calibrate(config: GeneratorConfig, targets: Optional[Sequence[float]] = None) -> GeneratorConfig:
    """
    Tune the response intercept and sigma so the pooled response-time CDF hits the targets.

    The intercept is bisected to match the 5-minute share; sigma is bisected on the
    spread between the 24-hour and 5-minute shares, which shrinks as sigma grows.

    Args:
        config: Generator settings
        targets: Shares answered within 5 min, 1 h and 24 h (defaults to config.calibration.targets)

    Returns:
        A copy of config with the calibrated intercept and sigma
    """
    check_generator_config(config)
    settings = config.calibration
    targets = tuple(float(t) for t in (settings.targets if targets is None else targets))
    if len(targets) != 3 or not all(0.0 < t <= 1.0 for t in targets) \
            or not targets[0] <= targets[1] <= targets[2]:
        raise CalibrationFailed(f"Targets must be non-decreasing shares in (0, 1], got {targets}")

    pool = _calibration_pool(config)
    max_s = config.response.max_response_days * DAY_S
    tolerance = settings.tolerance
    spread_target = targets[2] - targets[0]
    sigma_low, sigma_high = 1e-3, 10.0

    def spread(sigma):
        intercept = _fit_intercept(pool, sigma, targets[0], max_s)
        shares = observed_cdf(pool, intercept, sigma, max_s)
        return intercept, shares, shares[2] - shares[0]

    sigma = sigma_low
    intercept, shares, achieved = spread(sigma)
    if spread_target > tolerance:
        for iteration in range(settings.max_iterations):
            sigma = 0.5 * (sigma_low + sigma_high)
            intercept, shares, achieved = spread(sigma)
            logger.debug(f"Calibration step {iteration}: sigma={sigma:.4f} intercept={intercept:.4f} shares={shares}")
            if abs(achieved - spread_target) <= tolerance / 4:
                break
            if achieved > spread_target:
                sigma_low = sigma
            else:
                sigma_high = sigma
        else:
            raise CalibrationFailed(f"No convergence after {settings.max_iterations} iterations "
                                    f"(shares {np.round(shares, 4).tolist()}, targets {list(targets)})")

    misses = np.abs(shares - np.array(targets))
    if (misses > tolerance).any():
        raise CalibrationFailed(f"Calibrated shares {np.round(shares, 4).tolist()} miss targets "
                                f"{list(targets)} by more than {tolerance}")
    logger.info(f"Calibrated intercept={intercept:.4f} sigma={sigma:.4f}, shares {np.round(shares, 4).tolist()}")
    response = config.response.model_copy(update={'intercept': float(intercept), 'sigma': float(sigma)})
    return config.model_copy(update={'response': response})


def top_k_share(config: GeneratorConfig, k: int = 10) -> float:
    """Expected share of notifications sent by the k most popular apps."""
    return float(popularity(config.apps.count, config.apps.popularity_exponent)[:k].sum())
