"""
Smartphone and questionnaire features for the window preceding a notification.

Every feature only looks at events strictly before the notification's arrival.
"""

import logging
import weakref
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from event_model import (EventLog, INTERRUPTIBILITY, RELATIONS, SOCIAL_ROLES,
                         Timestamp, window_bounds)
from labeling import build_app_catalog, top_k_apps
from utils import TIME_OF_DAY_BUCKETS, WEEKDAYS, local_datetime, time_of_day_bucket

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS_MIN = (5, 10, 15, 20, 25, 30)
DEFAULT_ESM_HORIZON_MIN = 90
UNSEEN_LOCATION_ID = 0
NO_CONTACT_ID = 0
TOP_PLACES = 3


@dataclass(frozen=True)
class FeatureVector:
    """Named feature values plus a missing flag per maskable group."""

    values: Mapping[str, float] = field(default_factory=dict)
    masks: Mapping[str, bool] = field(default_factory=dict)

    def merge(self, other: 'FeatureVector') -> 'FeatureVector':
        return FeatureVector({**self.values, **other.values}, {**self.masks, **other.masks})

    def as_row(self) -> Dict[str, float]:
        """Flat row: feature values followed by <group>_missing indicators."""
        row = dict(self.values)
        row.update({f"{group}_missing": float(masked) for group, masked in self.masks.items()})
        return row


def _arrival_ms(arrival: Union[Timestamp, int]) -> int:
    return arrival.utc_millis if isinstance(arrival, Timestamp) else int(arrival)


class _LogIndex:
    """Sorted numpy views of one log, built once and reused for every notification."""

    def __init__(self, log: EventLog):
        apps = log.app_events
        self.app_times = apps['utc_ms'].to_numpy(dtype=np.int64)
        self.app_packages = apps['app_package'].to_numpy(dtype=object)

        activity = log.activity_events
        self.activity_times = activity['utc_ms'].to_numpy(dtype=np.int64)
        self.activity_labels = activity['activity'].to_numpy(dtype=object)

        screen = log.screen_events
        self.screen_times = screen['utc_ms'].to_numpy(dtype=np.int64)
        self.screen_on = (screen['state'] == 'on').to_numpy()

        location = log.location_events
        self.location_times = location['utc_ms'].to_numpy(dtype=np.int64)
        self.location_codes = location['plus_code'].to_numpy(dtype=object)

        esm = log.esm_responses
        self.esm_times = esm['utc_ms'].to_numpy(dtype=np.int64)
        self.esm = esm.reset_index(drop=True)

        self.relations = log.relations_map()
        contacts = set(self.relations) | {c for c in log.notifications['contact_hash'] if c}
        self.contact_ids = {contact: i + 1 for i, contact in enumerate(sorted(contacts))}


_INDEXES: 'weakref.WeakKeyDictionary[EventLog, _LogIndex]' = weakref.WeakKeyDictionary()


def _index(log: EventLog) -> _LogIndex:
    index = _INDEXES.get(log)
    if index is None:
        index = _LogIndex(log)
        _INDEXES[log] = index
    return index


def recent_apps(log: EventLog, arrival, windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> Dict[int, frozenset]:
    """Distinct packages foregrounded in each window before arrival, keyed by window length."""
    index = _index(log)
    end = _arrival_ms(arrival)
    used = {}
    for minutes in windows_min:
        lo, hi = window_bounds(index.app_times, end, minutes * 60)
        used[minutes] = frozenset(index.app_packages[lo:hi])
    return used


def app_usage_features(log: EventLog, arrival, top_apps: Iterable[str] = (),
                       windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> FeatureVector:
    """
    Distinct apps used, and distinct top-k apps used, in each window before arrival.

    Args:
        log: Participant log
        arrival: Notification arrival (Timestamp or epoch ms)
        top_apps: The participant's most-notifying apps
        windows_min: Window lengths in minutes

    Returns:
        phone_apps_XX and topk_XX_unique for every window
    """
    top = set(top_apps)
    values = {}
    for minutes, used in recent_apps(log, arrival, windows_min).items():
        values[f"phone_apps_{minutes:02d}"] = float(len(used))
        values[f"topk_{minutes:02d}_unique"] = float(len(used & top))
    return FeatureVector(values)


def temporal_features(arrival: Timestamp) -> FeatureVector:
    """Day of week, time-of-day bucket and weekend flag in local wall-clock time."""
    local = local_datetime(arrival.utc_millis, arrival.tz_offset_minutes)
    bucket = time_of_day_bucket(local.hour)
    values = {day: float(i == local.weekday()) for i, day in enumerate(WEEKDAYS)}
    values.update({name: float(name == bucket) for name, _, _ in TIME_OF_DAY_BUCKETS})
    values['is_weekend'] = float(local.weekday() >= 5)
    return FeatureVector(values)


def plus_code_8(code: str) -> str:
    """The 8-digit area containing a 10-digit plus code."""
    return code.replace('+', '')[:8] + '+'


@dataclass(frozen=True)
class PlaceVocabulary:
    """Most visited places and location-code ids learned from a set of fixes."""

    top_places: Tuple[str, ...] = ()
    loc8_ids: Mapping[str, int] = field(default_factory=dict)
    loc10_ids: Mapping[str, int] = field(default_factory=dict)


def _ranked_codes(codes: Sequence[str]) -> List[str]:
    counts = pd.Series(list(codes), dtype=object).value_counts()
    return list(counts.sort_index().sort_values(ascending=False, kind='mergesort').index)


def fit_place_vocabulary(codes: Iterable[Optional[str]]) -> PlaceVocabulary:
    """
    Rank location codes by frequency, ties by code.

    Args:
        codes: 10-digit plus codes; empty or missing entries are ignored

    Returns:
        PlaceVocabulary; empty when no code is given
    """
    fitted = [c for c in codes if isinstance(c, str) and c]
    if not fitted:
        return PlaceVocabulary()
    ranked = _ranked_codes(fitted)
    ranked8 = _ranked_codes([plus_code_8(c) for c in fitted])
    return PlaceVocabulary(
        top_places=tuple(ranked[:TOP_PLACES]),
        loc8_ids={code: i + 1 for i, code in enumerate(ranked8)},
        loc10_ids={code: i + 1 for i, code in enumerate(ranked)},
    )


def place_feature_names() -> List[str]:
    return [f"place_top_{i}" for i in range(1, TOP_PLACES + 1)] + ['place_other', 'loc_8', 'loc_10']


def last_place_code(log: EventLog, arrival) -> Optional[str]:
    """Code of the last location fix strictly before arrival, None when there is none."""
    index = _index(log)
    position = int(np.searchsorted(index.location_times, _arrival_ms(arrival), side='left')) - 1
    return None if position < 0 else str(index.location_codes[position])


def encode_place(code: Optional[str], vocabulary: PlaceVocabulary) -> FeatureVector:
    """One-hot place and area ids of one location code under a vocabulary."""
    values = {name: 0.0 for name in place_feature_names()}
    if not isinstance(code, str) or not code:
        return FeatureVector(values, {'place': True})
    if code in vocabulary.top_places:
        values[f"place_top_{vocabulary.top_places.index(code) + 1}"] = 1.0
    else:
        values['place_other'] = 1.0
    values['loc_8'] = float(vocabulary.loc8_ids.get(plus_code_8(code), UNSEEN_LOCATION_ID))
    values['loc_10'] = float(vocabulary.loc10_ids.get(code, UNSEEN_LOCATION_ID))
    return FeatureVector(values, {'place': False})


def place_features(log: EventLog, arrival, vocabulary: Optional[PlaceVocabulary] = None) -> FeatureVector:
    """
    One-hot place of the last location fix before arrival, plus categorical area ids.

    Args:
        log: Participant log
        arrival: Notification arrival
        vocabulary: Fitted vocabulary; every fix of the log when omitted

    Returns:
        place_top_1..3, place_other, loc_8, loc_10 with the ``place`` mask
    """
    if vocabulary is None:
        vocabulary = fit_place_vocabulary(_index(log).location_codes)
    return encode_place(last_place_code(log, arrival), vocabulary)


def esm_feature_names() -> List[str]:
    return (['valence', 'arousal']
            + [f"role_{r}" for r in SOCIAL_ROLES]
            + [f"interrupt_{i}" for i in INTERRUPTIBILITY])


def esm_features(log: EventLog, arrival, horizon_min: float = DEFAULT_ESM_HORIZON_MIN) -> FeatureVector:
    """
    Carry forward the latest questionnaire answered before arrival.

    Args:
        log: Participant log
        arrival: Notification arrival
        horizon_min: Answers older than this are treated as missing

    Returns:
        Mood, social role and interruptibility entries with the ``esm`` mask
    """
    index = _index(log)
    end = _arrival_ms(arrival)
    values = {name: 0.0 for name in esm_feature_names()}
    position = int(np.searchsorted(index.esm_times, end, side='left')) - 1
    if position < 0 or end - index.esm_times[position] > horizon_min * 60_000:
        return FeatureVector(values, {'esm': True})
    answer = index.esm.iloc[position]
    values['valence'] = float(answer['valence'])
    values['arousal'] = float(answer['arousal'])
    values[f"role_{answer['social_role']}"] = 1.0
    values[f"interrupt_{answer['interruptibility']}"] = 1.0
    return FeatureVector(values, {'esm': False})


def notification_feature_names(windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> List[str]:
    return (['notification_length', 'contact']
            + [f"relation_{r}" for r in RELATIONS]
            + ['screen_on', 'screen_off', 'screen']
            + [f"physical_activity_{m:02d}" for m in windows_min])


def notification_and_context_features(log: EventLog, notif: Mapping,
                                      windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> FeatureVector:
    """
    Notification content length, contact relation, screen state and activity variety.

    Args:
        log: Participant log
        notif: Notification row (mapping or namedtuple with the notifications.csv fields)
        windows_min: Window lengths in minutes for physical activity counts

    Returns:
        Partial FeatureVector with ``relation`` and ``screen`` masks
    """
    index = _index(log)
    row = notif._asdict() if hasattr(notif, '_asdict') else dict(notif)
    end = int(row['arrival_utc_ms'])
    values = {name: 0.0 for name in notification_feature_names(windows_min)}
    masks = {}

    values['notification_length'] = float(row['content_length'])
    contact = row.get('contact_hash') or ''
    values['contact'] = float(index.contact_ids.get(contact, NO_CONTACT_ID)) if contact else float(NO_CONTACT_ID)
    relations = index.relations.get(contact) if contact else None
    masks['relation'] = relations is None
    for relation in relations or ():
        values[f"relation_{relation}"] = 1.0

    position = int(np.searchsorted(index.screen_times, end, side='left')) - 1
    masks['screen'] = position < 0
    if position >= 0:
        on = bool(index.screen_on[position])
        values['screen_on'] = float(on)
        values['screen_off'] = float(not on)
        values['screen'] = float(on)

    for minutes in windows_min:
        lo, hi = window_bounds(index.activity_times, end, minutes * 60)
        values[f"physical_activity_{minutes:02d}"] = float(len(set(index.activity_labels[lo:hi])))
    return FeatureVector(values, masks)


def context_feature_names(windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> Dict[str, List[str]]:
    """Feature names by group, in column order."""
    usage = []
    for minutes in windows_min:
        usage += [f"phone_apps_{minutes:02d}", f"topk_{minutes:02d}_unique"]
    temporal = list(WEEKDAYS) + [name for name, _, _ in TIME_OF_DAY_BUCKETS] + ['is_weekend']
    return {
        'mobile': usage + temporal + place_feature_names() + notification_feature_names(windows_min),
        'esm': esm_feature_names(),
    }


def context_feature_vector(log: EventLog, notif: Mapping, top_apps: Iterable[str],
                           vocabulary: PlaceVocabulary,
                           windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN,
                           esm_horizon_min: float = DEFAULT_ESM_HORIZON_MIN) -> FeatureVector:
    """All smartphone and questionnaire features for one notification."""
    row = notif._asdict() if hasattr(notif, '_asdict') else dict(notif)
    arrival = Timestamp(int(row['arrival_utc_ms']), int(row['tz_offset_min']))
    return (app_usage_features(log, arrival, top_apps, windows_min)
            .merge(temporal_features(arrival))
            .merge(place_features(log, arrival, vocabulary))
            .merge(notification_and_context_features(log, row, windows_min))
            .merge(esm_features(log, arrival, esm_horizon_min)))


LAST_PLACE_COLUMN = 'last_place'
RECENT_APPS_PREFIX = 'recent_apps_'
APP_SEPARATOR = ';'


def raw_context_names(windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> List[str]:
    """Columns holding the unencoded inputs of the split-fitted features."""
    return [LAST_PLACE_COLUMN] + [f"{RECENT_APPS_PREFIX}{m:02d}" for m in windows_min]


def raw_context(log: EventLog, arrival, windows_min: Sequence[int] = DEFAULT_WINDOWS_MIN) -> Dict[str, str]:
    """Last location code and the recently used packages, as stored in features.csv."""
    row = {LAST_PLACE_COLUMN: last_place_code(log, arrival) or ''}
    for minutes, used in recent_apps(log, arrival, windows_min).items():
        row[f"{RECENT_APPS_PREFIX}{minutes:02d}"] = APP_SEPARATOR.join(sorted(used))
    return row


def _text(value) -> str:
    return value if isinstance(value, str) else ''


@dataclass(frozen=True)
class SplitEncoder:
    """
    Place vocabulary and top-k app set learned from one set of training rows.

    The place one-hots, area ids and topk_XX_unique counts depend on which rows
    they were learned from, so evaluation refits this encoder on every training
    split and re-encodes the raw context columns with it.
    """

    vocabulary: PlaceVocabulary
    top_apps: FrozenSet[str]

    @classmethod
    def fit(cls, rows: pd.DataFrame, top_k: int) -> 'SplitEncoder':
        """
        Args:
            rows: Training rows with ``app`` and ``last_place``
            top_k: Size of the most-notifying app set

        Returns:
            SplitEncoder
        """
        catalog = build_app_catalog(rows['app'])
        top = top_k_apps(catalog, top_k) if len(catalog.counts) else []
        return cls(vocabulary=fit_place_vocabulary(rows[LAST_PLACE_COLUMN].map(_text)),
                   top_apps=frozenset(top))

    def transform(self, rows: pd.DataFrame) -> pd.DataFrame:
        """Split-fitted feature columns for every row, in the order of ``rows``."""
        places = [encode_place(_text(code), self.vocabulary).values for code in rows[LAST_PLACE_COLUMN]]
        encoded = pd.DataFrame(places, columns=place_feature_names(), index=rows.index)
        for column in rows.columns:
            if column.startswith(RECENT_APPS_PREFIX):
                minutes = column[len(RECENT_APPS_PREFIX):]
                encoded[f"topk_{minutes}_unique"] = [
                    float(len(set(filter(None, _text(apps).split(APP_SEPARATOR))) & self.top_apps))
                    for apps in rows[column]]
        return encoded


def split_context(table: pd.DataFrame) -> Optional[pd.DataFrame]:
    """The columns a SplitEncoder needs, or None when the table carries no raw context."""
    if LAST_PLACE_COLUMN not in table.columns:
        return None
    columns = ['app', LAST_PLACE_COLUMN] + [c for c in table.columns if c.startswith(RECENT_APPS_PREFIX)]
    return table.loc[:, columns].reset_index(drop=True)
