"""
Feature table assembly: one row per answered notification with every smartphone,
questionnaire and wristband feature plus the missing-group indicators.
"""

import logging
from typing import Dict, List, Mapping, Optional

import pandas as pd

from config import FeatureConfig
from context_features import (PlaceVocabulary, SplitEncoder, context_feature_names, context_feature_vector,
                              raw_context, raw_context_names)
from event_model import EventLog, Timestamp
from labeling import (build_app_catalog, filter_by_category, restrict_to_apps, top_k_apps)
from physio_features import physio_feature_groups, physio_feature_vector, physio_manifest

logger = logging.getLogger(__name__)

ID_COLUMNS = ['participant', 'notification_id', 'app', 'arrival_utc_ms', 'response_s', 'target']
MOBILE_MASK_GROUPS = ('place', 'relation', 'screen')

_CONTEXT_UNITS = {
    'phone_apps': 'count', 'topk': 'count', 'physical_activity': 'count',
    'notification_length': 'characters', 'contact': 'category id', 'loc_8': 'category id',
    'loc_10': 'category id', 'valence': 'scale 1-5', 'arousal': 'scale 1-5',
}


def feature_groups(settings: FeatureConfig = FeatureConfig()) -> Dict[str, List[str]]:
    """Feature names of the mobile, esm and e4 groups, in column order."""
    groups = context_feature_names(settings.windows_min)
    groups['e4'] = [name for names in physio_feature_groups(settings.include_acc).values() for name in names]
    return groups


def mask_groups(settings: FeatureConfig = FeatureConfig()) -> Dict[str, List[str]]:
    """Missing-indicator columns belonging to each feature group."""
    return {
        'mobile': [f"{g}_missing" for g in MOBILE_MASK_GROUPS],
        'esm': ['esm_missing'],
        'e4': [f"{g}_missing" for g in physio_feature_groups(settings.include_acc)],
    }


def feature_manifest(settings: FeatureConfig = FeatureConfig()) -> pd.DataFrame:
    """Every emitted feature with its group, missing-indicator column and unit."""
    rows = []
    physio = {name: (sub, unit) for name, sub, unit in physio_manifest(settings.include_acc)}
    context_masks = {name: 'place' for name in ('place_top_1', 'place_top_2', 'place_top_3',
                                                 'place_other', 'loc_8', 'loc_10')}
    context_masks.update({f"relation_{r}": 'relation' for r in ('family', 'friend', 'work', 'none')})
    context_masks.update({name: 'screen' for name in ('screen_on', 'screen_off', 'screen')})
    for group, names in feature_groups(settings).items():
        for name in names:
            if group == 'e4':
                sub, unit = physio[name]
                rows.append((name, group, f"{sub}_missing", unit))
            elif group == 'esm':
                rows.append((name, group, 'esm_missing', _CONTEXT_UNITS.get(name, 'indicator')))
            else:
                prefix = next((p for p in _CONTEXT_UNITS if name.startswith(p)), None)
                mask = context_masks.get(name)
                rows.append((name, group, f"{mask}_missing" if mask else '',
                             _CONTEXT_UNITS[prefix] if prefix else 'indicator'))
    return pd.DataFrame(rows, columns=['name', 'group', 'missing_column', 'unit'])


def feature_columns(settings: FeatureConfig = FeatureConfig()) -> List[str]:
    groups = feature_groups(settings)
    masks = mask_groups(settings)
    return (ID_COLUMNS + raw_context_names(settings.windows_min) + groups['mobile'] + groups['esm'] + groups['e4']
            + masks['mobile'] + masks['esm'] + masks['e4'])


def build_feature_table(log: EventLog, labels: pd.DataFrame, settings: FeatureConfig = FeatureConfig(),
                        top_k: int = 10, category: Optional[str] = None,
                        category_map: Optional[Mapping[str, str]] = None) -> pd.DataFrame:
    """
    Feature rows for a participant's uncensored notifications from its top-k apps.

    Args:
        log: Participant log
        labels: That participant's labels from pair_response_times
        settings: Window, horizon and place settings
        top_k: Number of most-notifying apps kept
        category: Optional app category to focus on
        category_map: Package -> category for the category filter

    Returns:
        DataFrame with feature_columns(settings)
    """
    columns = feature_columns(settings)
    catalog = build_app_catalog(log.notifications['app_package'], category_map)
    study_apps = top_k_apps(catalog, top_k) if len(catalog.counts) else []
    kept = labels[~labels['censored'].astype(bool)]
    kept = restrict_to_apps(kept, study_apps)
    if category is not None:
        kept = filter_by_category(kept, category, catalog)
    if kept.empty:
        logger.warning(f"Participant {log.participant}: no labeled notifications left after filtering")
        return pd.DataFrame(columns=columns)

    notifications = log.notifications.set_index('id', drop=False)
    rows = []
    for label in kept.itertuples(index=False):
        notif = notifications.loc[label.notification_id].to_dict()
        arrival = Timestamp(int(notif['arrival_utc_ms']), int(notif['tz_offset_min']))
        vector = context_feature_vector(log, notif, (), PlaceVocabulary(),
                                        settings.windows_min, settings.esm_horizon_min)
        vector = vector.merge(physio_feature_vector(log.physio, arrival, settings.physio_window_s,
                                                    settings.include_acc))
        row = {
            'participant': log.participant,
            'notification_id': label.notification_id,
            'app': label.app,
            'arrival_utc_ms': label.arrival_utc_ms,
            'response_s': label.response_s,
            'target': label.target,
        }
        row.update(raw_context(log, arrival, settings.windows_min))
        row.update(vector.as_row())
        rows.append(row)
    table = pd.DataFrame.from_records(rows)
    # Learned from every row here; evaluation refits on each training split
    encoded = SplitEncoder.fit(table, top_k).transform(table)
    table[list(encoded.columns)] = encoded
    table = table.reindex(columns=columns)
    logger.info(f"Participant {log.participant}: {len(table)} feature rows, "
                f"{len(columns) - len(ID_COLUMNS) - len(raw_context_names(settings.windows_min))} columns")
    return table
