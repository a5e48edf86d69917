"""
Labeling Module
Pairs each notification with the next opening of its app and builds the regression target.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping

import numpy as np
import pandas as pd

from errors import DataError, MissingFile, SchemaError, UnknownCategoryName
from event_model import EventLog

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ['participant', 'notification_id', 'app', 'arrival_utc_ms', 'response_s', 'target', 'censored']
MAX_RESPONSE_S = 86_400.0
OTHER_CATEGORY = 'other'


def response_target(response_s):
    """Regression target log10(1 + seconds)."""
    return np.log10(1.0 + np.asarray(response_s, dtype=float))


def pair_response_times(log: EventLog, max_response_s: float = MAX_RESPONSE_S) -> pd.DataFrame:
    """
    Match every notification to the earliest foreground event of the same app strictly after arrival.

    Args:
        log: Validated participant log
        max_response_s: Responses slower than this are censored

    Returns:
        DataFrame with LABEL_COLUMNS, one row per notification in arrival order
    """
    notifications = log.notifications
    arrivals = notifications['arrival_utc_ms'].to_numpy(dtype=np.int64)
    response = np.full(len(notifications), np.nan)

    opens_by_app = {app: group.to_numpy(dtype=np.int64)
                    for app, group in log.app_events.groupby('app_package')['utc_ms']}
    for app, rows in notifications.groupby('app_package').indices.items():
        opens = opens_by_app.get(app)
        if opens is None or len(opens) == 0:
            continue
        app_arrivals = arrivals[rows]
        position = np.searchsorted(opens, app_arrivals, side='right')
        found = position < len(opens)
        response[rows[found]] = (opens[position[found]] - app_arrivals[found]) / 1000.0

    censored = ~(response <= max_response_s)
    response[censored] = np.nan
    labels = pd.DataFrame({
        'participant': log.participant,
        'notification_id': notifications['id'].to_numpy(),
        'app': notifications['app_package'].to_numpy(),
        'arrival_utc_ms': arrivals,
        'response_s': response,
        'target': response_target(response),
        'censored': censored,
    }, columns=LABEL_COLUMNS)
    logger.info(f"Participant {log.participant}: {int((~censored).sum())} responses, "
                f"{int(censored.sum())} censored")
    return labels


@dataclass(frozen=True, eq=False)
class AppCatalog:
    """Notification counts per app in rank order, with a category for each package."""

    counts: pd.Series
    categories: Mapping[str, str] = field(default_factory=dict)

    @property
    def ranking(self) -> List[str]:
        return list(self.counts.index)

    def category(self, app: str) -> str:
        return self.categories.get(app, OTHER_CATEGORY)

    def known_categories(self) -> set:
        return set(self.categories.values()) | {OTHER_CATEGORY}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'app': self.counts.index,
            'notifications': self.counts.to_numpy(),
            'rank': np.arange(1, len(self.counts) + 1),
            'category': [self.category(app) for app in self.counts.index],
        })


def load_category_map(path) -> Dict[str, str]:
    """
    Load the static package-to-category map.

    Args:
        path: CSV with columns package, category

    Returns:
        Dictionary package -> category
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    if not {'package', 'category'} <= set(table.columns):
        raise SchemaError(path, 1, "expected columns package, category")
    return dict(zip(table['package'].str.strip(), table['category'].str.strip()))


def build_app_catalog(apps: Iterable[str], category_map: Mapping[str, str] = None) -> AppCatalog:
    """
    Count notifications per app and rank them.

    Args:
        apps: App package of every notification
        category_map: Package -> category; unknown packages map to "other"

    Returns:
        AppCatalog with ties ranked by package name
    """
    counts = pd.Series(list(apps), dtype=object).value_counts()
    # Stable sort after a lexicographic sort breaks count ties by name
    counts = counts.sort_index().sort_values(ascending=False, kind='mergesort')
    counts.index.name = 'app'
    categories = dict(category_map or {})
    return AppCatalog(counts=counts.astype(np.int64), categories=categories)


def top_k_apps(catalog: AppCatalog, k: int) -> List[str]:
    """The k most-notifying apps; all apps when k exceeds the catalog size."""
    if k < 1:
        raise DataError(f"k must be at least 1, got {k}")
    return catalog.ranking[:k]


def top_k_coverage(catalog: AppCatalog, k: int) -> float:
    """Fraction of notifications sent by the top-k apps."""
    total = int(catalog.counts.sum())
    if total == 0:
        return 0.0
    return float(catalog.counts.iloc[:max(k, 0)].sum()) / total


def restrict_to_apps(instances: pd.DataFrame, apps: Iterable[str]) -> pd.DataFrame:
    return instances[instances['app'].isin(set(apps))].reset_index(drop=True)


def filter_by_category(instances: pd.DataFrame, category: str, catalog: AppCatalog) -> pd.DataFrame:
    """
    Keep instances whose app maps to one category.

    Args:
        instances: Rows with an ``app`` column
        category: Category name, e.g. "communication"
        catalog: Catalog providing the category map

    Returns:
        Filtered copy
    """
    if category not in catalog.known_categories():
        raise UnknownCategoryName(f"Unknown category {category!r}; known: {sorted(catalog.known_categories())}")
    if instances.empty:
        return instances
    mask = instances['app'].map(catalog.category) == category
    return instances[mask].reset_index(drop=True)
