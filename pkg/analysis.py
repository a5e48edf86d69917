"""
Analysis Module
Descriptive statistics of response times and mood: CDFs, app and category summaries,
normality screening and Spearman correlations.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from errors import ConstantInput, DataError, TooFewSamples
from labeling import AppCatalog, build_app_catalog, top_k_coverage
from utils import WEEKDAYS, local_calendar

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS_S = (300.0, 3_600.0, 86_400.0)
SPEARMAN_MIN_N = 3
MOOD_CORRELATION_MIN_N = 5
DAGOSTINO_MIN_N = 20
Z_95 = 1.96
MOOD_GROUPS = ('time_of_day', 'weekday', 'social_role', 'interruptibility')
POOLED = 'pooled'


@dataclass(frozen=True)
class CorrelationResult:
    x: str
    y: str
    rho: float
    p_value: float
    n: int
    group: str = POOLED
    p_permutation: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def spearman(x, y, x_name: str = 'x', y_name: str = 'y', permutations: int = 0,
             seed: int = 0, group: str = POOLED, min_n: int = SPEARMAN_MIN_N) -> CorrelationResult:
    """
    Spearman rank correlation with average ranks for ties.

    Args:
        x: First sample
        y: Second sample, paired with x
        x_name: Label of x in the result
        y_name: Label of y in the result
        permutations: When positive, also compute a seeded permutation p-value
        seed: Permutation seed
        group: Label of the subset (participant id or "pooled")
        min_n: Fewest pairs accepted

    Returns:
        CorrelationResult with the two-sided t-approximation p-value
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise DataError(f"Samples differ in length: {x.size} vs {y.size}")
    n = x.size
    if n < max(min_n, SPEARMAN_MIN_N):
        raise TooFewSamples(f"Spearman needs at least {max(min_n, SPEARMAN_MIN_N)} pairs, got {n}")
    rank_x = stats.rankdata(x)
    rank_y = stats.rankdata(y)
    if np.ptp(rank_x) == 0 or np.ptp(rank_y) == 0:
        raise ConstantInput(f"{x_name if np.ptp(rank_x) == 0 else y_name} is constant")
    rho = float(np.clip(np.corrcoef(rank_x, rank_y)[0, 1], -1.0, 1.0))
    p_value = _t_p_value(rho, n)

    p_permutation = None
    if permutations > 0:
        rng = np.random.default_rng(seed)
        centered_x = rank_x - rank_x.mean()
        centered_y = rank_y - rank_y.mean()
        norm = np.sqrt(np.sum(centered_x ** 2) * np.sum(centered_y ** 2))
        shuffled = np.array([np.dot(centered_x, rng.permutation(centered_y)) / norm
                             for _ in range(permutations)])
        p_permutation = float((1 + np.sum(np.abs(shuffled) >= abs(rho) - 1e-12)) / (1 + permutations))
    return CorrelationResult(x=x_name, y=y_name, rho=rho, p_value=p_value, n=n, group=group,
                             p_permutation=p_permutation)


def _t_p_value(rho: float, n: int) -> float:
    if n <= 2:
        return float('nan')
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * np.sqrt((n - 2) / (1.0 - rho ** 2))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def dagostino_k2(x) -> Tuple[float, float]:
    """
    D'Agostino-Pearson omnibus normality test.

    Returns:
        (K² statistic, upper-tail chi-squared(2) p-value)
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < DAGOSTINO_MIN_N:
        raise TooFewSamples(f"Normality test needs at least {DAGOSTINO_MIN_N} values, got {x.size}")
    if np.ptp(x) == 0:
        raise ConstantInput("Normality test on a constant sample")
    statistic, p_value = stats.normaltest(x)
    return float(statistic), float(p_value)


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Share of labels at or below each threshold, per participant plus a pooled row."""

    thresholds: Tuple[float, ...]
    table: pd.DataFrame

    @staticmethod
    def column(threshold: float) -> str:
        return f"le_{threshold:g}s"

    def pooled(self) -> Dict[float, float]:
        row = self.table[self.table['participant'] == POOLED]
        if row.empty:
            return {}
        return {t: float(row[self.column(t)].iloc[0]) for t in self.thresholds}


def cdf_table(labels: pd.DataFrame, thresholds: Sequence[float] = DEFAULT_THRESHOLDS_S) -> CdfTable:
    """
    Cumulative response-time shares.

    Every row counts towards the denominator; rows with a missing response
    (censored) are never at or below a threshold.

    Args:
        labels: Rows with participant and response_s
        thresholds: Thresholds in seconds

    Returns:
        CdfTable (empty table for empty labels)
    """
    thresholds = tuple(sorted(float(t) for t in thresholds))
    columns = ['participant', 'n'] + [CdfTable.column(t) for t in thresholds]
    if labels.empty:
        return CdfTable(thresholds, pd.DataFrame(columns=columns))

    def shares(group: pd.DataFrame, name: str) -> Dict[str, object]:
        response = group['response_s'].to_numpy(dtype=float)
        row = {'participant': name, 'n': int(response.size)}
        with np.errstate(invalid='ignore'):
            row.update({CdfTable.column(t): float(np.mean(response <= t)) for t in thresholds})
        return row

    rows = [shares(group, str(participant)) for participant, group in labels.groupby('participant', sort=True)]
    rows.append(shares(labels, POOLED))
    return CdfTable(thresholds, pd.DataFrame(rows, columns=columns))


def cdf_points(labels: pd.DataFrame, by: str = 'participant') -> pd.DataFrame:
    """
    Empirical CDF points of answered notifications for external plotting.

    Args:
        labels: Rows with response_s and the grouping column
        by: 'participant' or 'app'

    Returns:
        DataFrame with group, response_s, fraction
    """
    if by not in ('participant', 'app'):
        raise DataError(f"CDF points are grouped by participant or app, got {by!r}")
    frames = []
    answered = labels[labels['response_s'].notna()]
    for group, rows in answered.groupby(by, sort=True):
        response = np.sort(rows['response_s'].to_numpy(dtype=float))
        frames.append(pd.DataFrame({
            'group': group,
            'response_s': response,
            'fraction': np.arange(1, response.size + 1) / response.size,
        }))
    if not frames:
        return pd.DataFrame(columns=['group', 'response_s', 'fraction'])
    return pd.concat(frames, ignore_index=True)


def _mean_interval(values: pd.Series) -> Tuple[float, float]:
    values = values.to_numpy(dtype=float)
    mean = float(values.mean())
    half_width = float(Z_95 * values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else float('nan')
    return mean, half_width


def _mood_keys(esm: pd.DataFrame, key: str) -> pd.Series:
    if key in ('time_of_day', 'weekday'):
        calendar = local_calendar(esm['utc_ms'].to_numpy(), esm['tz_offset_min'].to_numpy())
        if key == 'time_of_day':
            return calendar['time_of_day']
        return calendar['weekday'].map(lambda day: WEEKDAYS[day])
    return esm[key].astype(str)


def mood_summary(esm: pd.DataFrame, group_by: Union[None, str, Sequence[str]] = None) -> pd.DataFrame:
    """
    Mean valence and arousal per group with a normal-approximation 95% interval.

    Args:
        esm: Questionnaire answers (utc_ms, tz_offset_min, valence, arousal, social_role, interruptibility)
        group_by: A key from MOOD_GROUPS, a list of keys (joined with "/"), or None for one overall row

    Returns:
        DataFrame with group, n, valence_mean, valence_ci, arousal_mean, arousal_ci; empty groups are omitted
    """
    columns = ['group', 'n', 'valence_mean', 'valence_ci', 'arousal_mean', 'arousal_ci']
    keys_wanted = [] if group_by is None else [group_by] if isinstance(group_by, str) else list(group_by)
    unknown = [key for key in keys_wanted if key not in MOOD_GROUPS]
    if unknown:
        raise DataError(f"Unknown mood grouping {unknown}; expected keys from {MOOD_GROUPS}")
    if esm.empty:
        return pd.DataFrame(columns=columns)
    esm = esm.reset_index(drop=True)
    if keys_wanted:
        parts = [_mood_keys(esm, key).reset_index(drop=True) for key in keys_wanted]
        keys = parts[0].astype(str)
        for part in parts[1:]:
            keys = keys + '/' + part.astype(str)
    else:
        keys = pd.Series('all', index=esm.index)

    rows = []
    for key, group in esm.groupby(keys.to_numpy(), sort=True):
        valence_mean, valence_ci = _mean_interval(group['valence'])
        arousal_mean, arousal_ci = _mean_interval(group['arousal'])
        rows.append((key, len(group), valence_mean, valence_ci, arousal_mean, arousal_ci))
    return pd.DataFrame(rows, columns=columns)


def category_summary(labels: pd.DataFrame, catalog: AppCatalog,
                     max_response_s: float = 86_400.0) -> pd.DataFrame:
    """
    Count, mean response time and 95% interval half-width per app category.

    Args:
        labels: Labels; censored rows and responses above max_response_s are ignored
        catalog: Category lookup (unknown apps fall into "other")
        max_response_s: Upper bound on included responses

    Returns:
        DataFrame with category, n, mean_s, ci_s, sorted by mean_s
    """
    columns = ['category', 'n', 'mean_s', 'ci_s']
    if labels.empty:
        return pd.DataFrame(columns=columns)
    kept = labels[~labels['censored'].astype(bool) & (labels['response_s'] <= max_response_s)]
    if kept.empty:
        return pd.DataFrame(columns=columns)
    categories = kept['app'].map(catalog.category)
    rows = []
    for category, group in kept.groupby(categories.to_numpy(), sort=True):
        mean, half_width = _mean_interval(group['response_s'])
        rows.append((category, len(group), mean, half_width))
    summary = pd.DataFrame(rows, columns=columns)
    return summary.sort_values(['mean_s', 'category'], kind='mergesort').reset_index(drop=True)


def app_overview(labels: pd.DataFrame, ks: Sequence[int] = (5, 10)) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    App counts and top-k notification coverage per participant.

    Args:
        labels: One row per notification with participant and app
        ks: Coverage cut-offs

    Returns:
        (per-participant table, its min/max/median/mean across participants)
    """
    columns = ['participant', 'apps', 'notifications'] + [f"top_{k}_coverage" for k in ks]
    rows = []
    for participant, group in labels.groupby('participant', sort=True):
        catalog = build_app_catalog(group['app'])
        rows.append([str(participant), len(catalog.counts), len(group)]
                    + [top_k_coverage(catalog, k) for k in ks])
    per_participant = pd.DataFrame(rows, columns=columns)
    numeric = per_participant.drop(columns='participant').astype(float)
    summary = numeric.agg(['min', 'max', 'median', 'mean']).rename_axis('statistic').reset_index()
    return per_participant, summary


def mood_response_correlations(features: pd.DataFrame, per_participant: bool = True,
                               permutations: int = 0, seed: int = 0) -> List[CorrelationResult]:
    """
    Spearman correlations between reported mood and response time.

    Uses rows whose questionnaire features are present. Subsets with fewer than
    five such rows are skipped with a warning.

    Args:
        features: Feature table with valence, arousal, response_s and esm_missing
        per_participant: Also correlate within each participant
        permutations: Permutation count for the optional permutation p-value
        seed: Permutation seed

    Returns:
        Pooled results first, then one per participant and variable where computable
    """
    rows = features[features['esm_missing'] == 0] if 'esm_missing' in features.columns else features
    subsets = [(POOLED, rows)]
    if per_participant:
        subsets.extend((str(p), g) for p, g in rows.groupby('participant', sort=True))
    results = []
    for name, subset in subsets:
        for variable in ('valence', 'arousal'):
            try:
                results.append(spearman(subset[variable], subset['response_s'], variable, 'response_s',
                                        permutations=permutations, seed=seed, group=name,
                                        min_n=MOOD_CORRELATION_MIN_N))
            except (TooFewSamples, ConstantInput) as exc:
                logger.warning(f"Correlation {variable}/response_s for {name} skipped: {exc}")
    return results


def normality_screen(features: pd.DataFrame, columns: Sequence[str] = ('valence', 'arousal', 'response_s')
                     ) -> pd.DataFrame:
    """D'Agostino K² per column on the pooled rows with questionnaire features."""
    rows = features[features['esm_missing'] == 0] if 'esm_missing' in features.columns else features
    out = []
    for column in columns:
        try:
            statistic, p_value = dagostino_k2(rows[column])
        except (TooFewSamples, ConstantInput) as exc:
            logger.warning(f"Normality screen of {column} skipped: {exc}")
            statistic, p_value = float('nan'), float('nan')
        out.append((column, int(rows[column].notna().sum()), statistic, p_value))
    return pd.DataFrame(out, columns=['variable', 'n', 'k2', 'p_value'])
