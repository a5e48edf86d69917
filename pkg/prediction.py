"""
Response-Time Prediction Module
Scaling, univariate F-score feature selection, the regressors and the two constant
baselines, fitted per participant on log-scaled response times.
"""

import hashlib
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.dummy import DummyRegressor
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import BayesianRidge, LinearRegression, SGDRegressor
from sklearn.model_selection import ParameterGrid
from sklearn.preprocessing import StandardScaler

from errors import (DegenerateTarget, DimensionMismatch, ModelFormatError, NotFitted,
                    TooFewRows)

logger = logging.getLogger(__name__)

REGRESSOR_KINDS = ('bayesian_ridge', 'ols', 'svr_linear', 'gbr', 'random_forest',
                   'mean_baseline', 'median_baseline')
BASELINE_KINDS = ('mean_baseline', 'median_baseline')
LINEAR_KINDS = ('ols', 'bayesian_ridge', 'svr_linear')

DEFAULT_K_FEATURES = 8
# r^2 at or above this is treated as a perfect fit and F is clamped
R2_CLAMP = 1.0 - 1e-12
F_SENTINEL = 1e12

MODEL_FORMAT = 'rtlab-model'
MODEL_FORMAT_VERSION = 1

# Default hyperparameter grids
GRIDS: Dict[str, Dict[str, List[Any]]] = {
    'mean_baseline': {},
    'median_baseline': {},
    'ols': {},
    'bayesian_ridge': {'hyperprior': [1e-6, 1e-4]},
    'svr_linear': {'C': [0.1, 1.0, 10.0], 'epsilon': [0.01, 0.1]},
    'gbr': {'n_estimators': [50, 100, 200], 'learning_rate': [0.05, 0.1], 'max_depth': [2, 3]},
    'random_forest': {'n_estimators': [100, 300], 'max_features': ['sqrt', 'third']},
}


@dataclass(frozen=True)
class RegressorSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ValueError(f"Unknown regressor kind: {self.kind}")

    def with_params(self, params: Mapping[str, Any]) -> 'RegressorSpec':
        return RegressorSpec(self.kind, dict(params), self.seed)


def grid(kind: str) -> Dict[str, List[Any]]:
    """The default hyperparameter grid of a regressor kind (empty for baselines and OLS)."""
    if kind not in GRIDS:
        raise ValueError(f"Unknown regressor kind: {kind}")
    return {name: list(values) for name, values in GRIDS[kind].items()}


def grid_points(kind: str, override: Optional[Mapping[str, Sequence[Any]]] = None) -> List[Dict[str, Any]]:
    """Cartesian product of a grid as a list of parameter dictionaries, in a fixed order."""
    spec_grid = dict(override) if override else grid(kind)
    return list(ParameterGrid(spec_grid))


class LinearSVRSubgradient(RegressorMixin, BaseEstimator):
    """
    Linear epsilon-insensitive regression fit by stochastic subgradient descent.

    The SVR objective C * sum(loss) + |w|^2 / 2 is rescaled to the per-sample form
    mean(loss) + alpha * |w|^2 / 2 with alpha = 1 / (C * n).
    """

    def __init__(self, C=1.0, epsilon=0.1, eta0=0.01, power_t=0.25, max_iter=200, random_state=0):
        self.C = C
        self.epsilon = epsilon
        self.eta0 = eta0
        self.power_t = power_t
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.model_ = SGDRegressor(
            loss='epsilon_insensitive', epsilon=self.epsilon, penalty='l2',
            alpha=1.0 / (self.C * len(y)), learning_rate='invscaling', eta0=self.eta0,
            power_t=self.power_t, max_iter=self.max_iter, tol=None, shuffle=True,
            random_state=self.random_state,
        )
        self.model_.fit(X, y)
        self.coef_ = self.model_.coef_
        self.intercept_ = float(self.model_.intercept_[0])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        return self.model_.predict(np.asarray(X, dtype=float))


def make_estimator(spec: RegressorSpec):
    """Unfitted scikit-learn estimator for a spec."""
    params = dict(spec.params)
    if spec.kind == 'mean_baseline':
        return DummyRegressor(strategy='mean')
    if spec.kind == 'median_baseline':
        return DummyRegressor(strategy='median')
    if spec.kind == 'ols':
        return LinearRegression()
    if spec.kind == 'bayesian_ridge':
        prior = params.get('hyperprior', 1e-6)
        return BayesianRidge(max_iter=300, tol=1e-4, alpha_1=prior, alpha_2=prior,
                             lambda_1=prior, lambda_2=prior)
    if spec.kind == 'svr_linear':
        return LinearSVRSubgradient(C=params.get('C', 1.0), epsilon=params.get('epsilon', 0.1),
                                    eta0=params.get('eta0', 0.01), random_state=spec.seed)
    if spec.kind == 'gbr':
        return GradientBoostingRegressor(loss='squared_error', n_estimators=params.get('n_estimators', 100),
                                         learning_rate=params.get('learning_rate', 0.1),
                                         max_depth=params.get('max_depth', 3), random_state=spec.seed)
    if spec.kind == 'random_forest':
        max_features = params.get('max_features', 'sqrt')
        return RandomForestRegressor(n_estimators=params.get('n_estimators', 100),
                                     max_features=1.0 / 3.0 if max_features == 'third' else max_features,
                                     bootstrap=True, random_state=spec.seed, n_jobs=1)
    raise ValueError(f"Unknown regressor kind: {spec.kind}")


def f_regression_scores(X, y) -> Tuple[np.ndarray, np.ndarray]:
    """
    Univariate F statistic and p-value of each feature against the target.

    Args:
        X: Feature matrix (n rows, d features)
        y: Targets

    Returns:
        (F, p) arrays of length d; constant features score F=0, p=1
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, y has {y.shape[0]} rows")
    n = y.shape[0]
    if n < 3:
        raise TooFewRows(f"F scores need at least 3 rows, got {n}")
    if np.ptp(y) == 0:
        raise DegenerateTarget("Target is constant")
    constant = np.ptp(X, axis=0) == 0
    centered_x = X - X.mean(axis=0)
    centered_y = y - y.mean()
    norms = np.sqrt(np.sum(centered_x ** 2, axis=0)) * np.sqrt(np.sum(centered_y ** 2))
    with np.errstate(divide='ignore', invalid='ignore'):
        r = np.where(constant, 0.0, centered_x.T @ centered_y / np.where(constant, 1.0, norms))
    r2 = np.clip(r ** 2, 0.0, 1.0)
    clamped = r2 >= R2_CLAMP
    with np.errstate(divide='ignore'):
        f_scores = np.where(clamped, F_SENTINEL, r2 / np.where(clamped, 1.0, 1.0 - r2) * (n - 2))
    p_values = stats.f.sf(f_scores, 1, n - 2)
    f_scores[constant] = 0.0
    p_values[constant] = 1.0
    return f_scores, p_values


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the k highest finite scores, ties to the lower index, returned ascending."""
    scores = np.asarray(scores, dtype=float)
    ranked = np.where(np.isfinite(scores), scores, -np.inf)
    order = np.lexsort((np.arange(ranked.size), -ranked))
    return np.sort(order[:min(k, ranked.size)])


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted regressor with its scaler, selection and fit provenance."""

    spec: RegressorSpec
    scaler: StandardScaler
    scores: np.ndarray
    selected: Tuple[int, ...]
    estimator: Any
    feature_names: Tuple[str, ...]
    fit_rows: Tuple[int, ...]
    data_hash: str
    target_range: Tuple[float, float]
    fold: Optional[str] = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def selected_names(self) -> List[str]:
        return [self.feature_names[i] for i in self.selected]


def _data_hash(X: np.ndarray, y: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(X, dtype=float).tobytes())
    digest.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return digest.hexdigest()


def fit(spec: RegressorSpec, X, y, rows: Optional[Sequence[int]] = None,
        feature_names: Optional[Sequence[str]] = None, k_features: int = DEFAULT_K_FEATURES,
        fold: Optional[str] = None) -> TrainedModel:
    """
    Scale, select the top-k features by F score and fit the regressor.

    Args:
        spec: Regressor kind, hyperparameters and seed
        X: Raw feature matrix of the fit split
        y: Targets of the fit split
        rows: Row ids of the fit split, recorded as provenance
        feature_names: Column names of X
        k_features: Number of features kept
        fold: Fold label recorded with the model

    Returns:
        Immutable TrainedModel
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DimensionMismatch(f"X has shape {X.shape}, y has {y.shape[0]} rows")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise DimensionMismatch(f"{len(names)} feature names for {X.shape[1]} columns")

    scaler = StandardScaler().fit(X)
    scaled = scaler.transform(X)
    try:
        scores, _ = f_regression_scores(scaled, y)
    except (DegenerateTarget, TooFewRows):
        # Nothing to rank; keep the first columns
        scores = np.zeros(X.shape[1])
    selected = select_top_k(scores, k_features)
    estimator = make_estimator(spec).fit(scaled[:, selected], y)
    return TrainedModel(
        spec=spec, scaler=scaler, scores=scores, selected=tuple(int(i) for i in selected),
        estimator=estimator, feature_names=names,
        fit_rows=tuple(int(r) for r in (rows if rows is not None else range(len(y)))),
        data_hash=_data_hash(X, y), target_range=(float(y.min()), float(y.max())), fold=fold,
    )


def predict(model: TrainedModel, X) -> np.ndarray:
    """
    Predict targets with a fitted model.

    Args:
        model: Output of fit()
        X: Raw feature matrix with the training columns

    Returns:
        Predictions; random-forest output is kept inside the training target range
    """
    if not isinstance(model, TrainedModel):
        raise NotFitted(f"Expected a fitted model, got {type(model).__name__}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionMismatch(f"Model expects {model.n_features} features, got shape {X.shape}")
    scaled = model.scaler.transform(X)[:, list(model.selected)]
    predictions = model.estimator.predict(scaled)
    if model.spec.kind == 'random_forest':
        predictions = np.clip(predictions, *model.target_range)
    return np.asarray(predictions, dtype=float)


def coefficients(model: TrainedModel) -> Tuple[Dict[str, float], float]:
    """
    Linear model weights in the original (unscaled) feature units.

    Returns:
        (coefficient per selected feature, intercept)
    """
    if model.spec.kind not in LINEAR_KINDS:
        raise ValueError(f"{model.spec.kind} has no linear coefficients")
    selected = list(model.selected)
    scale = model.scaler.scale_[selected]
    mean = model.scaler.mean_[selected]
    weights = np.ravel(model.estimator.coef_) / scale
    intercept = float(np.ravel(model.estimator.intercept_)[0]) - float(np.sum(weights * mean))
    return dict(zip(model.selected_names, weights.tolist())), intercept


def save_model(model: TrainedModel, path) -> Path:
    """Pickle a model inside a versioned envelope."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    envelope = {'format': MODEL_FORMAT, 'version': MODEL_FORMAT_VERSION, 'kind': model.spec.kind, 'model': model}
    with open(path, 'wb') as handle:
        pickle.dump(envelope, handle, protocol=pickle.HIGHEST_PROTOCOL)
    logger.info(f"Saved {model.spec.kind} model to {path}")
    return path


def load_model(path) -> TrainedModel:
    try:
        with open(path, 'rb') as handle:
            envelope = pickle.load(handle)
    except (pickle.UnpicklingError, EOFError) as exc:
        raise ModelFormatError(f"{path} is not a saved response-time model") from exc
    if not isinstance(envelope, dict) or envelope.get('format') != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a saved response-time model")
    if envelope.get('version') != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model format version {envelope.get('version')}")
    return envelope['model']
