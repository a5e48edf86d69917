"""
Run configuration: typed sections loaded from a TOML file, command-line overrides
and environment defaults.
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import ConfigError
from prediction import REGRESSOR_KINDS
from simulation import GeneratorConfig, check_generator_config
from utils import canonical_json, sha256_bytes

logger = logging.getLogger(__name__)

FEATURE_GROUPS = ('mobile', 'esm', 'e4')


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class PathsConfig(Section):
    data_dir: Path = Path('data/synthetic')
    output_dir: Path = Path('runs')
    categories_file: Path = Path('data/app_categories.csv')


class LabelingConfig(Section):
    top_k: int = Field(10, ge=1)
    max_response_s: float = Field(86_400.0, gt=0)
    category: Optional[str] = None


class FeatureConfig(Section):
    windows_min: List[int] = [5, 10, 15, 20, 25, 30]
    esm_horizon_min: float = Field(90.0, gt=0)
    physio_window_s: float = Field(300.0, gt=0)
    include_acc: bool = False

    @field_validator('windows_min')
    @classmethod
    def _positive_windows(cls, value):
        if not value or any(w <= 0 for w in value):
            raise ValueError('windows must be positive minutes')
        return sorted(set(value))


class ModelConfig(Section):
    regressors: List[str] = list(REGRESSOR_KINDS)
    k_features: List[int] = [8]
    grids: Dict[str, Dict[str, List[Any]]] = {}

    @field_validator('regressors')
    @classmethod
    def _known_regressors(cls, value):
        unknown = [k for k in value if k not in REGRESSOR_KINDS]
        if unknown:
            raise ValueError(f"unknown regressor kind(s): {unknown}")
        return value

    @field_validator('k_features')
    @classmethod
    def _positive_k(cls, value):
        if not value or any(k < 1 for k in value):
            raise ValueError('k_features must be positive')
        return value


class EvaluationConfig(Section):
    seed: int
    outer_folds: int = Field(5, ge=2)
    inner_folds: int = Field(5, ge=2)
    min_instances: int = Field(25, ge=2)
    feature_groups: List[str] = ['mobile', 'esm']
    ablations: List[str] = ['esm', 'e4']

    @field_validator('feature_groups', 'ablations')
    @classmethod
    def _known_groups(cls, value):
        unknown = [g for g in value if g not in FEATURE_GROUPS]
        if unknown:
            raise ValueError(f"unknown feature group(s): {unknown}")
        return value


class AnalysisConfig(Section):
    cdf_thresholds_s: List[float] = [300.0, 3600.0, 86_400.0]
    permutations: int = Field(0, ge=0)
    seed: int = 0
    per_app_participant: Optional[str] = None


class RunConfig(Section):
    paths: PathsConfig = PathsConfig()
    simulate: GeneratorConfig
    labeling: LabelingConfig = LabelingConfig()
    features: FeatureConfig = FeatureConfig()
    model: ModelConfig = ModelConfig()
    evaluation: EvaluationConfig
    analysis: AnalysisConfig = AnalysisConfig()
    jobs: int = Field(1, ge=1)


def _parse_value(text: str):
    """Interpret an override value as TOML, falling back to a bare string."""
    try:
        return tomllib.loads(f"value = {text}")['value']
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply ``section.key=value`` overrides to a raw config dictionary.

    Args:
        data: Parsed TOML content
        overrides: Dotted assignments from the command line

    Returns:
        The updated dictionary
    """
    for item in overrides:
        if '=' not in item:
            raise ConfigError(f"Override must look like section.key=value, got {item!r}")
        dotted, raw = item.split('=', 1)
        keys = dotted.strip().split('.')
        target = data
        for key in keys[:-1]:
            target = target.setdefault(key, {})
            if not isinstance(target, dict):
                raise ConfigError(f"Cannot override {dotted}: {key} is not a section")
        target[keys[-1]] = _parse_value(raw.strip())
    return data


def load_run_config(path=None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    Build a RunConfig from a TOML file, overrides and environment defaults.

    Args:
        path: TOML file (optional when every required key is overridden)
        overrides: ``section.key=value`` strings, applied after the file

    Returns:
        Validated RunConfig
    """
    load_dotenv()
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding='utf-8'))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    env_jobs = os.getenv('RTLAB_JOBS')
    if env_jobs and 'jobs' not in data:
        data['jobs'] = _parse_value(env_jobs)
    apply_overrides(data, overrides)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc
    check_generator_config(config.simulate)
    logger.info(f"Loaded configuration {config_hash(config)[:12]}")
    return config


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical config, ignoring the worker count."""
    payload = config.model_dump(mode='json', exclude={'jobs'})
    return sha256_bytes(canonical_json(payload).encode('utf-8'))
