from pathlib import Path

import pytest

from config import RunConfig, apply_overrides, config_hash, load_run_config
from errors import ConfigError, InvalidConfig

DEFAULT = Path(__file__).resolve().parents[1] / 'config' / 'default.toml'
MINIMAL = ['simulate.seed=1', 'evaluation.seed=2']


def test_default_file_loads():
    config = load_run_config(DEFAULT)
    assert isinstance(config, RunConfig)
    assert config.simulate.seed == 20200127
    assert config.evaluation.feature_groups == ['mobile', 'esm']
    assert config.model.grids['gbr']['max_depth'] == [2, 3]
    assert config.paths.categories_file == Path('data/app_categories.csv')


def test_overrides_are_parsed_as_toml():
    config = load_run_config(DEFAULT, ['model.k_features=[4, 8]', 'labeling.category=messaging',
                                       'simulate.calibration.enabled=false'])
    assert config.model.k_features == [4, 8]
    assert config.labeling.category == 'messaging'
    assert config.simulate.calibration.enabled is False


def test_apply_overrides_builds_sections():
    data = apply_overrides({}, ['a.b.c=3', 'name="x"'])
    assert data == {'a': {'b': {'c': 3}}, 'name': 'x'}
    with pytest.raises(ConfigError):
        apply_overrides({'a': 1}, ['a.b=2'])
    with pytest.raises(ConfigError):
        apply_overrides({}, ['no-equals-sign'])


def test_seed_is_required():
    with pytest.raises(ConfigError):
        load_run_config(None, ['evaluation.seed=2'])
    assert load_run_config(None, MINIMAL).evaluation.seed == 2


@pytest.mark.parametrize('override', [
    'labeling.bogus=1',
    'model.regressors=["lasso"]',
    'evaluation.ablations=["gps"]',
    'features.windows_min=[0]',
    'evaluation.outer_folds=1',
])
def test_invalid_values_are_config_errors(override):
    with pytest.raises(ConfigError):
        load_run_config(None, MINIMAL + [override])


def test_generator_settings_are_checked():
    with pytest.raises(InvalidConfig):
        load_run_config(None, MINIMAL + ['simulate.esm.answer_probability=1.5'])


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / 'absent.toml')
    broken = tmp_path / 'broken.toml'
    broken.write_text('[paths\n')
    with pytest.raises(ConfigError):
        load_run_config(broken)


def test_hash_ignores_worker_count():
    serial = load_run_config(None, MINIMAL + ['jobs=1'])
    parallel = load_run_config(None, MINIMAL + ['jobs=4'])
    reseeded = load_run_config(None, ['simulate.seed=1', 'evaluation.seed=3'])
    assert config_hash(serial) == config_hash(parallel)
    assert config_hash(serial) != config_hash(reseeded)
    assert len(config_hash(serial)) == 64


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv('RTLAB_JOBS', '3')
    assert load_run_config(None, MINIMAL).jobs == 3
    assert load_run_config(None, MINIMAL + ['jobs=2']).jobs == 2
