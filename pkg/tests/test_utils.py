import logging
import pickle
from datetime import datetime

import numpy as np
import pandas as pd
import pytest

from conftest import DAY0_MS
from errors import (CalibrationFailed, ConfigError, DataError, InvalidConfig, MissingFile, PipelineError,
                    SchemaError, TooFewInstances)
from utils import (StageFilter, canonical_json, current_stage, local_calendar, local_datetime, read_artifact_csv,
                   sha256_tree, stage_context, time_of_day_bucket, write_artifact_csv)


def test_canonical_json():
    assert canonical_json({'b': 1, 'a': float('nan')}) == '{"a":null,"b":1}'
    assert canonical_json({'x': np.int64(3), 'y': np.float32(0.5), 'z': np.array([1, 2])}) \
        == '{"x":3,"y":0.5,"z":[1,2]}'
    assert canonical_json([np.float64('inf')]) == '[null]'


def test_artifact_csv_carries_the_hash(tmp_path):
    path = write_artifact_csv(pd.DataFrame({'a': [1, 2]}), tmp_path / 'out' / 'table.csv', 'f' * 64)
    table, found = read_artifact_csv(path)
    assert found == 'f' * 64
    assert table['a'].tolist() == [1, 2]
    plain = tmp_path / 'plain.csv'
    plain.write_text('a\n1\n')
    table, found = read_artifact_csv(plain)
    assert found is None
    assert table['a'].tolist() == [1]


def test_tree_hash_tracks_content(tmp_path):
    (tmp_path / 'x').mkdir()
    (tmp_path / 'x' / 'one.csv').write_text('1')
    first = sha256_tree(tmp_path)
    assert sha256_tree(tmp_path) == first
    (tmp_path / 'x' / 'one.csv').write_text('2')
    assert sha256_tree(tmp_path) != first


def test_local_time():
    assert local_datetime(DAY0_MS, 60) == datetime(2020, 1, 27, 1, 0)
    assert time_of_day_bucket(5) == 'midnight'
    assert time_of_day_bucket(18) == 'evening'
    with pytest.raises(ValueError):
        time_of_day_bucket(24)
    calendar = local_calendar([DAY0_MS + 23 * 3_600_000, DAY0_MS + 12 * 3_600_000], [60, -60])
    assert calendar['hour'].tolist() == [0, 11]
    assert calendar['weekday'].tolist() == [1, 0]
    assert calendar['time_of_day'].tolist() == ['midnight', 'morning']


def test_stage_is_attached_to_records():
    record = logging.LogRecord('rtlab', logging.INFO, __file__, 1, 'message', None, None)
    with stage_context('label'):
        assert current_stage() == 'label'
        StageFilter().filter(record)
    assert record.stage == 'label'
    assert current_stage() == '-'


def test_exit_codes():
    assert ConfigError('x').exit_code == 1
    assert InvalidConfig('x').exit_code == 1
    assert DataError('x').exit_code == 2
    assert CalibrationFailed('x').exit_code == 2
    assert PipelineError('x').exit_code == 3
    assert isinstance(DataError('x'), ValueError)


@pytest.mark.parametrize('error', [
    SchemaError('P01/esm_responses.csv', 2, 'valence 6 outside 1..5'),
    MissingFile('P01/notifications.csv'),
    TooFewInstances('P03', 10, 25),
])
def test_errors_survive_pickling(error):
    copy = pickle.loads(pickle.dumps(error))
    assert type(copy) is type(error)
    assert str(copy) == str(error)
    assert copy.__dict__ == error.__dict__
