import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from conftest import DAY0_MS, build_log
from errors import MissingFile, NonMonotonicTimestamp, SchemaError, ZeroRate
from event_model import (ACC_KINDS, IbiSeries, PhysioChannel, PhysioRecording, Timestamp, parse_event_log,
                         parse_ibi, parse_physio_channel, parse_physio_recording, slice_window,
                         summarize_event_log, write_event_log)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    return path


def test_empty_notifications_file(tmp_path, write_log):
    directory = write_log(build_log())
    log = parse_event_log(directory)
    assert len(log.notifications) == 0
    assert log.participant == 'P01'
    assert log.physio.is_empty


def test_missing_directory(tmp_path):
    with pytest.raises(MissingFile):
        parse_event_log(tmp_path / 'nobody')


def test_valence_out_of_range_is_rejected(write_log):
    directory = write_log(build_log(esm_responses=[{'utc_ms': DAY0_MS, 'valence': 4}]))
    text = (directory / 'esm.csv').read_text()
    (directory / 'esm.csv').write_text(text.replace(f"{DAY0_MS},0,4", f"{DAY0_MS},0,6"))
    with pytest.raises(SchemaError) as info:
        parse_event_log(directory)
    assert info.value.line == 2
    assert 'valence' in info.value.reason


def test_out_of_order_app_events_are_sorted(write_log):
    log = build_log(app_events=[{'app_package': 'a', 'utc_ms': DAY0_MS + 5_000},
                                {'app_package': 'b', 'utc_ms': DAY0_MS + 1_000}])
    parsed = parse_event_log(write_log(log))
    assert parsed.app_events['utc_ms'].tolist() == [DAY0_MS + 1_000, DAY0_MS + 5_000]
    assert parsed.app_events['app_package'].tolist() == ['b', 'a']
    assert any('out of time order' in w for w in parsed.warnings)


def test_reposted_notification_keeps_earliest(write_log):
    log = build_log(notifications=[{'id': 'x', 'app_package': 'a', 'arrival_utc_ms': DAY0_MS},
                                   {'id': 'x', 'app_package': 'a', 'arrival_utc_ms': DAY0_MS + 10}])
    parsed = parse_event_log(write_log(log))
    assert parsed.notifications['arrival_utc_ms'].tolist() == [DAY0_MS]
    assert len(parsed.warnings) == 1


def test_removed_before_arrival_is_rejected(write_log):
    log = build_log(notifications=[{'app_package': 'a', 'arrival_utc_ms': DAY0_MS,
                                    'removed_utc_ms': DAY0_MS - 1}])
    with pytest.raises(SchemaError):
        parse_event_log(write_log(log))


def test_relations_are_canonicalized(write_log):
    log = build_log(contact_relations=[{'contact_hash': 'c1', 'relations': 'work;friend'}])
    parsed = parse_event_log(write_log(log))
    assert parsed.relations_map() == {'c1': frozenset({'friend', 'work'})}
    assert parsed.contact_relations['relations'].tolist() == ['friend;work']


def test_none_relation_cannot_combine(write_log):
    log = build_log(contact_relations=[{'contact_hash': 'c1', 'relations': 'none;family'}])
    with pytest.raises(SchemaError):
        parse_event_log(write_log(log))


def test_invalid_plus_code(write_log):
    log = build_log(location_events=[{'plus_code': 'not-a-code', 'utc_ms': DAY0_MS}])
    with pytest.raises(SchemaError):
        parse_event_log(write_log(log))


def test_physio_channel_duration(tmp_path):
    path = _write(tmp_path / 'EDA.csv', '1580000000.0\n4.0\n' + '\n'.join(['0.5'] * 8) + '\n')
    channel = parse_physio_channel(path, 'EDA')
    assert len(channel) == 8
    assert channel.duration_s == 2.0
    assert channel.start.utc_millis == 1_580_000_000_000


def test_zero_rate(tmp_path):
    path = _write(tmp_path / 'HR.csv', '1580000000.0\n0\n70\n')
    with pytest.raises(ZeroRate):
        parse_physio_channel(path, 'HR')


def test_acc_row_maps_to_three_axes(tmp_path):
    _write(tmp_path / 'physio' / 'ACC.csv', '1580000000, 1580000000, 1580000000\n32, 32, 32\n12,-3,60\n')
    recording = parse_physio_recording(tmp_path / 'physio')
    values = [recording.channel(kind).samples[0] for kind in ACC_KINDS]
    assert_allclose(values, [12 / 64, -3 / 64, 60 / 64])


def test_ibi_drops_implausible_intervals(tmp_path):
    path = _write(tmp_path / 'IBI.csv', '1580000000.0, IBI\n1.0,0.8\n2.0,3.5\n2.9,0.9\n')
    ibi = parse_ibi(path)
    assert ibi.dropped == 1
    assert_allclose(ibi.intervals, [0.8, 0.9])


def test_ibi_offsets_must_increase(tmp_path):
    path = _write(tmp_path / 'IBI.csv', '1580000000.0, IBI\n1.0,0.8\n1.0,0.9\n')
    with pytest.raises(NonMonotonicTimestamp) as info:
        parse_ibi(path)
    assert info.value.line == 3


def test_slice_window_keeps_half_open_interval():
    log = build_log(app_events=[{'app_package': 'a', 'utc_ms': t * 1000} for t in (10, 70, 130)])
    window = slice_window(log.app_events, 130_000, 60)
    assert window['utc_ms'].tolist() == [70_000]
    assert len(slice_window(log.app_events, 200_000, 1_000)) == 3
    assert slice_window(log.app_events, 5_000, 60).empty


def test_slice_window_on_event_log_keeps_relations():
    log = build_log(app_events=[{'app_package': 'a', 'utc_ms': 70_000}],
                    contact_relations=[{'contact_hash': 'c', 'relations': 'family'}])
    window = slice_window(log, Timestamp(130_000), 60)
    assert len(window.app_events) == 1
    assert len(window.contact_relations) == 1


def test_slice_window_rejects_non_positive_duration():
    channel = PhysioChannel('EDA', Timestamp(0), 4.0, np.zeros(16))
    with pytest.raises(ValueError):
        slice_window(channel, 4_000, 0)


@given(start_s=st.integers(0, 10_000), rate=st.sampled_from([1.0, 4.0, 32.0, 64.0]),
       n=st.integers(1, 400), end_offset_s=st.floats(-5, 20), duration=st.floats(0.1, 15))
def test_channel_window_samples_fall_inside(start_s, rate, n, end_offset_s, duration):
    channel = PhysioChannel('BVP', Timestamp(start_s * 1000), rate, np.arange(n, dtype=float))
    end_ms = int(round((start_s + end_offset_s) * 1000))
    window = slice_window(channel, end_ms, duration)
    times = window.times()
    assert np.all(times >= end_ms / 1000 - duration - 1e-6)
    assert np.all(times < end_ms / 1000 + 1e-6)
    inside = (channel.times() >= end_ms / 1000 - duration) & (channel.times() < end_ms / 1000)
    assert len(window) >= int(inside.sum())


def test_write_parse_round_trip_is_byte_identical(tmp_path):
    ibi = IbiSeries(Timestamp(1_580_000_000_000), np.array([1.0, 1.8, 2.7]), np.array([0.8, 0.8, 0.9]))
    eda = PhysioChannel('EDA', Timestamp(1_580_000_000_000), 4.0, np.array([0.25, 0.5, 0.75, 1.0]))
    acc = {kind: PhysioChannel(kind, Timestamp(1_580_000_000_000), 32.0, np.array([1.0, -0.5]))
           for kind in ACC_KINDS}
    log = build_log(
        physio=PhysioRecording(channels={'EDA': eda, **acc}, ibi=ibi),
        notifications=[{'app_package': 'com.whatsapp', 'arrival_utc_ms': DAY0_MS, 'contact_hash': 'c1'}],
        app_events=[{'app_package': 'com.whatsapp', 'utc_ms': DAY0_MS + 60_000}],
        screen_events=[{'state': 'on', 'utc_ms': DAY0_MS + 50_000}],
        location_events=[{'plus_code': '8FVC9G8F+6X', 'utc_ms': DAY0_MS}],
        contact_relations=[{'contact_hash': 'c1', 'relations': 'friend'}],
    )
    first = write_event_log(log, tmp_path / 'a')
    second = write_event_log(parse_event_log(first), tmp_path / 'b')
    files = sorted(p.relative_to(first) for p in first.rglob('*') if p.is_file())
    assert files == sorted(p.relative_to(second) for p in second.rglob('*') if p.is_file())
    for name in files:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_summarize_counts(responsive_log):
    summary = summarize_event_log(responsive_log)
    assert summary['participant'] == 'P01'
    assert summary['notifications'] == 30
    assert summary['app_events'] == 30
    assert summary['physio_EDA_samples'] == 0
    assert summary['warnings'] == 0


def test_empty_table_dtypes():
    log = build_log()
    assert isinstance(log.notifications, pd.DataFrame)
    assert str(log.notifications['removed_utc_ms'].dtype) == 'Int64'
