"""
Physiological Features Module
Statistical, regression-line, skin-conductance and heart-rate-variability features
computed over the wristband signals recorded before a notification.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import signal, stats

from context_features import FeatureVector
from errors import (DegenerateWindow, EmptyWindow, TooFewIntervals, WindowTooShort,
                    ZeroHfPower)
from event_model import IbiSeries, PhysioChannel, PhysioRecording, Timestamp, slice_window

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 300.0
STAT_NAMES = ('mean', 'var', 'std', 'min', 'max')
REGLINE_NAMES = ('f_slope', 'f_sqrt_slope', 'f_intercept1', 'f_intercept2')
HRV_TIME_NAMES = ('nni_50', 'pnni_50', 'nni_20', 'pnni_20', 'sdsd', 'range_nni',
                  'cvsd', 'cvnni', 'rmssd', 'sdnn', 'mean_nni')
HRV_FREQ_NAMES = ('vlf', 'lf', 'hf')

# Skin conductance split
EDA_CUTOFF_HZ = 0.05
MIN_EDA_SECONDS = 8.0
# Moving-average -3 dB point sits near 0.443 * rate / length
MOVING_AVERAGE_3DB = 0.443

# Heart-rate variability
TACHOGRAM_RATE_HZ = 4.0
SEGMENT_S = 64.0
FREQUENCY_BANDS = {'vlf': (0.0033, 0.04), 'lf': (0.04, 0.15), 'hf': (0.15, 0.40)}
MIN_FREQ_SPAN_S = 120.0
MIN_FREQ_INTERVALS = 10
MIN_TIME_INTERVALS = 3
MIN_TRIANGULAR_INTERVALS = 20
TRIANGULAR_BIN_MS = 7.8125
HF_POWER_FLOOR = 1e-12

# A channel window counts as present when at least this share of its samples exists
MIN_COVERAGE = 0.5

UNITS = {'EDA': 'uS', 'SCL': 'uS', 'SCR': 'uS', 'BVP': 'a.u.', 'HR': 'bpm', 'ST': 'degC',
         'IBI': 's', 'ACC_X': 'g', 'ACC_Y': 'g', 'ACC_Z': 'g'}


def stat_features(window, kind: Optional[str] = None) -> Dict[str, float]:
    """
    Mean, population variance, standard deviation, min and max; RMS for heart rate.

    Args:
        window: Sample values
        kind: Channel kind; 'HR' adds rms

    Returns:
        Dictionary keyed by statistic name
    """
    values = np.asarray(window, dtype=float)
    if values.size == 0:
        raise EmptyWindow(f"No samples in {kind or 'signal'} window")
    features = {
        'mean': float(np.mean(values)),
        'var': float(np.var(values)),
        'std': float(np.std(values)),
        'min': float(np.min(values)),
        'max': float(np.max(values)),
    }
    if kind == 'HR':
        features['rms'] = float(np.sqrt(np.mean(values ** 2)))
    return features


@dataclass(frozen=True)
class RegLineFeatures:
    f_slope: float
    f_sqrt_slope: float
    f_intercept1: float
    f_intercept2: float

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in REGLINE_NAMES}


def regline_features(t, y) -> RegLineFeatures:
    """
    Least-squares line through a window, summarized by slope and intercept magnitudes.

    Args:
        t: Sample times in seconds from the window start
        y: Sample values

    Returns:
        RegLineFeatures
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2 or np.ptp(t) == 0:
        raise DegenerateWindow("Regression line needs two samples at distinct times")
    fit = stats.linregress(t, y)
    slope = abs(float(fit.slope))
    root_intercept = math.sqrt(abs(float(fit.intercept)))
    return RegLineFeatures(
        f_slope=slope,
        f_sqrt_slope=math.sqrt(slope),
        f_intercept1=root_intercept,
        f_intercept2=root_intercept ** 3,
    )


@dataclass(frozen=True, eq=False)
class EdaDecomposition:
    scl: np.ndarray
    scr: np.ndarray


def _moving_average_length(rate_hz: float) -> int:
    length = max(1, int(round(MOVING_AVERAGE_3DB * rate_hz / EDA_CUTOFF_HZ)))
    return length if length % 2 else length + 1


def decompose_eda(channel: Union[PhysioChannel, np.ndarray], rate_hz: Optional[float] = None) -> EdaDecomposition:
    """
    Split skin conductance into a slow tonic level and the fast phasic response.

    The level is a zero-phase (forward-backward) moving average; the response is
    the remainder, so the two always add back to the input.

    Args:
        channel: EDA channel, or raw samples together with rate_hz

    Returns:
        EdaDecomposition with arrays the length of the input
    """
    if isinstance(channel, PhysioChannel):
        eda = np.asarray(channel.samples, dtype=float)
        rate_hz = channel.rate_hz
    else:
        eda = np.asarray(channel, dtype=float)
        rate_hz = 4.0 if rate_hz is None else rate_hz
    if eda.size / rate_hz < MIN_EDA_SECONDS:
        raise WindowTooShort(f"EDA decomposition needs {MIN_EDA_SECONDS} s, got {eda.size / rate_hz:.2f} s")
    length = _moving_average_length(rate_hz)
    kernel = np.full(length, 1.0 / length)
    scl = signal.filtfilt(kernel, [1.0], eda, padtype='odd', padlen=min(3 * length, eda.size - 1))
    return EdaDecomposition(scl=scl, scr=eda - scl)


def _nn_ms(ibi: Union[IbiSeries, np.ndarray]) -> np.ndarray:
    if isinstance(ibi, IbiSeries):
        return np.asarray(ibi.intervals, dtype=float) * 1000.0
    return np.asarray(ibi, dtype=float)


def hrv_time_features(ibi: Union[IbiSeries, np.ndarray]) -> Dict[str, float]:
    """
    Time-domain heart-rate variability over a window of NN intervals.

    Args:
        ibi: IbiSeries window, or NN intervals in milliseconds

    Returns:
        Dictionary with the HRV_TIME_NAMES entries
    """
    nn = _nn_ms(ibi)
    if nn.size < MIN_TIME_INTERVALS:
        raise TooFewIntervals(f"Time-domain HRV needs {MIN_TIME_INTERVALS} intervals, got {nn.size}")
    diffs = np.diff(nn)
    mean_nn = float(np.mean(nn))
    rmssd = float(np.sqrt(np.mean(diffs ** 2)))
    sdnn = float(np.std(nn))
    nni_50 = int(np.sum(np.abs(diffs) > 50))
    nni_20 = int(np.sum(np.abs(diffs) > 20))
    return {
        'nni_50': float(nni_50),
        'pnni_50': 100.0 * nni_50 / diffs.size,
        'nni_20': float(nni_20),
        'pnni_20': 100.0 * nni_20 / diffs.size,
        'sdsd': float(np.std(diffs)),
        'range_nni': float(np.max(nn) - np.min(nn)),
        'cvsd': rmssd / mean_nn,
        'cvnni': sdnn / mean_nn,
        'rmssd': rmssd,
        'sdnn': sdnn,
        'mean_nni': mean_nn,
    }


def _tachogram(ibi: Union[IbiSeries, Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(ibi, IbiSeries):
        return np.asarray(ibi.offsets, dtype=float), np.asarray(ibi.intervals, dtype=float) * 1000.0
    beat_times, nn_ms = ibi
    return np.asarray(beat_times, dtype=float), np.asarray(nn_ms, dtype=float)


def hrv_freq_features(ibi, strict: bool = False) -> Dict[str, float]:
    """
    Band powers of the NN tachogram.

    The tachogram is resampled at 4 Hz, mean-removed and passed to Welch's method
    (64 s Hann segments, half overlap); band power is the PSD summed over the band's bins.

    Args:
        ibi: IbiSeries window, or (beat times in s, NN intervals in ms)
        strict: Raise ZeroHfPower instead of returning a NaN ratio

    Returns:
        vlf, lf, hf in ms^2 and lf_hf_ratio (NaN when HF power vanishes)
    """
    beat_times, nn = _tachogram(ibi)
    if nn.size < MIN_FREQ_INTERVALS or beat_times[-1] - beat_times[0] < MIN_FREQ_SPAN_S:
        raise WindowTooShort(f"Frequency-domain HRV needs {MIN_FREQ_SPAN_S:.0f} s and "
                             f"{MIN_FREQ_INTERVALS} intervals")
    grid = np.arange(beat_times[0], beat_times[-1], 1.0 / TACHOGRAM_RATE_HZ)
    series = np.interp(grid, beat_times, nn)
    series = series - series.mean()
    segment = min(int(SEGMENT_S * TACHOGRAM_RATE_HZ), series.size)
    freqs, psd = signal.welch(series, fs=TACHOGRAM_RATE_HZ, window='hann', nperseg=segment,
                              noverlap=segment // 2, detrend='constant', scaling='density')
    step = freqs[1] - freqs[0]
    powers = {}
    for band, (low, high) in FREQUENCY_BANDS.items():
        in_band = (freqs >= low) & (freqs < high)
        powers[band] = float(np.sum(psd[in_band]) * step)
    if powers['hf'] <= HF_POWER_FLOOR:
        if strict:
            raise ZeroHfPower("HF power is zero; LF/HF ratio undefined")
        powers['lf_hf_ratio'] = float('nan')
    else:
        powers['lf_hf_ratio'] = powers['lf'] / powers['hf']
    return powers


def triangular_index(ibi: Union[IbiSeries, np.ndarray]) -> float:
    """Total NN count over the tallest 7.8125 ms histogram bin."""
    nn = _nn_ms(ibi)
    if nn.size < MIN_TRIANGULAR_INTERVALS:
        raise TooFewIntervals(f"Triangular index needs {MIN_TRIANGULAR_INTERVALS} intervals, got {nn.size}")
    bins = np.floor(nn / TRIANGULAR_BIN_MS).astype(np.int64)
    counts = np.bincount(bins - bins.min())
    return float(nn.size / counts.max())


def _stat_names(kind: str) -> List[str]:
    names = [f"{kind}_{s}" for s in STAT_NAMES]
    if kind == 'HR':
        names.append('HR_rms')
    return names


def physio_feature_groups(include_acc: bool = False) -> Dict[str, List[str]]:
    """Physiological feature names by mask group, in column order."""
    def regline(kind):
        return [f"{kind}_{n}" for n in REGLINE_NAMES]

    groups = {
        'eda': _stat_names('EDA') + regline('EDA'),
        'eda_components': _stat_names('SCL') + _stat_names('SCR') + regline('SCL'),
        'bvp': _stat_names('BVP'),
        'hr': _stat_names('HR') + regline('HR'),
        'st': _stat_names('ST') + regline('ST'),
        'ibi': _stat_names('IBI') + list(HRV_TIME_NAMES),
        'hrv_freq': list(HRV_FREQ_NAMES),
        'lf_hf': ['lf_hf_ratio'],
        'hrv_triangular': ['triangular_index'],
    }
    if include_acc:
        groups['acc'] = _stat_names('ACC_X') + _stat_names('ACC_Y') + _stat_names('ACC_Z')
    return groups


def _unit_of(name: str) -> str:
    if name.startswith('ACC_'):
        kind, stat = name[:5], name[6:]
    else:
        kind, _, stat = name.partition('_')
    if name in ('nni_50', 'nni_20'):
        return 'count'
    if name in ('pnni_50', 'pnni_20'):
        return 'percent'
    if name in ('sdsd', 'range_nni', 'rmssd', 'sdnn', 'mean_nni'):
        return 'ms'
    if name in ('vlf', 'lf', 'hf'):
        return 'ms^2'
    if name in ('cvsd', 'cvnni', 'lf_hf_ratio', 'triangular_index'):
        return 'dimensionless'
    unit = UNITS[kind]
    if stat == 'var':
        return f"{unit}^2 (population)"
    if stat == 'f_slope':
        return f"{unit}/s"
    if stat == 'f_sqrt_slope':
        return f"sqrt({unit}/s)"
    if stat == 'f_intercept1':
        return f"sqrt({unit})"
    if stat == 'f_intercept2':
        return f"{unit}^1.5"
    return unit


def physio_manifest(include_acc: bool = False) -> List[Tuple[str, str, str]]:
    """(name, group, unit) for every physiological feature."""
    return [(name, group, _unit_of(name))
            for group, names in physio_feature_groups(include_acc).items() for name in names]


def _present(channel: Optional[PhysioChannel], window_s: float) -> bool:
    if channel is None:
        return False
    return len(channel) >= max(2, MIN_COVERAGE * window_s * channel.rate_hz)


def _prefixed(kind: str, features: Dict[str, float]) -> Dict[str, float]:
    return {f"{kind}_{name}": value for name, value in features.items()}


def physio_feature_vector(recording: Optional[PhysioRecording], arrival: Timestamp,
                          window_s: float = DEFAULT_WINDOW_S, include_acc: bool = False) -> FeatureVector:
    """
    Every physiological feature over [arrival - window_s, arrival).

    Channels that are absent or too sparse in the window are masked (values 0).

    Args:
        recording: Participant's wristband recording (may be None or empty)
        arrival: Notification arrival
        window_s: Window length in seconds
        include_acc: Also emit accelerometer statistics

    Returns:
        FeatureVector with one mask per physiological group
    """
    groups = physio_feature_groups(include_acc)
    values = {name: 0.0 for names in groups.values() for name in names}
    masks = {group: True for group in groups}
    if recording is None or recording.is_empty:
        return FeatureVector(values, masks)

    window = slice_window(recording, arrival, window_s)
    window_start = arrival.seconds - window_s

    def relative_times(channel):
        return channel.times() - window_start

    for kind, group in (('BVP', 'bvp'), ('HR', 'hr'), ('ST', 'st'), ('EDA', 'eda')):
        channel = window.channel(kind)
        if not _present(channel, window_s):
            continue
        values.update(_prefixed(kind, stat_features(channel.samples, kind)))
        if kind != 'BVP':
            values.update(_prefixed(kind, regline_features(relative_times(channel), channel.samples).as_dict()))
        masks[group] = False

    eda = window.channel('EDA')
    if not masks['eda'] and eda.duration_s >= MIN_EDA_SECONDS:
        parts = decompose_eda(eda)
        values.update(_prefixed('SCL', stat_features(parts.scl)))
        values.update(_prefixed('SCR', stat_features(parts.scr)))
        values.update(_prefixed('SCL', regline_features(relative_times(eda), parts.scl).as_dict()))
        masks['eda_components'] = False

    if include_acc:
        axes = [window.channel(k) for k in ('ACC_X', 'ACC_Y', 'ACC_Z')]
        if all(_present(axis, window_s) for axis in axes):
            for axis in axes:
                values.update(_prefixed(axis.kind, stat_features(axis.samples)))
            masks['acc'] = False

    ibi = window.ibi
    if ibi is not None and len(ibi) >= MIN_TIME_INTERVALS:
        values.update(_prefixed('IBI', stat_features(ibi.intervals)))
        values.update(hrv_time_features(ibi))
        masks['ibi'] = False
    if ibi is not None and len(ibi) >= MIN_FREQ_INTERVALS \
            and ibi.offsets[-1] - ibi.offsets[0] >= MIN_FREQ_SPAN_S:
        powers = hrv_freq_features(ibi)
        ratio = powers.pop('lf_hf_ratio')
        values.update(powers)
        masks['hrv_freq'] = False
        if np.isfinite(ratio):
            values['lf_hf_ratio'] = ratio
            masks['lf_hf'] = False
    if ibi is not None and len(ibi) >= MIN_TRIANGULAR_INTERVALS:
        values['triangular_index'] = triangular_index(ibi)
        masks['hrv_triangular'] = False
    return FeatureVector(values, masks)
