import json
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from module_utils.common import CHANNEL_COUNT, SEGMENT_LENGTH, Channel, LengthError, Phase, SchemaError, \
    SkdanConfigurationError, SkdanDataError, check_finite
from module_utils.config_schema import ModelName, validate_or_raise
from module_utils.container import ContainerKind, read_container, write_container

logger = logging.getLogger(__name__)

CSV_COLUMNS = {
    'cycle_index': 'cycle_index',
    'time_s': 'time_s',
    'voltage_V': 'voltage_V',
    'current_A': 'current_A',
}
LABEL_COLUMNS = ('cycle_index', 'calibrated_capacity_Ah')
KDE_COLUMNS = ('grid_value', 'density')

CC_TOLERANCE = 0.05
CURRENT_EPSILON = 1e-9
CONSTANT_BANDWIDTH_SCALE = 1e-3
IC_VOLTAGE_EPSILON = 1e-9
IC_SMOOTHING_WINDOW = 5
SOC_TOLERANCE = 1e-9


@dataclass
class DomainMetadata:
    nominal_capacity_Ah: float
    soc_range: Tuple[float, float]
    voltage_range: Optional[Tuple[float, float]] = None
    temperature_C: Optional[float] = None
    discharge_rate_C: Optional[float] = None
    dataset_name: str = ''

    def __post_init__(self):
        self.soc_range = tuple(float(v) for v in self.soc_range)
        if self.voltage_range is not None:
            self.voltage_range = tuple(float(v) for v in self.voltage_range)
        if self.nominal_capacity_Ah <= 0:
            raise SkdanConfigurationError('nominal_capacity_Ah must be positive, got %s.' % self.nominal_capacity_Ah)
        if len(self.soc_range) != 2 or not 0.0 <= self.soc_range[0] < self.soc_range[1] <= 100.0:
            raise SkdanConfigurationError('soc_range must be [start, end] with 0 <= start < end <= 100, got %s.'
                                          % (self.soc_range,))

    @property
    def soc_span(self):
        return self.soc_range[1] - self.soc_range[0]

    @classmethod
    def from_dict(cls, data):
        validate_or_raise(ModelName.DOMAIN_METADATA, data)
        return cls(**{k: v for k, v in data.items() if v is not None})

    def to_dict(self):
        return {
            'nominal_capacity_Ah': self.nominal_capacity_Ah,
            'soc_range': list(self.soc_range),
            'voltage_range': list(self.voltage_range) if self.voltage_range is not None else None,
            'temperature_C': self.temperature_C,
            'discharge_rate_C': self.discharge_rate_C,
            'dataset_name': self.dataset_name,
        }


@dataclass
class CycleRecord:
    cycle_index: int
    time_s: np.ndarray
    voltage_V: np.ndarray
    current_A: np.ndarray
    phases: np.ndarray
    battery_id: str = ''

    def phase_rows(self, phase):
        mask = self.phases == phase
        return self.time_s[mask], self.voltage_V[mask], self.current_A[mask]


@dataclass
class RawSegment:
    time_s: np.ndarray
    voltage_V: np.ndarray
    charge_Ah: np.ndarray
    soc_window: Tuple[float, float] = (0.0, 100.0)
    cycle_index: int = 0
    battery_id: str = ''

    def __len__(self):
        return len(self.time_s)


@dataclass
class ResampledSegment:
    voltage_V: np.ndarray
    charge_Ah: np.ndarray
    soc_window: Tuple[float, float]
    cycle_index: int
    battery_id: str


@dataclass
class ChargeSegment:
    features: np.ndarray
    soc_window: Tuple[float, float]
    cycle_index: int
    battery_id: str = ''
    soh_label: Optional[float] = None

    def channel(self, name):
        return self.features[:, Channel.index(name)]

    @property
    def v(self):
        return self.channel(Channel.V)

    @property
    def dv(self):
        return self.channel(Channel.DV)

    @property
    def dq(self):
        return self.channel(Channel.DQ)

    @property
    def ic(self):
        return self.channel(Channel.IC)


@dataclass
class DomainDataset:
    """
    Samples of one domain stacked as a [N, length, 4] array with per-sample provenance.
    `labels` is None for unlabeled (target) domains.
    """
    features: np.ndarray
    metadata: DomainMetadata
    cycle_index: np.ndarray
    battery_ids: np.ndarray
    soc_windows: np.ndarray
    labels: Optional[np.ndarray] = None
    channel_min: Optional[np.ndarray] = None
    channel_max: Optional[np.ndarray] = None
    normalized: bool = False
    degenerate_channels: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3 or self.features.shape[2] != CHANNEL_COUNT:
            raise SkdanDataError('Domain features must have shape [N, length, %d], got %s.'
                                 % (CHANNEL_COUNT, self.features.shape))
        n = self.features.shape[0]
        self.cycle_index = np.asarray(self.cycle_index, dtype=np.int64).reshape(n)
        self.battery_ids = np.asarray(self.battery_ids, dtype=object).reshape(n)
        self.soc_windows = np.asarray(self.soc_windows, dtype=np.float64).reshape(n, 2)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (n,):
                raise SkdanDataError('A labeled domain needs one label per sample: %d samples, labels of shape %s.'
                                     % (n, self.labels.shape))
            check_finite(self.labels, 'SOH labels')

    @property
    def labeled(self):
        return self.labels is not None

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def segment_length(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n_samples

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[indices],
            cycle_index=self.cycle_index[indices],
            battery_ids=self.battery_ids[indices],
            soc_windows=self.soc_windows[indices],
            labels=None if self.labels is None else self.labels[indices],
            degenerate_channels=list(self.degenerate_channels),
        )

    def without_labels(self):
        """
        :return: tuple of (unlabeled copy, hidden labels)
        """
        hidden = None if self.labels is None else self.labels.copy()
        return replace(self, labels=None, degenerate_channels=list(self.degenerate_channels)), hidden

    def segments(self):
        return [
            ChargeSegment(
                features=self.features[i],
                soc_window=tuple(self.soc_windows[i]),
                cycle_index=int(self.cycle_index[i]),
                battery_id=str(self.battery_ids[i]),
                soh_label=None if self.labels is None else float(self.labels[i]),
            )
            for i in range(self.n_samples)
        ]

    @classmethod
    def from_segments(cls, segments, metadata):
        if not segments:
            raise SkdanDataError('Cannot build a domain dataset without samples.')
        labeled = all(s.soh_label is not None for s in segments)
        return cls(
            features=np.stack([s.features for s in segments]),
            metadata=metadata,
            cycle_index=[s.cycle_index for s in segments],
            battery_ids=[s.battery_id for s in segments],
            soc_windows=[s.soc_window for s in segments],
            labels=[s.soh_label for s in segments] if labeled else None,
        )


def load_metadata(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise SkdanConfigurationError('Cannot read metadata file %s: %s' % (path, e), obj=path)
    return DomainMetadata.from_dict(data)


def _read_csv(path, columns):
    try:
        frame = pd.read_csv(path, encoding='utf-8')
    except (OSError, ValueError) as e:
        raise SkdanDataError('Cannot read CSV file %s: %s' % (path, e), obj=path)
    for column in columns:
        if column not in frame.columns:
            raise SchemaError("CSV file %s is missing column '%s'." % (path, column), column=column)
    return frame


def _longest_plateau(current, charging):
    """Returns (start, stop) of the longest run of charging rows within tolerance of the run's first value."""
    best = (0, 0)
    start = None
    for i in range(len(current) + 1):
        if start is not None and (i == len(current) or not charging[i]
                                  or abs(current[i] - current[start]) > CC_TOLERANCE * current[start]):
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
        if start is None and i < len(current) and charging[i]:
            start = i
    return best


def tag_phases(current):
    """
    Tags each sample as CC charge, CV charge, discharge or rest. The CC level is the median of the longest
    near-constant run of positive current; positive rows within 5% of that level are CC, other positive
    rows are CV.
    """
    phases = np.full(current.shape, Phase.REST, dtype=object)
    charging = current > CURRENT_EPSILON
    phases[current < -CURRENT_EPSILON] = Phase.DISCHARGE
    if np.any(charging):
        start, stop = _longest_plateau(current, charging)
        level = np.median(current[start:stop])
        constant = charging & (np.abs(current - level) <= CC_TOLERANCE * level)
        phases[charging] = Phase.CV_CHARGE
        phases[constant] = Phase.CC_CHARGE
    return phases


def parse_cycling_csv(path, schema=None, battery_id=''):
    """
    Reads one battery's cycling log.

    :param path: CSV file with a header row
    :param schema: optional mapping of canonical column name to the column name used in the file
    :return: list of CycleRecord sorted by cycle index
    :raises SchemaError: when a required column is missing
    :raises SkdanDataError: when time is not strictly increasing within a cycle
    """
    schema = dict(CSV_COLUMNS, **(schema or {}))
    frame = _read_csv(path, [schema[name] for name in CSV_COLUMNS])
    frame = frame.rename(columns={v: k for k, v in schema.items()})[list(CSV_COLUMNS)]

    records = []
    for cycle_index, group in frame.groupby('cycle_index', sort=True):
        time_s = group['time_s'].to_numpy(dtype=np.float64)
        voltage = group['voltage_V'].to_numpy(dtype=np.float64)
        current = group['current_A'].to_numpy(dtype=np.float64)
        if not (np.all(np.isfinite(time_s)) and np.all(np.isfinite(voltage)) and np.all(np.isfinite(current))):
            raise SkdanDataError('Cycle %s in %s contains non-finite values.' % (cycle_index, path),
                                 cycle_index=int(cycle_index))
        if np.any(np.diff(time_s) <= 0):
            raise SkdanDataError('Time is not strictly increasing within cycle %s of %s.' % (cycle_index, path),
                                 cycle_index=int(cycle_index))
        records.append(CycleRecord(int(cycle_index), time_s, voltage, current, tag_phases(current), battery_id))

    logger.debug('Parsed %d cycles from %s', len(records), path)
    return records


def load_labels(path, nominal_capacity_Ah):
    """
    :return: mapping of cycle index to SOH (calibrated capacity / nominal capacity)
    """
    frame = _read_csv(path, LABEL_COLUMNS)
    capacity = frame['calibrated_capacity_Ah'].to_numpy(dtype=np.float64)
    check_finite(capacity, 'Calibrated capacities in %s' % path)
    return dict(zip(frame['cycle_index'].astype(int).tolist(), (capacity / nominal_capacity_Ah).tolist()))


def window_count(span, window_dod, step):
    if window_dod > span + SOC_TOLERANCE:
        return 0
    return int(np.floor((span - window_dod) / step + SOC_TOLERANCE)) + 1


def _check_window(window_dod, step):
    if not 0.0 < window_dod <= 100.0:
        raise SkdanConfigurationError('window_dod must lie in (0, 100], got %s.' % window_dod, obj=window_dod)
    if step <= 0:
        raise SkdanConfigurationError('Window step must be positive, got %s.' % step, obj=step)


def segment_cycles(record, window_dod, step, soc_range=(0.0, 100.0)):
    """
    Splits the CC-charge phase of a cycle into overlapping SOC windows.

    The SOC proxy is the cumulative CC charge divided by the total CC charge, mapped onto `soc_range`.
    Windows start at soc_range[0] + k * step and end at start + window_dod, while inside the range.
    Boundary samples are interpolated so each window begins and ends exactly on its SOC bounds.

    :type record: CycleRecord
    :return: list of RawSegment, empty when the window does not fit
    """
    _check_window(window_dod, step)
    time_s, voltage, current = record.phase_rows(Phase.CC_CHARGE)
    if len(time_s) < 2:
        return []

    charge = cumulative_trapezoid(current, time_s, initial=0.0) / 3600.0
    total = charge[-1]
    if total <= 0:
        return []
    soc_start, soc_end = soc_range
    soc = soc_start + (soc_end - soc_start) * charge / total

    segments = []
    for k in range(window_count(soc_end - soc_start, window_dod, step)):
        low = soc_start + k * step
        high = min(low + window_dod, soc_end)
        t_low, t_high = np.interp([low, high], soc, time_s)
        inside = (soc > low) & (soc < high)
        seg_time = np.concatenate(([t_low], time_s[inside], [t_high]))
        seg_voltage = np.concatenate((np.interp([t_low], time_s, voltage), voltage[inside],
                                      np.interp([t_high], time_s, voltage)))
        seg_charge = np.concatenate((np.interp([low], soc, charge), charge[inside], np.interp([high], soc, charge)))
        segments.append(RawSegment(seg_time, seg_voltage, seg_charge, (low, high), record.cycle_index,
                                   record.battery_id))
    return segments


def resample_segment(raw, n_points=SEGMENT_LENGTH):
    """
    Linearly interpolates voltage and cumulative charge onto a uniform grid in normalized time.
    The first and last values are kept exactly.

    :type raw: RawSegment
    :rtype: ResampledSegment
    """
    if len(raw) < 2:
        raise SkdanDataError('A segment needs at least 2 samples to be resampled, got %d.' % len(raw),
                             cycle_index=raw.cycle_index)
    duration = raw.time_s[-1] - raw.time_s[0]
    if duration <= 0:
        raise SkdanDataError('Segment of cycle %s has zero duration.' % raw.cycle_index, cycle_index=raw.cycle_index)

    tau = (raw.time_s - raw.time_s[0]) / duration
    grid = np.linspace(0.0, 1.0, n_points)
    voltage = np.interp(grid, tau, raw.voltage_V)
    charge = np.interp(grid, tau, raw.charge_Ah)
    voltage[0], voltage[-1] = raw.voltage_V[0], raw.voltage_V[-1]
    charge[0], charge[-1] = raw.charge_Ah[0], raw.charge_Ah[-1]
    return ResampledSegment(voltage, charge, tuple(raw.soc_window), raw.cycle_index, raw.battery_id)


def smooth_ic(ic):
    smoothed = pd.Series(ic).rolling(IC_SMOOTHING_WINDOW, center=True, min_periods=1).mean().to_numpy()
    smoothed[0] = 0.0
    return smoothed


def compute_features(v, q, ic_smoothing=False):
    """
    Builds the [length, 4] channel matrix (v, dv, dq, ic) of a resampled charge curve.

    IC is the incremental capacity d(dq)/d(dv); where a voltage step is below 1e-9 V the previous
    IC value is carried forward.
    """
    v = np.asarray(v, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if v.shape != q.shape or v.ndim != 1 or len(v) < 1:
        raise LengthError('Voltage and charge must be equal-length vectors, got %s and %s.' % (v.shape, q.shape))

    dv = v - v[0]
    dq = q - q[0]
    n = len(v)
    step_v = np.diff(dv)
    step_q = np.diff(dq)
    valid = np.abs(step_v) >= IC_VOLTAGE_EPSILON
    ic = np.zeros(n)
    ic[1:][valid] = step_q[valid] / step_v[valid]
    source = np.where(np.concatenate(([True], valid)), np.arange(n), 0)
    ic = ic[np.maximum.accumulate(source)]
    if ic_smoothing:
        ic = smooth_ic(ic)
    return np.stack([v, dv, dq, ic], axis=1)


def build_segments(record, window_dod, step, soc_range, soh_label=None, ic_smoothing=False,
                   n_points=SEGMENT_LENGTH):
    segments = []
    for raw in segment_cycles(record, window_dod, step, soc_range):
        resampled = resample_segment(raw, n_points)
        features = compute_features(resampled.voltage_V, resampled.charge_Ah, ic_smoothing)
        segments.append(ChargeSegment(features, resampled.soc_window, resampled.cycle_index, resampled.battery_id,
                                      soh_label))
    return segments


def build_domain(records, metadata, window_dod=None, step=10.0, labels=None, ic_smoothing=False):
    """
    Runs segmentation, resampling and feature construction over every cycle of one or more batteries.

    :param records: CycleRecord list
    :type metadata: DomainMetadata
    :param window_dod: SOC window width in percent, defaults to the full SOC span of the metadata
    :param labels: optional mapping of cycle index to SOH; cycles without a label are skipped
    :rtype: DomainDataset (not normalized)
    """
    window_dod = metadata.soc_span if window_dod is None else window_dod
    segments = []
    unlabeled_cycles = 0
    for record in sorted(records, key=lambda r: (r.battery_id, r.cycle_index)):
        label = None
        if labels is not None:
            label = labels.get(record.cycle_index)
            if label is None:
                unlabeled_cycles += 1
                continue
        segments.extend(build_segments(record, window_dod, step, metadata.soc_range, label, ic_smoothing))

    if unlabeled_cycles:
        logger.warning('Skipped %d cycles without a calibrated capacity label', unlabeled_cycles)
    if not segments:
        raise SkdanDataError('No %.1f%% DOD windows could be cut from %d cycles of %s.'
                             % (window_dod, len(records), metadata.dataset_name or 'the domain'))
    return DomainDataset.from_segments(segments, metadata)


def load_battery(csv_path, metadata_path, labels_path=None, window_dod=None, step=10.0, battery_id=None,
                 ic_smoothing=False):
    metadata = load_metadata(metadata_path)
    battery_id = battery_id or csv_path
    records = parse_cycling_csv(csv_path, battery_id=battery_id)
    labels = load_labels(labels_path, metadata.nominal_capacity_Ah) if labels_path else None
    return build_domain(records, metadata, window_dod, step, labels, ic_smoothing)


def merge_domains(datasets):
    """
    Pools several unnormalized datasets (e.g. batteries or operating conditions) into one domain,
    ordered by battery id then cycle index.
    """
    if not datasets:
        raise SkdanDataError('Nothing to merge.')
    lengths = set(d.segment_length for d in datasets)
    if len(lengths) != 1:
        raise LengthError('Cannot merge domains with segment lengths %s.' % sorted(lengths))
    if len(set(d.labeled for d in datasets)) != 1:
        raise SkdanDataError('Cannot merge labeled and unlabeled datasets.')

    features = np.concatenate([d.features for d in datasets])
    battery_ids = np.concatenate([d.battery_ids for d in datasets])
    cycle_index = np.concatenate([d.cycle_index for d in datasets])
    order = sorted(range(len(features)), key=lambda i: (str(battery_ids[i]), int(cycle_index[i])))
    names = []
    for d in datasets:
        if d.metadata.dataset_name and d.metadata.dataset_name not in names:
            names.append(d.metadata.dataset_name)

    return DomainDataset(
        features=features[order],
        metadata=replace(datasets[0].metadata, dataset_name='+'.join(names)),
        cycle_index=cycle_index[order],
        battery_ids=battery_ids[order],
        soc_windows=np.concatenate([d.soc_windows for d in datasets])[order],
        labels=np.concatenate([d.labels for d in datasets])[order] if datasets[0].labeled else None,
    )


def channel_statistics(features):
    return features.min(axis=(0, 1)), features.max(axis=(0, 1))


def normalize_domain(dataset, stats_indices=None):
    """
    Min-max scales every channel into [0, 1] with statistics taken over the domain's samples.
    A constant channel becomes all zeros and is reported in `degenerate_channels`.

    :param stats_indices: optional sample indices (e.g. training batteries) the statistics are computed from
    :rtype: DomainDataset
    """
    if dataset.normalized:
        raise SkdanDataError('Dataset %s is already normalized.' % dataset.metadata.dataset_name)
    reference = dataset.features if stats_indices is None else dataset.features[np.asarray(stats_indices)]
    if len(reference) == 0:
        raise SkdanDataError('Normalization statistics need at least one sample.')
    channel_min, channel_max = channel_statistics(reference)
    return apply_normalization(dataset, channel_min, channel_max)


def apply_normalization(dataset, channel_min, channel_max):
    spread = channel_max - channel_min
    degenerate = spread <= 0
    scale = np.where(degenerate, 1.0, spread)
    features = (dataset.features - channel_min) / scale
    features[:, :, degenerate] = 0.0
    degenerate_channels = [Channel.ORDER[i] for i in np.flatnonzero(degenerate)]
    for name in degenerate_channels:
        logger.warning("Channel '%s' of %s is constant; it is scaled to zeros", name,
                       dataset.metadata.dataset_name or 'the domain')
    return replace(dataset, features=features, channel_min=np.array(channel_min, dtype=np.float64),
                   channel_max=np.array(channel_max, dtype=np.float64), normalized=True,
                   degenerate_channels=degenerate_channels)


def denormalize_domain(dataset):
    if not dataset.normalized:
        raise SkdanDataError('Dataset is not normalized.')
    spread = dataset.channel_max - dataset.channel_min
    features = dataset.features * spread + dataset.channel_min
    return replace(dataset, features=features, channel_min=None, channel_max=None, normalized=False,
                   degenerate_channels=[])


def split_by_battery(dataset, fraction, rng):
    """
    Splits a domain into (train, test) by whole batteries; `fraction` of the batteries go to train.
    """
    battery_ids = sorted(set(str(b) for b in dataset.battery_ids))
    if len(battery_ids) < 2:
        raise SkdanDataError('A battery split needs at least two batteries, got %d.' % len(battery_ids))
    shuffled = [battery_ids[i] for i in rng.permutation(len(battery_ids))]
    n_train = min(max(1, int(round(fraction * len(shuffled)))), len(shuffled) - 1)
    train_ids = set(shuffled[:n_train])
    in_train = np.array([str(b) in train_ids for b in dataset.battery_ids])
    return dataset.subset(np.flatnonzero(in_train)), dataset.subset(np.flatnonzero(~in_train))


def holdout_split(dataset, fraction, rng):
    """
    Splits a domain into (train, validation) by samples; `fraction` of the samples are held out.
    """
    n = dataset.n_samples
    if n < 2:
        raise SkdanDataError('A hold-out split needs at least two samples, got %d.' % n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    order = rng.permutation(n)
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))


def save_dataset(path, dataset):
    blocks = {
        'features': dataset.features,
        'cycle_index': dataset.cycle_index.astype(np.float64),
        'soc_windows': dataset.soc_windows,
    }
    if dataset.labeled:
        blocks['labels'] = dataset.labels
    if dataset.normalized:
        blocks['channel_min'] = dataset.channel_min
        blocks['channel_max'] = dataset.channel_max
    metadata = {
        'domain': dataset.metadata.to_dict(),
        'battery_ids': [str(b) for b in dataset.battery_ids],
        'normalized': dataset.normalized,
        'degenerate_channels': list(dataset.degenerate_channels),
    }
    write_container(path, ContainerKind.DATASET, metadata, blocks)


def load_dataset(path):
    metadata, blocks = read_container(path, ContainerKind.DATASET)
    return DomainDataset(
        features=blocks['features'],
        metadata=DomainMetadata.from_dict(metadata['domain']),
        cycle_index=blocks['cycle_index'].astype(np.int64),
        battery_ids=metadata['battery_ids'],
        soc_windows=blocks['soc_windows'],
        labels=blocks.get('labels'),
        channel_min=blocks.get('channel_min'),
        channel_max=blocks.get('channel_max'),
        normalized=metadata['normalized'],
        degenerate_channels=list(metadata['degenerate_channels']),
    )


def silverman_bandwidth(values):
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    std = np.std(values, ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0 < std:
        logger.warning('Inter-quartile range is zero; falling back to the standard deviation for the KDE bandwidth')
        spread = std
    elif spread <= 0:
        logger.warning('All values are identical; using a narrow default KDE bandwidth')
        return CONSTANT_BANDWIDTH_SCALE * max(np.max(np.abs(values)), 1.0)
    return 0.9 * spread * n ** (-0.2)


def kde_density(values, grid, bandwidth=None):
    """
    Gaussian kernel density estimate of `values` evaluated on `grid`.

    :param bandwidth: kernel standard deviation, Silverman's rule when omitted
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    grid = np.asarray(grid, dtype=np.float64)
    if len(values) < 2:
        raise SkdanDataError('Density estimation needs at least 2 values, got %d.' % len(values))
    if bandwidth is None:
        bandwidth = silverman_bandwidth(values)
    if not bandwidth > 0:
        raise SkdanDataError('KDE bandwidth must be positive, got %s.' % bandwidth, obj=bandwidth)

    offsets = (grid[..., None] - values) / bandwidth
    return np.exp(-0.5 * offsets * offsets).mean(axis=-1) / (bandwidth * np.sqrt(2.0 * np.pi))


def kde_grid(values, bandwidth, n_points=400):
    return np.linspace(np.min(values) - 4.0 * bandwidth, np.max(values) + 4.0 * bandwidth, n_points)


def export_kde_csv(path, values, n_points=400, bandwidth=None):
    """
    Writes a `grid_value,density` CSV covering the data range widened by four bandwidths.

    :return: (grid, density) arrays as written
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    bandwidth = silverman_bandwidth(values) if bandwidth is None else bandwidth
    grid = kde_grid(values, bandwidth, n_points)
    density = kde_density(values, grid, bandwidth)
    pd.DataFrame({KDE_COLUMNS[0]: grid, KDE_COLUMNS[1]: density}).to_csv(path, index=False, float_format='%.12e')
    return grid, density
