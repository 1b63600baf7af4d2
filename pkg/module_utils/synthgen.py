"""
Synthetic cycling corpora with a power-law capacity fade, standing in for laboratory data.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, replace
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from module_utils.common import SpecError, make_rng, spawn_seeds
from module_utils.config_schema import ModelName, validate_or_raise
from module_utils.datapipe import CSV_COLUMNS, LABEL_COLUMNS, CycleRecord, DomainMetadata, build_domain, \
    merge_domains, normalize_domain, tag_phases

logger = logging.getLogger(__name__)

TEMPLATE_STEEPNESS = 6.0


@dataclass
class SynthSpec:
    n_cycles: int
    soc_window: Tuple[float, float] = (0.0, 100.0)
    fade_coefficient: float = 1e-4
    fade_exponent: float = 1.0
    noise_std: float = 0.0
    resistance: float = 0.05
    resistance_growth: float = 2.0
    voltage_offset: float = 0.0
    nominal_capacity: float = 2.0
    voltage_range: Tuple[float, float] = (3.0, 4.2)
    charge_rate_C: float = 0.5
    discharge_rate_C: float = 1.0
    temperature_C: float = 25.0
    sample_period_s: float = 30.0
    n_batteries: int = 1
    battery_jitter: float = 0.0
    cycle_stride: int = 1
    dataset_name: str = 'synthetic'
    seed: int = 0

    def __post_init__(self):
        self.soc_window = tuple(float(v) for v in self.soc_window)
        self.voltage_range = tuple(float(v) for v in self.voltage_range)
        if self.n_cycles < 1:
            raise SpecError('n_cycles must be at least 1, got %s.' % self.n_cycles)
        if self.fade_coefficient < 0 or self.fade_exponent <= 0:
            raise SpecError('Fade law needs a >= 0 and b > 0, got a=%s, b=%s.'
                            % (self.fade_coefficient, self.fade_exponent))
        if self.noise_std < 0:
            raise SpecError('noise_std must be non-negative, got %s.' % self.noise_std)
        if not 0.0 <= self.soc_window[0] < self.soc_window[1] <= 100.0:
            raise SpecError('soc_window must satisfy 0 <= start < end <= 100, got %s.' % (self.soc_window,))
        if self.voltage_range[0] >= self.voltage_range[1]:
            raise SpecError('voltage_range must be increasing, got %s.' % (self.voltage_range,))
        if min(self.nominal_capacity, self.charge_rate_C, self.discharge_rate_C, self.sample_period_s) <= 0:
            raise SpecError('Capacity, C-rates and sample period must be positive.')
        if self.resistance < 0 or self.resistance_growth < 0:
            raise SpecError('Resistance parameters must be non-negative.')
        if self.n_batteries < 1 or self.cycle_stride < 1:
            raise SpecError('n_batteries and cycle_stride must be at least 1.')
        if not 0.0 <= self.battery_jitter < 1.0:
            raise SpecError('battery_jitter must lie in [0, 1), got %s.' % self.battery_jitter)
        worst = soh_curve(self.fade_coefficient * (1.0 + self.battery_jitter), self.fade_exponent, self.n_cycles)
        if worst <= 0:
            raise SpecError('SOH falls to %.4f by cycle %d; reduce the fade coefficient or the cycle count.'
                            % (worst, self.n_cycles), obj=worst)

    @classmethod
    def from_dict(cls, data):
        validate_or_raise(ModelName.SYNTH_SPEC, data)
        return cls(**{k: v for k, v in data.items() if v is not None})

    def to_dict(self):
        data = asdict(self)
        data['soc_window'] = list(self.soc_window)
        data['voltage_range'] = list(self.voltage_range)
        return data

    @property
    def cycles(self):
        return np.arange(1, self.n_cycles + 1, self.cycle_stride)

    def metadata(self):
        return DomainMetadata(
            nominal_capacity_Ah=self.nominal_capacity,
            soc_range=self.soc_window,
            voltage_range=self.voltage_range,
            temperature_C=self.temperature_C,
            discharge_rate_C=self.discharge_rate_C,
            dataset_name=self.dataset_name,
        )


def soh_curve(fade_coefficient, fade_exponent, cycles):
    """SOH = 1 - a * cycle ** b."""
    return 1.0 - fade_coefficient * np.power(np.asarray(cycles, dtype=np.float64), fade_exponent)


def voltage_template(soc_fraction, voltage_range):
    v_min, v_max = voltage_range
    return v_min + (v_max - v_min) * expit(TEMPLATE_STEEPNESS * (soc_fraction - 0.5))


def _phase_curve(spec, soh, soc_from, soc_to, current, rng):
    capacity = soh * spec.nominal_capacity
    duration = capacity * abs(soc_to - soc_from) / 100.0 / abs(current) * 3600.0
    n = max(2, int(np.ceil(duration / spec.sample_period_s)) + 1)
    time_s = np.linspace(0.0, duration, n)
    soc = (soc_from + (soc_to - soc_from) * time_s / duration) / 100.0
    resistance = spec.resistance * (1.0 + spec.resistance_growth * (1.0 - soh))
    voltage = voltage_template(soc, spec.voltage_range) + resistance * current + spec.voltage_offset
    if spec.noise_std > 0:
        voltage = voltage + rng.normal(0.0, spec.noise_std, size=n)
    return time_s, voltage, np.full(n, current)


def synth_battery(spec, battery_index=0, seed=None, include_discharge=True):
    """
    Generates the cycling log of one battery.

    :return: tuple of (CycleRecord list, {cycle_index: SOH})
    """
    rng = make_rng(spec.seed if seed is None else seed)
    fade = spec.fade_coefficient * (1.0 + spec.battery_jitter * rng.uniform(-1.0, 1.0))
    battery_id = '%s-b%02d' % (spec.dataset_name, battery_index)
    charge_current = spec.charge_rate_C * spec.nominal_capacity
    discharge_current = -spec.discharge_rate_C * spec.nominal_capacity
    soc_start, soc_end = spec.soc_window

    records = []
    labels = {}
    for cycle, soh in zip(spec.cycles, soh_curve(fade, spec.fade_exponent, spec.cycles)):
        time_s, voltage, current = _phase_curve(spec, soh, soc_start, soc_end, charge_current, rng)
        if include_discharge:
            d_time, d_voltage, d_current = _phase_curve(spec, soh, soc_end, soc_start, discharge_current, rng)
            time_s = np.concatenate((time_s, time_s[-1] + spec.sample_period_s + d_time))
            voltage = np.concatenate((voltage, d_voltage))
            current = np.concatenate((current, d_current))
        records.append(CycleRecord(int(cycle), time_s, voltage, current, tag_phases(current), battery_id))
        labels[int(cycle)] = float(soh)
    return records, labels


def _battery_seeds(spec):
    return spawn_seeds(spec.seed, spec.n_batteries)


def synth_domain(spec, window_dod=None, step=10.0, normalize=True, ic_smoothing=False):
    """
    Generates a labeled domain from `spec` and runs it through the charge-curve pipeline.

    :param window_dod: SOC window width, defaults to the spec's full SOC window
    :rtype: DomainDataset
    """
    metadata = spec.metadata()
    datasets = []
    for battery_index, seed in enumerate(_battery_seeds(spec)):
        records, labels = synth_battery(spec, battery_index, seed)
        datasets.append(build_domain(records, metadata, window_dod, step, labels, ic_smoothing))
    dataset = merge_domains(datasets) if len(datasets) > 1 else datasets[0]
    dataset = replace(dataset, metadata=metadata)
    logger.info('Generated %d samples from %d synthetic batteries (%s)', dataset.n_samples, spec.n_batteries,
                spec.dataset_name)
    return normalize_domain(dataset) if normalize else dataset


def synth_transfer_pair(source_spec, target_spec, step=10.0, normalize=True, ic_smoothing=False):
    """
    Builds a labeled full-range source domain, segmented with the target's depth of discharge,
    and an unlabeled target domain.

    :return: tuple of (source DomainDataset, target DomainDataset without labels, hidden target labels)
    """
    if source_spec.soc_window != (0.0, 100.0):
        raise SpecError('The source domain must cover the full 0-100%% SOC range, got %s.'
                        % (source_spec.soc_window,))
    window_dod = target_spec.soc_window[1] - target_spec.soc_window[0]
    source = synth_domain(source_spec, window_dod, step, normalize, ic_smoothing)
    target = synth_domain(target_spec, window_dod, step, normalize, ic_smoothing)
    target, hidden_labels = target.without_labels()
    return source, target, hidden_labels


def write_corpus(spec, output_dir, include_discharge=True):
    """
    Writes one cycling CSV, metadata JSON and labels CSV per synthetic battery.

    :return: list of dicts with keys battery_id, csv, metadata, labels
    """
    os.makedirs(output_dir, exist_ok=True)
    metadata = spec.metadata().to_dict()
    written = []
    for battery_index, seed in enumerate(_battery_seeds(spec)):
        records, labels = synth_battery(spec, battery_index, seed, include_discharge)
        battery_id = records[0].battery_id
        stem = os.path.join(output_dir, battery_id)

        cycles = pd.DataFrame({
            CSV_COLUMNS['cycle_index']: np.concatenate([np.full(len(r.time_s), r.cycle_index) for r in records]),
            CSV_COLUMNS['time_s']: np.concatenate([r.time_s for r in records]),
            CSV_COLUMNS['voltage_V']: np.concatenate([r.voltage_V for r in records]),
            CSV_COLUMNS['current_A']: np.concatenate([r.current_A for r in records]),
        })
        cycles.to_csv(stem + '.csv', index=False, float_format='%.12g')

        pd.DataFrame({
            LABEL_COLUMNS[0]: list(labels.keys()),
            LABEL_COLUMNS[1]: [soh * spec.nominal_capacity for soh in labels.values()],
        }).to_csv(stem + '_labels.csv', index=False, float_format='%.12g')

        with open(stem + '_metadata.json', 'w', encoding='utf-8') as f:
            json.dump(metadata, f, indent=2, sort_keys=True)

        written.append({
            'battery_id': battery_id,
            'csv': stem + '.csv',
            'metadata': stem + '_metadata.json',
            'labels': stem + '_labels.csv',
        })
    logger.info('Wrote %d synthetic batteries to %s', len(written), output_dir)
    return written
