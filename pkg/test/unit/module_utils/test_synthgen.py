import numpy as np
import pytest
from scipy.stats import ks_2samp

from module_utils.common import Channel, Phase, SpecError, ValidationError
from module_utils.datapipe import load_battery
from module_utils.losses import mk_mmd
from module_utils.synthgen import SynthSpec, soh_curve, synth_battery, synth_domain, synth_transfer_pair, \
    write_corpus


def spec(**kwargs):
    kwargs.setdefault('n_cycles', 10)
    kwargs.setdefault('sample_period_s', 120.0)
    return SynthSpec(**kwargs)


class TestSynthSpec(object):

    def test_fade_law(self):
        assert np.isclose(soh_curve(1e-4, 1.0, 500), 0.95)
        assert np.isclose(soh_curve(1e-3, 0.5, 100), 0.99)

    @pytest.mark.parametrize('kwargs', [
        dict(n_cycles=0),
        dict(fade_coefficient=-1e-4),
        dict(fade_exponent=0.0),
        dict(noise_std=-0.1),
        dict(soc_window=(80.0, 20.0)),
        dict(voltage_range=(4.2, 3.0)),
        dict(n_batteries=0),
        dict(battery_jitter=1.0),
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(SpecError):
            spec(**kwargs)

    def test_soh_must_stay_positive(self):
        with pytest.raises(SpecError) as ex:
            spec(n_cycles=100, fade_coefficient=0.01)

        assert 'reduce the fade coefficient' in str(ex.value)

    def test_from_dict(self):
        loaded = SynthSpec.from_dict({'n_cycles': 5, 'soc_window': [20, 80], 'noise_std': 0.001})

        assert loaded.soc_window == (20.0, 80.0)
        assert loaded.to_dict()['soc_window'] == [20.0, 80.0]

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValidationError):
            SynthSpec.from_dict({'n_cycles': 5, 'cycles': 10})

    def test_cycle_stride(self):
        assert list(spec(n_cycles=10, cycle_stride=4).cycles) == [1, 5, 9]


class TestSynthBattery(object):

    def test_labels_follow_fade_law(self):
        _, labels = synth_battery(spec(n_cycles=500, fade_coefficient=1e-4, cycle_stride=499))

        assert labels[1] == pytest.approx(0.9999)
        assert labels[500] == pytest.approx(0.95)

    def test_no_fade_gives_new_batteries(self):
        dataset = synth_domain(spec(fade_coefficient=0.0), normalize=False)

        assert np.all(dataset.labels == 1.0)

    def test_charge_then_discharge(self):
        records, _ = synth_battery(spec())

        phases = records[0].phases
        assert phases[0] == Phase.CC_CHARGE
        assert phases[-1] == Phase.DISCHARGE
        assert np.all(np.diff(records[0].time_s) > 0)

    def test_charge_only(self):
        records, _ = synth_battery(spec(), include_discharge=False)

        assert np.all(records[0].current_A > 0)

    def test_same_seed_same_data(self):
        first = synth_domain(spec(noise_std=0.002, seed=4))
        second = synth_domain(spec(noise_std=0.002, seed=4))

        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.labels, second.labels)

    def test_seed_changes_noise(self):
        first = synth_domain(spec(noise_std=0.002, seed=4), normalize=False)
        second = synth_domain(spec(noise_std=0.002, seed=5), normalize=False)

        assert not np.array_equal(first.features, second.features)

    def test_capacity_shrinks_with_fade(self):
        dataset = synth_domain(spec(fade_coefficient=0.02), normalize=False)

        final_charge = dataset.features[:, -1, Channel.index(Channel.DQ)]
        assert np.all(np.diff(final_charge) < 0)
        assert np.allclose(final_charge / dataset.labels, 2.0, rtol=1e-6)


class TestSynthDomain(object):

    def test_batteries_are_merged(self):
        dataset = synth_domain(spec(n_batteries=3, battery_jitter=0.2))

        assert dataset.n_samples == 30
        assert sorted(set(dataset.battery_ids)) == ['synthetic-b00', 'synthetic-b01', 'synthetic-b02']
        assert dataset.normalized

    def test_transfer_pair(self):
        source, target, hidden = synth_transfer_pair(spec(), spec(soc_window=(20.0, 80.0), seed=1))

        assert source.labeled
        assert not target.labeled
        assert len(hidden) == target.n_samples == 10
        assert source.n_samples == 50
        assert np.allclose(source.soc_windows[:, 1] - source.soc_windows[:, 0], 60.0)
        assert np.allclose(target.soc_windows, [20.0, 80.0])

    def test_identical_domains_have_no_discrepancy(self):
        source, target, hidden = synth_transfer_pair(spec(), spec())

        assert np.allclose(hidden, source.labels)
        fs = source.features.reshape(source.n_samples, -1)
        ft = target.features.reshape(target.n_samples, -1)
        assert abs(mk_mmd(fs, ft).item()) < 1e-12

    def test_source_must_cover_full_range(self):
        with pytest.raises(SpecError):
            synth_transfer_pair(spec(soc_window=(10.0, 100.0)), spec(soc_window=(20.0, 80.0)))

    def test_faster_target_fade_shifts_labels(self):
        source_spec = spec(n_cycles=500, cycle_stride=10, fade_coefficient=1e-4)
        target_spec = spec(n_cycles=1000, cycle_stride=10, fade_coefficient=2e-4, soc_window=(20.0, 80.0), seed=1)

        source, _, hidden = synth_transfer_pair(source_spec, target_spec)

        assert ks_2samp(source.labels, hidden).statistic > 0.5


class TestWriteCorpus(object):

    def test_files_parse_back(self, tmp_path):
        battery_spec = spec(n_cycles=6, fade_coefficient=0.01, n_batteries=2)

        written = write_corpus(battery_spec, str(tmp_path))

        assert [w['battery_id'] for w in written] == ['synthetic-b00', 'synthetic-b01']
        first = written[0]
        dataset = load_battery(first['csv'], first['metadata'], first['labels'], battery_id=first['battery_id'])
        expected = synth_domain(battery_spec, normalize=False)
        expected = expected.subset(np.flatnonzero(expected.battery_ids == 'synthetic-b00'))
        assert dataset.n_samples == 6
        assert np.allclose(dataset.labels, expected.labels, atol=1e-9)
        assert np.allclose(dataset.features[:, :, 0], expected.features[:, :, 0], atol=1e-6)
