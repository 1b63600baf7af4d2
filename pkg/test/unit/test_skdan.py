import json
import logging

import pytest

from library import skdan
from module_utils.common import ErrorCategory, TrainingDivergedError


def run(capsys, *argv):
    code = skdan.main(list(argv))
    out = capsys.readouterr().out
    if code != 0:
        assert out == ''
        return code, None
    return code, json.loads(out)


def logged_error(caplog):
    errors = [r.getMessage() for r in caplog.records if r.levelno == logging.ERROR]
    assert len(errors) == 1
    return errors[0]


@pytest.fixture
def corpus(tmp_path, capsys):
    spec_path = tmp_path / 'spec.yml'
    spec_path.write_text('n_cycles: 4\nfade_coefficient: 0.01\nsample_period_s: 120\nn_batteries: 2\n')
    code, result = run(capsys, 'simulate', '--spec', str(spec_path), '--output-dir', str(tmp_path / 'corpus'))
    assert code == 0
    return result['batteries']


class TestSkdanCli(object):

    def test_simulate_reports_written_batteries(self, corpus):
        assert [b['battery_id'] for b in corpus] == ['synthetic-b00', 'synthetic-b01']

    def test_preprocess_and_export_kde(self, capsys, tmp_path, corpus):
        dataset = str(tmp_path / 'source.skdan')
        argv = ['preprocess', '--metadata', corpus[0]['metadata'], '--output', dataset]
        for battery in corpus:
            argv += ['--csv', battery['csv'], '--labels', battery['labels']]

        code, result = run(capsys, *argv)

        assert code == 0
        assert result['samples'] == 8
        assert result['labeled']

        code, result = run(capsys, 'export-kde', '--dataset', dataset, '--grid-points', '200',
                           '--output', str(tmp_path / 'kde.csv'))

        assert code == 0
        assert result['points'] == 200
        assert result['integral'] == pytest.approx(1.0, abs=0.05)

    def test_preprocess_needs_one_label_file_per_csv(self, capsys, caplog, corpus, tmp_path):
        code, result = run(capsys, 'preprocess', '--csv', corpus[0]['csv'], '--csv', corpus[1]['csv'],
                           '--metadata', corpus[0]['metadata'], '--labels', corpus[0]['labels'],
                           '--output', str(tmp_path / 'out.skdan'))

        assert code == 2
        assert result is None
        assert logged_error(caplog).startswith('%s error: ' % ErrorCategory.CONFIG)

    def test_invalid_spec_fails_validation(self, capsys, caplog, tmp_path):
        spec_path = tmp_path / 'spec.yml'
        spec_path.write_text('fade_coefficient: 0.01\n')

        code, result = run(capsys, 'simulate', '--spec', str(spec_path), '--output-dir', str(tmp_path))

        assert code == 2
        message = logged_error(caplog)
        assert message.startswith('%s error: ' % ErrorCategory.VALIDATION)
        assert 'n_cycles' in message

    def test_impossible_fade_fails_as_config(self, capsys, caplog, tmp_path):
        spec_path = tmp_path / 'spec.yml'
        spec_path.write_text('n_cycles: 200\nfade_coefficient: 0.01\n')

        code, result = run(capsys, 'simulate', '--spec', str(spec_path), '--output-dir', str(tmp_path))

        assert code == 2
        assert logged_error(caplog).startswith('%s error: ' % ErrorCategory.CONFIG)

    def test_foreign_dataset_fails_as_data(self, capsys, caplog, tmp_path):
        path = tmp_path / 'model.skdan'
        path.write_bytes(b'not a container')

        code, result = run(capsys, 'evaluate', '--model', str(path), '--dataset', str(path))

        assert code == 3
        assert logged_error(caplog).startswith('%s error: ' % ErrorCategory.DATA)

    def test_divergence_fails_as_training(self, mocker, capsys, caplog, tmp_path):
        mocker.patch('library.skdan.load_dataset')
        mocker.patch('library.skdan.fit', side_effect=TrainingDivergedError(3, 'L_MMD', float('inf')))

        code, result = run(capsys, 'train', '--source', 's.skdan', '--target', 't.skdan',
                           '--model-out', str(tmp_path / 'model.skdan'))

        assert code == 5
        message = logged_error(caplog)
        assert message.startswith('%s error: ' % ErrorCategory.TRAINING)
        assert 'epoch 3' in message

    def test_unexpected_error_is_internal(self, mocker, capsys, caplog):
        mocker.patch.dict(skdan.HANDLERS, {skdan.Command.EXPERIMENT: mocker.Mock(side_effect=RuntimeError('boom'))})

        code, result = run(capsys, 'experiment', '--file', 'experiment.yml')

        assert code == 1
        assert result is None
        assert logged_error(caplog) == '%s error: boom' % ErrorCategory.INTERNAL

    def test_train_passes_seed_override(self, mocker, capsys, tmp_path):
        fit = mocker.patch('library.skdan.fit')
        fit.return_value.trace.rows = [{'total': 0.5}]
        fit.return_value.best_epoch = None
        fit.return_value.model.parameter_count.return_value = 42
        mocker.patch('library.skdan.load_dataset')
        config = tmp_path / 'hp.yml'
        config.write_text('d_model: 8\nn_heads: 2\n')

        code, result = run(capsys, 'train', '--source', 's.skdan', '--target', 't.skdan', '--config', str(config),
                           '--seed', '9', '--model-out', str(tmp_path / 'model.skdan'))

        assert code == 0
        assert result['parameters'] == 42
        hp = fit.call_args[0][2]
        assert (hp.seed, hp.d_model) == (9, 8)


class TestReadMapping(object):

    def test_absent_path(self):
        assert skdan.read_mapping(None) == {}

    def test_rejects_lists(self, tmp_path):
        path = tmp_path / 'list.yml'
        path.write_text('- 1\n- 2\n')

        with pytest.raises(skdan.SkdanConfigurationError):
            skdan.read_mapping(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(skdan.SkdanConfigurationError):
            skdan.read_mapping(str(tmp_path / 'absent.yml'))
