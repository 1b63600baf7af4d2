import pytest

from module_utils.common import ValidationError
from module_utils.config_schema import ModelName, PropName, PropType, SchemaValidator, apply_defaults, \
    validate_or_raise


@pytest.fixture
def validator():
    return SchemaValidator()


def test_valid_hyperparameters_pass(validator):
    valid, report = validator.validate(ModelName.HYPER_CONFIG, {'batch_size': 32, 'learning_rate': 1e-3})

    assert valid
    assert report is None


def test_integer_accepted_where_number_expected(validator):
    valid, _ = validator.validate(ModelName.HYPER_CONFIG, {'learning_rate': 1})

    assert valid


def test_bool_is_not_an_integer(validator):
    valid, report = validator.validate(ModelName.HYPER_CONFIG, {'batch_size': True})

    assert not valid
    assert report == {
        PropName.INVALID_TYPE: [{'path': 'batch_size', 'expected_type': PropType.INTEGER, 'actually_value': True}]
    }


def test_unknown_fields_are_reported_with_path(validator):
    valid, report = validator.validate(ModelName.EXPERIMENT, {
        'source': {'dataset': 'a.skdan'},
        'target': {'dataset': 'b.skdan'},
        'hyperparameters': {'learning_rat': 0.1},
    })

    assert not valid
    assert report == {PropName.UNKNOWN: ['hyperparameters.learning_rat']}


def test_missing_required_fields(validator):
    valid, report = validator.validate(ModelName.EXPERIMENT, {'name': 'x'})

    assert not valid
    assert sorted(report[PropName.REQUIRED]) == ['source', 'target']


def test_nested_array_items_are_validated(validator):
    valid, report = validator.validate(ModelName.EXPERIMENT, {
        'source': {'batteries': [{'csv': 'a.csv'}]},
        'target': {'dataset': 'b.skdan'},
    })

    assert not valid
    assert report == {PropName.REQUIRED: ['source.batteries[0].metadata']}


def test_enum_values_are_checked(validator):
    valid, report = validator.validate(ModelName.EXPERIMENT, {
        'source': {'dataset': 'a.skdan'},
        'target': {'dataset': 'b.skdan'},
        'normalization': 'per_battery',
    })

    assert not valid
    assert report[PropName.INVALID_TYPE][0]['path'] == 'normalization'


def test_search_space_is_free_form(validator):
    valid, _ = validator.validate(ModelName.SEARCH, {'space': {'learning_rate': {'low': 1e-4, 'high': 1e-2}}})

    assert valid


def test_undefined_model_raises(validator):
    with pytest.raises(ValueError):
        validator.validate('Nope', {})


def test_validate_or_raise_carries_report():
    with pytest.raises(ValidationError) as ex:
        validate_or_raise(ModelName.SYNTH_SPEC, {'n_cycles': 'many'})

    assert ex.value.model_name == ModelName.SYNTH_SPEC
    assert ex.value.report[PropName.INVALID_TYPE][0]['path'] == 'n_cycles'
    assert ex.value.category == 'validation'


def test_apply_defaults_fills_only_missing_fields():
    config = apply_defaults(ModelName.EXPERIMENT, {'source': {}, 'target': {}, 'n_repeats': 3})

    assert config['n_repeats'] == 3
    assert config['step'] == 10
    assert config['normalization'] == 'all'
    assert config['split_fraction'] == 0.5
    assert config['score_variant'] == 'mean'
    assert 'window_dod' not in config
