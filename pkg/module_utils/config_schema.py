from numbers import Integral, Real

from module_utils.common import Channel, ValidationError


class PropName:
    ENUM = 'enum'
    TYPE = 'type'
    REQUIRED = 'required'
    INVALID_TYPE = 'invalid_type'
    UNKNOWN = 'unknown'
    REF = '$ref'
    ITEMS = 'items'
    PROPERTIES = 'properties'
    DEFAULT = 'default'


class PropType:
    STRING = 'string'
    BOOLEAN = 'boolean'
    INTEGER = 'integer'
    NUMBER = 'number'
    OBJECT = 'object'
    ARRAY = 'array'


class ModelName:
    HYPER_CONFIG = 'HyperConfig'
    ABLATION_FLAGS = 'AblationFlags'
    SEARCH = 'Search'
    SEARCH_DIMENSION = 'SearchDimension'
    DOMAIN_METADATA = 'DomainMetadata'
    SYNTH_SPEC = 'SynthSpec'
    BATTERY_FILES = 'BatteryFiles'
    DOMAIN_SOURCE = 'DomainSource'
    VARIANT = 'Variant'
    KDE_OPTIONS = 'KdeOptions'
    EXPERIMENT = 'Experiment'


def _ref(model_name):
    return {PropName.TYPE: PropType.OBJECT, PropName.REF: '#/definitions/%s' % model_name}


def _array_of(item_type):
    return {PropName.TYPE: PropType.ARRAY, PropName.ITEMS: {PropName.TYPE: item_type}}


def _prop(prop_type, default=None):
    prop = {PropName.TYPE: prop_type}
    if default is not None:
        prop[PropName.DEFAULT] = default
    return prop


HYPER_CONFIG_PROPERTIES = {
    'batch_size': _prop(PropType.INTEGER, 64),
    'learning_rate': _prop(PropType.NUMBER, 5.6e-5),
    'n_attention_layers': _prop(PropType.INTEGER, 2),
    'd_model': _prop(PropType.INTEGER, 128),
    'n_heads': _prop(PropType.INTEGER, 2),
    'kernel_size': _prop(PropType.INTEGER, 3),
    'conv_channels': _array_of(PropType.INTEGER),
    'fnn_width': _prop(PropType.INTEGER, 64),
    'dropout': _prop(PropType.NUMBER, 0.3),
    'smoothness_weight': _prop(PropType.NUMBER, 0.05),
    'mmd_weight': _prop(PropType.NUMBER, 1.33),
    'noise_scale': _prop(PropType.NUMBER, 0.01),
    'max_epochs': _prop(PropType.INTEGER, 200),
    'seed': _prop(PropType.INTEGER, 0),
    'kernel_count': _prop(PropType.INTEGER, 5),
    'pe_base': {PropName.TYPE: PropType.STRING, PropName.ENUM: ['segment', 'classic']},
    'eval_every': _prop(PropType.INTEGER, 1),
}

MODELS = {
    ModelName.HYPER_CONFIG: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: HYPER_CONFIG_PROPERTIES,
    },
    ModelName.ABLATION_FLAGS: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: {
            'disable_attention': _prop(PropType.BOOLEAN, False),
            'disable_distillation': _prop(PropType.BOOLEAN, False),
            'fnn_predictor': _prop(PropType.BOOLEAN, False),
            'disable_smoothness': _prop(PropType.BOOLEAN, False),
            'disable_adaptation': _prop(PropType.BOOLEAN, False),
        },
    },
    ModelName.SEARCH_DIMENSION: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: {
            'choices': {PropName.TYPE: PropType.ARRAY, PropName.ITEMS: {PropName.TYPE: PropType.NUMBER}},
            'low': _prop(PropType.NUMBER),
            'high': _prop(PropType.NUMBER),
            'log': _prop(PropType.BOOLEAN),
        },
    },
    ModelName.SEARCH: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: {
            'n_trials': _prop(PropType.INTEGER, 100),
            'validation_fraction': _prop(PropType.NUMBER, 0.2),
            'n_jobs': _prop(PropType.INTEGER, 1),
            'space': {PropName.TYPE: PropType.OBJECT},
        },
    },
    ModelName.DOMAIN_METADATA: {
        PropName.TYPE: PropType.OBJECT,
        PropName.REQUIRED: ['nominal_capacity_Ah', 'soc_range'],
        PropName.PROPERTIES: {
            'nominal_capacity_Ah': _prop(PropType.NUMBER),
            'voltage_range': _array_of(PropType.NUMBER),
            'soc_range': _array_of(PropType.NUMBER),
            'temperature_C': _prop(PropType.NUMBER),
            'discharge_rate_C': _prop(PropType.NUMBER),
            'dataset_name': _prop(PropType.STRING),
        },
    },
    ModelName.SYNTH_SPEC: {
        PropName.TYPE: PropType.OBJECT,
        PropName.REQUIRED: ['n_cycles'],
        PropName.PROPERTIES: {
            'n_cycles': _prop(PropType.INTEGER),
            'soc_window': _array_of(PropType.NUMBER),
            'fade_coefficient': _prop(PropType.NUMBER),
            'fade_exponent': _prop(PropType.NUMBER),
            'noise_std': _prop(PropType.NUMBER),
            'resistance': _prop(PropType.NUMBER),
            'resistance_growth': _prop(PropType.NUMBER),
            'voltage_offset': _prop(PropType.NUMBER),
            'nominal_capacity': _prop(PropType.NUMBER),
            'voltage_range': _array_of(PropType.NUMBER),
            'charge_rate_C': _prop(PropType.NUMBER),
            'discharge_rate_C': _prop(PropType.NUMBER),
            'temperature_C': _prop(PropType.NUMBER),
            'sample_period_s': _prop(PropType.NUMBER),
            'n_batteries': _prop(PropType.INTEGER),
            'battery_jitter': _prop(PropType.NUMBER),
            'cycle_stride': _prop(PropType.INTEGER),
            'dataset_name': _prop(PropType.STRING),
            'seed': _prop(PropType.INTEGER),
        },
    },
    ModelName.BATTERY_FILES: {
        PropName.TYPE: PropType.OBJECT,
        PropName.REQUIRED: ['csv', 'metadata'],
        PropName.PROPERTIES: {
            'csv': _prop(PropType.STRING),
            'metadata': _prop(PropType.STRING),
            'labels': _prop(PropType.STRING),
            'battery_id': _prop(PropType.STRING),
        },
    },
    ModelName.DOMAIN_SOURCE: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: {
            'batteries': {PropName.TYPE: PropType.ARRAY, PropName.ITEMS: _ref(ModelName.BATTERY_FILES)},
            'synthetic': _ref(ModelName.SYNTH_SPEC),
            'dataset': _prop(PropType.STRING),
        },
    },
    ModelName.VARIANT: {
        PropName.TYPE: PropType.OBJECT,
        PropName.REQUIRED: ['name'],
        PropName.PROPERTIES: {
            'name': _prop(PropType.STRING),
            'ablation': _ref(ModelName.ABLATION_FLAGS),
        },
    },
    ModelName.KDE_OPTIONS: {
        PropName.TYPE: PropType.OBJECT,
        PropName.PROPERTIES: {
            'channel': {PropName.TYPE: PropType.STRING, PropName.ENUM: list(Channel.ORDER), PropName.DEFAULT: 'v'},
            'grid_points': _prop(PropType.INTEGER, 400),
            'max_values': _prop(PropType.INTEGER, 20000),
        },
    },
    ModelName.EXPERIMENT: {
        PropName.TYPE: PropType.OBJECT,
        PropName.REQUIRED: ['source', 'target'],
        PropName.PROPERTIES: {
            'name': _prop(PropType.STRING, 'experiment'),
            'source': _ref(ModelName.DOMAIN_SOURCE),
            'target': _ref(ModelName.DOMAIN_SOURCE),
            'window_dod': _prop(PropType.NUMBER),
            'step': _prop(PropType.NUMBER, 10),
            'ic_smoothing': _prop(PropType.BOOLEAN, False),
            'normalization': {PropName.TYPE: PropType.STRING, PropName.ENUM: ['all', 'train'],
                              PropName.DEFAULT: 'all'},
            'split_fraction': _prop(PropType.NUMBER, 0.5),
            'hyperparameters': _ref(ModelName.HYPER_CONFIG),
            'search': _ref(ModelName.SEARCH),
            'ablation': _ref(ModelName.ABLATION_FLAGS),
            'variants': {PropName.TYPE: PropType.ARRAY, PropName.ITEMS: _ref(ModelName.VARIANT)},
            'n_repeats': _prop(PropType.INTEGER, 10),
            'master_seed': _prop(PropType.INTEGER, 0),
            'n_jobs': _prop(PropType.INTEGER, 1),
            'score_variant': {PropName.TYPE: PropType.STRING, PropName.ENUM: ['mean', 'sum'],
                              PropName.DEFAULT: 'mean'},
            'kde': _ref(ModelName.KDE_OPTIONS),
            'output_dir': _prop(PropType.STRING),
        },
    },
}


def _get_model_name_from_ref(schema_ref):
    path = schema_ref.split('/')
    return path[len(path) - 1]


class SchemaValidator(object):
    def __init__(self, models=None):
        """
        :param models: model definitions in the simplified swagger-like format used by MODELS
        :type models: dict
        """
        self._models = MODELS if models is None else models

    def validate(self, model_name, data=None):
        """
        Validates a user-supplied dictionary against a model definition.

        :param model_name: name of the model in the definitions
        :type model_name: str
        :param data: the dictionary to validate
        :type data: dict
        :rtype: (bool, dict|None)
        :return:
            (True, None) - if data valid
            Invalid:
            (False, {
                'required': ['field', 'parent.field'],
                'invalid_type': [{'path': 'search.n_trials', 'expected_type': 'integer', 'actually_value': 'x'}],
                'unknown': ['hyperparameters.learning_rat']
            })
        """
        if data is None:
            data = {}
        if model_name not in self._models:
            raise ValueError("{0} model is not defined".format(model_name))

        status = self._init_report()
        self._validate_object(status, self._models[model_name], data, '')

        if any(status.values()):
            return False, self._delete_empty_field_from_report(status)
        return True, None

    def apply_defaults(self, model_name, data):
        """
        Returns a copy of `data` where absent top-level properties with a declared default are filled in.
        """
        result = dict(data or {})
        for prop_name, prop in self._models[model_name][PropName.PROPERTIES].items():
            if PropName.DEFAULT in prop and result.get(prop_name) is None:
                result[prop_name] = prop[PropName.DEFAULT]
        return result

    def _validate_object(self, status, model, data, path):
        if self._is_enum(model):
            self._check_enum(status, model, data, path)
        elif self._is_object(model):
            self._check_object(status, model, data, path)

    @staticmethod
    def _is_enum(model):
        return model.get(PropName.TYPE) == PropType.STRING and PropName.ENUM in model

    def _check_enum(self, status, model, value, path):
        if value is not None and value not in model[PropName.ENUM]:
            self._add_invalid_type_report(status, path, '', PropName.ENUM, value)

    def _check_object(self, status, model, data, path):
        if data is None:
            return

        if not isinstance(data, dict):
            self._add_invalid_type_report(status, path, '', PropType.OBJECT, data)
            return

        if PropName.REF in model:
            model = self._get_model_by_ref(model)

        model_properties = model.get(PropName.PROPERTIES)
        if model_properties is None:
            # free-form object, e.g. a search space keyed by hyperparameter name
            return

        if PropName.REQUIRED in model:
            self._check_required_fields(status, model[PropName.REQUIRED], data, path)

        for key in data.keys():
            if key not in model_properties:
                status[PropName.UNKNOWN].append(self._create_path_to_field(path, key))

        for prop, model_prop_val in model_properties.items():
            if prop in data:
                expected_type = model_prop_val.get(PropName.TYPE, PropType.OBJECT)
                self._check_types(status, data[prop], expected_type, model_prop_val, path, prop)

    def _check_types(self, status, actually_value, expected_type, model, path, prop_name):
        if self._is_enum(model):
            self._check_enum(status, model, actually_value, self._create_path_to_field(path, prop_name))
        elif expected_type == PropType.OBJECT:
            self._validate_object(status, model, actually_value, path=self._create_path_to_field(path, prop_name))
        elif expected_type == PropType.ARRAY:
            self._check_array(status, model, actually_value, path=self._create_path_to_field(path, prop_name))
        elif not self._is_correct_simple_types(expected_type, actually_value):
            self._add_invalid_type_report(status, path, prop_name, expected_type, actually_value)

    def _get_model_by_ref(self, model_prop_val):
        return self._models[_get_model_name_from_ref(model_prop_val[PropName.REF])]

    def _check_required_fields(self, status, required_fields, data, path):
        missed_required_fields = [self._create_path_to_field(path, field) for field in
                                  required_fields if field not in data.keys() or data[field] is None]
        if missed_required_fields:
            status[PropName.REQUIRED] += missed_required_fields

    def _check_array(self, status, model, data, path):
        if data is None:
            return
        elif not isinstance(data, (list, tuple)):
            self._add_invalid_type_report(status, path, '', PropType.ARRAY, data)
        else:
            item_model = model[PropName.ITEMS]
            for i, item_data in enumerate(data):
                model_type = item_model.get(PropName.TYPE, PropType.OBJECT)
                self._check_types(status, item_data, model_type, item_model, "{0}[{1}]".format(path, i), '')

    def _add_invalid_type_report(self, status, path, prop_name, expected_type, actually_value):
        status[PropName.INVALID_TYPE].append({
            'path': self._create_path_to_field(path, prop_name),
            'expected_type': expected_type,
            'actually_value': actually_value
        })

    @staticmethod
    def _is_correct_simple_types(expected_type, value, allow_null=True):
        if value is None and allow_null:
            return True
        elif expected_type == PropType.STRING:
            return isinstance(value, str)
        elif expected_type == PropType.BOOLEAN:
            return isinstance(value, bool)
        elif expected_type == PropType.INTEGER:
            return isinstance(value, Integral) and not isinstance(value, bool)
        elif expected_type == PropType.NUMBER:
            return isinstance(value, Real) and not isinstance(value, bool)
        return False

    @staticmethod
    def _is_object(model):
        return PropName.REF in model or model.get(PropName.TYPE) == PropType.OBJECT

    @staticmethod
    def _init_report():
        return {
            PropName.REQUIRED: [],
            PropName.INVALID_TYPE: [],
            PropName.UNKNOWN: [],
        }

    @staticmethod
    def _delete_empty_field_from_report(status):
        return dict((k, v) for k, v in status.items() if v)

    @staticmethod
    def _create_path_to_field(path='', field=''):
        separator = ''
        if path and field:
            separator = '.'
        return "{0}{1}{2}".format(path, separator, field)


def validate_or_raise(model_name, data, validator=None):
    """
    Validates `data` and raises ValidationError carrying the report when it does not match the model.

    :return: the validated data, unchanged
    """
    validator = validator or SchemaValidator()
    is_valid, report = validator.validate(model_name, data)
    if not is_valid:
        raise ValidationError(report, model_name)
    return data


def apply_defaults(model_name, data):
    return SchemaValidator().apply_defaults(model_name, data)
