import numpy as np

SEGMENT_LENGTH = 160
CHANNEL_COUNT = 4


class Channel:
    V = 'v'
    DV = 'dv'
    DQ = 'dq'
    IC = 'ic'

    ORDER = (V, DV, DQ, IC)

    @classmethod
    def index(cls, name):
        if name not in cls.ORDER:
            raise SkdanConfigurationError("Unknown channel '%s'. Expected one of: %s." % (name, ', '.join(cls.ORDER)))
        return cls.ORDER.index(name)


class Phase:
    CC_CHARGE = 'cc_charge'
    CV_CHARGE = 'cv_charge'
    DISCHARGE = 'discharge'
    REST = 'rest'


class LossTerm:
    PRE = 'L_pre'
    MMD = 'L_MMD'
    SMOOTH = 'L_smooth'
    TOTAL = 'total'

    ORDER = (PRE, MMD, SMOOTH, TOTAL)


class Mode:
    TRAIN = 'train'
    EVAL = 'eval'


class ErrorCategory:
    DIMENSION = 'dimension'
    LENGTH = 'length'
    CONFIG = 'config'
    DATA = 'data'
    SCHEMA = 'schema'
    TRAINING = 'training'
    VALIDATION = 'validation'
    INTERNAL = 'internal'


class SkdanError(Exception):
    category = ErrorCategory.INTERNAL

    def __init__(self, msg, obj=None):
        super(SkdanError, self).__init__(msg)
        self.msg = msg
        self.obj = obj


class DimensionError(SkdanError):
    category = ErrorCategory.DIMENSION


class LengthError(SkdanError):
    category = ErrorCategory.LENGTH


class SkdanConfigurationError(SkdanError):
    category = ErrorCategory.CONFIG


class SpecError(SkdanConfigurationError):
    """Raised when a synthetic battery specification cannot produce a valid degradation trajectory."""
    pass


class SkdanDataError(SkdanError):
    category = ErrorCategory.DATA

    def __init__(self, msg, obj=None, cycle_index=None):
        super(SkdanDataError, self).__init__(msg, obj)
        self.cycle_index = cycle_index


class SchemaError(SkdanDataError):
    category = ErrorCategory.SCHEMA

    def __init__(self, msg, column=None):
        super(SchemaError, self).__init__(msg, obj=column)
        self.column = column


class TrainingDivergedError(SkdanError):
    category = ErrorCategory.TRAINING

    def __init__(self, epoch, term, value):
        msg = 'Training diverged at epoch %s: loss term %s evaluated to %s.' % (epoch, term, value)
        super(TrainingDivergedError, self).__init__(msg, obj=value)
        self.epoch = epoch
        self.term = term


class ValidationError(SkdanError):
    category = ErrorCategory.VALIDATION

    def __init__(self, report, model_name=None):
        msg = 'Invalid %s provided: %s' % (model_name or 'configuration', report)
        super(ValidationError, self).__init__(msg, obj=report)
        self.report = report
        self.model_name = model_name


def error_category(exc):
    """
    Maps an exception to the machine-readable category reported by the command-line interface.

    :param exc: raised exception
    :type exc: Exception
    :return: category name, `internal` for anything that is not a SkdanError
    :rtype: str
    """
    if isinstance(exc, SkdanError):
        return exc.category
    return ErrorCategory.INTERNAL


def make_rng(seed):
    """
    Creates a random generator backed by the counter-based Philox bit generator, so that draws
    are reproducible across platforms for a given seed.

    :param seed: integer seed or a numpy SeedSequence
    :rtype: numpy.random.Generator
    """
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(master_seed, count):
    """
    Derives `count` independent child seeds from a master seed.

    :type master_seed: int
    :type count: int
    :return: list of integer seeds, stable for a given master seed
    :rtype: list
    """
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise SkdanDataError('%s contains non-finite values.' % what)
    return values
