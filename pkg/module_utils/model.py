import logging
from collections import OrderedDict

import numpy as np

from module_utils import diffcore as dc
from module_utils.common import Mode, SkdanDataError, make_rng
from module_utils.container import ContainerKind, read_container, write_container
from module_utils.hyperparams import AblationFlags
from module_utils.predictor import PredictorConfig, init_predictor_params, predict_soh, smooth_loss
from module_utils.sad import SadConfig, extract_features, init_sad_params

logger = logging.getLogger(__name__)

SAD_PREFIX = 'sad.'
PREDICTOR_PREFIX = 'predictor.'


class SkdanModel(object):
    """
    Extractor and predictor parameters with their configurations; the single unit that is trained,
    checkpointed and serialized.
    """

    def __init__(self, sad_config, predictor_config, sad_params, predictor_params, flags=None):
        self.sad_config = sad_config
        self.predictor_config = predictor_config
        self.sad_params = sad_params
        self.predictor_params = predictor_params
        self.flags = flags or AblationFlags()

    @classmethod
    def build(cls, hp, flags=None, seed=None, input_length=None, input_channels=None):
        """
        :type hp: module_utils.hyperparams.HyperConfig
        :type flags: AblationFlags
        :param input_length: segment length, the default 160 when omitted
        """
        flags = flags or AblationFlags()
        sad_kwargs = {}
        if input_length is not None:
            sad_kwargs['input_length'] = input_length
        if input_channels is not None:
            sad_kwargs['input_channels'] = input_channels
        sad_config = SadConfig(
            d_model=hp.d_model,
            n_heads=hp.n_heads,
            n_layers=hp.n_attention_layers,
            pe_base=hp.pe_base,
            disable_attention=flags.disable_attention,
            disable_distillation=flags.disable_distillation,
            **sad_kwargs
        )
        predictor_config = PredictorConfig(
            input_length=sad_config.output_length,
            input_channels=hp.d_model,
            kernel_size=hp.kernel_size,
            conv_channels=hp.conv_channels,
            fnn_width=hp.fnn_width,
            dropout=hp.dropout,
            noise_scale=hp.noise_scale,
            fnn_only=flags.fnn_predictor,
        )
        rng = make_rng(hp.seed if seed is None else seed)
        return cls(sad_config, predictor_config, init_sad_params(sad_config, rng),
                   init_predictor_params(predictor_config, rng), flags)

    def parameters(self):
        params = OrderedDict()
        for name, tensor in self.sad_params.items():
            params[SAD_PREFIX + name] = tensor
        for name, tensor in self.predictor_params.items():
            params[PREDICTOR_PREFIX + name] = tensor
        return params

    def parameter_list(self):
        return list(self.parameters().values())

    def parameter_count(self):
        return int(sum(p.values.size for p in self.parameter_list()))

    def zero_grad(self):
        for param in self.parameter_list():
            param.zero_grad()

    def snapshot(self):
        return OrderedDict((name, p.values.copy()) for name, p in self.parameters().items())

    def restore(self, snapshot):
        for name, param in self.parameters().items():
            param.values = snapshot[name].copy()

    def extract(self, x):
        return extract_features(x, self.sad_params, self.sad_config)

    def predict(self, features, mode=Mode.EVAL, rng=None):
        return predict_soh(features, self.predictor_params, self.predictor_config, mode, rng)

    def smooth_loss(self, features, rng):
        return smooth_loss(features, self.predictor_params, self.predictor_config, rng)

    def forward(self, x, mode=Mode.EVAL, rng=None):
        return self.predict(self.extract(x), mode, rng)

    def predict_array(self, features, batch_size=256):
        """
        Eval-mode SOH estimates for an array of normalized segments [N, length, channels].
        """
        features = np.asarray(features, dtype=np.float64)
        out = []
        with dc.no_grad():
            for start in range(0, len(features), batch_size):
                out.append(self.forward(features[start:start + batch_size]).values)
        return np.concatenate(out) if out else np.empty(0)

    def extract_array(self, features, batch_size=256):
        features = np.asarray(features, dtype=np.float64)
        out = []
        with dc.no_grad():
            for start in range(0, len(features), batch_size):
                out.append(self.extract(features[start:start + batch_size]).values)
        return np.concatenate(out)

    def config_dict(self):
        return {
            'sad': dict(vars(self.sad_config)),
            'predictor': dict(vars(self.predictor_config), conv_channels=list(self.predictor_config.conv_channels)),
            'flags': self.flags.to_dict(),
        }

    def save(self, path, extra_metadata=None):
        metadata = self.config_dict()
        if extra_metadata:
            metadata['extra'] = extra_metadata
        write_container(path, ContainerKind.MODEL, metadata,
                        OrderedDict((name, p.values) for name, p in self.parameters().items()))
        logger.info('Saved model with %d parameters to %s', self.parameter_count(), path)

    @classmethod
    def load(cls, path):
        metadata, blocks = read_container(path, ContainerKind.MODEL)
        sad_config = SadConfig(**metadata['sad'])
        predictor_config = PredictorConfig(**metadata['predictor'])
        sad_params = OrderedDict()
        predictor_params = OrderedDict()
        for name, values in blocks.items():
            if name.startswith(SAD_PREFIX):
                sad_params[name[len(SAD_PREFIX):]] = dc.parameter(values)
            elif name.startswith(PREDICTOR_PREFIX):
                predictor_params[name[len(PREDICTOR_PREFIX):]] = dc.parameter(values)
            else:
                raise SkdanDataError("Unexpected parameter block '%s' in %s." % (name, path), obj=name)

        model = cls(sad_config, predictor_config, sad_params, predictor_params,
                    AblationFlags(**metadata['flags']))
        expected = model.fresh_shapes()
        actual = OrderedDict((name, p.shape) for name, p in model.parameters().items())
        if expected != actual:
            raise SkdanDataError('Parameter blocks in %s do not match the stored configuration.' % path)
        return model

    def fresh_shapes(self):
        rng = make_rng(0)
        sad = init_sad_params(self.sad_config, rng)
        predictor = init_predictor_params(self.predictor_config, rng)
        shapes = OrderedDict((SAD_PREFIX + n, p.shape) for n, p in sad.items())
        shapes.update((PREDICTOR_PREFIX + n, p.shape) for n, p in predictor.items())
        return shapes
