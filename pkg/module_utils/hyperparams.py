from dataclasses import asdict, dataclass, fields
from typing import Tuple

from module_utils.common import SkdanConfigurationError
from module_utils.config_schema import ModelName, validate_or_raise


@dataclass
class AblationFlags:
    disable_attention: bool = False
    disable_distillation: bool = False
    fnn_predictor: bool = False
    disable_smoothness: bool = False
    disable_adaptation: bool = False

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        validate_or_raise(ModelName.ABLATION_FLAGS, data)
        return cls(**{k: bool(v) for k, v in data.items() if v is not None})

    def to_dict(self):
        return asdict(self)

    def describe(self):
        enabled = [f.name for f in fields(self) if getattr(self, f.name)]
        return ', '.join(enabled) if enabled else 'full model'


@dataclass
class HyperConfig:
    """
    One point of the hyperparameter space. Defaults follow the configuration tuned for 20-80% shallow cycles.
    """
    batch_size: int = 64
    learning_rate: float = 5.6e-5
    n_attention_layers: int = 2
    d_model: int = 128
    n_heads: int = 2
    kernel_size: int = 3
    conv_channels: Tuple[int, ...] = (32, 16)
    fnn_width: int = 64
    dropout: float = 0.3
    smoothness_weight: float = 0.05
    mmd_weight: float = 1.33
    noise_scale: float = 0.01
    max_epochs: int = 200
    seed: int = 0
    kernel_count: int = 5
    pe_base: str = 'segment'
    eval_every: int = 1

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        positive = ('batch_size', 'learning_rate', 'd_model', 'n_heads', 'kernel_size', 'fnn_width', 'max_epochs',
                    'kernel_count', 'eval_every')
        for name in positive:
            if not getattr(self, name) > 0:
                raise SkdanConfigurationError('%s must be positive, got %s.' % (name, getattr(self, name)),
                                              obj=name)
        if self.n_attention_layers < 0:
            raise SkdanConfigurationError('n_attention_layers must be non-negative, got %s.'
                                          % self.n_attention_layers)
        if self.d_model % self.n_heads:
            raise SkdanConfigurationError('d_model (%s) must be divisible by n_heads (%s).'
                                          % (self.d_model, self.n_heads))
        if self.kernel_size % 2 == 0:
            raise SkdanConfigurationError('kernel_size must be odd for same-padded convolutions, got %s.'
                                          % self.kernel_size)
        if not 0.0 <= self.dropout < 1.0:
            raise SkdanConfigurationError('dropout must lie in [0, 1), got %s.' % self.dropout)
        for name in ('smoothness_weight', 'mmd_weight', 'noise_scale'):
            if getattr(self, name) < 0:
                raise SkdanConfigurationError('%s must be non-negative, got %s.' % (name, getattr(self, name)))

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        validate_or_raise(ModelName.HYPER_CONFIG, data)
        return cls(**{k: v for k, v in data.items() if v is not None})

    def to_dict(self):
        data = asdict(self)
        data['conv_channels'] = list(self.conv_channels)
        return data

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return HyperConfig(**data)

    def effective_weights(self, flags):
        """
        :type flags: AblationFlags
        :return: (mmd_weight, smoothness_weight) after applying the ablation switches
        """
        mmd_weight = 0.0 if flags.disable_adaptation else self.mmd_weight
        smoothness_weight = 0.0 if flags.disable_smoothness else self.smoothness_weight
        return mmd_weight, smoothness_weight
