"""Retinal vessel segmentation with a conditional patch GAN on a numpy autodiff core."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .conv import BatchNormState, ConvSpec, batch_norm2d, conv2d, conv_transpose2d
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    GraphError,
    NetpbmError,
    NumericAbort,
    ShapeError,
    VesselGanError,
)
from .gradcheck import grad_check, run_suite
from .metrics import confusion, evaluate_image, metrics, otsu_threshold, roc_auc
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    NoiseSpec,
    ParameterStore,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)
from .netpbm import parse_netpbm, emit_netpbm, read_netpbm, write_netpbm
from .objective import LossReport, ObjectiveConfig, discriminator_loss, generator_loss, l1_loss
from .optim import AdamConfig, AdamState, adam_step, lr_at
from .tensor import Tensor, backward, no_grad, precision

__version__ = "0.1.0"
