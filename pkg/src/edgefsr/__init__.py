"""Real-world face super-resolution: a DeNet-trained teacher SR network guides a
student SR network on real LR faces; both embed Canny and DoG edge priors
across recurrent iterations."""

from .config import dump_config, load_config
from .core import (
    CannyParams,
    DataConfig,
    DoGParams,
    EdgePriorMap,
    ImageTensor,
    LossWeights,
    NetConfig,
    RunConfig,
    SRNetState,
    TrainConfig,
    denormalize,
    normalize,
)
from .edges import canny, dog, gaussian_blur
from .errors import (
    CheckpointError,
    ConfigError,
    FSRError,
    NonFiniteLossError,
    ParameterError,
    ValidationError,
)
from .metrics import evaluate_corpus, psnr, ssim
from .networks import Discriminator, DegradationNet, SRNet
from .resample import bicubic_downsample, bilinear_upsample

__version__ = "0.1.0"
