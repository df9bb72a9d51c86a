"""Reversible multi-column reflection removal, desk scale.

An information-preserving multi-column encoder decomposes a mixture image
into transmission and reflection layers; a transmission-rate-aware prompt
rescales its embedding; everything runs on a self-contained numpy tensor
engine with reverse-mode differentiation.
"""

from .container import read_container, write_container
from .errors import (
    ConfigError,
    DegenerateFitError,
    InvertibilityError,
    MissingGradError,
    ShapeError,
    UnreflectError,
)
from .hdec import HierarchyDecoder, LayerPair
from .losses import (
    FeatureExtractor,
    LossWeights,
    content_loss,
    image_gradient,
    perceptual_loss,
    stage1_weights,
    stage2_weights,
    total_loss,
)
from .mcre import EmbedOut, Mcre, McreConfig, PyramidState
from .metrics import psnr, ssim
from .model import SeparationNet, compute_loss, compute_loss_recomputed
from .rng import DEFAULT_SEED, SplitMix64
from .synth import SynthSample, build_dataset, compose, load_dataset, sample_rate
from .tapg import (
    Prompt,
    PromptMlp,
    RateEstimator,
    TransmissionRate,
    closed_form_fit,
    estimate_rate,
    make_prompt,
    modulate,
)
from .tensor import (
    Parameter,
    Tensor,
    backward,
    conv2d,
    grad_check,
    no_grad,
    pixel_shuffle,
    pixel_unshuffle,
    resample,
)
from .train import Adam, TrainConfig, build_model, evaluate, infer, train_stage1, train_stage2

__version__ = "0.1.0"
