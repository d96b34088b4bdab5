"""molrecon: monotone operator learning for linear inverse problems.

A damped forward-backward deep-equilibrium solver built around a
Lipschitz-controlled convolutional denoiser, with fixed-point
backpropagation for end-to-end training and an empirical certification
suite for its convergence, uniqueness, and robustness guarantees.
"""

from .numerics import conjugate_gradient, fft2, ifft2, inner, norm, power_iteration
from .operators import (
    BlurDownsample,
    DiagonalMask,
    Identity,
    LinearOperator,
    MaskedFourier,
    MulticoilSense,
    averaging_kernel,
    gaussian_coil_maps,
    make_operator,
    variable_density_mask,
)
from .denoiser import ConvLayer, DenoiserNet
from .solver import (
    FixedPointResult,
    MolConfig,
    alpha_max,
    alpha_one_monotonicity_threshold,
    backward_deq,
    contraction_factor,
    forward_deq,
    mol_step,
)
from .lipschitz import LipEstimate, barrier_penalty, barrier_weight, estimate_local_lipschitz, spectral_bound
from .metrics import psnr, ssim
from .robustness import PerturbationReport, adversarial_perturb, gaussian_perturb, robustness_bound
from .training import TrainConfig, TrainState, adam_step, train_epoch, validate

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
