"""Differentially private CNN training with RDP accounting and one-cycle schedules."""

from .accountant import (PrivacyReport, RdpLedger, account_step, basic_composition, epsilon_for,
                         gaussian_rdp, privacy_loss_sample, rdp_quadrature, sgm_rdp, to_dp)
from .dp import PrivacyParams, RngStreams, clip_rows, noisy_aggregate, poisson_sample
from .kernels import BACKEND as KERNEL_BACKEND
from .model import LayerSpec, Network, PerSampleGrads, build_network, per_sample_gradients
from .schedule import OneCycle, Plateau, one_cycle_lr, one_cycle_momentum, plateau_lr

__version__ = "0.1.0"
