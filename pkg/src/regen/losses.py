"""Training objectives: least-squares adversarial terms, multi-resolution
spectral distance, and the spectral energy distance built from it.

The spectral distance at one FFT scale is the Frobenius-normalized magnitude
difference plus the mean absolute log-magnitude difference; the multi-scale
loss averages it over FFT sizes [2048, 1024, 512, 256, 128, 64] at hop
fft/4. The energy distance combines two generator draws attractively against
the target and repulsively against each other.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio_io import Waveform
from .autodiff import Tensor
from .errors import ArgumentError

FFT_SCALES = (2048, 1024, 512, 256, 128, 64)
LOG_FLOOR = 1e-7
FROBENIUS_GUARD = 1e-12
DEFAULT_LAMBDA = 4.0


class DegenerateTargetWarning(UserWarning):
    """The reference signal has (near-)zero spectral energy at some scale."""


@dataclass
class LossReport:
    l_spec_per_scale: dict[int, float] = field(default_factory=dict)
    l_spec: float = 0.0
    l_sed: float = 0.0
    l_adv: float = 0.0
    l_d: float = 0.0
    l_g: float = 0.0

    def to_json(self) -> str:
        rec = {"l_spec_per_scale": {str(k): v for k, v in self.l_spec_per_scale.items()},
               "l_spec": self.l_spec, "l_sed": self.l_sed, "l_adv": self.l_adv,
               "l_d": self.l_d, "l_g": self.l_g}
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        rec = json.loads(line)
        return cls({int(k): v for k, v in rec["l_spec_per_scale"].items()},
                   rec["l_spec"], rec["l_sed"], rec["l_adv"], rec["l_d"], rec["l_g"])


def _as_signal(x) -> Tensor:
    if isinstance(x, Tensor):
        if x.data.ndim != 1:
            raise ArgumentError(f"loss inputs must be 1-D signals, got shape {x.shape}")
        return x
    if isinstance(x, Waveform):
        return Tensor(x.samples)
    return Tensor(np.asarray(x, dtype=np.float64))


def spec_loss_single(y, xh, m: int) -> Tensor:
    """Single-scale spectral distance between target y and estimate xh."""
    y, xh = _as_signal(y), _as_signal(xh)
    if y.shape != xh.shape:
        raise ArgumentError(f"signal lengths differ: {y.shape} vs {xh.shape}")
    if len(y.data) < m:
        raise ArgumentError(f"inputs of length {len(y.data)} are shorter than FFT size {m}")
    hop = m // 4
    sy = ad.stft_magnitude(y, m, hop)
    sx = ad.stft_magnitude(xh, m, hop)
    ref_energy = ad.frobenius_norm(sy)
    if float(ref_energy.data) <= FROBENIUS_GUARD:
        warnings.warn(f"target signal has no spectral energy at scale {m}",
                      DegenerateTargetWarning, stacklevel=2)
    frob = ad.frobenius_norm(sy - sx) / ad.maximum_const(ref_energy, FROBENIUS_GUARD)
    log_l1 = ad.l1_norm(ad.log(ad.maximum_const(sy, LOG_FLOOR))
                        - ad.log(ad.maximum_const(sx, LOG_FLOOR)))
    return frob + log_l1 * (1.0 / sy.data.size)


def spec_loss_scales(y, xh, scales=FFT_SCALES) -> dict[int, Tensor]:
    y, xh = _as_signal(y), _as_signal(xh)
    if len(y.data) < max(scales):
        raise ArgumentError(
            f"inputs of length {len(y.data)} are shorter than the largest FFT {max(scales)}")
    return {m: spec_loss_single(y, xh, m) for m in scales}


def spec_loss_multi(y, xh) -> Tensor:
    """Mean of the single-scale loss over the six canonical FFT sizes."""
    per_scale = spec_loss_scales(y, xh)
    total = None
    for v in per_scale.values():
        total = v if total is None else total + v
    return total * (1.0 / len(per_scale))


def sed_loss(y, g1, g2) -> Tensor:
    """Spectral energy distance: attract both draws to y, repel them apart."""
    return spec_loss_multi(y, g1) + spec_loss_multi(y, g2) - spec_loss_multi(g1, g2)


def lsgan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Least-squares objectives: (generator's adversarial term, discriminator loss)."""
    one = 1.0
    l_adv = ((one - d_fake) * (one - d_fake)).mean()
    l_d = ((one - d_real) * (one - d_real)).mean() + (d_fake * d_fake).mean()
    return l_adv, l_d


def generator_objective(l_sed: Tensor, l_adv: Tensor, lam: float = DEFAULT_LAMBDA) -> Tensor:
    return l_sed + lam * l_adv
