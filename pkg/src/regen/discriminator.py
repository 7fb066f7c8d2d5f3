"""The single unconditional waveform discriminator.

Seven spectrally-normalized convolutions over raw 24 kHz audio with leaky
ReLU (slope 0.2) everywhere but the final layer; no padding, so each score's
receptive field is exactly one window of input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError
from .nn import Conv1d, collect_params

PAPER_FILTERS = (16, 64, 256, 1024, 1024, 1024, 1)
PAPER_KERNELS = (15, 41, 41, 41, 41, 5, 3)


@dataclass(frozen=True)
class DiscriminatorConfig:
    filters: tuple[int, ...] = PAPER_FILTERS
    kernels: tuple[int, ...] = PAPER_KERNELS
    strides: tuple[int, ...] = (1, 4, 4, 4, 4, 1, 1)
    leaky_slope: float = 0.2

    def validate(self):
        if not (len(self.filters) == len(self.kernels) == len(self.strides) == 7):
            raise ArgumentError(
                f"discriminator takes exactly 7 layers, got {len(self.filters)} filters / "
                f"{len(self.kernels)} kernels / {len(self.strides)} strides")
        if self.filters[-1] != 1:
            raise ArgumentError(f"final layer must have 1 filter, got {self.filters[-1]}")
        return self


def min_input_length(config: DiscriminatorConfig) -> int:
    """Receptive field of one score: the shortest input that yields any output."""
    rf = 1
    for k, s in zip(reversed(config.kernels), reversed(config.strides)):
        rf = (rf - 1) * s + k
    return rf


def score_map_length(config: DiscriminatorConfig, length: int) -> int:
    """Closed-form output length of the unpadded conv stack."""
    for k, s in zip(config.kernels, config.strides):
        if length < k:
            return 0
        length = (length - k) // s + 1
    return length


class Discriminator:
    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig(),
                 seed: int = 0, dtype=np.float32):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        self.layers = []
        in_ch = 1
        for f, k, s in zip(config.filters, config.kernels, config.strides):
            self.layers.append(Conv1d(in_ch, f, k, rng, stride=s,
                                      spectral_norm=True, dtype=dtype))
            in_ch = f

    def forward(self, x: ad.Tensor, update_sn: bool = False) -> ad.Tensor:
        """x [B, 1, T] -> per-position scores [B, T_out]."""
        if x.data.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"discriminator expects [batch, 1, time], got {x.shape}")
        need = min_input_length(self.config)
        if x.shape[2] < need:
            raise ArgumentError(
                f"input of {x.shape[2]} samples is shorter than the discriminator's "
                f"minimum length {need}")
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, "valid", update_sn)
            if i < len(self.layers) - 1:
                h = ad.leaky_relu(h, self.config.leaky_slope)
        return ad.reshape(h, (h.shape[0], h.shape[2]))

    def discriminate(self, samples: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            x = ad.Tensor(np.asarray(samples, dtype=self.layers[0].w.dtype)[None, None, :])
            return self.forward(x).data[0]

    def named_params(self) -> dict[str, ad.Tensor]:
        return collect_params(*[l.named_params(f"layer{i}")
                                for i, l in enumerate(self.layers)])

    def named_state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, l in enumerate(self.layers):
            out.update(l.named_state(f"layer{i}"))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        for i, l in enumerate(self.layers):
            l.load_state(f"layer{i}", arrays)

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.named_params().values())
