"""The conditional convolutional decoder: 250 Hz features in, 24 kHz audio out.

Seven GBlocks (two residual units each, kernel 3, dilations 1/2/4/8) with
upsample factors [1, 1, 2, 2, 2, 3, 4] whose product, 96, is exactly the
frame-to-sample ratio. Every convolution is preceded by conditional batch
normalization driven by a linear projection of [noise ; identity] and a ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio_io import FRAME_RATE, OUTPUT_RATE, Waveform
from .errors import ArgumentError, ShapeError
from .features import ConditioningTrack
from .nn import ChannelLinear, CondBatchNorm, Conv1d, StreamBuffers, collect_params

UPSAMPLE_PRODUCT = OUTPUT_RATE // FRAME_RATE  # 96


@dataclass(frozen=True)
class GeneratorConfig:
    content_dim: int = 40
    channel_widths: tuple[int, ...] = (768, 768, 384, 384, 256, 128, 96)
    upsample_factors: tuple[int, ...] = (1, 1, 2, 2, 2, 3, 4)
    z_dim: int = 128
    id_dim: int = 256
    cond_proj_dim: int = 128
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)

    @property
    def cond_channels(self) -> int:
        return self.content_dim + 3

    def validate(self):
        if len(self.channel_widths) == 0:
            raise ArgumentError("generator needs at least one block")
        if len(self.channel_widths) != len(self.upsample_factors):
            raise ArgumentError(
                f"{len(self.channel_widths)} widths vs {len(self.upsample_factors)} "
                "upsample factors")
        if any(w <= 0 for w in self.channel_widths):
            raise ArgumentError(f"channel widths must be positive: {self.channel_widths}")
        if int(np.prod(self.upsample_factors)) != UPSAMPLE_PRODUCT:
            raise ArgumentError(
                f"upsample factors {self.upsample_factors} multiply to "
                f"{int(np.prod(self.upsample_factors))}, need {UPSAMPLE_PRODUCT}")
        if len(self.dilations) != 4:
            raise ArgumentError("each GBlock uses exactly four dilated convolutions")
        return self


class GBlock:
    """Two residual units; the first upsamples and may change channel count."""

    def __init__(self, in_ch: int, out_ch: int, factor: int, cfg: GeneratorConfig,
                 rng: np.random.Generator, dtype):
        k, (d1, d2, d3, d4) = cfg.kernel, cfg.dilations
        p = cfg.cond_proj_dim
        self.factor = factor
        self.cbn1 = CondBatchNorm(in_ch, p, rng, dtype=dtype)
        self.conv1 = Conv1d(in_ch, out_ch, k, rng, dilation=d1, spectral_norm=True, dtype=dtype)
        self.cbn2 = CondBatchNorm(out_ch, p, rng, dtype=dtype)
        self.conv2 = Conv1d(out_ch, out_ch, k, rng, dilation=d2, spectral_norm=True, dtype=dtype)
        self.shortcut = (Conv1d(in_ch, out_ch, 1, rng, spectral_norm=True, dtype=dtype)
                         if in_ch != out_ch else None)
        self.cbn3 = CondBatchNorm(out_ch, p, rng, dtype=dtype)
        self.conv3 = Conv1d(out_ch, out_ch, k, rng, dilation=d3, spectral_norm=True, dtype=dtype)
        self.cbn4 = CondBatchNorm(out_ch, p, rng, dtype=dtype)
        self.conv4 = Conv1d(out_ch, out_ch, k, rng, dilation=d4, spectral_norm=True, dtype=dtype)

    def forward(self, x, cond, *, training, padding, update_sn, stream=None):
        h = ad.relu(self.cbn1.forward(x, cond, training))
        h = ad.nearest_upsample1d(h, self.factor)
        h = self.conv1.forward(h, padding, update_sn, stream)
        h = ad.relu(self.cbn2.forward(h, cond, training))
        h = self.conv2.forward(h, padding, update_sn, stream)
        s = ad.nearest_upsample1d(x, self.factor)
        if self.shortcut is not None:
            s = self.shortcut.forward(s, padding, update_sn, stream)
        y = h + s
        h = ad.relu(self.cbn3.forward(y, cond, training))
        h = self.conv3.forward(h, padding, update_sn, stream)
        h = ad.relu(self.cbn4.forward(h, cond, training))
        h = self.conv4.forward(h, padding, update_sn, stream)
        return y + h

    def convs(self):
        out = [self.conv1, self.conv2, self.conv3, self.conv4]
        if self.shortcut is not None:
            out.append(self.shortcut)
        return out

    def named_params(self, prefix):
        parts = [self.cbn1.named_params(f"{prefix}.cbn1"),
                 self.conv1.named_params(f"{prefix}.conv1"),
                 self.cbn2.named_params(f"{prefix}.cbn2"),
                 self.conv2.named_params(f"{prefix}.conv2"),
                 self.cbn3.named_params(f"{prefix}.cbn3"),
                 self.conv3.named_params(f"{prefix}.conv3"),
                 self.cbn4.named_params(f"{prefix}.cbn4"),
                 self.conv4.named_params(f"{prefix}.conv4")]
        if self.shortcut is not None:
            parts.append(self.shortcut.named_params(f"{prefix}.shortcut"))
        return collect_params(*parts)

    def named_state(self, prefix):
        out = {}
        for name, cbn in (("cbn1", self.cbn1), ("cbn2", self.cbn2),
                          ("cbn3", self.cbn3), ("cbn4", self.cbn4)):
            out.update(cbn.named_state(f"{prefix}.{name}"))
        for i, conv in enumerate(self.convs()):
            out.update(conv.named_state(f"{prefix}.conv_sn{i}"))
        return out

    def load_state(self, prefix, arrays):
        for name, cbn in (("cbn1", self.cbn1), ("cbn2", self.cbn2),
                          ("cbn3", self.cbn3), ("cbn4", self.cbn4)):
            cbn.load_state(f"{prefix}.{name}", arrays)
        for i, conv in enumerate(self.convs()):
            conv.load_state(f"{prefix}.conv_sn{i}", arrays)


class Generator:
    def __init__(self, config: GeneratorConfig, seed: int = 0, dtype=np.float32):
        self.config = config.validate()
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        widths = config.channel_widths
        self.cond_proj = ChannelLinear(config.z_dim + config.id_dim,
                                       config.cond_proj_dim, rng, dtype=dtype)
        self.input_conv = Conv1d(config.cond_channels, widths[0], config.kernel, rng,
                                 spectral_norm=True, dtype=dtype)
        self.blocks = []
        for i, factor in enumerate(config.upsample_factors):
            in_ch = widths[i - 1] if i > 0 else widths[0]
            self.blocks.append(GBlock(in_ch, widths[i], factor, config, rng, dtype))
        self.out_conv = Conv1d(widths[-1], 1, config.kernel, rng,
                               spectral_norm=True, dtype=dtype)
        # Learnable output gain, started near zero: synthesis begins from
        # near-silence, which keeps the first adversarial steps tame (the
        # spectrally normalized conv weights cannot carry a small init scale
        # themselves, since normalization divides it back out).
        self.out_gain = ad.Tensor(np.full(1, 0.02, dtype=dtype), requires_grad=True)

    def forward(self, cond: ad.Tensor, cond_vec: ad.Tensor, *, training: bool = False,
                causal: bool = False, update_sn: bool = False,
                stream: StreamBuffers | None = None) -> ad.Tensor:
        """cond [B, content_dim + 3, T] and cond_vec [B, z_dim + id_dim, Tc] with
        Tc == T (per-frame conditioning) or Tc == 1 (constant); returns [B, 1, 96 T]."""
        cfg = self.config
        if cond.shape[1] != cfg.cond_channels:
            raise ShapeError(f"conditioning with shape {cond.shape} does not match "
                             f"configured channel count {cfg.cond_channels}")
        if cond_vec.shape[1] != cfg.z_dim + cfg.id_dim:
            raise ShapeError(f"conditioning vector shape {cond_vec.shape} does not match "
                             f"z_dim + id_dim = {cfg.z_dim + cfg.id_dim}")
        if cond_vec.shape[2] == 1 and cond.shape[2] > 1:
            cond_vec = ad.Tensor(np.repeat(cond_vec.data, cond.shape[2], axis=2),
                                 requires_grad=False) if not cond_vec.requires_grad \
                else ad.nearest_upsample1d(cond_vec, cond.shape[2])
        padding = "causal" if causal or stream is not None else "same"
        h_series = self.cond_proj.forward(cond_vec)
        x = self.input_conv.forward(cond, padding, update_sn, stream)
        for block in self.blocks:
            x = block.forward(x, h_series, training=training, padding=padding,
                              update_sn=update_sn, stream=stream)
        return ad.tanh(self.out_conv.forward(x, padding, update_sn, stream)
                       * self.out_gain)

    def generate(self, cond: ConditioningTrack, z: np.ndarray, *,
                 causal: bool = False) -> Waveform:
        """Inference entry point: one utterance, one noise draw."""
        z = np.asarray(z, dtype=self.dtype).reshape(-1)
        if len(z) != self.config.z_dim:
            raise ShapeError(f"latent vector of shape {z.shape} does not match "
                             f"z_dim {self.config.z_dim}")
        cond_mat = ad.Tensor(cond.frame_matrix.T[None].astype(self.dtype))
        vec = np.concatenate([z, cond.identity.values.astype(self.dtype)])
        cond_vec = ad.Tensor(vec[None, :, None])
        with ad.no_grad():
            out = self.forward(cond_mat, cond_vec, training=False, causal=causal)
        return Waveform(np.clip(out.data[0, 0].astype(np.float64), -1.0, 1.0), OUTPUT_RATE)

    def all_convs(self):
        convs = [self.input_conv]
        for b in self.blocks:
            convs.extend(b.convs())
        convs.append(self.out_conv)
        return convs

    def named_params(self) -> dict[str, ad.Tensor]:
        parts = [self.cond_proj.named_params("cond_proj"),
                 self.input_conv.named_params("input_conv")]
        parts += [b.named_params(f"block{i}") for i, b in enumerate(self.blocks)]
        parts.append(self.out_conv.named_params("out_conv"))
        parts.append({"out_gain": self.out_gain})
        return collect_params(*parts)

    def named_state(self) -> dict[str, np.ndarray]:
        out = dict(self.input_conv.named_state("input_conv"))
        for i, b in enumerate(self.blocks):
            out.update(b.named_state(f"block{i}"))
        out.update(self.out_conv.named_state("out_conv"))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        self.input_conv.load_state("input_conv", arrays)
        for i, b in enumerate(self.blocks):
            b.load_state(f"block{i}", arrays)
        self.out_conv.load_state("out_conv", arrays)

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.named_params().values())


def count_parameters(config: GeneratorConfig) -> int:
    """Exact parameter count for a config (includes conditioning projections)."""
    return Generator(config, seed=0).num_parameters()


@dataclass
class BlockField:
    name: str
    samples_at_rate: int  # standalone receptive field at the block's output rate
    rate_hz: int


@dataclass
class ReceptiveField:
    per_block: list[BlockField]
    total_input_frames: int
    total_ms: float
    output_samples: int


def receptive_field(config: GeneratorConfig) -> ReceptiveField:
    """Causal receptive field from the kernel/dilation/upsample schedule.

    Walks the layer stack backwards: a kernel-k dilation-d convolution adds
    (k - 1) * d; nearest upsampling by f maps a span of R samples onto
    ceil((R - 1) / f) + 1 input samples.
    """
    k = config.kernel
    per_block = []
    rf = 1 + (k - 1)  # output conv at 24 kHz
    rate = OUTPUT_RATE
    for i in range(len(config.upsample_factors) - 1, -1, -1):
        factor = config.upsample_factors[i]
        block_rf = 1 + (k - 1) * sum(config.dilations)
        rf += (k - 1) * (config.dilations[3] + config.dilations[2] + config.dilations[1])
        rf += (k - 1) * config.dilations[0]
        rf = int(np.ceil((rf - 1) / factor)) + 1
        rate //= factor
        per_block.append(BlockField(f"block{i}", block_rf, rate))
    rf += (k - 1)  # input conv at 250 Hz
    per_block.reverse()
    return ReceptiveField(per_block, rf, rf * 1000.0 / FRAME_RATE,
                          rf * UPSAMPLE_PRODUCT)
