"""Parameterized layers over the autodiff substrate.

Layers hold their Tensors plus non-differentiable state (batch-norm running
statistics, spectral-norm power-iteration vectors) and expose flat name->array
views for checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import SpectralNormState, Tensor
from .errors import ArgumentError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Conv1d:
    """1-D convolution with optional spectral normalization and causal padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, *,
                 stride: int = 1, dilation: int = 1, bias: bool = True,
                 spectral_norm: bool = False, dtype=np.float32):
        scale = 1.0 / np.sqrt(in_ch * kernel)
        self.w = Tensor(rng.normal(0.0, scale, (out_ch, in_ch, kernel)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.dilation = dilation
        self.kernel = kernel
        self.sn = SpectralNormState.init(out_ch, in_ch * kernel, rng) if spectral_norm else None
        if self.sn is not None:
            self.sn.u = self.sn.u.astype(dtype)
            self.sn.v = self.sn.v.astype(dtype)
            # One iteration aligns u with W v, guaranteeing a positive sigma estimate.
            ad.power_iterate(self.w.data.reshape(out_ch, -1), self.sn)

    @property
    def span(self) -> int:
        return (self.kernel - 1) * self.dilation

    def effective_weight(self, update_sn: bool) -> Tensor:
        if self.sn is None:
            return self.w
        return ad.spectral_normalize(self.w, self.sn, update=update_sn)

    def forward(self, x: Tensor, padding: str = "same", update_sn: bool = False,
                stream: "StreamBuffers | None" = None) -> Tensor:
        if stream is not None:
            # weights are frozen for the lifetime of a stream
            w = stream.norm_weight(self)
            x = Tensor(stream.extend(self, x.data))
            pad = (0, 0)
        else:
            w = self.effective_weight(update_sn)
            if padding == "same":
                pad = (self.span // 2, self.span - self.span // 2)
            elif padding == "causal":
                pad = (self.span, 0)
            elif padding == "valid":
                pad = (0, 0)
            else:
                raise ArgumentError(f"unknown padding mode {padding!r}")
        return ad.conv1d(x, w, self.b, stride=self.stride, dilation=self.dilation, pad=pad)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out

    def named_state(self, prefix: str) -> dict[str, np.ndarray]:
        if self.sn is None:
            return {}
        return {f"{prefix}.sn_u": self.sn.u, f"{prefix}.sn_v": self.sn.v}

    def load_state(self, prefix: str, arrays: dict[str, np.ndarray]):
        if self.sn is not None:
            self.sn.u = arrays[f"{prefix}.sn_u"].copy()
            self.sn.v = arrays[f"{prefix}.sn_v"].copy()


class ChannelLinear:
    """Pointwise linear map over channel-first series [B, in, T] -> [B, out, T]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, *,
                 std: float | None = None, dtype=np.float32):
        std = std if std is not None else 1.0 / np.sqrt(in_dim)
        self.w = Tensor(rng.normal(0.0, std, (out_dim, in_dim)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.channel_linear(x, self.w, self.b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class CondBatchNorm:
    """Batch normalization whose scale and shift come from a conditioning series.

    Training mode normalizes with batch statistics over (batch, time) and
    updates running estimates; inference mode applies the running estimates,
    which keeps the layer pointwise (and therefore causal).
    """

    def __init__(self, channels: int, proj_dim: int, rng: np.random.Generator, *,
                 dtype=np.float32):
        self.channels = channels
        self.gain = ChannelLinear(proj_dim, channels, rng, std=0.02, dtype=dtype)
        self.bias = ChannelLinear(proj_dim, channels, rng, std=0.02, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, cond: Tensor, training: bool) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"batch norm expects {self.channels} channels, "
                             f"input has shape {x.shape}")
        if training:
            mu = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2), keepdims=True)
            xn = centered / ad.sqrt(var + BN_EPS)
            self.running_mean += BN_MOMENTUM * (
                mu.data.reshape(-1).astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += BN_MOMENTUM * (
                var.data.reshape(-1).astype(self.running_var.dtype) - self.running_var)
        else:
            mu = self.running_mean.reshape(1, -1, 1)
            denom = np.sqrt(self.running_var.reshape(1, -1, 1) + BN_EPS)
            xn = (x - Tensor(mu)) * Tensor(1.0 / denom)

        # Conditioning arrives at the 250 Hz frame rate; repeat to this layer's rate.
        factor = x.shape[2] // cond.shape[2]
        if factor * cond.shape[2] != x.shape[2]:
            raise ShapeError(f"conditioning length {cond.shape} does not divide "
                             f"feature length {x.shape}")
        gamma = ad.nearest_upsample1d(self.gain.forward(cond), factor)
        beta = ad.nearest_upsample1d(self.bias.forward(cond), factor)
        return xn * (1.0 + gamma) + beta

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.gain.named_params(f"{prefix}.gain"),
                **self.bias.named_params(f"{prefix}.bias")}

    def named_state(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.running_mean": self.running_mean,
                f"{prefix}.running_var": self.running_var}

    def load_state(self, prefix: str, arrays: dict[str, np.ndarray]):
        self.running_mean = arrays[f"{prefix}.running_mean"].copy()
        self.running_var = arrays[f"{prefix}.running_var"].copy()


class StreamBuffers:
    """Per-stream causal left-context for every convolution, keyed by layer.

    A fresh buffer of zeros reproduces offline causal (left-zero-padded)
    convolution exactly.
    """

    def __init__(self):
        self._tails: dict[int, np.ndarray] = {}
        self._weights: dict[int, Tensor] = {}

    def norm_weight(self, layer: Conv1d) -> Tensor:
        key = id(layer)
        w = self._weights.get(key)
        if w is None:
            w = Tensor(layer.effective_weight(update_sn=False).data)
            self._weights[key] = w
        return w

    def extend(self, layer: Conv1d, x: np.ndarray) -> np.ndarray:
        key = id(layer)
        tail = self._tails.get(key)
        if tail is None:
            tail = np.zeros((x.shape[0], x.shape[1], layer.span), dtype=x.dtype)
        combined = np.concatenate([tail, x], axis=2)
        if layer.span:
            self._tails[key] = combined[:, :, -layer.span:].copy()
        return combined


def collect_params(*named: dict[str, Tensor]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for d in named:
        for k, v in d.items():
            if k in out:
                raise ArgumentError(f"duplicate parameter name {k}")
            out[k] = v
    return out
