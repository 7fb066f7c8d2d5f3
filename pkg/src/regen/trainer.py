"""Desk-scale adversarial training loop.

Each step runs one discriminator update (least-squares real/fake targets)
followed by one generator update (spectral energy distance plus the weighted
adversarial term), with fresh noise draws per item and one spectral-norm
power iteration per layer per step. Three independent RNG streams (data
crops, discriminator noise, generator noise) keep trajectories comparable
across ablations that skip the discriminator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import losses
from .audio_io import FRAME_RATE, INPUT_RATE, OUTPUT_RATE, Waveform, resample
from .autodiff import Tensor
from .discriminator import Discriminator, DiscriminatorConfig, min_input_length
from .errors import ArgumentError, NumericError
from .features import FeatureEncoder
from .generator import Generator, GeneratorConfig

HOP_IN = INPUT_RATE // FRAME_RATE    # 64
HOP_OUT = OUTPUT_RATE // FRAME_RATE  # 96


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch: int = 1
    lr_g: float = 1e-4
    lr_d: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    lambda_adv: float = losses.DEFAULT_LAMBDA
    clip_samples: int = 8192  # target-side crop length, rounded down to the frame grid
    use_discriminator: bool = True
    freeze_discriminator: bool = False

    def validate(self):
        if self.steps <= 0 or self.batch <= 0:
            raise ArgumentError("steps and batch must be positive")
        if not (0 < self.lr_g < 0.1) or not (0 < self.lr_d < 0.1):
            raise ArgumentError("learning rates must lie in (0, 0.1)")
        return self

    @property
    def clip_frames(self) -> int:
        return max(1, self.clip_samples // HOP_OUT)


class Adam:
    """First/second-moment adaptive optimizer over a named parameter dict."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-8):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p.data -= (lr * (self.m[name] / bc1)
                       / (np.sqrt(self.v[name] / bc2) + self.eps)).astype(p.data.dtype)

    def named_state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state(self, prefix: str, arrays: dict[str, np.ndarray], t: int):
        self.t = t
        self.m = {k[len(prefix) + 3:]: v.copy() for k, v in arrays.items()
                  if k.startswith(f"{prefix}.m.")}
        self.v = {k[len(prefix) + 3:]: v.copy() for k, v in arrays.items()
                  if k.startswith(f"{prefix}.v.")}


@dataclass
class ClipPair:
    """An aligned (input @16 kHz, target @24 kHz) pair on the 250 Hz grid.

    Conditioning is computed once per utterance (identity in particular is a
    per-utterance feature); crops slice the cached frame matrix.
    """

    x16: np.ndarray
    y24: np.ndarray
    cond_matrix: np.ndarray | None = None
    identity: np.ndarray | None = None

    @property
    def frames(self) -> int:
        return len(self.x16) // HOP_IN

    @classmethod
    def from_waveform(cls, w: Waveform, encoder: FeatureEncoder | None = None) -> "ClipPair":
        x16 = resample(w, INPUT_RATE).samples
        y24 = resample(w, OUTPUT_RATE).samples
        frames = min(len(x16) // HOP_IN, len(y24) // HOP_OUT)
        pair = cls(x16[:frames * HOP_IN], y24[:frames * HOP_OUT])
        track = (encoder or FeatureEncoder()).encode(Waveform(pair.x16, INPUT_RATE))
        usable = min(frames, track.num_frames)
        pair.x16 = pair.x16[:usable * HOP_IN]
        pair.y24 = pair.y24[:usable * HOP_OUT]
        pair.cond_matrix = track.frame_matrix[:usable]
        pair.identity = track.identity.values
        return pair

    def crop(self, frame_offset: int, frames: int) -> "ClipPair":
        cond = (self.cond_matrix[frame_offset:frame_offset + frames]
                if self.cond_matrix is not None else None)
        return ClipPair(self.x16[frame_offset * HOP_IN:(frame_offset + frames) * HOP_IN],
                        self.y24[frame_offset * HOP_OUT:(frame_offset + frames) * HOP_OUT],
                        cond, self.identity)


class TrainState:
    def __init__(self, gen_config: GeneratorConfig, disc_config: DiscriminatorConfig,
                 train_config: TrainConfig, dtype=np.float32):
        self.gen_config = gen_config
        self.disc_config = disc_config
        self.config = train_config.validate()
        self.step_index = 0
        self.generator = Generator(gen_config, seed=train_config.seed, dtype=dtype)
        self.discriminator = Discriminator(disc_config, seed=train_config.seed + 1,
                                           dtype=dtype)
        self.opt_g = Adam(train_config.betas)
        self.opt_d = Adam(train_config.betas)
        seq = np.random.SeedSequence(train_config.seed)
        data_ss, d_ss, g_ss = seq.spawn(3)
        self.rng_data = np.random.Generator(np.random.PCG64(data_ss))
        self.rng_noise_d = np.random.Generator(np.random.PCG64(d_ss))
        self.rng_noise_g = np.random.Generator(np.random.PCG64(g_ss))
        self.encoder = FeatureEncoder()
        self._cond_cache: dict[bytes, np.ndarray] = {}

    # -- conditioning ------------------------------------------------------

    def _conditioning(self, pair: ClipPair) -> tuple[np.ndarray, np.ndarray]:
        """Frame matrix and identity for a crop; encoded on demand and cached."""
        if pair.cond_matrix is not None:
            return pair.cond_matrix, pair.identity
        key = pair.x16.tobytes()
        hit = self._cond_cache.get(key)
        if hit is None:
            track = self.encoder.encode(Waveform(pair.x16, INPUT_RATE))
            hit = (track.frame_matrix, track.identity.values)
            if len(self._cond_cache) < 64:
                self._cond_cache[key] = hit
        return hit

    def _generate(self, cond_mat, identity, z, *, training, update_sn):
        dtype = self.generator.dtype
        frames = cond_mat.shape[0]
        cond = Tensor(cond_mat.T[None].astype(dtype))
        vec = np.concatenate([z, identity]).astype(dtype)
        cond_vec = Tensor(np.repeat(vec[None, :, None], frames, axis=2))
        return self.generator.forward(cond, cond_vec, training=training,
                                      update_sn=update_sn)

    def _draw_z(self, rng) -> np.ndarray:
        return rng.standard_normal(self.gen_config.z_dim)

    # -- training step -----------------------------------------------------

    def train_step(self, batch: list[ClipPair]) -> losses.LossReport:
        cfg = self.config
        report = losses.LossReport()
        conds = [self._conditioning(pair) for pair in batch]

        min_len = min_input_length(self.disc_config)
        if cfg.use_discriminator:
            for pair in batch:
                if len(pair.y24) < min_len:
                    raise ArgumentError(
                        f"clip of {len(pair.y24)} samples is shorter than the "
                        f"discriminator's minimum length {min_len}")

            # Discriminator update: one SN power iteration on the real pass.
            for t in self.discriminator.named_params().values():
                t.zero_grad()
            l_d_total = None
            for i, pair in enumerate(batch):
                cond_mat, ident = conds[i]
                with ad.no_grad():
                    fake = self._generate(cond_mat, ident, self._draw_z(self.rng_noise_d),
                                          training=True, update_sn=False)
                d_real = self.discriminator.forward(
                    Tensor(pair.y24.astype(self.generator.dtype)[None, None, :]),
                    update_sn=(i == 0))
                d_fake = self.discriminator.forward(fake.detach(), update_sn=False)
                _, l_d = losses.lsgan_losses(d_real, d_fake)
                l_d_total = l_d if l_d_total is None else l_d_total + l_d
            l_d_mean = l_d_total * (1.0 / len(batch))
            if not np.isfinite(l_d_mean.data):
                raise NumericError(f"non-finite discriminator loss at step {self.step_index}")
            if not cfg.freeze_discriminator:
                l_d_mean.backward()
                self.opt_d.step(self.discriminator.named_params(), cfg.lr_d)
            report.l_d = float(l_d_mean.data)

        # Generator update: fresh z1, z2 per item; SN iterated on the first draw.
        for t in self.generator.named_params().values():
            t.zero_grad()
        for t in self.discriminator.named_params().values():
            t.zero_grad()
        l_sed_total = None
        l_adv_total = None
        spec_scales_acc: dict[int, float] = {}
        for i, pair in enumerate(batch):
            cond_mat, ident = conds[i]
            z1 = self._draw_z(self.rng_noise_g)
            z2 = self._draw_z(self.rng_noise_g)
            g1 = self._generate(cond_mat, ident, z1, training=True, update_sn=(i == 0))
            g2 = self._generate(cond_mat, ident, z2, training=True, update_sn=False)
            y = Tensor(pair.y24)
            g1_sig = ad.reshape(g1, (g1.shape[2],))
            g2_sig = ad.reshape(g2, (g2.shape[2],))

            scales = losses.spec_loss_scales(y, g1_sig)
            for m, v in scales.items():
                spec_scales_acc[m] = spec_scales_acc.get(m, 0.0) + float(v.data)
            attract1 = None
            for v in scales.values():
                attract1 = v if attract1 is None else attract1 + v
            attract1 = attract1 * (1.0 / len(scales))
            l_sed = (attract1 + losses.spec_loss_multi(y, g2_sig)
                     - losses.spec_loss_multi(g1_sig, g2_sig))
            l_sed_total = l_sed if l_sed_total is None else l_sed_total + l_sed

            if cfg.use_discriminator and cfg.lambda_adv != 0.0:
                d_fake = self.discriminator.forward(g1, update_sn=False)
                l_adv = ((1.0 - d_fake) * (1.0 - d_fake)).mean()
                l_adv_total = l_adv if l_adv_total is None else l_adv_total + l_adv

        l_sed_mean = l_sed_total * (1.0 / len(batch))
        report.l_sed = float(l_sed_mean.data)
        report.l_spec = sum(spec_scales_acc.values()) / (len(spec_scales_acc) * len(batch))
        report.l_spec_per_scale = {m: v / len(batch) for m, v in spec_scales_acc.items()}
        if l_adv_total is not None:
            l_adv_mean = l_adv_total * (1.0 / len(batch))
            report.l_adv = float(l_adv_mean.data)
            l_g = losses.generator_objective(l_sed_mean, l_adv_mean, cfg.lambda_adv)
        else:
            l_g = l_sed_mean
        report.l_g = float(l_g.data)
        if not np.isfinite(report.l_g):
            raise NumericError(f"non-finite generator loss at step {self.step_index}")
        l_g.backward()
        self.opt_g.step(self.generator.named_params(), cfg.lr_g)

        self.step_index += 1
        return report

    def sample_batch(self, clips: list[ClipPair]) -> list[ClipPair]:
        """Random frame-aligned crops of the configured length."""
        batch = []
        for _ in range(self.config.batch):
            clip = clips[int(self.rng_data.integers(len(clips)))]
            span = min(self.config.clip_frames, clip.frames)
            offset = int(self.rng_data.integers(max(1, clip.frames - span + 1)))
            batch.append(clip.crop(offset, span))
        return batch

    # -- persistence ---------------------------------------------------------

    def _rng_states(self) -> dict:
        return {"data": self.rng_data.bit_generator.state,
                "noise_d": self.rng_noise_d.bit_generator.state,
                "noise_g": self.rng_noise_g.bit_generator.state}

    def _set_rng_states(self, states: dict):
        self.rng_data.bit_generator.state = states["data"]
        self.rng_noise_d.bit_generator.state = states["noise_d"]
        self.rng_noise_g.bit_generator.state = states["noise_g"]

    def save(self, path) -> None:
        tensors: dict[str, np.ndarray] = {}
        for name, t in self.generator.named_params().items():
            tensors[f"gen.{name}"] = t.data
        for name, arr in self.generator.named_state().items():
            tensors[f"gen_state.{name}"] = arr
        for name, t in self.discriminator.named_params().items():
            tensors[f"disc.{name}"] = t.data
        for name, arr in self.discriminator.named_state().items():
            tensors[f"disc_state.{name}"] = arr
        tensors.update({k: v for k, v in self.opt_g.named_state("opt_g").items()})
        tensors.update({k: v for k, v in self.opt_d.named_state("opt_d").items()})
        metadata = {
            "kind": "train_state",
            "step": self.step_index,
            "opt_t": {"g": self.opt_g.t, "d": self.opt_d.t},
            "gen_config": _config_dict(self.gen_config),
            "disc_config": _config_dict(self.disc_config),
            "train_config": _config_dict(self.config),
            "rng": _jsonable(self._rng_states()),
        }
        ckpt.save_tensors(path, tensors, metadata)

    @classmethod
    def load(cls, path) -> "TrainState":
        tensors, metadata = ckpt.load_tensors(path)
        gen_config = GeneratorConfig(**_tupled(metadata["gen_config"]))
        disc_config = DiscriminatorConfig(**_tupled(metadata["disc_config"]))
        train_config = TrainConfig(**_tupled(metadata["train_config"]))
        state = cls(gen_config, disc_config, train_config)
        state.step_index = metadata["step"]
        for name, t in state.generator.named_params().items():
            t.data = tensors[f"gen.{name}"].copy()
        state.generator.load_state(
            {k[len("gen_state."):]: v for k, v in tensors.items()
             if k.startswith("gen_state.")})
        for name, t in state.discriminator.named_params().items():
            t.data = tensors[f"disc.{name}"].copy()
        state.discriminator.load_state(
            {k[len("disc_state."):]: v for k, v in tensors.items()
             if k.startswith("disc_state.")})
        state.opt_g.load_state("opt_g", tensors, metadata["opt_t"]["g"])
        state.opt_d.load_state("opt_d", tensors, metadata["opt_t"]["d"])
        state._set_rng_states(metadata["rng"])
        return state


def _config_dict(cfg) -> dict:
    from dataclasses import asdict

    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}


_TUPLE_FIELDS = {"channel_widths", "upsample_factors", "dilations", "betas",
                 "filters", "kernels", "strides"}


def _tupled(d: dict) -> dict:
    return {k: (tuple(v) if k in _TUPLE_FIELDS else v) for k, v in d.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def save_checkpoint(state: TrainState, path) -> None:
    state.save(path)


def load_checkpoint(path) -> TrainState:
    return TrainState.load(path)


def train(state: TrainState, clips: list[ClipPair], steps: int,
          log_path=None) -> list[losses.LossReport]:
    """Run `steps` updates, optionally appending JSON-lines loss records."""
    reports = []
    log_fh = open(log_path, "a") if log_path else None
    try:
        for _ in range(steps):
            batch = state.sample_batch(clips)
            report = state.train_step(batch)
            reports.append(report)
            if log_fh:
                log_fh.write(json.dumps(
                    {"step": state.step_index, **json.loads(report.to_json())},
                    sort_keys=True) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return reports
