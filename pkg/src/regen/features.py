"""Conditioning features: enhancement, loudness, content, identity, assembly.

All tracks live on the 250 Hz frame grid. Feature frame ``i`` is anchored to
its right edge ``(i + 1) * hop``: analysis windows trail that boundary, so
content and loudness need no future context and the pitch tracker's lookahead
is an explicit, declared amount.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .audio_io import FRAME_RATE, INPUT_RATE, Waveform
from .errors import ArgumentError, ProviderError
from .pitch import PitchTrack, extract_pitch

HOP_16K = INPUT_RATE // FRAME_RATE  # 64
CONTENT_WINDOW = 512
LOUDNESS_WINDOW = 640
LOUDNESS_FFT = 1024
LOUDNESS_FLOOR_DB = -80.0
LOUDNESS_CEIL_DB = 20.0
DEFAULT_CONTENT_DIM = 40
IDENTITY_DIM = 256
_IDENTITY_PROJECTION_SEED = 61_672  # fixed: identity stubs must agree across runs

F0_SCALE_REF_HZ = 50.0


@dataclass
class LoudnessTrack:
    dba: np.ndarray
    frame_rate_hz: int = FRAME_RATE


@dataclass
class ContentTrack:
    values: np.ndarray  # [frames, content_dim]
    frame_rate_hz: int = FRAME_RATE


@dataclass
class IdentityVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        norm = np.linalg.norm(self.values)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ArgumentError(f"identity vector must be unit-norm, got |v| = {norm}")


@dataclass
class ConditioningTrack:
    """Frame matrix [frames, content_dim + 3] plus a per-utterance identity."""

    frame_matrix: np.ndarray
    identity: IdentityVector
    frame_rate_hz: int = FRAME_RATE

    @property
    def num_frames(self) -> int:
        return self.frame_matrix.shape[0]

    @property
    def content_dim(self) -> int:
        return self.frame_matrix.shape[1] - 3


def trailing_frames(x: np.ndarray, window: int, hop: int = HOP_16K) -> np.ndarray:
    """Frames [n, window] where frame i ends at sample (i+1)*hop; zero padded."""
    n = -(-len(x) // hop) if len(x) else 0
    if n == 0:
        return np.zeros((0, window))
    pad_left = max(0, window - hop)
    pad_right = max(0, n * hop - len(x))
    padded = np.concatenate([np.zeros(pad_left), x, np.zeros(pad_right)])
    starts = (np.arange(n) + 1) * hop - window + pad_left
    idx = starts[:, None] + np.arange(window)[None, :]
    return padded[idx]


class PreEnhancer:
    """Background-removal provider interface; default is a passthrough."""

    name = "pre_enhancer"
    future_context_ms = 0.0
    receptive_field_ms = 0.0

    def process(self, x: Waveform) -> Waveform:
        raise NotImplementedError

    def process_chunk(self, chunk: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self):
        pass


class IdentityEnhancer(PreEnhancer):
    """Passthrough enhancer: the input is assumed already clean."""

    def process(self, x: Waveform) -> Waveform:
        return Waveform(x.samples.copy(), x.sample_rate_hz)

    def process_chunk(self, chunk: np.ndarray) -> np.ndarray:
        return chunk


class SpectralGateEnhancer(PreEnhancer):
    """Deterministic spectral-gate stub: zeroes STFT bins below a magnitude
    percentile, resynthesizes by overlap-add. Offline use only."""

    name = "spectral_gate"
    receptive_field_ms = 32.0

    def __init__(self, fft_size: int = 512, percentile: float = 25.0):
        self.fft_size = fft_size
        self.hop = fft_size // 4
        self.percentile = percentile

    def process(self, x: Waveform) -> Waveform:
        if len(x.samples) == 0:
            return Waveform(x.samples.copy(), x.sample_rate_hz)
        window = dsp.hann_window(self.fft_size)
        frames = dsp.frame_signal(x.samples, self.fft_size, self.hop) * window
        spec = np.fft.rfft(frames, axis=1)
        mags = np.abs(spec)
        gate = mags >= np.percentile(mags, self.percentile)
        rec = np.fft.irfft(spec * gate, n=self.fft_size, axis=1) * window
        out = np.zeros(len(frames) * self.hop + self.fft_size)
        wsum = np.zeros_like(out)
        for i, fr in enumerate(rec):
            out[i * self.hop:i * self.hop + self.fft_size] += fr
            wsum[i * self.hop:i * self.hop + self.fft_size] += window * window
        out = out / np.maximum(wsum, 1e-8)
        start = self.fft_size // 2
        return Waveform(out[start:start + len(x.samples)], x.sample_rate_hz)


def pre_enhance(x: Waveform, provider: PreEnhancer | None = None) -> Waveform:
    """Run the configured background-removal provider (default passthrough)."""
    provider = provider or IdentityEnhancer()
    try:
        return provider.process(x)
    except NotImplementedError:
        raise
    except Exception as exc:  # provider failures carry the stage tag
        raise ProviderError(provider.name, str(exc)) from exc


def _loudness_frame_db(frames: np.ndarray, sample_rate_hz: int) -> np.ndarray:
    spec = np.abs(np.fft.rfft(frames * dsp.hann_window(frames.shape[1]),
                              n=LOUDNESS_FFT, axis=1))
    spec *= 2.0 / dsp.hann_window(frames.shape[1]).sum()
    freqs = np.arange(spec.shape[1]) * sample_rate_hz / LOUDNESS_FFT
    weighted = spec * dsp.a_weight_linear(freqs)[None, :]
    rms = np.sqrt(np.mean(weighted * weighted, axis=1))
    db = 20.0 * np.log10(np.maximum(rms, 10 ** (LOUDNESS_FLOOR_DB / 20)))
    return np.clip(db, LOUDNESS_FLOOR_DB, LOUDNESS_CEIL_DB)


def extract_loudness(x: Waveform) -> LoudnessTrack:
    """Per-frame A-weighted loudness in dBA, floored at -80."""
    if x.sample_rate_hz != INPUT_RATE:
        raise ArgumentError(f"loudness expects {INPUT_RATE} Hz input, got {x.sample_rate_hz}")
    frames = trailing_frames(x.samples, LOUDNESS_WINDOW)
    if len(frames) == 0:
        return LoudnessTrack(np.zeros(0))
    return LoudnessTrack(_loudness_frame_db(frames, x.sample_rate_hz))


def _logmel_frames(samples: np.ndarray, n_mels: int) -> np.ndarray:
    frames = trailing_frames(samples, CONTENT_WINDOW)
    if len(frames) == 0:
        return np.zeros((0, n_mels))
    spec = np.abs(np.fft.rfft(frames * dsp.hann_window(CONTENT_WINDOW), axis=1))
    weights = dsp.mel_filter_weights(CONTENT_WINDOW, INPUT_RATE, n_mels, 0.0, INPUT_RATE / 2)
    return np.log(np.maximum(spec @ weights, 1e-10))


class ContentProvider:
    """Source of frame-rate content embeddings (ASR activations in the full
    system; a log-mel stub here)."""

    name = "content"
    future_context_ms = 0.0
    receptive_field_ms = 1000.0 * CONTENT_WINDOW / INPUT_RATE
    content_dim = DEFAULT_CONTENT_DIM

    def extract(self, x: Waveform) -> ContentTrack:
        raise NotImplementedError


class LogMelContentStub(ContentProvider):
    """Log-mel energies, mean/variance normalized over the utterance."""

    def __init__(self, n_mels: int = DEFAULT_CONTENT_DIM):
        self.content_dim = n_mels

    def extract(self, x: Waveform) -> ContentTrack:
        logmel = _logmel_frames(x.samples, self.content_dim)
        if len(logmel):
            std = logmel.std()
            logmel = (logmel - logmel.mean()) / (std if std > 1e-8 else 1.0)
        return ContentTrack(logmel)


def extract_content(x: Waveform, provider: ContentProvider | None = None) -> ContentTrack:
    if x.sample_rate_hz != INPUT_RATE:
        raise ArgumentError(f"content expects {INPUT_RATE} Hz input, got {x.sample_rate_hz}")
    provider = provider or LogMelContentStub()
    try:
        return provider.extract(x)
    except NotImplementedError:
        raise
    except Exception as exc:
        raise ProviderError(provider.name, str(exc)) from exc


def identity_projection(n_mels: int = DEFAULT_CONTENT_DIM) -> np.ndarray:
    rng = np.random.default_rng(_IDENTITY_PROJECTION_SEED)
    return rng.standard_normal((IDENTITY_DIM, n_mels)) / np.sqrt(n_mels)


class IdentityProvider:
    """Source of per-utterance speaker embeddings (d-vectors in the full
    system; a projected long-term-average-spectrum stub here)."""

    name = "identity"
    future_context_ms = 0.0

    def extract(self, x: Waveform) -> IdentityVector:
        raise NotImplementedError


class LtasIdentityStub(IdentityProvider):
    def __init__(self, n_mels: int = DEFAULT_CONTENT_DIM):
        self.n_mels = n_mels
        self.projection = identity_projection(n_mels)

    def embed_ltas(self, ltas: np.ndarray) -> np.ndarray:
        raw = self.projection @ ltas
        return raw / max(np.linalg.norm(raw), 1e-12)

    def extract(self, x: Waveform) -> IdentityVector:
        ltas = _logmel_frames(x.samples, self.n_mels).mean(axis=0)
        return IdentityVector(self.embed_ltas(ltas))


def extract_identity(x: Waveform, provider: IdentityProvider | None = None) -> IdentityVector:
    if x.sample_rate_hz != INPUT_RATE:
        raise ArgumentError(f"identity expects {INPUT_RATE} Hz input, got {x.sample_rate_hz}")
    if len(x.samples) < INPUT_RATE // 2:
        raise ArgumentError(
            f"identity extraction needs >= 0.5 s of audio, got {len(x.samples)} samples")
    provider = provider or LtasIdentityStub()
    try:
        return provider.extract(x)
    except NotImplementedError:
        raise
    except Exception as exc:
        raise ProviderError(provider.name, str(exc)) from exc


def scale_f0(f0_hz: np.ndarray, voicing: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f0_hz)
    voiced = voicing > 0
    out[voiced] = np.log2(f0_hz[voiced] / F0_SCALE_REF_HZ)
    return out


def scale_loudness(dba: np.ndarray) -> np.ndarray:
    return (dba - LOUDNESS_FLOOR_DB) / 50.0 - 1.0


def assemble_conditioning(content: ContentTrack, pitch: PitchTrack,
                          loud: LoudnessTrack, identity: IdentityVector) -> ConditioningTrack:
    """Concatenate [content | f0 | voicing | loudness] on a shared frame grid.

    Track lengths are trimmed to the shortest; f0 is log2-scaled relative to
    50 Hz on voiced frames and 0 elsewhere, loudness mapped affinely to [-1, 1].
    """
    for track in (content, pitch, loud):
        if track.frame_rate_hz != FRAME_RATE:
            raise ArgumentError(
                f"all tracks must be on the {FRAME_RATE} Hz grid, got {track.frame_rate_hz}")
    n = min(len(content.values), len(pitch.f0_hz), len(loud.dba))
    if n == 0:
        raise ArgumentError("no overlapping frames across the feature tracks")
    matrix = np.concatenate([
        content.values[:n],
        scale_f0(pitch.f0_hz[:n], pitch.voicing[:n])[:, None],
        pitch.voicing[:n].astype(np.float64)[:, None],
        scale_loudness(loud.dba[:n])[:, None],
    ], axis=1)
    return ConditioningTrack(matrix, identity)


@dataclass
class FeatureEncoder:
    """Bundles the providers and produces the full conditioning decomposition."""

    enhancer: PreEnhancer = field(default_factory=IdentityEnhancer)
    content: ContentProvider = field(default_factory=LogMelContentStub)
    identity: IdentityProvider = field(default_factory=LtasIdentityStub)

    def encode(self, x: Waveform) -> ConditioningTrack:
        clean = pre_enhance(x, self.enhancer)
        return assemble_conditioning(
            extract_content(clean, self.content),
            extract_pitch(clean),
            extract_loudness(clean),
            extract_identity(clean, self.identity),
        )


# --- binary feature dump ---------------------------------------------------

FEATURE_MAGIC = b"RGNF"
FEATURE_VERSION = 1


def write_features(track: ConditioningTrack, path) -> None:
    """Binary conditioning record: RGNF header, float32 rows, identity tail."""
    import struct

    frames, width = track.frame_matrix.shape
    header = struct.pack("<4sIIII", FEATURE_MAGIC, FEATURE_VERSION,
                         track.frame_rate_hz, width - 3, frames)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(track.frame_matrix.astype("<f4").tobytes())
        fh.write(track.identity.values.astype("<f4").tobytes())


def read_features(path) -> ConditioningTrack:
    import struct

    from .errors import CheckpointFormatError

    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20:
            raise CheckpointFormatError("truncated feature dump header")
        magic, version, rate, content_dim, frames = struct.unpack("<4sIIII", head)
        if magic != FEATURE_MAGIC:
            raise CheckpointFormatError(f"bad feature dump magic {magic!r}")
        if version != FEATURE_VERSION:
            raise CheckpointFormatError(f"unsupported feature dump version {version}")
        width = content_dim + 3
        body = fh.read(4 * frames * width)
        tail = fh.read(4 * IDENTITY_DIM)
        if len(body) != 4 * frames * width or len(tail) != 4 * IDENTITY_DIM:
            raise CheckpointFormatError("truncated feature dump payload")
    matrix = np.frombuffer(body, dtype="<f4").reshape(frames, width).astype(np.float64)
    ident = np.frombuffer(tail, dtype="<f4").astype(np.float64)
    ident /= max(np.linalg.norm(ident), 1e-12)
    return ConditioningTrack(matrix, IdentityVector(ident), rate)
