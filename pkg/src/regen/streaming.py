"""Chunked causal inference with explicit latency accounting.

The pipeline consumes 16 kHz input in frame-aligned chunks and emits 24 kHz
audio as soon as each 250 Hz feature frame's dependency cone is satisfied:
frame ``f`` needs input through ``(f + 1) * 64`` samples plus the pitch
tracker's 20 ms lookahead. Feature analysis windows trail the frame edge, the
generator runs fully causal convolutions with per-layer state, and identity
is an exponential moving average with a 1 s time constant. Driving the whole
signal through one chunk reproduces the chunked outputs exactly, which is the
oracle the causality and chunk-invariance checks lean on.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import features as feats
from . import pitch as pitchmod
from .audio_io import FRAME_RATE, INPUT_RATE, OUTPUT_RATE, Waveform
from .errors import ArgumentError, ModeError
from .generator import Generator
from .nn import StreamBuffers

HOP_IN = INPUT_RATE // FRAME_RATE    # 64
HOP_OUT = OUTPUT_RATE // FRAME_RATE  # 96
PITCH_LOOKAHEAD = pitchmod.HALF_WINDOW  # 320 samples = 20 ms
MAX_PAST_WINDOW = feats.LOUDNESS_WINDOW  # deepest trailing analysis window
IDENTITY_EMA_SECONDS = 1.0


@dataclass
class StageBudget:
    name: str
    receptive_field_ms: float
    future_context_ms: float
    compute_ms: float = 0.0
    bounded_past: bool = True


@dataclass
class LatencyBudget:
    """Declared and measured latency decomposition for one streaming run."""

    stages: list[StageBudget]
    chunk_ms: float
    frame_ms: float = 1000.0 / FRAME_RATE
    rtf: float | None = None

    @property
    def future_context_ms(self) -> float:
        serial = sum(s.future_context_ms for s in self.stages
                     if s.name == "pre_enhancer")
        parallel = max((s.future_context_ms for s in self.stages
                        if s.name != "pre_enhancer"), default=0.0)
        return serial + parallel

    @property
    def compute_ms(self) -> float:
        return sum(s.compute_ms for s in self.stages)

    @property
    def total_latency_ms(self) -> float:
        return self.chunk_ms + self.frame_ms + self.future_context_ms + self.compute_ms

    def to_json(self) -> str:
        return json.dumps({
            "chunk_ms": self.chunk_ms,
            "frame_ms": self.frame_ms,
            "future_context_ms": self.future_context_ms,
            "compute_ms": self.compute_ms,
            "total_latency_ms": self.total_latency_ms,
            "rtf": self.rtf,
            "stages": [vars(s) for s in self.stages],
        }, sort_keys=True, indent=2)


class StreamingPipeline:
    """Stateful chunk-by-chunk regeneration: 16 kHz in, 24 kHz out."""

    def __init__(self, generator: Generator, *, seed: int = 0,
                 enhancer: feats.PreEnhancer | None = None,
                 content_dim: int | None = None, trace: bool = False):
        self.generator = generator
        self.enhancer = enhancer or feats.IdentityEnhancer()
        self.content_dim = content_dim or generator.config.content_dim
        if self.content_dim != generator.config.content_dim:
            raise ArgumentError(
                f"content_dim {self.content_dim} does not match the generator's "
                f"{generator.config.content_dim}")
        self.identity_stub = feats.LtasIdentityStub(self.content_dim)
        self.z = np.random.default_rng(seed).standard_normal(generator.config.z_dim)

        self._buf = np.zeros(0)
        self._buf_start = 0     # absolute index of _buf[0]
        self._received = 0
        self._frames_done = 0
        self._closed = False
        self._gen_stream = StreamBuffers()
        self._pitch = pitchmod.StreamingPitchTracker()
        # Running normalization state for the content stub (causal cumulative).
        self._norm_n = 0
        self._norm_sum = 0.0
        self._norm_sumsq = 0.0
        self._ema = np.zeros(self.content_dim)
        self._ema_alpha = 1.0 - np.exp(-1.0 / (FRAME_RATE * IDENTITY_EMA_SECONDS))
        self._ema_started = False
        self.trace_enabled = trace
        self.trace: dict[str, list] = {k: [] for k in
                                       ("content", "loudness", "pitch", "identity")}
        self.compute_ms: dict[str, float] = {"pre_enhancer": 0.0, "features": 0.0,
                                             "generator": 0.0}
        self._chunks = 0

    # -- declared contract ---------------------------------------------------

    def stage_budgets(self) -> list[StageBudget]:
        from .generator import receptive_field

        per_chunk = 1.0 / max(self._chunks, 1)
        return [
            StageBudget("pre_enhancer", self.enhancer.receptive_field_ms,
                        self.enhancer.future_context_ms,
                        self.compute_ms["pre_enhancer"] * per_chunk),
            StageBudget("content", 1000.0 * feats.CONTENT_WINDOW / INPUT_RATE, 0.0,
                        self.compute_ms["features"] * per_chunk),
            StageBudget("loudness", 1000.0 * feats.LOUDNESS_WINDOW / INPUT_RATE, 0.0),
            StageBudget("pitch", 1000.0 * pitchmod.WINDOW / INPUT_RATE,
                        1000.0 * PITCH_LOOKAHEAD / INPUT_RATE),
            StageBudget("identity", 1000.0 * feats.CONTENT_WINDOW / INPUT_RATE, 0.0,
                        bounded_past=False),
            StageBudget("generator", receptive_field(self.generator.config).total_ms,
                        0.0, self.compute_ms["generator"] * per_chunk,
                        bounded_past=False),
        ]

    def future_context_samples(self) -> int:
        """Input lookahead beyond a frame's right edge before it can be emitted."""
        enh = int(round(self.enhancer.future_context_ms * INPUT_RATE / 1000.0))
        return enh + PITCH_LOOKAHEAD

    def input_horizon(self, output_index: int) -> int:
        """Largest input-sample index (exclusive) output sample s may depend on."""
        frame = output_index // HOP_OUT
        return (frame + 1) * HOP_IN + self.future_context_samples()

    # -- frame machinery -------------------------------------------------------

    def _window(self, start: int, end: int) -> np.ndarray:
        """Absolute-index slice of the input stream, zero beyond known samples."""
        out = np.zeros(end - start)
        lo = max(start, self._buf_start)
        hi = min(end, self._buf_start + len(self._buf))
        if hi > lo:
            out[lo - start:hi - start] = self._buf[lo - self._buf_start:hi - self._buf_start]
        return out

    def _content_window(self, edge: int) -> np.ndarray:
        return self._window(edge - feats.CONTENT_WINDOW, edge)

    def _pitch_window(self, edge: int) -> np.ndarray:
        return self._window(edge - pitchmod.HALF_WINDOW, edge + pitchmod.HALF_WINDOW)

    def _normalize_content(self, logmel: np.ndarray) -> np.ndarray:
        self._norm_n += logmel.size
        self._norm_sum += float(logmel.sum())
        self._norm_sumsq += float((logmel * logmel).sum())
        mean = self._norm_sum / self._norm_n
        var = max(self._norm_sumsq / self._norm_n - mean * mean, 0.0)
        std = np.sqrt(var)
        return (logmel - mean) / (std if std > 1e-8 else 1.0)

    def _compute_frames(self, frames: range) -> tuple[np.ndarray, np.ndarray]:
        """Feature rows and conditioning vectors for a batch of ready frames.

        Window gathers stay per-frame (subclasses override them); the FFTs
        and filterbank projections run batched across the chunk's frames.
        """
        edges = [(f + 1) * HOP_IN for f in frames]
        content_wins = np.stack([self._content_window(e) for e in edges])
        loud_wins = np.stack([self._window(e - feats.LOUDNESS_WINDOW, e) for e in edges])
        pitch_wins = np.stack([self._pitch_window(e) for e in edges])

        spec = np.abs(np.fft.rfft(content_wins * _hann(feats.CONTENT_WINDOW), axis=1))
        logmels = np.log(np.maximum(spec @ _mel_weights(self.content_dim), 1e-10))
        louds = feats._loudness_frame_db(loud_wins, INPUT_RATE)
        nccf = pitchmod.nccf_from_windows(pitch_wins)
        energies = (pitch_wins[:, :pitchmod.HALF_WINDOW] ** 2).sum(axis=1)

        rows = np.empty((len(edges), self.content_dim + 3))
        vecs = np.empty((len(edges), len(self.z) + feats.IDENTITY_DIM))
        for i in range(len(edges)):
            content = self._normalize_content(logmels[i])
            f0, voicing = self._pitch.step_from_nccf(nccf[i], energies[i] > 1e-9)
            if self._ema_started:
                self._ema += self._ema_alpha * (logmels[i] - self._ema)
            else:
                self._ema = logmels[i].copy()
                self._ema_started = True
            ident = self.identity_stub.embed_ltas(self._ema)

            if self.trace_enabled:
                self.trace["content"].append(content.copy())
                self.trace["loudness"].append(float(louds[i]))
                self.trace["pitch"].append((f0, voicing))
                self.trace["identity"].append(ident.copy())

            rows[i, :self.content_dim] = content
            rows[i, self.content_dim] = (np.log2(f0 / feats.F0_SCALE_REF_HZ)
                                         if voicing else 0.0)
            rows[i, self.content_dim + 1] = float(voicing)
            rows[i, self.content_dim + 2] = feats.scale_loudness(louds[i:i + 1])[0]
            vecs[i, :len(self.z)] = self.z
            vecs[i, len(self.z):] = ident
        return rows, vecs

    def features_for_new_input(self, chunk: np.ndarray,
                               final: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Ingest a chunk, return (cond rows, cond vectors) for ready frames."""
        t0 = time.perf_counter()
        if len(chunk):
            enhanced = self.enhancer.process_chunk(chunk)
            self.compute_ms["pre_enhancer"] += (time.perf_counter() - t0) * 1000.0
            self._buf = np.concatenate([self._buf, enhanced])
            self._received += len(chunk)

        t0 = time.perf_counter()
        if final:
            ready = self._received // HOP_IN
        else:
            ready = (self._received - self.future_context_samples()) // HOP_IN
        new = range(self._frames_done, max(ready, self._frames_done))
        if len(new) == 0:
            rows = np.zeros((0, self.content_dim + 3))
            vecs = np.zeros((0, len(self.z) + feats.IDENTITY_DIM))
        else:
            rows, vecs = self._compute_frames(new)
        self._frames_done = max(ready, self._frames_done)

        keep_from = max(0, self._frames_done * HOP_IN - MAX_PAST_WINDOW)
        if keep_from > self._buf_start:
            self._buf = self._buf[keep_from - self._buf_start:]
            self._buf_start = keep_from
        self.compute_ms["features"] += (time.perf_counter() - t0) * 1000.0
        return rows, vecs

    def generate_frames(self, rows: np.ndarray, vecs: np.ndarray) -> np.ndarray:
        """Run the causal generator over newly ready frames."""
        if len(rows) == 0:
            return np.zeros(0)
        t0 = time.perf_counter()
        dtype = self.generator.dtype
        cond = ad.Tensor(rows.T[None].astype(dtype))
        cond_vec = ad.Tensor(vecs.T[None].astype(dtype))
        with ad.no_grad():
            out = self.generator.forward(cond, cond_vec, training=False,
                                         stream=self._gen_stream)
        self.compute_ms["generator"] += (time.perf_counter() - t0) * 1000.0
        return np.clip(out.data[0, 0].astype(np.float64), -1.0, 1.0)

    # -- public API ------------------------------------------------------------

    def process_chunk(self, chunk) -> np.ndarray:
        """Feed one frame-aligned 16 kHz chunk; returns ready 24 kHz samples."""
        if self._closed:
            raise ModeError("pipeline already flushed")
        chunk = np.asarray(chunk.samples if isinstance(chunk, Waveform) else chunk,
                           dtype=np.float64)
        if len(chunk) % HOP_IN != 0:
            raise ArgumentError(
                f"chunk length {len(chunk)} is not a multiple of one frame "
                f"({HOP_IN} samples at {INPUT_RATE} Hz)")
        if len(chunk) == 0:
            return np.zeros(0)
        self._chunks += 1
        rows, vecs = self.features_for_new_input(chunk)
        return self.generate_frames(rows, vecs)

    def flush(self) -> np.ndarray:
        """Emit the tail frames whose lookahead extends past the input's end."""
        if self._closed:
            return np.zeros(0)
        self._closed = True
        rows, vecs = self.features_for_new_input(np.zeros(0), final=True)
        return self.generate_frames(rows, vecs)

    def run_offline(self, x) -> np.ndarray:
        """Process an entire signal as one chunk; the streaming oracle."""
        samples = np.asarray(x.samples if isinstance(x, Waveform) else x)
        usable = len(samples) - len(samples) % HOP_IN
        out = self.process_chunk(samples[:usable])
        return np.concatenate([out, self.flush()])


def _hann(n: int) -> np.ndarray:
    from .dsp import hann_window

    return hann_window(n)


def _mel_weights(n_mels: int) -> np.ndarray:
    from .dsp import mel_filter_weights

    return mel_filter_weights(feats.CONTENT_WINDOW, INPUT_RATE, n_mels, 0.0, INPUT_RATE / 2)


def run_chunked(pipeline: StreamingPipeline, x, chunk_samples: int) -> np.ndarray:
    samples = np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)
    usable = len(samples) - len(samples) % HOP_IN
    outputs = []
    for start in range(0, usable, chunk_samples):
        outputs.append(pipeline.process_chunk(samples[start:start + chunk_samples]))
    outputs.append(pipeline.flush())
    return np.concatenate(outputs)


def run_chunked_parallel(pipeline: StreamingPipeline, x, chunk_samples: int) -> np.ndarray:
    """Two-worker execution: features and generator run on separate threads
    connected by a bounded queue. Output must match serial execution exactly."""
    max_threads = int(os.environ.get("REGEN_NUM_THREADS", "2"))
    if max_threads < 2:
        return run_chunked(pipeline, x, chunk_samples)
    samples = np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)
    usable = len(samples) - len(samples) % HOP_IN
    q: queue.Queue = queue.Queue(maxsize=4)
    failures: list[BaseException] = []

    def feature_worker():
        try:
            for start in range(0, usable, chunk_samples):
                q.put(pipeline.features_for_new_input(samples[start:start + chunk_samples]))
            pipeline._closed = True
            q.put(pipeline.features_for_new_input(np.zeros(0), final=True))
        except BaseException as exc:
            failures.append(exc)
        finally:
            q.put(None)

    outputs = []
    worker = threading.Thread(target=feature_worker)
    worker.start()
    while True:
        item = q.get()
        if item is None:
            break
        outputs.append(pipeline.generate_frames(*item))
    worker.join()
    if failures:
        raise failures[0]
    return np.concatenate(outputs) if outputs else np.zeros(0)


@dataclass
class ProbeFailure:
    stage: str
    frame: int


@dataclass
class ProbeReport:
    passed: bool
    failures: list[ProbeFailure] = field(default_factory=list)

    def __bool__(self):
        return self.passed


def causality_probe(make_pipeline, x16: np.ndarray,
                    probe_frames: list[int]) -> ProbeReport:
    """Perturb the input beyond each stage's declared horizon and require the
    stage's earlier frames (and the emitted audio) to be bit-unchanged.

    ``make_pipeline`` must build identically seeded pipelines in causal mode.
    """
    base = make_pipeline()
    if not isinstance(base, StreamingPipeline):
        raise ModeError("causality probe requires a streaming (causal) pipeline")
    base.trace_enabled = True
    base_out = base.run_offline(x16)
    failures = []
    for f in probe_frames:
        horizon = (f + 1) * HOP_IN
        for cut, stages in ((horizon, ("content", "loudness", "identity")),
                            (horizon + base.future_context_samples(), ("pitch",))):
            if cut >= len(x16):
                continue
            xp = x16.copy()
            xp[cut:] += 0.5
            probe = make_pipeline()
            probe.trace_enabled = True
            probe_out = probe.run_offline(xp)
            for stage in stages:
                for i in range(min(f + 1, len(base.trace[stage]))):
                    a, b = base.trace[stage][i], probe.trace[stage][i]
                    same = (np.array_equal(a, b) if isinstance(a, np.ndarray)
                            else a == b)
                    if not same:
                        failures.append(ProbeFailure(stage, i))
                        break
            if stages == ("pitch",):
                # With every feature (and the causal generator) honoring the
                # horizon, emitted audio up to frame f must be unchanged too.
                upto = (f + 1) * HOP_OUT
                if not np.array_equal(base_out[:upto], probe_out[:upto]):
                    failures.append(ProbeFailure("generator", f))
    # De-duplicate stage reports.
    seen = set()
    unique = []
    for fail in failures:
        if fail.stage not in seen:
            seen.add(fail.stage)
            unique.append(fail)
    return ProbeReport(not unique, unique)


def measure_rtf(x, make_pipeline, *, chunk_ms: float = 20.0,
                runs: int = 5, warmup: int = 1) -> tuple[float, list[float]]:
    """Median wall-clock processing time over audio duration, after warmup."""
    samples = np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)
    duration = len(samples) / INPUT_RATE
    if duration < 1.0:
        raise ArgumentError("RTF measurement needs at least 1 s of audio")
    chunk = int(round(chunk_ms * INPUT_RATE / 1000.0))
    chunk -= chunk % HOP_IN
    times = []
    for i in range(runs + warmup):
        pipeline = make_pipeline()
        t0 = time.perf_counter()
        run_chunked(pipeline, samples, chunk)
        elapsed = time.perf_counter() - t0
        if i >= warmup:
            times.append(elapsed / duration)
    return float(np.median(times)), times


def build_budget(pipeline: StreamingPipeline, chunk_ms: float,
                 rtf: float | None = None) -> LatencyBudget:
    return LatencyBudget(pipeline.stage_budgets(), chunk_ms, rtf=rtf)


def horizon_is_tight(make_pipeline, x16: np.ndarray, output_index: int) -> tuple[bool, bool]:
    """Check the declared input horizon by perturbation.

    Returns (unchanged when perturbing at the declared horizon,
             changed when perturbing one frame earlier) -- both must be True
    for the declaration to be exact at frame granularity.
    """
    ref = make_pipeline()
    declared = ref.input_horizon(output_index)
    base = ref.run_offline(x16)

    def outputs_match(cut: int) -> bool:
        xp = x16.copy()
        xp[cut:] += 0.5
        out = make_pipeline().run_offline(xp)
        return np.array_equal(base[:output_index + 1], out[:output_index + 1])

    unchanged_at_declared = outputs_match(declared) if declared < len(x16) else True
    changed_below = (not outputs_match(declared - HOP_IN)) if declared - HOP_IN >= 0 else True
    return unchanged_at_declared, changed_below


class FaultyLookaheadPipeline(StreamingPipeline):
    """Fault injection: declares the standard 20 ms pitch lookahead but reads
    a 40 ms window entirely ahead of the frame edge."""

    def _pitch_window(self, edge: int) -> np.ndarray:
        return self._window(edge - pitchmod.HALF_WINDOW,
                            edge + pitchmod.HALF_WINDOW + pitchmod.HOP * 5)[
                                pitchmod.HOP * 5:]
