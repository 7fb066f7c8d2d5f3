"""Pitch tracking: normalized cross-correlation candidates with dynamic
programming smoothing.

A simplified tracker in the RAPT family: per-frame NCCF peaks become voiced
candidates, an unvoiced state competes at a fixed threshold, and a Viterbi
pass penalizes octave jumps and voicing flips. Frame ``i`` is anchored at
``(i + 1) * hop`` with a +-20 ms correlation window around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import FRAME_RATE, INPUT_RATE
from .errors import ArgumentError

F0_MIN = 50.0
F0_MAX = 600.0
HOP = INPUT_RATE // FRAME_RATE  # 64
HALF_WINDOW = 320               # 20 ms correlation span and 20 ms lookahead
WINDOW = 2 * HALF_WINDOW
LAG_MIN = int(np.ceil(INPUT_RATE / F0_MAX))   # 27
LAG_MAX = int(np.floor(INPUT_RATE / F0_MIN))  # 320

VOICING_THRESHOLD = 0.5
CANDIDATE_FLOOR = 0.30
MAX_CANDIDATES = 5
OCTAVE_BIAS = 0.01       # small preference for the shorter lag
OCTAVE_JUMP_COST = 1.0   # per-octave transition penalty
VOICING_FLIP_COST = 0.3


@dataclass
class PitchTrack:
    f0_hz: np.ndarray
    voicing: np.ndarray
    frame_rate_hz: int = FRAME_RATE

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voicing = np.asarray(self.voicing, dtype=np.int64)
        unvoiced_zero = np.all((self.f0_hz == 0) == (self.voicing == 0))
        if not unvoiced_zero:
            raise ArgumentError("f0 must be 0 exactly on unvoiced frames")


@dataclass
class PitchCandidate:
    f0_hz: float
    strength: float  # NCCF peak plus the short-lag bias


def centered_windows(x: np.ndarray) -> np.ndarray:
    """[frames, 640] windows centered on each frame's right edge, zero padded."""
    n = -(-len(x) // HOP) if len(x) else 0
    if n == 0:
        return np.zeros((0, WINDOW))
    padded = np.concatenate([
        np.zeros(HALF_WINDOW), x, np.zeros(max(0, n * HOP + HALF_WINDOW - len(x)))])
    starts = (np.arange(n) + 1) * HOP  # == edge - HALF_WINDOW in padded coordinates
    return padded[starts[:, None] + np.arange(WINDOW)[None, :]]


def nccf_from_windows(windows: np.ndarray) -> np.ndarray:
    """NCCF values [frames, LAG_MAX + 1]; lag k correlates the trailing
    half-window against the half-window shifted k samples forward."""
    base = windows[:, :HALF_WINDOW]
    nfft = 2048
    spec_w = np.fft.rfft(windows, nfft, axis=1)
    spec_b = np.fft.rfft(base, nfft, axis=1)
    corr = np.fft.irfft(np.conj(spec_b) * spec_w, nfft, axis=1)[:, :LAG_MAX + 1]

    csum = np.concatenate(
        [np.zeros((len(windows), 1)), np.cumsum(windows * windows, axis=1)], axis=1)
    e0 = csum[:, HALF_WINDOW] - csum[:, 0]
    lags = np.arange(LAG_MAX + 1)
    ek = csum[:, lags + HALF_WINDOW] - csum[:, lags]
    return corr / np.sqrt(np.maximum(e0[:, None] * ek, 1e-20))


def candidates_from_nccf(row: np.ndarray, energy_ok: bool) -> list[PitchCandidate]:
    """Voiced candidates from one frame's NCCF row (parabolic-interpolated peaks)."""
    if not energy_ok:
        return []
    seg = row[LAG_MIN:LAG_MAX + 1]
    is_peak = (seg[1:-1] >= seg[:-2]) & (seg[1:-1] > seg[2:]) & (seg[1:-1] > CANDIDATE_FLOOR)
    peaks = np.nonzero(is_peak)[0] + LAG_MIN + 1
    if len(peaks) == 0:
        return []
    out = []
    for k in peaks:
        c_m, c_0, c_p = row[k - 1], row[k], row[k + 1] if k + 1 < len(row) else row[k]
        denom = c_m - 2 * c_0 + c_p
        delta = 0.5 * (c_m - c_p) / denom if abs(denom) > 1e-12 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
        lag = k + delta
        strength = c_0 - 0.25 * (c_m - c_p) * delta
        f0 = float(np.clip(INPUT_RATE / lag, F0_MIN, F0_MAX))
        out.append(PitchCandidate(f0, strength + OCTAVE_BIAS * np.log2(f0 / F0_MIN)))
    # Rank by the biased strength so period multiples of a strong lag cannot
    # crowd the true candidate out of the shortlist.
    out.sort(key=lambda c: c.strength, reverse=True)
    return out[:MAX_CANDIDATES]


def frame_candidates(x: np.ndarray) -> list[list[PitchCandidate]]:
    windows = centered_windows(x)
    if len(windows) == 0:
        return []
    nccf = nccf_from_windows(windows)
    energies = (windows[:, :HALF_WINDOW] ** 2).sum(axis=1)
    return [candidates_from_nccf(nccf[i], energies[i] > 1e-9)
            for i in range(len(windows))]


def transition_cost(f_prev: float, f_cur: float) -> float:
    """DP transition penalty; 0 Hz encodes the unvoiced state."""
    if f_prev == 0.0 and f_cur == 0.0:
        return 0.0
    if (f_prev == 0.0) != (f_cur == 0.0):
        return VOICING_FLIP_COST
    return OCTAVE_JUMP_COST * abs(np.log2(f_prev / f_cur))


def viterbi_smooth(cands: list[list[PitchCandidate]]) -> tuple[np.ndarray, np.ndarray]:
    """Best voicing/f0 path; each frame's states are its candidates plus unvoiced."""
    states = [c + [PitchCandidate(0.0, VOICING_THRESHOLD)] for c in cands]
    n = len(states)
    scores = [s.strength for s in states[0]]
    parents: list[list[int]] = [[-1] * len(states[0])]
    for t in range(1, n):
        new_scores, new_parents = [], []
        for s in states[t]:
            best, arg = -np.inf, 0
            for j, prev in enumerate(states[t - 1]):
                val = scores[j] - transition_cost(prev.f0_hz, s.f0_hz)
                if val > best:
                    best, arg = val, j
            new_scores.append(best + s.strength)
            new_parents.append(arg)
        scores = new_scores
        parents.append(new_parents)

    f0 = np.zeros(n)
    voicing = np.zeros(n, dtype=np.int64)
    j = int(np.argmax(scores))
    for t in range(n - 1, -1, -1):
        choice = states[t][j]
        f0[t] = choice.f0_hz
        voicing[t] = 1 if choice.f0_hz > 0 else 0
        j = parents[t][j]
    return f0, voicing


def extract_pitch(x) -> PitchTrack:
    """Track F0 on the 250 Hz grid with full-utterance Viterbi smoothing."""
    from .audio_io import Waveform

    if isinstance(x, Waveform):
        if x.sample_rate_hz != INPUT_RATE:
            raise ArgumentError(f"pitch expects {INPUT_RATE} Hz input, got {x.sample_rate_hz}")
        samples = x.samples
    else:
        samples = np.asarray(x, dtype=np.float64)
    if len(samples) < WINDOW:
        raise ArgumentError(
            f"pitch needs at least one 40 ms analysis window ({WINDOW} samples), "
            f"got {len(samples)}")
    f0, voicing = viterbi_smooth(frame_candidates(samples))
    return PitchTrack(f0, voicing)


class StreamingPitchTracker:
    """Greedy causal variant: each frame is decided immediately from its
    candidates and the previous decision (20 ms declared lookahead)."""

    def __init__(self):
        self.prev_f0 = 0.0

    def step(self, window: np.ndarray) -> tuple[float, int]:
        energy_ok = float((window[:HALF_WINDOW] ** 2).sum()) > 1e-9
        nccf = nccf_from_windows(window[None, :])[0]
        return self.step_from_nccf(nccf, energy_ok)

    def step_from_nccf(self, nccf_row: np.ndarray, energy_ok: bool) -> tuple[float, int]:
        cands = candidates_from_nccf(nccf_row, energy_ok)
        cands = cands + [PitchCandidate(0.0, VOICING_THRESHOLD)]
        best = max(cands, key=lambda c: c.strength - transition_cost(self.prev_f0, c.f0_hz))
        self.prev_f0 = best.f0_hz
        return best.f0_hz, 1 if best.f0_hz > 0 else 0

    def reset(self):
        self.prev_f0 = 0.0
