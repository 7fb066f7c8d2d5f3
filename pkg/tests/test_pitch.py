import numpy as np
import pytest

from regen.audio_io import Waveform
from regen.errors import ArgumentError
from regen.pitch import (HALF_WINDOW, LAG_MAX, LAG_MIN, PitchTrack,
                         StreamingPitchTracker, centered_windows, extract_pitch)

SR = 16000


def sine(freq, seconds=2.0, amp=0.7):
    t = np.arange(int(seconds * SR)) / SR
    return Waveform(amp * np.sin(2 * np.pi * freq * t), SR)


def interior_voiced(track, margin=10):
    sl = slice(margin, -margin)
    mask = track.voicing[sl].astype(bool)
    return track.f0_hz[sl][mask], mask


def autocorr_oracle_f0(window):
    """Brute-force per-frame oracle: strongest raw autocorrelation lag."""
    ac = np.array([np.dot(window[:HALF_WINDOW], window[k:k + HALF_WINDOW])
                   for k in range(LAG_MAX + 1)])
    k = LAG_MIN + int(np.argmax(ac[LAG_MIN:LAG_MAX + 1]))
    return SR / k


class TestPureTones:
    @pytest.mark.parametrize("freq,tol", [(220.0, 2.0), (440.0, 4.0)])
    def test_median_f0(self, freq, tol):
        track = extract_pitch(sine(freq))
        f0, mask = interior_voiced(track)
        assert np.median(f0) == pytest.approx(freq, abs=tol)
        assert mask.mean() >= 0.95

    def test_silence_is_unvoiced(self):
        track = extract_pitch(Waveform(np.zeros(SR), SR))
        assert track.voicing.sum() == 0
        assert np.all(track.f0_hz == 0)

    def test_white_noise_mostly_unvoiced(self):
        rng = np.random.default_rng(3)
        track = extract_pitch(Waveform(rng.standard_normal(SR) * 0.3, SR))
        assert track.voicing.mean() < 0.2

    def test_too_short_input_rejected(self):
        with pytest.raises(ArgumentError, match="40 ms"):
            extract_pitch(Waveform(np.zeros(500), SR))


class TestSweepAgainstOracle:
    def test_linear_sweep_matches_autocorrelation_oracle(self):
        t = np.arange(2 * SR) / SR
        inst = 100 + (400 - 100) * t / 2.0
        phase = 2 * np.pi * np.cumsum(inst) / SR
        w = Waveform(0.6 * np.sin(phase), SR)
        track = extract_pitch(w)
        windows = centered_windows(w.samples)
        errs = []
        for i in range(12, len(windows) - 12):
            if track.voicing[i]:
                oracle = autocorr_oracle_f0(windows[i])
                errs.append(abs(track.f0_hz[i] - oracle) / oracle)
        assert len(errs) > 300
        assert np.median(errs) < 0.05


class TestShiftEquivariance:
    def test_one_hop_shift_moves_track_one_frame(self):
        x = sine(220).samples
        base = extract_pitch(Waveform(x, SR))
        shifted = extract_pitch(Waveform(np.concatenate([np.zeros(64), x[:-64]]), SR))
        a = base.f0_hz[10:400]
        b = shifted.f0_hz[11:401]
        assert np.abs(a - b).max() < 1.0


class TestTrackInvariant:
    def test_f0_voicing_consistency_enforced(self):
        with pytest.raises(ArgumentError):
            PitchTrack(np.array([100.0, 0.0]), np.array([1, 1]))

    def test_voiced_range(self):
        for freq in (60, 220, 550):
            track = extract_pitch(sine(freq))
            voiced = track.f0_hz[track.voicing.astype(bool)]
            assert np.all(voiced >= 50.0)
            assert np.all(voiced <= 600.0)


class TestStreamingTracker:
    def test_greedy_matches_tone(self):
        w = sine(330)
        windows = centered_windows(w.samples)
        tracker = StreamingPitchTracker()
        f0s = [tracker.step(win)[0] for win in windows]
        mid = np.array(f0s[10:-10])
        assert np.median(mid[mid > 0]) == pytest.approx(330, abs=3)

    def test_reset_restores_initial_state(self):
        w = sine(330)
        windows = centered_windows(w.samples)
        tracker = StreamingPitchTracker()
        first = [tracker.step(win) for win in windows[:20]]
        tracker.reset()
        second = [tracker.step(win) for win in windows[:20]]
        assert first == second
