import numpy as np
import pytest

from regen.audio_io import Waveform
from regen.errors import ArgumentError, ProviderError
from regen.features import (ConditioningTrack, FeatureEncoder, IdentityEnhancer,
                            IdentityVector, LogMelContentStub, LtasIdentityStub,
                            SpectralGateEnhancer, assemble_conditioning,
                            extract_content, extract_identity, extract_loudness,
                            pre_enhance, read_features, scale_loudness,
                            write_features)
from regen.pitch import PitchTrack, extract_pitch


def sine(freq, seconds=2.0, amp=1.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


class TestPreEnhance:
    def test_identity_passthrough_bit_exact(self):
        w = sine(300)
        out = pre_enhance(w)
        assert np.array_equal(out.samples, w.samples)

    def test_empty_waveform(self):
        out = pre_enhance(Waveform(np.zeros(0), 16000))
        assert len(out) == 0

    def test_spectral_gate_preserves_clean_sine_rms(self):
        w = sine(500, amp=0.7)
        out = pre_enhance(w, SpectralGateEnhancer())
        rms_in = np.sqrt(np.mean(w.samples[800:-800] ** 2))
        rms_out = np.sqrt(np.mean(out.samples[800:-800] ** 2))
        assert abs(rms_out - rms_in) / rms_in < 0.05

    def test_provider_failure_carries_stage_tag(self):
        class Exploding(IdentityEnhancer):
            name = "exploding"

            def process(self, x):
                raise RuntimeError("boom")

        with pytest.raises(ProviderError, match=r"\[exploding\]"):
            pre_enhance(sine(300), Exploding())


class TestLoudness:
    def test_silence_hits_floor(self):
        track = extract_loudness(Waveform(np.zeros(16000), 16000))
        assert np.all(track.dba == -80.0)

    def test_gain_scaling_6db(self):
        full = extract_loudness(sine(1000, amp=1.0)).dba
        half = extract_loudness(sine(1000, amp=0.5)).dba
        diffs = (full - half)[10:-10]
        assert np.median(diffs) == pytest.approx(6.02, abs=0.1)

    def test_100hz_reads_about_19db_below_1khz(self):
        a1k = np.median(extract_loudness(sine(1000)).dba[10:-10])
        a100 = np.median(extract_loudness(sine(100)).dba[10:-10])
        assert a1k - a100 == pytest.approx(19.1, abs=0.5)

    def test_gain_equivariance_property(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(16000) * 0.2
        for alpha in (0.5, 1.5, 2.0):
            base = extract_loudness(Waveform(x, 16000)).dba
            scaled = extract_loudness(Waveform(alpha * x, 16000)).dba
            above = base > -79.0
            np.testing.assert_allclose(
                (scaled - base)[above], 20 * np.log10(alpha), atol=0.1)

    def test_empty_input_gives_empty_track(self):
        assert len(extract_loudness(Waveform(np.zeros(0), 16000)).dba) == 0

    def test_range_invariant(self):
        track = extract_loudness(sine(1000, amp=1.0))
        assert np.all(track.dba >= -80.0)
        assert np.all(track.dba <= 20.0)


class TestContent:
    def test_silence_normalizes_to_zero(self):
        track = extract_content(Waveform(np.zeros(16000), 16000))
        assert np.abs(track.values).max() == 0.0

    def test_two_seconds_gives_500_frames(self):
        track = extract_content(sine(440, seconds=2.0))
        assert track.values.shape == (500, 40)

    def test_1khz_band_has_max_mean(self):
        from regen.dsp import mel_filter_weights

        track = extract_content(sine(1000, seconds=2.0))
        means = track.values.mean(axis=0)
        weights = mel_filter_weights(512, 16000, 40, 0.0, 8000.0)
        expected_band = int(weights[round(1000 * 512 / 16000)].argmax())
        assert int(means.argmax()) == expected_band


class TestIdentity:
    def test_deterministic(self):
        w = sine(250)
        a = extract_identity(w)
        b = extract_identity(w)
        assert np.array_equal(a.values, b.values)

    def test_unit_norm(self):
        for freq in (150, 450, 2000):
            v = extract_identity(sine(freq))
            assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-6)

    def test_distinct_sources_are_not_aligned(self):
        rng = np.random.default_rng(9)
        noise = Waveform(rng.standard_normal(32000) * 0.3, 16000)
        t = np.arange(32000) / 16000
        vowel = Waveform(sum(np.sin(2 * np.pi * 200 * k * t) / k for k in (1, 2, 3, 4)) / 2,
                         16000)
        cos = float(extract_identity(noise).values @ extract_identity(vowel).values)
        assert cos < 0.9

    def test_too_short_input_rejected(self):
        with pytest.raises(ArgumentError, match="0.5 s"):
            extract_identity(sine(440, seconds=0.3))


class TestAssemble:
    def _tracks(self, frames=500):
        content = extract_content(sine(440, seconds=2.0))
        pitch = extract_pitch(sine(220, seconds=2.0))
        loud = extract_loudness(sine(440, seconds=2.0))
        ident = extract_identity(sine(440, seconds=2.0))
        return content, pitch, loud, ident

    def test_width_is_content_plus_three(self):
        track = assemble_conditioning(*self._tracks())
        assert track.frame_matrix.shape[1] == 43
        assert track.content_dim == 40

    def test_trim_to_shortest(self):
        content, pitch, loud, ident = self._tracks()
        from regen.features import ContentTrack

        short = ContentTrack(content.values[:498])
        track = assemble_conditioning(short, pitch, loud, ident)
        assert track.num_frames == 498

    def test_unvoiced_frames_have_zero_f0_and_voicing(self):
        content, _, loud, ident = self._tracks()
        pitch = PitchTrack(np.zeros(500), np.zeros(500, dtype=np.int64))
        track = assemble_conditioning(content, pitch, loud, ident)
        assert np.all(track.frame_matrix[:, 40] == 0)
        assert np.all(track.frame_matrix[:, 41] == 0)

    def test_voiced_f0_is_log2_scaled(self):
        content, pitch, loud, ident = self._tracks()
        track = assemble_conditioning(content, pitch, loud, ident)
        voiced = track.frame_matrix[:, 41] > 0
        f0_col = track.frame_matrix[voiced, 40]
        np.testing.assert_allclose(f0_col, np.log2(pitch.f0_hz[:500][voiced] / 50.0))

    def test_loudness_scaled_to_unit_interval(self):
        assert scale_loudness(np.array([-80.0]))[0] == -1.0
        assert scale_loudness(np.array([-30.0]))[0] == 0.0
        assert scale_loudness(np.array([20.0]))[0] == 1.0

    def test_empty_intersection_rejected(self):
        content, pitch, loud, ident = self._tracks()
        from regen.features import ContentTrack

        with pytest.raises(ArgumentError):
            assemble_conditioning(ContentTrack(np.zeros((0, 40))), pitch, loud, ident)

    def test_column_order_is_stable(self):
        # [content | f0 | voicing | loudness]
        content, pitch, loud, ident = self._tracks()
        track = assemble_conditioning(content, pitch, loud, ident)
        n = track.num_frames
        np.testing.assert_allclose(track.frame_matrix[:, :40], content.values[:n])
        np.testing.assert_allclose(track.frame_matrix[:, 42],
                                   scale_loudness(loud.dba[:n]))


class TestFeatureDump:
    def test_roundtrip(self, tmp_path):
        track = FeatureEncoder().encode(sine(220, seconds=1.0))
        path = tmp_path / "f.rgnf"
        write_features(track, path)
        back = read_features(path)
        assert back.num_frames == track.num_frames
        assert back.frame_rate_hz == 250
        np.testing.assert_allclose(back.frame_matrix,
                                   track.frame_matrix.astype(np.float32), atol=0)
        np.testing.assert_allclose(back.identity.values, track.identity.values,
                                   atol=1e-7)

    def test_truncated_dump_rejected(self, tmp_path):
        from regen.errors import CheckpointFormatError

        track = FeatureEncoder().encode(sine(220, seconds=1.0))
        path = tmp_path / "f.rgnf"
        write_features(track, path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(CheckpointFormatError):
            read_features(path)

    def test_bad_magic_rejected(self, tmp_path):
        from regen.errors import CheckpointFormatError

        path = tmp_path / "bad.rgnf"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError):
            read_features(path)
