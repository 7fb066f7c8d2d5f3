import numpy as np
import pytest

from regen.audio_io import FrameGrid, Waveform, read_wav, resample, write_wav
from regen.errors import ArgumentError, UnsupportedFormatError, WavFormatError


def sine(freq, seconds, rate, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


class TestReadWriteWav:
    def test_silence_roundtrip_16bit(self, tmp_path):
        w = Waveform(np.zeros(16000), 16000)
        path = tmp_path / "s.wav"
        write_wav(w, path, "16")
        r = read_wav(path)
        assert r.sample_rate_hz == 16000
        assert len(r) == 16000
        assert np.all(r.samples == 0)

    def test_full_scale_square_wave_scaling(self, tmp_path):
        # int16 extremes map into [-1, 1] within one quantization step
        square = np.where(np.arange(1000) % 2 == 0, 32767 / 32768.0, -1.0)
        path = tmp_path / "sq.wav"
        write_wav(Waveform(square, 16000), path, "16")
        r = read_wav(path)
        assert r.samples.min() >= -1.0
        assert r.samples.max() <= 1.0
        assert np.abs(r.samples - square).max() <= 2 ** -15

    def test_stereo_averages_to_mono(self, tmp_path):
        import struct

        # hand-build a 2-channel PCM16 file with channels +0.5 / -0.5
        n = 100
        left = np.full(n, int(0.5 * 32768), dtype="<i2")
        right = np.full(n, int(-0.5 * 32768), dtype="<i2")
        inter = np.empty(2 * n, dtype="<i2")
        inter[0::2] = left
        inter[1::2] = right
        payload = inter.tobytes()
        header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE",
                             b"fmt ", 16, 1, 2, 16000, 16000 * 4, 4, 16,
                             b"data", len(payload))
        path = tmp_path / "st.wav"
        path.write_bytes(header + payload)
        r = read_wav(path)
        assert len(r) == n
        assert np.abs(r.samples).max() < 2 ** -14

    def test_float32_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        w = Waveform(rng.uniform(-1, 1, 5000).astype(np.float32).astype(np.float64), 24000)
        path = tmp_path / "f.wav"
        write_wav(w, path, "32f")
        r = read_wav(path)
        assert np.array_equal(r.samples, w.samples)

    def test_pcm16_quantization_bound(self, tmp_path):
        w = Waveform(np.full(64, 0.25), 16000)
        path = tmp_path / "q.wav"
        write_wav(w, path, "16")
        assert np.abs(read_wav(path).samples - 0.25).max() <= 2 ** -15

    def test_empty_waveform_roundtrip(self, tmp_path):
        path = tmp_path / "e.wav"
        write_wav(Waveform(np.zeros(0), 16000), path, "32f")
        r = read_wav(path)
        assert len(r) == 0
        assert r.sample_rate_hz == 16000

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"NOTAWAVEFILE" + b"\x00" * 64)
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "trunc.wav"
        write_wav(sine(440, 0.1, 16000), path, "16")
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_unsupported_codec_rejected(self, tmp_path):
        import struct

        header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 40, b"WAVE",
                             b"fmt ", 16, 6, 1, 8000, 8000, 1, 8,  # ALAW
                             b"data", 4)
        path = tmp_path / "alaw.wav"
        path.write_bytes(header + b"\x00\x00\x00\x00")
        with pytest.raises(UnsupportedFormatError):
            read_wav(path)

    def test_bad_bit_depth_argument(self, tmp_path):
        with pytest.raises(ArgumentError):
            write_wav(sine(440, 0.01, 16000), tmp_path / "x.wav", "24")


class TestResample:
    def test_identity_is_bit_exact(self):
        w = sine(1000, 1.0, 16000)
        r = resample(w, 16000)
        assert np.array_equal(r.samples, w.samples)

    def test_length_16k_to_24k(self):
        w = Waveform(np.zeros(16000), 16000)
        assert len(resample(w, 24000)) == 24000

    def test_sine_16k_to_24k_matches_closed_form(self):
        w = sine(1000, 1.0, 16000)
        r = resample(w, 24000)
        t24 = np.arange(len(r)) / 24000
        ref = np.sin(2 * np.pi * 1000 * t24)
        assert np.abs(r.samples[100:-100] - ref[100:-100]).max() < 1e-3

    def test_downsample_then_upsample_roundtrip(self):
        # band-limited input: up 2x then back down recovers the signal
        rng = np.random.default_rng(1)
        t = np.arange(8000) / 16000
        w = Waveform(sum(np.sin(2 * np.pi * f * t + p) / 3
                         for f, p in zip((500, 1700, 3100), rng.uniform(0, 6, 3))), 16000)
        up = resample(w, 32000)
        back = resample(up, 16000)
        assert np.abs(back.samples[64:-64] - w.samples[64:-64]).max() < 1e-3

    def test_zero_rate_rejected(self):
        with pytest.raises(ArgumentError):
            resample(sine(440, 0.01, 16000), 0)

    def test_empty_input(self):
        r = resample(Waveform(np.zeros(0), 16000), 24000)
        assert len(r) == 0
        assert r.sample_rate_hz == 24000


class TestFrameGrid:
    def test_canonical_16k_grid(self):
        g = FrameGrid.for_rate(16000)
        assert g.hop_samples == 64
        assert g.num_frames(16000) == 250

    def test_indivisible_rate_rejected(self):
        with pytest.raises(ArgumentError):
            FrameGrid.for_rate(22050)

    def test_frame_count_is_ceil(self):
        g = FrameGrid.for_rate(16000)
        assert g.num_frames(65) == 2
        assert g.num_frames(0) == 0
