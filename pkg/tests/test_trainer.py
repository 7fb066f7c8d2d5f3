import json

import numpy as np
import pytest

from regen.audio_io import Waveform
from regen.checkpoint import load_tensors, save_tensors
from regen.discriminator import DiscriminatorConfig
from regen.errors import ArgumentError, CheckpointFormatError
from regen.generator import GeneratorConfig
from regen.trainer import Adam, ClipPair, TrainConfig, TrainState, train

GEN_CFG = GeneratorConfig(content_dim=40, channel_widths=(16,) * 7, z_dim=16)
DISC_CFG = DiscriminatorConfig(filters=(8, 16, 16, 16, 16, 16, 1))


def toy_clip(seconds=0.6, seed=7, noise=0.02):
    sr = 24000
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * sr)) / sr
    clip = sum(a * np.sin(2 * np.pi * 150.0 * k * t) for k, a in
               [(1, .5), (2, .3), (3, .2)]) + noise * rng.standard_normal(len(t))
    return ClipPair.from_waveform(Waveform(clip / np.abs(clip).max() * 0.8, sr))


def make_state(**over):
    cfg = dict(steps=5, batch=1, lr_g=1e-3, lr_d=2e-4, seed=5, clip_samples=8192)
    cfg.update(over)
    return TrainState(GEN_CFG, DISC_CFG, TrainConfig(**cfg))


@pytest.fixture(scope="module")
def clip():
    return toy_clip()


class TestTrainStep:
    def test_deterministic_replay(self, clip):
        logs = []
        for _ in range(2):
            state = make_state()
            reports = train(state, [clip], 3)
            logs.append([r.to_json() for r in reports])
        assert logs[0] == logs[1]

    def test_gradient_isolation_between_networks(self, clip):
        state = make_state()
        d_before = {k: t.data.copy() for k, t in state.discriminator.named_params().items()}
        g_before = {k: t.data.copy() for k, t in state.generator.named_params().items()}
        state.config = state.config.__class__(**{**state.config.__dict__,
                                                 "freeze_discriminator": True})
        state.train_step([clip.crop(0, clip.frames)])
        for k, t in state.discriminator.named_params().items():
            assert np.array_equal(t.data, d_before[k]), f"D param {k} moved"
        moved = any(not np.array_equal(t.data, g_before[k])
                    for k, t in state.generator.named_params().items())
        assert moved

    def test_lambda_zero_frozen_d_matches_no_discriminator_run(self, clip):
        a = make_state(lambda_adv=0.0, freeze_discriminator=True)
        b = make_state(lambda_adv=0.0, use_discriminator=False)
        ra = train(a, [clip], 3)
        rb = train(b, [clip], 3)
        assert [r.l_sed for r in ra] == [r.l_sed for r in rb]
        assert [r.l_spec for r in ra] == [r.l_spec for r in rb]

    def test_loss_report_fields_populated(self, clip):
        state = make_state()
        report = state.train_step([clip.crop(0, clip.frames)])
        assert set(report.l_spec_per_scale) == {2048, 1024, 512, 256, 128, 64}
        assert report.l_g == pytest.approx(report.l_sed + 4.0 * report.l_adv, rel=1e-6)
        assert report.l_d > 0

    def test_too_short_crop_for_discriminator_rejected(self, clip):
        state = make_state()
        with pytest.raises(ArgumentError, match="minimum length"):
            state.train_step([clip.crop(0, 20)])

    def test_bad_learning_rate_rejected(self):
        with pytest.raises(ArgumentError):
            TrainConfig(lr_g=0.5).validate()


class TestCheckpointContainer:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        tensors = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3),
                   "b": np.float32([1.5])}
        meta = {"hello": [1, 2, 3]}
        p1, p2 = tmp_path / "c1.rgnc", tmp_path / "c2.rgnc"
        save_tensors(p1, tensors, meta)
        loaded, meta2 = load_tensors(p1)
        save_tensors(p2, loaded, meta2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_checkpoint_rejected(self, tmp_path):
        p = tmp_path / "c.rgnc"
        save_tensors(p, {"w": np.zeros((4, 4), np.float32)}, {})
        data = p.read_bytes()
        p.write_bytes(data[:-16])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_tensors(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "c.rgnc"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_tensors(p)

    def test_version_mismatch_rejected(self, tmp_path):
        import struct

        p = tmp_path / "c.rgnc"
        save_tensors(p, {}, {})
        data = bytearray(p.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        p.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError, match="version"):
            load_tensors(p)

    def test_non_float32_rejected(self, tmp_path):
        with pytest.raises(CheckpointFormatError, match="float32"):
            save_tensors(tmp_path / "c.rgnc", {"w": np.zeros(3)}, {})


class TestTrainStatePersistence:
    def test_resume_matches_unbroken_run(self, tmp_path, clip):
        full = make_state()
        full_reports = train(full, [clip], 5)

        broken = make_state()
        train(broken, [clip], 2)
        path = tmp_path / "mid.rgnc"
        broken.save(path)
        resumed = TrainState.load(path)
        tail = train(resumed, [clip], 3)
        want = [r.to_json() for r in full_reports[2:]]
        got = [r.to_json() for r in tail]
        assert want == got

    def test_save_load_save_byte_identical(self, tmp_path, clip):
        state = make_state()
        train(state, [clip], 1)
        p1, p2 = tmp_path / "a.rgnc", tmp_path / "b.rgnc"
        state.save(p1)
        TrainState.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_zero_effective_step_leaves_params_unchanged(self, clip):
        # freezing both networks' optimizers: frozen D skips its update and a
        # lambda=0 objective with lr ~ 0 leaves G numerically in place
        state = make_state(lr_g=1e-30, lambda_adv=0.0, freeze_discriminator=True)
        g_before = {k: t.data.copy() for k, t in state.generator.named_params().items()}
        state.train_step([clip.crop(0, clip.frames)])
        for k, t in state.generator.named_params().items():
            np.testing.assert_allclose(t.data, g_before[k], atol=1e-20)


class TestAdam:
    def test_matches_reference_implementation(self):
        from regen.autodiff import Tensor

        rng = np.random.default_rng(0)
        p = Tensor(rng.standard_normal(5).astype(np.float32), requires_grad=True)
        start = p.data.copy()
        grads = [rng.standard_normal(5).astype(np.float32) for _ in range(4)]
        opt = Adam()
        for g in grads:
            p.grad = g.copy()
            opt.step({"p": p}, 1e-3)

        # reference: textbook update in float64, tolerant comparison
        m = np.zeros(5)
        v = np.zeros(5)
        x = start.astype(np.float64).copy()
        for t, g in enumerate(grads, start=1):
            g = g.astype(np.float64)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, atol=1e-6)

    def test_nonfinite_gradient_names_parameter(self):
        from regen.autodiff import Tensor
        from regen.errors import NumericError

        p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        p.grad = np.array([1.0, np.nan, 0.0], dtype=np.float32)
        with pytest.raises(NumericError, match="my_param"):
            Adam().step({"my_param": p}, 1e-3)
