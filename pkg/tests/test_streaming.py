import os

import numpy as np
import pytest

from regen.errors import ArgumentError, ModeError
from regen.generator import Generator, GeneratorConfig
from regen.streaming import (FaultyLookaheadPipeline, StreamingPipeline,
                             build_budget, causality_probe, horizon_is_tight,
                             measure_rtf, run_chunked, run_chunked_parallel)

CFG = GeneratorConfig(content_dim=12, channel_widths=(12,) * 7, z_dim=8)
SR = 16000


def harmonic_input(seconds=1.5, f0=180.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    x = (0.5 * np.sin(2 * np.pi * f0 * t) + 0.2 * np.sin(2 * np.pi * 2 * f0 * t)
         + 0.01 * rng.standard_normal(len(t)))
    return x


def make_pipeline(trace=False):
    return StreamingPipeline(Generator(CFG, seed=2), seed=9, content_dim=12,
                             trace=trace)


@pytest.fixture(scope="module")
def signal():
    return harmonic_input()


class TestStreamingEqualsOffline:
    def test_20ms_chunks_match_offline(self, signal):
        offline = make_pipeline().run_offline(signal)
        chunked = run_chunked(make_pipeline(), signal, 320)
        assert len(offline) == len(chunked) == (len(signal) // 64) * 96
        assert np.abs(offline - chunked).max() < 1e-5

    @pytest.mark.parametrize("chunk", [128, 192, 640])  # 8, 12, 40 ms
    def test_chunk_size_invariance(self, signal, chunk):
        offline = make_pipeline().run_offline(signal)
        chunked = run_chunked(make_pipeline(), signal, chunk)
        assert np.abs(offline - chunked).max() < 1e-5

    def test_zero_length_chunk_is_identity(self):
        p = make_pipeline()
        out = p.process_chunk(np.zeros(0))
        assert len(out) == 0

    def test_non_frame_multiple_chunk_rejected(self):
        with pytest.raises(ArgumentError, match="multiple"):
            make_pipeline().process_chunk(np.zeros(100))

    def test_first_output_respects_declared_latency(self, signal):
        p = make_pipeline()
        consumed = 0
        emitted_at = None
        for start in range(0, len(signal) - 320, 320):
            consumed += 320
            out = p.process_chunk(signal[start:start + 320])
            if len(out):
                emitted_at = consumed
                break
        # first frame needs its 64 samples plus the declared lookahead
        assert emitted_at is not None
        assert emitted_at >= 64 + p.future_context_samples()

    def test_flush_emits_remaining_frames(self, signal):
        p = make_pipeline()
        total = 0
        for start in range(0, len(signal), 320):
            total += len(p.process_chunk(signal[start:start + 320]))
        total += len(p.flush())
        assert total == (len(signal) // 64) * 96

    def test_closed_pipeline_rejects_chunks(self, signal):
        p = make_pipeline()
        p.process_chunk(signal[:320])
        p.flush()
        with pytest.raises(ModeError):
            p.process_chunk(signal[:320])


class TestParallelExecution:
    def test_parallel_matches_serial_exactly(self, signal):
        serial = run_chunked(make_pipeline(), signal, 320)
        parallel = run_chunked_parallel(make_pipeline(), signal, 320)
        assert np.array_equal(serial, parallel)

    def test_thread_cap_falls_back_to_serial(self, signal, monkeypatch):
        monkeypatch.setenv("REGEN_NUM_THREADS", "1")
        serial = run_chunked(make_pipeline(), signal, 320)
        capped = run_chunked_parallel(make_pipeline(), signal, 320)
        assert np.array_equal(serial, capped)


class TestCausality:
    def test_probe_passes_on_honest_pipeline(self, signal):
        report = causality_probe(make_pipeline, signal, [30, 90, 170])
        assert report.passed, report.failures

    def test_probe_names_faulty_stage(self, signal):
        def make_faulty():
            return FaultyLookaheadPipeline(Generator(CFG, seed=2), seed=9,
                                           content_dim=12)

        report = causality_probe(make_faulty, signal, [30, 90])
        assert not report.passed
        assert "pitch" in {f.stage for f in report.failures}

    def test_probe_refuses_non_streaming_object(self, signal):
        with pytest.raises(ModeError):
            causality_probe(lambda: object(), signal, [10])

    def test_declared_horizon_is_tight(self):
        # low fundamental exercises the full 20 ms correlation lookahead
        t = np.arange(int(1.2 * SR)) / SR
        x = 0.6 * np.sin(2 * np.pi * 52 * t) + 0.15 * np.sin(2 * np.pi * 104 * t)
        upper_ok, lower_tight = horizon_is_tight(make_pipeline, x, 5000)
        assert upper_ok
        assert lower_tight


class TestBudget:
    def test_stage_fields_and_totals(self, signal):
        p = make_pipeline()
        run_chunked(p, signal, 320)
        budget = build_budget(p, 20.0)
        names = [s.name for s in budget.stages]
        assert names == ["pre_enhancer", "content", "loudness", "pitch",
                         "identity", "generator"]
        assert budget.future_context_ms == pytest.approx(20.0)
        assert budget.total_latency_ms == pytest.approx(
            20.0 + 4.0 + 20.0 + budget.compute_ms)
        for stage in budget.stages:
            if stage.bounded_past:
                assert stage.receptive_field_ms <= 40.0

    def test_json_report_shape(self, signal):
        import json

        p = make_pipeline()
        run_chunked(p, signal, 320)
        data = json.loads(build_budget(p, 20.0, rtf=0.5).to_json())
        assert data["rtf"] == 0.5
        assert len(data["stages"]) == 6
        assert data["total_latency_ms"] > 0


class TestRtf:
    def test_sleep_injected_mock_stage_reads_two(self):
        import time as time_mod

        class MockSleepPipeline(StreamingPipeline):
            # stands in for a stage that costs exactly 2x real time
            # (deadline spin: time.sleep overshoots by ~15 ms on coarse timers)
            def process_chunk(self, chunk):
                deadline = time_mod.perf_counter() + 2.0 * len(chunk) / SR
                while time_mod.perf_counter() < deadline:
                    pass
                return np.zeros((len(chunk) // 64) * 96)

            def flush(self):
                return np.zeros(0)

        x = harmonic_input(seconds=1.0)

        def make_sleepy():
            return MockSleepPipeline(Generator(CFG, seed=2), seed=9, content_dim=12)

        rtf, _ = measure_rtf(x, make_sleepy, chunk_ms=40.0, runs=3, warmup=0)
        assert rtf == pytest.approx(2.0, abs=0.1)

    def test_toy_pipeline_is_faster_than_realtime(self, signal):
        rtf, times = measure_rtf(signal, make_pipeline, chunk_ms=20.0, runs=3)
        assert rtf < 1.0
        assert len(times) == 3

    def test_short_input_rejected(self):
        with pytest.raises(ArgumentError):
            measure_rtf(np.zeros(1000), make_pipeline)
