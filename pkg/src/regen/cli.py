"""Command-line entry point.

Subcommands: regenerate, features, train-toy, bench, grad-check, fdsd,
inspect-checkpoint. Options come from an optional JSON config file overridden
by flags; all randomness flows from --seed; file outputs are written
atomically. Exit codes: 0 success, 1 usage error, 2 processing error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import report as report_mod
from ._fs import atomic_write_bytes, atomic_write_text
from .audio_io import INPUT_RATE, OUTPUT_RATE, Waveform, read_wav, resample, write_wav
from .discriminator import DiscriminatorConfig
from .errors import ArgumentError, RegenError
from .features import (FeatureEncoder, IdentityEnhancer, LogMelContentStub,
                       LtasIdentityStub, SpectralGateEnhancer, write_features)
from .generator import Generator, GeneratorConfig, receptive_field
from .trainer import ClipPair, TrainConfig, TrainState, train

CONFIG_VERSION = 1

TOY_WIDTHS = (32, 32, 32, 32, 32, 32, 32)
TOY_DISC_FILTERS = (16, 32, 64, 64, 64, 32, 1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class PipelineConfig:
    """Cross-module configuration with load-time shape validation."""

    seed: int = 0
    pre_enhancer: str = "identity"
    content_provider: str = "logmel"
    identity_provider: str = "ltas"
    generator: GeneratorConfig = field(default_factory=lambda: GeneratorConfig(
        channel_widths=TOY_WIDTHS, z_dim=32))
    discriminator: DiscriminatorConfig = field(default_factory=lambda: DiscriminatorConfig(
        filters=TOY_DISC_FILTERS))
    train: TrainConfig = field(default_factory=TrainConfig)
    chunk_ms: float = 20.0

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        raw = {}
        if path:
            with open(path) as fh:
                raw = json.load(fh)
            version = raw.pop("config_version", CONFIG_VERSION)
            if version != CONFIG_VERSION:
                raise ArgumentError(f"unsupported config_version {version}")
        for key, value in (overrides or {}).items():
            if value is not None:
                raw[key] = value
        cfg = cls()
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        cfg.pre_enhancer = raw.get("pre_enhancer", cfg.pre_enhancer)
        cfg.content_provider = raw.get("content_provider", cfg.content_provider)
        cfg.identity_provider = raw.get("identity_provider", cfg.identity_provider)
        if "generator" in raw:
            base = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in raw["generator"].items()}
            cfg.generator = GeneratorConfig(**base)
        if "discriminator" in raw:
            base = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in raw["discriminator"].items()}
            cfg.discriminator = DiscriminatorConfig(**base)
        if "train" in raw:
            t = dict(raw["train"])
            if "lambda" in t:
                t["lambda_adv"] = t.pop("lambda")
            if "betas" in t:
                t["betas"] = tuple(t["betas"])
            cfg.train = TrainConfig(**t)
        if "chunk_ms" in raw:
            cfg.chunk_ms = float(raw["chunk_ms"])
        cfg.validate()
        return cfg

    def validate(self):
        self.generator.validate()
        self.discriminator.validate()
        if self.pre_enhancer not in ("identity", "spectral_gate"):
            raise ArgumentError(f"unknown pre_enhancer {self.pre_enhancer!r}")
        if self.content_provider != "logmel":
            raise ArgumentError(f"unknown content provider {self.content_provider!r}")
        if self.identity_provider != "ltas":
            raise ArgumentError(f"unknown identity provider {self.identity_provider!r}")
        return self

    def encoder(self) -> FeatureEncoder:
        enhancer = (IdentityEnhancer() if self.pre_enhancer == "identity"
                    else SpectralGateEnhancer())
        return FeatureEncoder(enhancer=enhancer,
                              content=LogMelContentStub(self.generator.content_dim),
                              identity=LtasIdentityStub(self.generator.content_dim))


def _load_generator(config: PipelineConfig, checkpoint_path=None) -> Generator:
    if checkpoint_path:
        state = TrainState.load(checkpoint_path)
        return state.generator
    return Generator(config.generator, seed=config.seed)


def cmd_regenerate(args) -> int:
    config = PipelineConfig.load(args.config, {"seed": args.seed})
    gen = _load_generator(config, args.checkpoint)
    w = read_wav(args.infile)
    x16 = resample(w, INPUT_RATE)

    if args.stream:
        from .streaming import StreamingPipeline, build_budget, run_chunked

        pipeline = StreamingPipeline(gen, seed=config.seed,
                                     enhancer=config.encoder().enhancer)
        chunk = int(round(args.chunk_ms * INPUT_RATE / 1000.0))
        chunk -= chunk % (INPUT_RATE // 250)
        if chunk <= 0:
            raise ArgumentError(f"chunk of {args.chunk_ms} ms is shorter than one frame")
        out = run_chunked(pipeline, x16, chunk)
        if args.report:
            budget = build_budget(pipeline, args.chunk_ms)
            stem = os.path.splitext(args.report)[0]
            report_mod.render_budget_report(budget, args.report,
                                            stem + ".csv", stem + ".png")
    else:
        track = config.encoder().encode(x16)
        z = np.random.default_rng(config.seed).standard_normal(gen.config.z_dim)
        out = gen.generate(track, z).samples
    write_wav(Waveform(out, OUTPUT_RATE), args.outfile, "16")
    return 0


def cmd_features(args) -> int:
    config = PipelineConfig.load(args.config, {"seed": args.seed})
    w = read_wav(args.infile)
    track = config.encoder().encode(resample(w, INPUT_RATE))
    write_features(track, args.outfile)
    return 0


def _load_clips(data_dir, encoder) -> list[ClipPair]:
    paths = sorted(p for p in os.listdir(data_dir) if p.lower().endswith(".wav"))
    if not paths:
        raise ArgumentError(f"no .wav files in {data_dir}")
    return [ClipPair.from_waveform(read_wav(os.path.join(data_dir, p)), encoder)
            for p in paths]


def cmd_train_toy(args) -> int:
    config = PipelineConfig.load(args.config, {"seed": args.seed})
    train_cfg = config.train
    if args.steps is not None:
        from dataclasses import replace

        train_cfg = replace(train_cfg, steps=args.steps)
    if args.seed is not None:
        from dataclasses import replace

        train_cfg = replace(train_cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    state = TrainState(config.generator, config.discriminator, train_cfg)
    state.encoder = config.encoder()
    clips = _load_clips(args.data, state.encoder)
    log_path = os.path.join(args.out, "loss_log.jsonl")
    if os.path.exists(log_path):
        os.unlink(log_path)
    train(state, clips, train_cfg.steps, log_path=log_path)
    state.save(os.path.join(args.out, "final.rgnc"))
    report_mod.render_training_report(
        log_path,
        csv_path=os.path.join(args.out, "loss_log.csv"),
        figure_path=os.path.join(args.out, "loss_curve.png"))
    print(f"trained {train_cfg.steps} steps; artifacts in {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .streaming import StreamingPipeline, build_budget, measure_rtf

    config = PipelineConfig.load(args.config, {"seed": args.seed})
    if args.infile:
        x = resample(read_wav(args.infile), INPUT_RATE).samples
    else:
        rng = np.random.default_rng(config.seed)
        t = np.arange(int(args.seconds * INPUT_RATE)) / INPUT_RATE
        x = (0.5 * np.sin(2 * np.pi * 160 * t) + 0.2 * np.sin(2 * np.pi * 320 * t)
             + 0.02 * rng.standard_normal(len(t)))
    gen = _load_generator(config, args.checkpoint)

    def make():
        return StreamingPipeline(Generator(gen.config, seed=config.seed),
                                 seed=config.seed)

    rtf, times = measure_rtf(x, make, chunk_ms=args.chunk_ms, runs=args.runs)
    pipeline = make()
    from .streaming import run_chunked

    chunk = int(round(args.chunk_ms * INPUT_RATE / 1000.0))
    chunk -= chunk % (INPUT_RATE // 250)
    run_chunked(pipeline, x, chunk)
    budget = build_budget(pipeline, args.chunk_ms, rtf=rtf)
    stem = os.path.splitext(args.report)[0]
    report_mod.render_budget_report(budget, args.report, stem + ".csv", stem + ".png")
    print(f"RTF median {rtf:.3f} over {args.runs} runs "
          f"(per-run: {', '.join(f'{t:.3f}' for t in times)})")
    print(f"total latency {budget.total_latency_ms:.1f} ms; report in {args.report}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(seed=args.seed or 0, trials=args.trials)
    worst = max(results.values())
    for name in sorted(results):
        print(f"{name:24s} {results[name]:.3e}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 2


def cmd_fdsd(args) -> int:
    from .metrics import (conditional_fdsd, frechet_distance, stub_embedding,
                          summarize_activations)

    def embed_dir(d):
        paths = sorted(p for p in os.listdir(d) if p.lower().endswith(".wav"))
        if len(paths) < 2:
            raise ArgumentError(f"need at least 2 wav files in {d}")
        return paths, np.stack([stub_embedding(read_wav(os.path.join(d, p)))
                                for p in paths])

    gen_names, gen_emb = embed_dir(args.generated)
    ref_names, ref_emb = embed_dir(args.reference)
    result = {
        "fdsd": frechet_distance(summarize_activations(gen_emb),
                                 summarize_activations(ref_emb)),
        "n": int(min(len(gen_emb), len(ref_emb))),
        "d": int(gen_emb.shape[1]),
        "cfdsd": None,
    }
    if args.paired:
        if gen_names != ref_names:
            raise ArgumentError("--paired requires matching filenames in both dirs")
        result["cfdsd"] = conditional_fdsd(gen_emb, ref_emb)
    text = json.dumps(result, sort_keys=True, indent=2)
    if args.out:
        atomic_write_text(args.out, text)
    print(text)
    return 0


def cmd_inspect_checkpoint(args) -> int:
    from .checkpoint import load_tensors

    tensors, metadata = load_tensors(args.path)
    total = 0
    for name in sorted(tensors):
        shape = tensors[name].shape
        count = int(np.prod(shape)) if shape else 1
        print(f"{name:60s} {str(shape):18s} {count}")
        if name.startswith(("gen.", "disc.")):
            total += count
    print(f"step: {metadata.get('step')}  model parameters: {total}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="regen", description="Streaming speech regeneration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("regenerate", help="regenerate a wav through the pipeline")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", dest="outfile", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--stream", action="store_true")
    sp.add_argument("--chunk-ms", type=float, default=20.0)
    sp.add_argument("--report", help="latency budget JSON (with CSV/PNG companions)")
    common(sp)
    sp.set_defaults(func=cmd_regenerate)

    sp = sub.add_parser("features", help="dump the conditioning features")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", dest="outfile", required=True)
    common(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("train-toy", help="desk-scale adversarial training")
    sp.add_argument("--data", required=True, help="directory of wav clips")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--steps", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("bench", help="measure RTF and emit the latency budget")
    sp.add_argument("--in", dest="infile")
    sp.add_argument("--seconds", type=float, default=10.0)
    sp.add_argument("--chunk-ms", type=float, default=20.0)
    sp.add_argument("--runs", type=int, default=5)
    sp.add_argument("--report", default="budget.json")
    sp.add_argument("--checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("grad-check", help="finite-difference gradient suite")
    sp.add_argument("--trials", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("fdsd", help="Frechet distances over stub embeddings")
    sp.add_argument("--generated", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--paired", action="store_true")
    sp.add_argument("--out", help="write the JSON result here as well")
    common(sp)
    sp.set_defaults(func=cmd_fdsd)

    sp = sub.add_parser("inspect-checkpoint", help="list checkpoint tensors")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect_checkpoint)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (RegenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
