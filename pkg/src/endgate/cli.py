"""Command-line entry point.

Subcommands cover the whole workflow: gen-corpus, featurize, pad-silence,
train, train-arbitrator, evaluate, report, sweep.  Every run that produces
artifacts writes a RunManifest (command, argv, config hash, seed, inputs,
outputs, version, duration) next to them, so successful runs can be replayed
to byte-identical outputs.  Exit codes: 0 success, 1 runtime error, 2
usage/config error.  The ENDGATE_SEED environment variable overrides the
config file's root seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import ConfigError, EndgateError, ParseError, __version__
from .arbitrator import ArbitratorModel, train_arbitrator
from .config import parse_config, parse_sweep_spec
from .corpus import generate_corpus, load_corpus, save_corpus
from .evaluation import (EvalReport, build_report, report_csv_row, report_text,
                         CSV_HEADER)
from .features import featurize, pad_silence, read_wav, save_features, write_wav
from .firstpass import FrameModel, train_frame_model
from .pipeline import load_decisions, run_corpus, save_decisions
from .sweep import baseline_anchor, emit_curves, precompute_corpus, run_sweep


def _env_seed() -> int | None:
    raw = os.environ.get("ENDGATE_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"ENDGATE_SEED must be an integer, got {raw!r}") from exc


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(anchor_path, command: str, argv, seed, inputs: dict,
                    outputs: list, config_path, started: float) -> None:
    anchor = Path(anchor_path)
    if anchor.is_dir():
        manifest_path = anchor / "manifest.json"
    else:
        manifest_path = anchor.with_name(anchor.name + ".manifest.json")
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "seed": seed,
        "config_sha256": _file_hash(config_path) if config_path else None,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(o) for o in outputs],
        "duration_s": round(time.monotonic() - started, 3),
    }
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path, what: str) -> Path:
    from . import DependencyError

    p = Path(path)
    if not p.exists():
        raise DependencyError(f"{what} not found: {p}")
    return p


def _cmd_gen_corpus(args, argv) -> int:
    started = time.monotonic()
    config = parse_config(args.config, _env_seed())
    corpus = generate_corpus(config.corpus)
    out = Path(args.out)
    save_corpus(corpus, out)
    _write_manifest(out, "gen-corpus", argv, config.corpus.seed,
                    {"config": args.config}, [out / "corpus.jsonl",
                                              out / "features.bin"],
                    args.config, started)
    print(f"wrote {len(corpus)} utterances to {out}")
    return 0


def _cmd_featurize(args, argv) -> int:
    started = time.monotonic()
    audio = read_wav(_require(args.infile, "input wav"))
    frames = featurize(audio)
    save_features(args.out, frames)
    _write_manifest(args.out, "featurize", argv, None,
                    {"in": args.infile}, [args.out], None, started)
    print(f"wrote {frames.shape[0]} frames x {frames.shape[1]} dims to {args.out}")
    return 0


def _cmd_pad_silence(args, argv) -> int:
    started = time.monotonic()
    audio = read_wav(_require(args.infile, "input wav"))
    padded = pad_silence(audio, args.ms)
    write_wav(args.out, padded)
    _write_manifest(args.out, "pad-silence", argv, None,
                    {"in": args.infile}, [args.out], None, started)
    print(f"padded {args.ms} ms of silence -> {args.out}")
    return 0


def _cmd_train(args, argv) -> int:
    started = time.monotonic()
    config = parse_config(args.config, _env_seed())
    corpus = load_corpus(_require(args.corpus, "corpus directory"))
    config.frame_model.feature_dim = corpus.utterances[0].features.shape[1]
    model = train_frame_model(corpus, config.train_frame, config.frame_model)
    model.save(args.out)
    _write_manifest(args.out, "train", argv, config.train_frame.seed,
                    {"config": args.config, "corpus": args.corpus},
                    [args.out], args.config, started)
    print(f"wrote frame model checkpoint {args.out}")
    return 0


def _cmd_train_arbitrator(args, argv) -> int:
    started = time.monotonic()
    config = parse_config(args.config, _env_seed())
    corpus = load_corpus(_require(args.corpus, "corpus directory"))
    frame_model = FrameModel.load(_require(args.frame_model, "frame model checkpoint"))
    config.arbitrator.acoustic_dim = frame_model.hidden_dim
    model = train_arbitrator(corpus, frame_model, config.decoder,
                             config.train_arbitrator, config.arbitrator)
    model.save(args.out)
    _write_manifest(args.out, "train-arbitrator", argv, config.train_arbitrator.seed,
                    {"config": args.config, "corpus": args.corpus,
                     "frame_model": args.frame_model},
                    [args.out], args.config, started)
    print(f"wrote arbitrator checkpoint {args.out}")
    return 0


def _cmd_evaluate(args, argv) -> int:
    started = time.monotonic()
    config = parse_config(args.config, _env_seed())
    corpus = load_corpus(_require(args.corpus, "corpus directory"))
    frame_model = FrameModel.load(_require(args.frame_model, "frame model checkpoint"))
    arbitrator = None
    pipeline_config = config.pipeline
    if args.arbitrator:
        arbitrator = ArbitratorModel.load(
            _require(args.arbitrator, "arbitrator checkpoint"))
        pipeline_config = dataclasses.replace(pipeline_config, use_arbitrator=True)
    decisions = run_corpus(corpus, frame_model, config.decoder, arbitrator,
                           pipeline_config, jobs=args.jobs, trace_dir=args.trace)
    save_decisions(args.out, decisions)
    _write_manifest(args.out, "evaluate", argv, config.seed,
                    {"config": args.config, "corpus": args.corpus,
                     "frame_model": args.frame_model,
                     "arbitrator": args.arbitrator or ""},
                    [args.out], args.config, started)
    print(f"wrote {len(decisions)} decisions to {args.out}")
    return 0


def _report_to_json(report: EvalReport) -> str:
    return json.dumps(dataclasses.asdict(report), sort_keys=True, indent=2) + "\n"


def _report_from_json(path) -> EvalReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return EvalReport(**data)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"{path}: not a report file: {exc}") from exc


def _cmd_report(args, argv) -> int:
    started = time.monotonic()
    decisions = load_decisions(_require(args.decisions, "decisions file"))
    report = build_report(decisions, mode=args.mode)
    baseline = _report_from_json(args.baseline) if args.baseline else None
    print(report_text(report, baseline))
    outputs = []
    if args.csv:
        Path(args.csv).write_text(
            CSV_HEADER + "\n" + report_csv_row(report, baseline) + "\n",
            encoding="utf-8")
        outputs.append(args.csv)
    if args.save_report:
        Path(args.save_report).write_text(_report_to_json(report), encoding="utf-8")
        outputs.append(args.save_report)
    if outputs:
        _write_manifest(outputs[0], "report", argv, None,
                        {"decisions": args.decisions,
                         "baseline": args.baseline or ""},
                        outputs, None, started)
    return 0


def _cmd_sweep(args, argv) -> int:
    started = time.monotonic()
    spec = parse_sweep_spec(args.spec)
    corpus = load_corpus(_require(spec.corpus, "corpus directory"))
    frame_model = FrameModel.load(_require(spec.frame_model, "frame model checkpoint"))
    arbitrator = ArbitratorModel.load(_require(spec.arbitrator, "arbitrator checkpoint"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = spec.decoder
    all_outputs = []
    precomputed = precompute_corpus(corpus, frame_model, sim)
    for fp in spec.first_pass:
        points = run_sweep(corpus, frame_model, sim, arbitrator, spec.grids,
                           first_pass=fp, guardrail_frames=spec.guardrail_frames,
                           precomputed=precomputed, jobs=args.jobs)
        anchor = baseline_anchor(points, spec.grids)
        outputs = emit_curves(points, out / fp, anchor)
        all_outputs.extend(outputs.values())
    _write_manifest(out, "sweep", argv, sim.seed,
                    {"spec": args.spec}, all_outputs, args.spec, started)
    print(f"wrote sweep outputs under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="endgate",
        description="Two-pass endpointing testbed: corpora, training, "
                    "evaluation, metrics and sweeps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("featurize", help="log-mel + stacking front-end for a wav")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("pad-silence", help="append digital silence to a wav")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ms", type=int, default=2000)
    p.set_defaults(func=_cmd_pad_silence)

    p = sub.add_parser("train", help="train the first-pass frame model")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-arbitrator", help="train the second-pass arbitrator")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--frame-model", dest="frame_model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_arbitrator)

    p = sub.add_parser("evaluate", help="run the pipeline over a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--frame-model", dest="frame_model", required=True)
    p.add_argument("--arbitrator", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="directory for event traces")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="metrics from a decisions file")
    p.add_argument("--decisions", required=True)
    p.add_argument("--baseline", default=None, help="baseline report JSON")
    p.add_argument("--mode", choices=("standard", "partial"), default="standard")
    p.add_argument("--csv", default=None)
    p.add_argument("--save-report", dest="save_report", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("sweep", help="operating-point sweeps + curves")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (ConfigError, ParseError) as exc:
        print(f"endgate: config error: {exc}", file=sys.stderr)
        return 2
    except (EndgateError, OSError) as exc:
        print(f"endgate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
