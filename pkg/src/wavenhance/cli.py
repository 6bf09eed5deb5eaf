"""Command-line entry point: ``wavenhance <subcommand> [options]``.

Subcommands: make-toy-dataset, simulate, train, enhance, evaluate, plot.
Global options (accepted before or after the subcommand): --config, --seed,
--workers, --out. Without --config the path in $WAVENHANCE_CONFIG is used,
falling back to built-in defaults. Every command writes the effective config
next to its outputs.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .audio import AudioBuffer, read_wav, write_wav
from .config import CONFIG_ENV, dump_config, load_config
from .corpus import Manifest, make_toy_dataset
from .errors import ConfigurationError, EvaluationError, InvalidInputError, TrainingDiverged
from .inference import GeneratorEnhancer, enhance_audio, identity_enhancer
from .metrics import EvalItem, evaluate_dataset
from .simulation import sample_spec, simulate_pair

log = logging.getLogger("wavenhance")

CONFIG_NAME = "effective_config.yaml"


def _effective_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if args.workers is not None:
        cfg = replace(cfg, data=replace(cfg.data, workers=args.workers),
                      eval=replace(cfg.eval, workers=args.workers))
    return cfg


def _out_dir(args, default=None):
    out = args.out or default
    if out is None:
        raise ConfigurationError(f"{args.command} needs --out DIR")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_make_toy_dataset(args):
    out = _out_dir(args)
    cfg = _effective_config(args)
    path = make_toy_dataset(out, seed=cfg.train.seed, n_utterances=args.n_utterances,
                            n_rirs=args.n_rirs, n_noises=args.n_noises, duration_s=args.duration)
    dump_config(cfg, out / CONFIG_NAME)
    print(path)
    return 0


def heldout_pairs(manifest, split, cfg, augment=False, pairs_per_utterance=1):
    """Deterministic (id, spec, degraded, target) tuples for every utterance in ``split``."""
    from .training import PairSource, _rng

    src = PairSource(manifest, split, cfg.data.augmentation, cfg.train.seed, cfg.dsp.working_rate)
    out = []
    for i, entry in enumerate(src.entries):
        stem = Path(entry.clean_path).stem
        for k in range(pairs_per_utterance):
            if augment:
                spec = sample_spec(_rng(cfg.train.seed, 31337, i, k), src.aug)
                deg, tgt = simulate_pair(src.clean[i], spec, src.assets)
            else:
                spec = src.base_spec(i)
                deg, tgt = src.base_pair(i)
            uid = stem if pairs_per_utterance == 1 else f"{stem}_{k}"
            out.append((uid, spec, deg, tgt))
    return out


def cmd_simulate(args):
    out = _out_dir(args)
    cfg = _effective_config(args)
    manifest = Manifest.load(args.manifest)
    records = []
    for uid, spec, deg, tgt in heldout_pairs(manifest, args.split, cfg, args.augment, args.pairs_per_utterance):
        d_path, t_path = out / f"{uid}_degraded.wav", out / f"{uid}_target.wav"
        write_wav(d_path, deg, pcm16=args.pcm16)
        write_wav(t_path, tgt, pcm16=args.pcm16)
        spec_rec = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(spec).items()
                    if k not in ("eq_taps_noise", "eq_taps_rir")}
        records.append({"utterance_id": uid, "degraded": d_path.name, "reference": t_path.name, "spec": spec_rec})
    with open(out / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    dump_config(cfg, out / CONFIG_NAME)
    print(out / "pairs.jsonl")
    return 0


def cmd_train(args):
    from .training import Trainer

    out = _out_dir(args)
    cfg = _effective_config(args)
    if args.stage_scale != 1.0:
        cfg = cfg.scaled(args.stage_scale)
    manifest = Manifest.load(args.manifest)
    trainer = Trainer(cfg, manifest, out, resume=args.resume, stop_after=args.stop_after)
    final = trainer.run()
    print(final)
    return 0


def _load_enhancer(model, cfg):
    if model == "identity":
        return identity_enhancer
    from .training import load_generator

    return GeneratorEnhancer(load_generator(model), cfg.eval.window, cfg.eval.overlap)


def cmd_enhance(args):
    from .training import load_generator

    cfg = _effective_config(args)
    gen = load_generator(args.checkpoint)
    audio = read_wav(args.input, working_rate=None)
    enhanced = enhance_audio(gen, audio, cfg.eval.window, cfg.eval.overlap, cfg.dsp.working_rate)
    out_wav = Path(args.output)
    write_wav(out_wav, enhanced, pcm16=args.pcm16)
    dump_config(cfg, (Path(args.out) if args.out else out_wav.parent) / CONFIG_NAME)
    return 0


def _eval_items(args, cfg):
    if args.pairs:
        pairs_path = Path(args.pairs)
        items = []
        with open(pairs_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    items.append(EvalItem(rec["utterance_id"], pairs_path.parent / rec["degraded"],
                                          pairs_path.parent / rec["reference"]))
    elif args.manifest:
        manifest = Manifest.load(args.manifest)
        items = [EvalItem(uid, deg, tgt) for uid, _, deg, tgt in heldout_pairs(manifest, args.split, cfg)]
    else:
        raise ConfigurationError("evaluate needs --manifest or --pairs")
    if args.mode == "clean":
        items = [EvalItem(it.utterance_id, it.reference, it.reference) for it in items]
    return items


def cmd_evaluate(args):
    out = _out_dir(args)
    cfg = _effective_config(args)
    enhancer = _load_enhancer(args.model, cfg)
    items = _eval_items(args, cfg)
    result = evaluate_dataset(items, enhancer, out, pesq_command=args.pesq_command or cfg.eval.pesq_command,
                              workers=cfg.eval.workers, working_rate=cfg.dsp.working_rate)
    dump_config(cfg, out / CONFIG_NAME)
    if args.plot:
        from .plots import plot_summary

        plot_summary(result.summary, out)
    print(json.dumps({k: v["mean"] for k, v in result.summary.items()}, indent=2))
    if result.failures:
        for f in result.failures:
            print(f"FAILED {f}", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args):
    from .plots import plot_summary, plot_training_log

    out = _out_dir(args)
    written = []
    if args.log:
        written += plot_training_log(args.log, out)
    if args.summary:
        with open(args.summary, encoding="utf-8") as fh:
            written += plot_summary(json.load(fh), out)
    if not written:
        raise ConfigurationError("plot needs --log and/or --summary")
    dump_config(_effective_config(args), out / CONFIG_NAME)
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------- parser

def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, metavar="PATH",
                        help=f"YAML run config (default: ${CONFIG_ENV}, else built-in defaults)")
    parser.add_argument("--seed", type=int, default=default, metavar="N",
                        help="override train.seed (drives every random draw)")
    parser.add_argument("--workers", type=int, default=default, metavar="N",
                        help="data-simulation and evaluation worker threads")
    parser.add_argument("--out", default=default, metavar="DIR", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="wavenhance", description="Speech enhancement toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("make-toy-dataset", parents=[common], help="synthesize a small self-contained corpus")
    p.add_argument("--n-utterances", type=int, default=50, help="number of clean utterances (default 50)")
    p.add_argument("--n-rirs", type=int, default=6, help="number of synthetic room responses (default 6)")
    p.add_argument("--n-noises", type=int, default=6, help="number of noise recordings (default 6)")
    p.add_argument("--duration", type=float, default=2.0, help="utterance length in seconds (default 2.0)")
    p.set_defaults(func=cmd_make_toy_dataset)

    p = sub.add_parser("simulate", parents=[common], help="write degraded/target pairs for a manifest split")
    p.add_argument("--manifest", required=True, help="manifest.jsonl")
    p.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to simulate")
    p.add_argument("--augment", action="store_true", help="draw random augmentation recipes")
    p.add_argument("--pairs-per-utterance", type=int, default=1, help="pairs per clean utterance (default 1)")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of 32-bit float")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="run the three-stage training schedule")
    p.add_argument("--manifest", required=True, help="manifest.jsonl with train/val splits")
    p.add_argument("--stage-scale", type=float, default=1.0, help="multiply every stage's step count")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    p.add_argument("--stop-after", type=int, default=None, metavar="N",
                   help="checkpoint and stop after N steps of this invocation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common], help="enhance one WAVE file with a trained checkpoint")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("input", help="input WAVE file (any rate; resampled)")
    p.add_argument("output", help="output WAVE file")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of 32-bit float")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", parents=[common], help="score an enhancer on held-out pairs")
    p.add_argument("model", help="checkpoint directory, or 'identity'")
    p.add_argument("--manifest", help="simulate pairs from this manifest's --split")
    p.add_argument("--split", default="test", choices=("train", "val", "test"), help="manifest split")
    p.add_argument("--pairs", help="pairs.jsonl written by 'simulate' (instead of --manifest)")
    p.add_argument("--mode", default="enhanced", choices=("enhanced", "clean"),
                   help="'clean' scores reference against itself (metric ceiling)")
    p.add_argument("--pesq-command", help="external PESQ command with {reference} and {degraded}")
    p.add_argument("--plot", action="store_true", help="also write one bar chart per metric")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", parents=[common], help="render training curves and metric summaries")
    p.add_argument("--log", help="train_log.jsonl")
    p.add_argument("--summary", help="summary.json from 'evaluate'")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError, EvaluationError, TrainingDiverged, OSError) as exc:
        print(f"wavenhance {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, EvaluationError):
            for p in exc.problems:
                print(f"  {p}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
