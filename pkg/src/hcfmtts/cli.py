"""Command-line entry point: ``hcfm <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 failed check
(gradient suite or ablation ordering).
"""

import argparse
from pathlib import Path
import sys

from .errors import (CheckpointError, ConfigError, ContractError, NumericError,
                     PhonemizationError, TrainingAborted)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _frontend(args):
    from .frontend import build_hierarchical_representation, to_json
    ht = build_hierarchical_representation(args.text)
    if args.json:
        print(to_json(ht))
        return EXIT_OK
    g = ht.phon.graphemes
    print(f"text: {ht.text}")
    print("phonemes:  " + " ".join(f"{gr}/{s}" for gr, s in zip(g, ht.phon.symbols)))
    print("classes:   " + " ".join(ht.phon.vowel_classes))
    print("syllables: " + " . ".join("".join(g[s:e]) for s, e in ht.syll.syllables))
    print("morphemes: " + " + ".join(f"{''.join(g[s:e])}({k})" for (s, e), k in ht.syll.morphemes))
    print(f"sentence:  {ht.pros.sentence_type.value}")
    for w, p, b, f in zip(ht.pros.words, ht.pros.prominence, ht.pros.boundaries, ht.pros.function_words):
        print(f"  {w:<14} prominence {p:.1f}  boundary {b:<5}{'  function word' if f else ''}")
    for w in ht.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def _gen_corpus(args):
    from .corpus import generate_synthetic_corpus, save_corpus
    corpus = generate_synthetic_corpus(args.seed, args.n, args.mel_bins)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} items to {args.out}")
    return EXIT_OK


def _train(args):
    from dataclasses import replace
    from .config import load_config
    from .train import train
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    out = Path(cfg.out_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, log_path=out / "metrics.csv", ckpt_dir=out, quiet=args.quiet)
    print(f"eval cfm: initial {result.eval_initial:.6f} final {result.eval_final:.6f} "
          f"(ratio {result.eval_final / result.eval_initial:.3f}) in {result.seconds:.1f}s")
    print(f"checkpoint: {out / 'final.ckpt'}")
    return EXIT_OK


def _read_audio(path, sample_rate):
    from .audio import read_raw_f32, read_wav
    if str(path).endswith(".wav"):
        return read_wav(path)
    return read_raw_f32(path), sample_rate


def _synthesize(args):
    from .audio import MelConfig, load_mel_csv, mel_spectrogram, save_mel_csv, write_raw_f32
    from .checkpoint import load_model
    from .flow import OdeConfig
    from .model import SynthesisRequest, mel_config_for, synthesize
    model, ckpt = load_model(args.ckpt)
    mel_keys = {k[4:]: v for k, v in ckpt.config.items() if k.startswith("mel.")}
    mel_cfg = MelConfig.from_dict(mel_keys) if mel_keys else mel_config_for(model)
    ref = None
    if (args.ref_wav or args.ref_mel) and not args.ref_text:
        raise UsageError("--ref-text is required with a reference")
    if args.ref_wav:
        samples, rate = _read_audio(args.ref_wav, mel_cfg.sample_rate)
        if rate != mel_cfg.sample_rate:
            raise ContractError(f"reference is {rate} Hz, model expects {mel_cfg.sample_rate} Hz")
        ref = mel_spectrogram(samples, mel_cfg)
    elif args.ref_mel:
        ref = load_mel_csv(args.ref_mel)
    req = SynthesisRequest(args.text, ref, args.ref_text if ref is not None else None, args.speaker)
    ode = OdeConfig(args.steps, args.method, args.seed)
    mel = synthesize(model, req, ode, n_frames=args.frames, mel_cfg=mel_cfg)
    if args.out.endswith(".f32"):
        write_raw_f32(args.out, mel.values.ravel())
    else:
        save_mel_csv(args.out, mel)
    print(f"{mel.frames} frames x {mel.bins} bins -> {args.out}")
    return EXIT_OK


def _load_for_eval(path, sample_rate):
    """A mel CSV gives a spectrogram; a .wav/.f32 gives (waveform, rate)."""
    if str(path).endswith(".csv"):
        from .audio import load_mel_csv
        return load_mel_csv(path), None
    return None, _read_audio(path, sample_rate)


def _eval(args):
    from .audio import MelConfig, f0_rmse, mcd, mel_spectrogram
    mel_a, wav_a = _load_for_eval(args.ref, args.sample_rate)
    mel_b, wav_b = _load_for_eval(args.hyp, args.sample_rate)
    if (mel_a is None) != (mel_b is None):
        raise UsageError("--ref and --hyp must both be mel CSVs or both be waveforms")
    if mel_a is None:
        (xa, ra), (xb, rb) = wav_a, wav_b
        if ra != rb:
            raise ContractError(f"sample rates differ: {ra} vs {rb}")
        n = min(len(xa), len(xb))
        if len(xa) != len(xb):
            print(f"note: trimming to {n} samples", file=sys.stderr)
        cfg = MelConfig(sample_rate=ra)
        xa, xb = xa[:n], xb[:n]
        print(f"MCD {mcd(mel_spectrogram(xa, cfg), mel_spectrogram(xb, cfg)):.6f}")
        f0 = f0_rmse(xa, xb, cfg)
        print("F0-RMSE n/a (no co-voiced frames)" if f0.no_voicing
              else f"F0-RMSE {f0.rmse:.6f} Hz over {f0.co_voiced_frames} frames")
    else:
        print(f"MCD {mcd(mel_a, mel_b):.6f}")
        print("F0-RMSE n/a (mel inputs)")
    return EXIT_OK


def _gradcheck(args):
    from .gradcheck import run_suite
    reports, seconds = run_suite(args.seed, out=print)
    failed = [r.op for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed in {seconds:.1f}s")
    return EXIT_CHECK if failed else EXIT_OK


def _ablate(args):
    from .config import load_config
    from .train import run_ablation
    report = run_ablation(load_config(args.config), quiet=args.quiet)
    print(report.format())
    return EXIT_OK if report.ordered else EXIT_CHECK


def build_parser():
    p = _Parser(prog="hcfm", description="Hierarchical flow-matching TTS toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("frontend", help="dump the three text tiers")
    s.add_argument("text")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=_frontend)

    s = sub.add_parser("gen-corpus", help="write a synthetic corpus directory")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--mel-bins", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_gen_corpus)

    s = sub.add_parser("train", help="train from a key = value config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override out_dir")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=_train)

    s = sub.add_parser("synthesize", help="text (+ optional reference) to mel")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--ref-wav")
    s.add_argument("--ref-mel")
    s.add_argument("--ref-text")
    s.add_argument("--speaker", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=32)
    s.add_argument("--method", choices=("euler", "midpoint"), default="euler")
    s.add_argument("--frames", type=int, help="override the predicted frame count")
    s.add_argument("--out", required=True, help=".csv mel or .f32 raw")
    s.set_defaults(func=_synthesize)

    s = sub.add_parser("eval", help="MCD and F0-RMSE between two files")
    s.add_argument("--ref", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--sample-rate", type=int, default=16000, help="rate for .f32 inputs")
    s.set_defaults(func=_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_gradcheck)

    s = sub.add_parser("ablate", help="train tier variants A/B/C and check ordering")
    s.add_argument("--config", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:          # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except PhonemizationError as e:
        print(f"error: {e} (byte offset {e.offset})", file=sys.stderr)
        return EXIT_RUNTIME
    except TrainingAborted as e:
        print(f"error: {e}; last good checkpoint: {e.last_good}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, CheckpointError, ContractError, NumericError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
