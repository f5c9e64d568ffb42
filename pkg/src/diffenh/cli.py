"""Command-line surface: train, enhance, sample, validate-sde, benchmark.

Exit codes: 0 success, 1 usage error, 2 validation/acceptance failure,
3 I/O error.  A --config file of key=value lines is merged under the flags
(explicit flags win).  Randomized commands print their seed in the report
header so every run is reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics, noise_nmf, score, sde, signal
from .em import EnhancementConfig, enhance_waveform
from .sampler import SamplerConfig, unconditional_sample

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

ODE_TOLERANCE = 1e-6


class _UsageError(Exception):
    pass


class _IoError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # contract: usage errors exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _fmt(prog):
    # fixed width keeps --help output stable for the golden-file test
    return argparse.ArgumentDefaultsHelpFormatter(prog, width=100)


def _add_schedule_flags(p, overridable=False):
    if overridable:
        # None means "take the checkpoint's value"; explicit disagreement errors
        p.add_argument("--gamma", type=float, default=None, help="mean-decay rate (default: from checkpoint)")
        p.add_argument("--sigma-min", type=float, default=None, help="minimum noise scale (default: from checkpoint)")
        p.add_argument("--sigma-max", type=float, default=None, help="maximum noise scale (default: from checkpoint)")
        p.add_argument("--t-min", type=float, default=None, help="minimum process time (default: from checkpoint)")
    else:
        p.add_argument("--gamma", type=float, default=1.5, help="mean-decay rate")
        p.add_argument("--sigma-min", type=float, default=0.05, help="minimum noise scale")
        p.add_argument("--sigma-max", type=float, default=0.5, help="maximum noise scale")
        p.add_argument("--t-min", type=float, default=0.03, help="minimum process time")


def _add_stft_flags(p):
    p.add_argument("--window-len", type=int, default=510, help="analysis window length in samples")
    p.add_argument("--hop", type=int, default=128, help="hop length in samples")
    p.add_argument("--alpha", type=float, default=0.5, help="amplitude compression exponent")
    p.add_argument("--beta", type=float, default=0.15, help="amplitude compression scale")


def _add_enhance_flags(p):
    p.add_argument("--em-iters", type=int, default=5, help="EM iterations (K)")
    p.add_argument("--reverse-steps", type=int, default=30, help="reverse sampling steps (N)")
    p.add_argument("--posterior-every", type=int, default=2, help="posterior update stride (ell)")
    p.add_argument("--lambda", dest="guidance_weight", type=float, default=1.5,
                   help="posterior guidance weight")
    p.add_argument("--nmf-rank", type=int, default=4, help="noise model rank (r)")
    p.add_argument("--batch", type=int, default=4, help="posterior chains averaged per E-step (b)")
    p.add_argument("--nmf-updates", type=int, default=20, help="multiplicative updates per M-step")


def build_parser() -> _Parser:
    root = _Parser(prog="diffenh", formatter_class=_fmt,
                   description="Speech enhancement with a diffusion prior and an NMF noise model.")
    sub = root.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", formatter_class=_fmt,
                       help="train the score network",
                       description="Train the toy score network on WAV data or a synthetic prior.")
    p.add_argument("--config", metavar="FILE", help="key=value file merged under the flags")
    p.add_argument("--data", metavar="DIR", help="directory of clean 16 kHz WAV files")
    p.add_argument("--synthetic", choices=["gaussian"],
                   help="train on draws from the built-in unit Gaussian prior instead of WAV data")
    p.add_argument("--items", type=int, default=64, help="synthetic dataset size")
    p.add_argument("--bins", type=int, default=16, help="synthetic spectrogram bins")
    p.add_argument("--frames", type=int, default=256, help="synthetic spectrogram frames")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--resume", metavar="CKPT",
                   help="continue training from a checkpoint (its schedule and architecture win)")
    p.add_argument("--hidden", default="32,32", help="comma-separated hidden layer widths")
    p.add_argument("--lr", type=float, default=0.0001, help="learning rate")
    p.add_argument("--lr-decay", choices=["constant", "cosine"], default="constant",
                   help="learning-rate schedule")
    p.add_argument("--batch", type=int, default=16, help="training batch size")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--steps-per-epoch", type=int, default=100, help="optimizer steps per epoch")
    p.add_argument("--patch-frames", type=int, default=256, help="frames per training patch")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    _add_schedule_flags(p)
    _add_stft_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", formatter_class=_fmt,
                       help="enhance a noisy WAV file",
                       description="Enhance a noisy utterance with a trained checkpoint.")
    p.add_argument("--config", metavar="FILE", help="key=value file merged under the flags")
    p.add_argument("--input", required=True, help="noisy WAV file")
    p.add_argument("--ckpt", required=True, help="score model checkpoint")
    p.add_argument("--output", required=True, help="enhanced WAV path to write")
    p.add_argument("--clean", help="reference WAV; adds a metric report")
    p.add_argument("--report", help="write the metric report as JSON here")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--force", action="store_true",
                   help="on schedule mismatch with the checkpoint, use the checkpoint schedule")
    _add_enhance_flags(p)
    _add_schedule_flags(p, overridable=True)
    _add_stft_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("sample", formatter_class=_fmt,
                       help="sample the clean-speech prior unconditionally",
                       description="Draw unconditional prior samples from a trained checkpoint.")
    p.add_argument("--config", metavar="FILE", help="key=value file merged under the flags")
    p.add_argument("--ckpt", required=True, help="score model checkpoint")
    p.add_argument("--output", help="WAV path for the synthesized sample")
    p.add_argument("--dump-spec", metavar="FILE", help="write the raw spectrogram grid dump")
    p.add_argument("--bins", type=int, default=None,
                   help="spectrogram bins (default: the STFT bin count)")
    p.add_argument("--frames", type=int, default=128, help="spectrogram frames")
    p.add_argument("--reverse-steps", type=int, default=30, help="reverse sampling steps (N)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    _add_stft_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("validate-sde", formatter_class=_fmt,
                       help="check the closed-form kernel variance against its ODE",
                       description="Integrate the variance ODE and compare to the closed form.")
    p.add_argument("--config", metavar="FILE", help="key=value file merged under the flags")
    p.add_argument("--g-leading", choices=["sigma_min", "sigma_max"], default="sigma_min",
                   help="leading coefficient of the diffusion term")
    p.add_argument("--ode-steps", type=int, default=10000, help="RK4 grid resolution")
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_validate_sde)

    p = sub.add_parser("benchmark", formatter_class=_fmt,
                       help="mix, enhance, and report SI-SDR over a corpus",
                       description="Benchmark enhancement quality over mixtures at several SNRs.")
    p.add_argument("--config", metavar="FILE", help="key=value file merged under the flags")
    p.add_argument("--ckpt", required=True, help="score model checkpoint")
    p.add_argument("--clean-dir", help="directory of clean WAV files")
    p.add_argument("--noise-dir", help="directory of noise WAV files, paired by sort order")
    p.add_argument("--synthetic", action="store_true",
                   help="generate clean utterances from the checkpoint prior and structured noise")
    p.add_argument("--utterances", type=int, default=20, help="synthetic utterance count")
    p.add_argument("--frames", type=int, default=128, help="synthetic utterance frames")
    p.add_argument("--snrs", default="-5,0,5", help="comma-separated mixture SNRs in dB")
    p.add_argument("--jobs", type=int, default=1, help="concurrent utterances")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--report", help="write the aggregate report as JSON here")
    _add_enhance_flags(p)
    _add_stft_flags(p)
    p.set_defaults(func=cmd_benchmark)

    return root


# ---------------------------------------------------------------------------
# config-file merge


def _config_tokens(path) -> list[str]:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise _IoError(f"cannot read config file: {exc}") from exc
    tokens = []
    for ln, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() == "true":
            tokens.append(flag)
        elif value.lower() == "false":
            continue
        else:
            tokens.extend([flag, value])
    return tokens


def _merge_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into its tokens, placed before the explicit flags."""
    out = list(argv)
    for i, tok in enumerate(out):
        if tok == "--config":
            if i + 1 >= len(out):
                raise _UsageError("--config requires a file argument")
            path = out[i + 1]
            rest = out[:i] + out[i + 2 :]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            rest = out[:i] + out[i + 1 :]
            break
    else:
        return out
    # insert right after the subcommand so later (explicit) flags override
    return rest[:1] + _config_tokens(path) + rest[1:]


# ---------------------------------------------------------------------------
# shared helpers


def _stft_config(args) -> signal.StftConfig:
    return signal.StftConfig(
        window_len=args.window_len, hop=args.hop,
        compress_alpha=args.alpha, compress_beta=args.beta,
    )


def _schedule(args) -> sde.SdeSchedule:
    return sde.SdeSchedule(
        gamma=args.gamma, sigma_min=args.sigma_min, sigma_max=args.sigma_max, t_min=args.t_min
    )


def _load_checkpoint(path):
    try:
        return score.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise _IoError(str(exc)) from exc
    except ValueError as exc:
        raise _IoError(str(exc)) from exc


def _load_wav(path) -> signal.Waveform:
    try:
        w = signal.load_wav(path)
    except FileNotFoundError as exc:
        raise _IoError(str(exc)) from exc
    except ValueError as exc:
        raise _IoError(str(exc)) from exc
    if w.sample_rate != 16000:
        raise _IoError(f"{path}: pipeline expects 16 kHz input, got {w.sample_rate} Hz")
    return w


def _resolve_schedule(args, ckpt_sched) -> sde.SdeSchedule:
    """Flags may pin schedule values; disagreement with the checkpoint errors
    unless --force hands the decision to the checkpoint."""
    requested = {
        "gamma": args.gamma, "sigma_min": args.sigma_min,
        "sigma_max": args.sigma_max, "t_min": args.t_min,
    }
    mismatches = [
        f"{name}: flag {value} != checkpoint {getattr(ckpt_sched, name)}"
        for name, value in requested.items()
        if value is not None and not math.isclose(value, getattr(ckpt_sched, name))
    ]
    if mismatches and not args.force:
        raise _UsageError(
            "schedule mismatch with checkpoint (pass --force to use the checkpoint): "
            + "; ".join(mismatches)
        )
    return ckpt_sched


def _enhancement_config(args) -> EnhancementConfig:
    return EnhancementConfig(
        em_iters=args.em_iters,
        reverse_steps=args.reverse_steps,
        posterior_every=args.posterior_every,
        guidance_weight=args.guidance_weight,
        nmf_rank=args.nmf_rank,
        batch=args.batch,
        seed=args.seed,
        nmf_inner_updates=args.nmf_updates,
    )


def _write_wav(path, wav: signal.Waveform):
    try:
        signal.save_wav(path, wav)
    except OSError as exc:
        raise _IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    print(f"# seed={args.seed}")
    sched = _schedule(args)
    stft_cfg = _stft_config(args)
    if args.resume:
        model, sched = _load_checkpoint(args.resume)
    else:
        hidden = tuple(int(v) for v in args.hidden.split(","))
        model = score.ToyScoreNet(hidden=hidden, seed=args.seed, sched=sched)
    if args.synthetic == "gaussian":
        prior = score.AnalyticGaussianPrior(
            mean=np.zeros((args.bins, args.frames)), var0=1.0, sched=sched
        )
        rng = np.random.default_rng(args.seed)
        dataset = [prior.sample((args.bins, args.frames), rng) for _ in range(args.items)]
    elif args.data:
        dataset = _wav_dataset(args.data, stft_cfg)
    else:
        raise _UsageError("train needs --data DIR or --synthetic gaussian")
    cfg = score.TrainConfig(
        lr=args.lr, batch_size=args.batch, epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        patch_frames=min(args.patch_frames, min(d.shape[1] for d in dataset)),
        lr_decay=args.lr_decay, seed=args.seed,
    )
    model, history = score.train(model, dataset, cfg, sched)
    for epoch, loss in enumerate(history, 1):
        print(f"epoch {epoch}: loss {loss:.6f}")
    try:
        score.save_checkpoint(model, sched, args.out)
    except OSError as exc:
        raise _IoError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out} ({model.n_params} parameters, step {model.step})")
    return EXIT_OK


def _wav_dataset(directory, stft_cfg) -> list[np.ndarray]:
    import os

    try:
        names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".wav"))
    except OSError as exc:
        raise _IoError(f"cannot list {directory}: {exc}") from exc
    if not names:
        raise _IoError(f"{directory}: no WAV files found")
    return [signal.stft(_load_wav(os.path.join(directory, n)), stft_cfg) for n in names]


def cmd_enhance(args) -> int:
    print(f"# seed={args.seed}")
    model, ckpt_sched = _load_checkpoint(args.ckpt)
    sched = _resolve_schedule(args, ckpt_sched)
    noisy = _load_wav(args.input)
    cfg = _enhancement_config(args)
    enhanced = enhance_waveform(noisy, model, sched, _stft_config(args), cfg)
    _write_wav(args.output, enhanced)
    print(f"wrote {args.output}")
    if args.clean:
        clean = _load_wav(args.clean)
        report = metrics.evaluate_pair(noisy, enhanced, clean)
        sys.stdout.write(report.as_lines())
        if args.report:
            try:
                metrics.write_report(args.report, report.as_dict())
            except OSError as exc:
                raise _IoError(f"cannot write {args.report}: {exc}") from exc
    return EXIT_OK


def cmd_sample(args) -> int:
    if not args.output and not args.dump_spec:
        raise _UsageError("sample needs --output and/or --dump-spec")
    print(f"# seed={args.seed}")
    model, sched = _load_checkpoint(args.ckpt)
    stft_cfg = _stft_config(args)
    bins = args.bins if args.bins is not None else stft_cfg.f_bins
    cfg = SamplerConfig(n_steps=args.reverse_steps)
    rng = np.random.default_rng(args.seed)
    spec = unconditional_sample((bins, args.frames), model, sched, cfg, rng)
    if args.dump_spec:
        try:
            signal.dump_spectrogram(args.dump_spec, spec)
        except OSError as exc:
            raise _IoError(f"cannot write {args.dump_spec}: {exc}") from exc
        print(f"wrote {args.dump_spec}")
    if args.output:
        if bins != stft_cfg.f_bins:
            raise _UsageError(
                f"cannot synthesize audio from {bins} bins with window_len {stft_cfg.window_len}"
            )
        out_len = (args.frames - 1) * stft_cfg.hop
        _write_wav(args.output, signal.istft(spec, stft_cfg, out_len))
        print(f"wrote {args.output}")
    return EXIT_OK


def cmd_validate_sde(args) -> int:
    sched = sde.SdeSchedule(
        gamma=args.gamma, sigma_min=args.sigma_min, sigma_max=args.sigma_max,
        t_min=args.t_min, g_leading=args.g_leading,
    )
    err = sde.variance_ode_error(sched, n_steps=args.ode_steps)
    verdict = "PASS" if err < ODE_TOLERANCE else "FAIL"
    print(f"max relative error = {err:.3e} (tolerance {ODE_TOLERANCE:.0e}): {verdict}")
    return EXIT_OK if verdict == "PASS" else EXIT_VALIDATION


def _benchmark_pairs(args, model, sched, stft_cfg):
    """Yield (label, clean, noise) waveforms for the benchmark grid."""
    rng = np.random.default_rng(args.seed)
    if args.synthetic:
        scfg = SamplerConfig(n_steps=args.reverse_steps)
        bins = stft_cfg.f_bins
        out_len = (args.frames - 1) * stft_cfg.hop
        pairs = []
        for i in range(args.utterances):
            spec = unconditional_sample((bins, args.frames), model, sched, scfg, rng)
            clean = signal.istft(spec, stft_cfg, out_len)
            # synthesis projects the spectrogram onto its overlap-add
            # consistent subspace, shrinking per-entry variance below the
            # unit scale the prior was trained at; rescale so analysis of the
            # clean waveform matches the prior again
            var = float(np.mean(np.abs(signal.stft(clean, stft_cfg)) ** 2))
            clean = signal.Waveform(
                clean.samples * var ** (-0.5 / stft_cfg.compress_alpha), clean.sample_rate
            )
            noise = signal.Waveform(
                noise_nmf.synth_noise_waveform(out_len, args.nmf_rank, rng), clean.sample_rate
            )
            pairs.append((f"synthetic-{i:03d}", clean, noise))
        return pairs
    if not args.clean_dir or not args.noise_dir:
        raise _UsageError("benchmark needs --synthetic or both --clean-dir and --noise-dir")
    import os

    def _list(directory):
        try:
            names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".wav"))
        except OSError as exc:
            raise _IoError(f"cannot list {directory}: {exc}") from exc
        if not names:
            raise _IoError(f"{directory}: no WAV files found")
        return [os.path.join(directory, n) for n in names]

    cleans = _list(args.clean_dir)
    noises = _list(args.noise_dir)
    return [
        (os.path.basename(c), _load_wav(c), _load_wav(noises[i % len(noises)]))
        for i, c in enumerate(cleans)
    ]


def cmd_benchmark(args) -> int:
    print(f"# seed={args.seed}")
    model, sched = _load_checkpoint(args.ckpt)
    stft_cfg = _stft_config(args)
    try:
        snrs = [float(v) for v in args.snrs.split(",")]
    except ValueError as exc:
        raise _UsageError(f"bad --snrs value {args.snrs!r}") from exc
    pairs = _benchmark_pairs(args, model, sched, stft_cfg)
    tasks = []
    for label, clean, noise in pairs:
        for snr in snrs:
            tasks.append((len(tasks), f"{label}@{snr:+.0f}dB", clean, noise, snr))

    def _run(task):
        index, label, clean, noise, snr = task
        noisy, _ = signal.mix_at_snr(clean, noise, snr, seed=args.seed + index)
        cfg = dataclasses.replace(_enhancement_config(args), seed=args.seed + index)
        enhanced = enhance_waveform(noisy, model, sched, stft_cfg, cfg)
        return metrics.evaluate_pair(noisy, enhanced, clean)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run, tasks))
    else:
        reports = [_run(t) for t in tasks]
    labels = [t[1] for t in tasks]
    for label, rep in zip(labels, reports):
        print(f"{label}: in {rep.input_si_sdr:+.2f} dB out {rep.si_sdr:+.2f} dB "
              f"delta {rep.delta:+.2f} dB")
    payload = metrics.aggregate_reports(reports, labels)
    agg = payload["aggregate"]
    print(f"aggregate over {agg['count']}: si_sdr {agg['si_sdr_mean_db']:+.2f} "
          f"+/- {agg['si_sdr_halfwidth_db']:.2f} dB, delta {agg['delta_mean_db']:+.2f} "
          f"+/- {agg['delta_halfwidth_db']:.2f} dB")
    if args.report:
        try:
            metrics.write_report(args.report, payload)
        except OSError as exc:
            raise _IoError(f"cannot write {args.report}: {exc}") from exc
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _merge_config(argv)
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("diffenh: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except _IoError as exc:
        print(f"diffenh: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invariant violations from typed configs surface as usage errors
        print(f"diffenh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse --help exits 0 through here
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
