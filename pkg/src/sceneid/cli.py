"""Command-line front end.

One subcommand per pipeline step plus the composite `train`. Exit code 0 on
success; failures map to a distinct code per stage (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from . import gmm as gmm_mod
from . import ivector as ivector_mod
from . import mixer as mixer_mod
from . import pipeline as pipe
from .audio import read_wav, write_wav
from .config import ConfigError, PipelineConfig, parse_sbr_token
from .errors import SceneidError
from .features import FeatureMatrix, export_csv, power_spectrogram, save_features
from .manifest import CorpusManifest, ManifestError
from .mixer import NoActivityError, RateMismatchError, SilentSignalError
from .noisefloor import NoiseFloorError, noise_floor_spectrogram
from .synth import generate_corpus

EXIT_CODES = {
    pipe.STAGE_CONFIG: 2,
    pipe.STAGE_MANIFEST: 3,
    pipe.STAGE_AUDIO: 4,
    pipe.STAGE_FEATURES: 5,
    pipe.STAGE_NOISE_FLOOR: 6,
    pipe.STAGE_MIXER: 7,
    pipe.STAGE_GMM: 8,
    pipe.STAGE_IVECTOR: 9,
    pipe.STAGE_BACKEND: 10,
    pipe.STAGE_EVALUATION: 11,
}


class _CliFailure(Exception):
    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


def _fail(stage, message):
    raise _CliFailure(stage, message)


def _load_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.set:
            cfg = cfg.apply_overrides(args.set)
        return cfg
    except ConfigError as exc:
        raise _CliFailure(pipe.STAGE_CONFIG, str(exc)) from exc


def _load_manifest(path, fold=None, exclude_fold=None) -> CorpusManifest:
    try:
        manifest = CorpusManifest.load(path)
        if fold is not None:
            manifest = manifest.filter(lambda e: e.fold == fold)
        if exclude_fold is not None:
            manifest = manifest.filter(lambda e: e.fold != exclude_fold)
        return manifest
    except ManifestError as exc:
        raise _CliFailure(pipe.STAGE_MANIFEST, str(exc)) from exc


def _add_config_args(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _add_fold_args(parser):
    parser.add_argument("--fold", type=int, help="keep only entries of this fold")
    parser.add_argument("--exclude-fold", type=int, help="drop entries of this fold")


def cmd_synth(args) -> int:
    paths = generate_corpus(
        args.out,
        n_classes=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        clip_seconds=args.clip_seconds,
        sample_rate=args.sample_rate,
        seed=args.seed,
    )
    print(json.dumps({k: str(v) for k, v in sorted(paths.items())}, indent=2))
    return 0


def cmd_mix(args) -> int:
    try:
        background = read_wav(args.background)
        speech = read_wav(args.speech)
    except (OSError, SceneidError) as exc:
        raise _CliFailure(pipe.STAGE_AUDIO, str(exc)) from exc
    try:
        mixed, spec = mixer_mod.mix_at_sbr(
            background, speech, args.sbr, args.seed,
            background_id=args.background, speech_id=args.speech,
        )
        write_wav(args.out, mixed)
    except (SilentSignalError, NoActivityError, RateMismatchError, ValueError) as exc:
        raise _CliFailure(pipe.STAGE_MIXER, str(exc)) from exc
    print(json.dumps(asdict(spec), sort_keys=True))
    return 0


def cmd_build_corpus(args) -> int:
    manifest = _load_manifest(args.manifest)
    pool = _load_manifest(args.speech_pool)
    try:
        sbrs = [parse_sbr_token(t) for t in args.sbrs.split(",")]
    except ConfigError as exc:
        raise _CliFailure(pipe.STAGE_CONFIG, str(exc)) from exc
    try:
        out = mixer_mod.build_multicondition_corpus(
            manifest, sbrs, pool, args.seed, args.out,
            exclude_speakers=args.exclude_speaker,
        )
    except (SceneidError, ValueError, OSError) as exc:
        raise _CliFailure(pipe.STAGE_MIXER, str(exc)) from exc
    out_path = Path(args.out) / "manifest.jsonl"
    out.save(out_path)
    print(out_path)
    return 0


def cmd_extract_features(args) -> int:
    cfg = _load_config(args)
    buf = pipe.load_audio(args.audio, cfg)
    if args.dump_spectrogram or args.dump_noise_floor:
        from .audio import frame_signal

        spec = power_spectrogram(frame_signal(buf, cfg.to_feature_config().frame))
        if args.dump_spectrogram:
            save_features(FeatureMatrix(spec.frames, args.audio, False), args.dump_spectrogram)
        if args.dump_noise_floor:
            try:
                floor = noise_floor_spectrogram(spec, cfg.to_spp_params(), cfg.nf_init_frames)
            except NoiseFloorError as exc:
                raise _CliFailure(pipe.STAGE_NOISE_FLOOR, str(exc)) from exc
            save_features(FeatureMatrix(floor.frames, args.audio, True), args.dump_noise_floor)
    feats = pipe.features_for_buffer(buf, cfg, rec_id=args.audio)
    save_features(feats, args.out)
    if args.csv:
        export_csv(feats, args.csv)
    print(f"{args.out}: {feats.n_frames} frames x {feats.dim} dims")
    return 0


def cmd_train_ubm(args) -> int:
    cfg = _load_config(args)
    manifest = _load_manifest(args.manifest, args.fold, args.exclude_fold)
    feats = pipe.manifest_features(manifest, cfg)
    try:
        ubm = gmm_mod.train_ubm(
            np.vstack([f.rows for f in feats]),
            cfg.ubm_components, n_iters=cfg.ubm_iters,
            seed=cfg.seed, kmeans_iters=cfg.kmeans_iters,
        )
    except gmm_mod.GmmError as exc:
        raise _CliFailure(pipe.STAGE_GMM, str(exc)) from exc
    gmm_mod.save_gmm(ubm, args.out)
    print(f"{args.out}: {ubm.n_components} components, final LL {ubm.ll_history[-1]:.6f}")
    return 0


def cmd_train_tv(args) -> int:
    cfg = _load_config(args)
    manifest = _load_manifest(args.manifest, args.fold, args.exclude_fold)
    ubm = gmm_mod.load_gmm(args.ubm)
    feats = pipe.manifest_features(manifest, cfg)
    try:
        stats = [gmm_mod.accumulate_stats(ubm, f) for f in feats]
    except gmm_mod.GmmError as exc:
        raise _CliFailure(pipe.STAGE_GMM, str(exc)) from exc
    try:
        tv = ivector_mod.train_tv(stats, ubm, cfg.tv_rank, n_iters=cfg.tv_iters,
                                  seed=cfg.seed + 1)
    except ivector_mod.IVectorError as exc:
        raise _CliFailure(pipe.STAGE_IVECTOR, str(exc)) from exc
    ivector_mod.save_tv(tv, args.out)
    print(f"{args.out}: rank {tv.rank}")
    return 0


def cmd_extract_ivectors(args) -> int:
    cfg = _load_config(args)
    manifest = _load_manifest(args.manifest, args.fold, args.exclude_fold)
    ubm = gmm_mod.load_gmm(args.ubm)
    tv = ivector_mod.load_tv(args.tv)
    feats = pipe.manifest_features(manifest, cfg)
    try:
        stats = [gmm_mod.accumulate_stats(ubm, f) for f in feats]
        w = ivector_mod.extract_ivectors(tv, ubm, stats)
    except gmm_mod.GmmError as exc:
        raise _CliFailure(pipe.STAGE_GMM, str(exc)) from exc
    except ivector_mod.IVectorError as exc:
        raise _CliFailure(pipe.STAGE_IVECTOR, str(exc)) from exc
    ivector_mod.save_ivectors([e.path for e in manifest.entries], w, args.out)
    print(f"{args.out}: {w.shape[0]} iVectors of rank {w.shape[1]}")
    return 0


def cmd_train_backend(args) -> int:
    manifest = _load_manifest(args.manifest)
    ids, w = ivector_mod.load_ivectors(args.ivectors)
    by_path = {e.path: e.label for e in manifest.entries}
    missing = [rid for rid in ids if rid not in by_path]
    if missing:
        _fail(pipe.STAGE_MANIFEST, f"no manifest labels for {len(missing)} iVector ids")
    try:
        model = backend_mod.train_backend(w, [by_path[rid] for rid in ids], args.alpha)
    except backend_mod.BackendError as exc:
        raise _CliFailure(pipe.STAGE_BACKEND, str(exc)) from exc
    backend_mod.save_backend(model, args.out)
    print(f"{args.out}: {len(model.class_labels)} classes, alpha {model.alpha}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    manifest = _load_manifest(args.manifest, args.fold, args.exclude_fold)
    bundle = pipe.run_training(cfg, manifest)
    bundle.save(args.out)
    print(f"{args.out}: bundle with classes {bundle.backend.class_labels}")
    return 0


def cmd_classify(args) -> int:
    bundle = pipe.ModelBundle.load(args.bundle)
    if args.manifest:
        manifest = _load_manifest(args.manifest)
        items = [(e.path, manifest.resolve(e)) for e in manifest.entries]
    else:
        items = [(a, a) for a in args.audio]
    lines = []
    for rec_id, path in items:
        buf = pipe.load_audio(path, bundle.config)
        feats = pipe.features_for_buffer(buf, bundle.config, rec_id=str(rec_id))
        stats = gmm_mod.accumulate_stats(bundle.ubm, feats)
        w = ivector_mod.extract_ivector(bundle.tv, bundle.ubm, stats)
        scores = backend_mod.score(bundle.backend, w.w)
        label = bundle.backend.class_labels[int(np.argmax(scores))]
        lines.append(json.dumps({
            "id": str(rec_id),
            "label": label,
            "scores": dict(zip(bundle.backend.class_labels, scores.tolist())),
        }, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    bundle = pipe.ModelBundle.load(args.bundle)
    manifest = _load_manifest(args.manifest, args.fold, args.exclude_fold)
    report = pipe.run_evaluation(bundle, manifest)
    if args.out:
        report.save(args.out)
    print(report.text_table())
    return 0


def cmd_sweep(args) -> int:
    bundle = pipe.ModelBundle.load(args.bundle)
    manifest = _load_manifest(args.manifest)
    pool = _load_manifest(args.speech_pool) if args.speech_pool else None
    try:
        sbrs = [parse_sbr_token(t) for t in args.sbrs.split(",")] if args.sbrs else []
    except ConfigError as exc:
        raise _CliFailure(pipe.STAGE_CONFIG, str(exc)) from exc
    report = pipe.run_sbr_sweep(
        bundle, manifest, pool, sbrs, args.seed, exclude_speakers=args.exclude_speaker
    )
    if args.out:
        report.save(args.out)
    print(report.text_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneid",
        description="Speech-robust acoustic scene classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=30)
    p.add_argument("--test-per-class", type=int, default=20)
    p.add_argument("--clip-seconds", type=float, default=10.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mix", help="mix speech into a background at an exact SBR")
    p.add_argument("--background", required=True)
    p.add_argument("--speech", required=True)
    p.add_argument("--sbr", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("build-corpus", help="build a multi-condition training corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--speech-pool", required=True)
    p.add_argument("--sbrs", required=True, help="comma list, e.g. 'clean,-5'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-speaker", action="append", default=[])
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("extract-features", help="extract features for one recording")
    _add_config_args(p)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--dump-spectrogram", help="debug dump of the power spectrogram")
    p.add_argument("--dump-noise-floor", help="debug dump of the tracked noise floor")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train-ubm", help="train the universal background model")
    _add_config_args(p)
    _add_fold_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ubm)

    p = sub.add_parser("train-tv", help="train the total-variability matrix")
    _add_config_args(p)
    _add_fold_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ubm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tv)

    p = sub.add_parser("extract-ivectors", help="extract iVectors for a manifest")
    _add_config_args(p)
    _add_fold_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ubm", required=True)
    p.add_argument("--tv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_ivectors)

    p = sub.add_parser("train-backend", help="train the Gaussian backend")
    p.add_argument("--ivectors", required=True)
    p.add_argument("--manifest", required=True, help="supplies labels per recording id")
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_backend)

    p = sub.add_parser("train", help="composite: features through backend, save a bundle")
    _add_config_args(p)
    _add_fold_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify recordings with a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest")
    p.add_argument("--audio", nargs="*", default=[])
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="accuracy and confusion over a labeled manifest")
    _add_fold_args(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate across SBR mixing conditions")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--speech-pool")
    p.add_argument("--sbrs", default="", help="comma list, e.g. 'clean,-5,0,5,10,15,20'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-speaker", action="append", default=[])
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliFailure as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    except pipe.PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    except SceneidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
