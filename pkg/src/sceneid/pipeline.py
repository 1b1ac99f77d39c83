"""End-to-end training, evaluation and SBR-sweep orchestration.

Stages run in the fixed order features -> UBM -> statistics -> T -> iVectors
-> backend. Any stage failure aborts with the failing stage named so the CLI
can map it to a distinct exit code. Given identical inputs and seeds every
artifact this module writes is byte-identical across reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from . import gmm as gmm_mod
from . import ivector as ivector_mod
from .audio import AudioBuffer, downmix_mono, read_wav, resample
from .config import PipelineConfig
from .errors import SceneidError
from .features import FeatureMatrix, extract_features
from .manifest import CorpusManifest, ManifestError
from .mixer import SilentSignalError, condition_tag, mix_at_sbr
from .noisefloor import NoiseFloorError

_BUNDLE_FILES = ("config.txt", "ubm.gmm", "tv.tvm", "backend.gbe")

STAGE_CONFIG = "config"
STAGE_MANIFEST = "manifest"
STAGE_AUDIO = "audio-io"
STAGE_FEATURES = "features"
STAGE_NOISE_FLOOR = "noise-floor"
STAGE_MIXER = "mixer"
STAGE_GMM = "gmm-ubm"
STAGE_IVECTOR = "ivector"
STAGE_BACKEND = "backend"
STAGE_EVALUATION = "evaluation"


class PipelineStageError(SceneidError):
    """Failure attributed to one named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class EvalSample:
    """One already-loaded test item (used by sweeps that mix in memory)."""

    buf: AudioBuffer
    label: str
    condition: str = "clean"
    rec_id: str = ""


@dataclass
class EvalReport:
    """Accuracy and confusion counts, pooled and per condition tag."""

    labels: list
    confusion: np.ndarray  # (L, L) counts, rows = true, cols = predicted
    per_condition: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.confusion)) / total if total else 0.0

    def condition_accuracy(self, tag: str) -> float:
        mat = self.per_condition[tag]
        total = int(mat.sum())
        return float(np.trace(mat)) / total if total else 0.0

    @classmethod
    def from_predictions(cls, labels, y_true, y_pred, conditions=None) -> "EvalReport":
        labels = list(labels)
        index = {lab: i for i, lab in enumerate(labels)}
        n = len(labels)
        confusion = np.zeros((n, n), dtype=np.int64)
        per_condition: dict = {}
        if conditions is None:
            conditions = ["clean"] * len(y_true)
        for truth, pred, cond in zip(y_true, y_pred, conditions):
            confusion[index[truth], index[pred]] += 1
            if cond not in per_condition:
                per_condition[cond] = np.zeros((n, n), dtype=np.int64)
            per_condition[cond][index[truth], index[pred]] += 1
        return cls(labels, confusion, per_condition)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "accuracy": self.accuracy,
            "total": self.total,
            "confusion": self.confusion.tolist(),
            "per_condition": {
                tag: {
                    "accuracy": self.condition_accuracy(tag),
                    "total": int(mat.sum()),
                    "confusion": mat.tolist(),
                }
                for tag, mat in sorted(self.per_condition.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def text_table(self) -> str:
        width = max((len(lab) for lab in self.labels), default=5) + 2
        lines = [f"overall accuracy: {self.accuracy:.4f} ({self.total} items)"]
        for tag in sorted(self.per_condition):
            lines.append(f"  {tag}: {self.condition_accuracy(tag):.4f}")
        lines.append("")
        header = " " * width + "".join(lab.rjust(width) for lab in self.labels)
        lines.append(header + "   (rows: truth, cols: predicted)")
        for i, lab in enumerate(self.labels):
            lines.append(
                lab.rjust(width)
                + "".join(str(int(v)).rjust(width) for v in self.confusion[i])
            )
        return "\n".join(lines) + "\n"


@dataclass
class ModelBundle:
    """Trained UBM + T + backend plus the config snapshot that produced them."""

    config: PipelineConfig
    ubm: gmm_mod.GmmModel
    tv: ivector_mod.TvMatrix
    backend: backend_mod.BackendModel

    def save(self, bundle_dir) -> None:
        bundle_dir = Path(bundle_dir)
        bundle_dir.mkdir(parents=True, exist_ok=True)
        self.config.save(bundle_dir / "config.txt")
        gmm_mod.save_gmm(self.ubm, bundle_dir / "ubm.gmm")
        ivector_mod.save_tv(self.tv, bundle_dir / "tv.tvm")
        backend_mod.save_backend(self.backend, bundle_dir / "backend.gbe")
        from .serialize import sha256_hex

        index = {
            "version": 1,
            "root_seed": self.config.seed,
            "files": {
                name: sha256_hex((bundle_dir / name).read_bytes()) for name in _BUNDLE_FILES
            },
        }
        (bundle_dir / "bundle.json").write_text(
            json.dumps(index, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, bundle_dir) -> "ModelBundle":
        bundle_dir = Path(bundle_dir)
        for name in _BUNDLE_FILES + ("bundle.json",):
            if not (bundle_dir / name).exists():
                raise PipelineStageError(STAGE_CONFIG, f"bundle file missing: {name}")
        from .serialize import sha256_hex

        index = json.loads((bundle_dir / "bundle.json").read_text(encoding="utf-8"))
        for name, expect in index["files"].items():
            found = sha256_hex((bundle_dir / name).read_bytes())
            if found != expect:
                raise PipelineStageError(STAGE_CONFIG, f"bundle file corrupted: {name}")
        return cls(
            config=PipelineConfig.load(bundle_dir / "config.txt"),
            ubm=gmm_mod.load_gmm(bundle_dir / "ubm.gmm"),
            tv=ivector_mod.load_tv(bundle_dir / "tv.tvm"),
            backend=backend_mod.load_backend(bundle_dir / "backend.gbe"),
        )


def load_audio(path, config: PipelineConfig) -> AudioBuffer:
    """Read, downmix and resample one recording to the pipeline rate."""
    try:
        buf = downmix_mono(read_wav(path))
        return resample(buf, config.sample_rate)
    except (OSError, SceneidError, ValueError) as exc:
        raise PipelineStageError(STAGE_AUDIO, f"{path}: {exc}") from exc


def features_for_buffer(buf: AudioBuffer, config: PipelineConfig, rec_id: str = "") -> FeatureMatrix:
    try:
        return extract_features(
            buf,
            config.to_feature_config(),
            use_noise_floor=config.noise_floor,
            spp_params=config.to_spp_params(),
            n_init=config.nf_init_frames,
            recording_id=rec_id,
        )
    except NoiseFloorError as exc:
        raise PipelineStageError(STAGE_NOISE_FLOOR, f"{rec_id}: {exc}") from exc
    except (SceneidError, ValueError) as exc:
        raise PipelineStageError(STAGE_FEATURES, f"{rec_id}: {exc}") from exc


def manifest_features(manifest: CorpusManifest, config: PipelineConfig) -> list[FeatureMatrix]:
    return [
        features_for_buffer(load_audio(manifest.resolve(e), config), config, rec_id=e.path)
        for e in manifest.entries
    ]


def run_training(config: PipelineConfig, manifest: CorpusManifest) -> ModelBundle:
    """features -> UBM -> statistics -> T -> iVectors -> backend."""
    try:
        manifest.validate()
        if not manifest.entries:
            raise ManifestError("training manifest is empty")
    except ManifestError as exc:
        raise PipelineStageError(STAGE_MANIFEST, str(exc)) from exc

    feats = manifest_features(manifest, config)

    try:
        pooled = np.vstack([f.rows for f in feats])
        ubm = gmm_mod.train_ubm(
            pooled,
            config.ubm_components,
            n_iters=config.ubm_iters,
            seed=config.seed,
            kmeans_iters=config.kmeans_iters,
        )
        stats = [gmm_mod.accumulate_stats(ubm, f) for f in feats]
    except gmm_mod.GmmError as exc:
        raise PipelineStageError(STAGE_GMM, str(exc)) from exc

    try:
        tv = ivector_mod.train_tv(
            stats, ubm, config.tv_rank, n_iters=config.tv_iters, seed=config.seed + 1
        )
        w_matrix = ivector_mod.extract_ivectors(tv, ubm, stats)
    except ivector_mod.IVectorError as exc:
        raise PipelineStageError(STAGE_IVECTOR, str(exc)) from exc

    try:
        gb = backend_mod.train_backend(
            w_matrix, [e.label for e in manifest.entries], config.alpha
        )
    except backend_mod.BackendError as exc:
        raise PipelineStageError(STAGE_BACKEND, str(exc)) from exc

    return ModelBundle(config=config, ubm=ubm, tv=tv, backend=gb)


def _classify_buffers(bundle: ModelBundle, samples) -> list[str]:
    config = bundle.config
    stats = []
    for s in samples:
        feats = features_for_buffer(s.buf, config, rec_id=s.rec_id)
        try:
            stats.append(gmm_mod.accumulate_stats(bundle.ubm, feats))
        except gmm_mod.GmmError as exc:
            raise PipelineStageError(STAGE_GMM, f"{s.rec_id}: {exc}") from exc
    try:
        w_matrix = ivector_mod.extract_ivectors(bundle.tv, bundle.ubm, stats)
    except ivector_mod.IVectorError as exc:
        raise PipelineStageError(STAGE_IVECTOR, str(exc)) from exc
    try:
        return backend_mod.classify_many(bundle.backend, w_matrix)
    except backend_mod.BackendError as exc:
        raise PipelineStageError(STAGE_BACKEND, str(exc)) from exc


def evaluate_samples(bundle: ModelBundle, samples) -> EvalReport:
    samples = list(samples)
    known = set(bundle.backend.class_labels)
    unknown = {s.label for s in samples} - known
    if unknown:
        raise PipelineStageError(
            STAGE_EVALUATION, f"labels {sorted(unknown)} not in the trained label set"
        )
    predictions = _classify_buffers(bundle, samples)
    return EvalReport.from_predictions(
        bundle.backend.class_labels,
        [s.label for s in samples],
        predictions,
        [s.condition for s in samples],
    )


def run_evaluation(bundle: ModelBundle, manifest: CorpusManifest) -> EvalReport:
    """Evaluate manifest entries with the bundle's exact feature configuration."""
    try:
        manifest.validate()
    except ManifestError as exc:
        raise PipelineStageError(STAGE_MANIFEST, str(exc)) from exc
    samples = [
        EvalSample(
            buf=load_audio(manifest.resolve(e), bundle.config),
            label=e.label,
            condition=e.condition,
            rec_id=e.path,
        )
        for e in manifest.entries
    ]
    return evaluate_samples(bundle, samples)


def run_sbr_sweep(
    bundle: ModelBundle,
    clean_manifest: CorpusManifest,
    speech_pool: CorpusManifest | None,
    sbr_list,
    seed: int,
    exclude_speakers=(),
) -> EvalReport:
    """Evaluate clean data plus seeded in-memory mixes at each SBR.

    An empty sbr_list reduces to plain evaluation of the clean manifest.
    """
    sbr_list = list(sbr_list)
    if not sbr_list:
        return run_evaluation(bundle, clean_manifest)
    try:
        clean_manifest.validate()
    except ManifestError as exc:
        raise PipelineStageError(STAGE_MANIFEST, str(exc)) from exc

    pool = []
    if speech_pool is not None:
        excluded = set(exclude_speakers)
        pool = [e for e in speech_pool.entries if e.speaker_id not in excluded]
    if any(c is not None for c in sbr_list) and not pool:
        raise PipelineStageError(
            STAGE_MIXER, "numeric SBR conditions requested but the speech pool is empty"
        )

    buffers = [load_audio(clean_manifest.resolve(e), bundle.config) for e in clean_manifest]
    speech_cache: dict = {}
    samples: list[EvalSample] = []
    for ci, cond in enumerate(sbr_list):
        tag = condition_tag(cond)
        for ei, entry in enumerate(clean_manifest.entries):
            if cond is None:
                samples.append(EvalSample(buffers[ei], entry.label, tag, entry.path))
                continue
            mix_seed = _sweep_seed(seed, ci, ei)
            rng = np.random.default_rng(mix_seed)
            speech_entry = pool[int(rng.integers(0, len(pool)))]
            if speech_entry.path not in speech_cache:
                speech_cache[speech_entry.path] = load_audio(
                    speech_pool.resolve(speech_entry), bundle.config
                )
            try:
                mixed, _ = mix_at_sbr(
                    buffers[ei],
                    speech_cache[speech_entry.path],
                    cond,
                    rng_seed=mix_seed,
                    background_id=entry.path,
                    speech_id=speech_entry.path,
                )
            except (SilentSignalError, SceneidError) as exc:
                raise PipelineStageError(STAGE_MIXER, f"{entry.path}: {exc}") from exc
            samples.append(EvalSample(mixed, entry.label, tag, f"{entry.path}@{tag}"))
    return evaluate_samples(bundle, samples)


def _sweep_seed(root_seed: int, condition_index: int, entry_index: int) -> int:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(condition_index, entry_index))
    return int(ss.generate_state(1)[0])
