"""Level measurement and speech/background mixing at exact SBRs.

The speech-to-background ratio of a mix is defined as the active speech
level (dB) minus the background RMS level (dB). Mixing measures both levels,
applies the gain that realizes the requested SBR, and only ever attenuates
jointly when the sum would clip, so the ratio is preserved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, resample, write_wav
from .errors import SceneidError
from .manifest import CorpusManifest, ManifestEntry

ACTIVITY_MARGIN_DB = 40.0  # frames within this of the loudest frame count as active
ACTIVITY_FRAME_MS = 10.0
ACTIVITY_SMOOTH_MS = 16.0


class SilentSignalError(SceneidError):
    """Level measurement is undefined on an all-zero signal."""


class NoActivityError(SceneidError):
    """Active-level measurement found no active frames."""


class RateMismatchError(SceneidError):
    pass


@dataclass(frozen=True)
class LevelMeasurement:
    level_db: float
    method: str  # "rms" | "active_speech"


@dataclass(frozen=True)
class MixSpec:
    """Provenance of one mix; enough to rebuild it bit for bit."""

    background_id: str
    speech_id: str
    target_sbr_db: float
    speech_gain: float
    headroom_gain: float
    speech_offset: int
    rng_seed: int


def rms_level(buf: AudioBuffer) -> LevelMeasurement:
    """20*log10 of the root-mean-square amplitude."""
    if buf.samples.size == 0:
        raise SilentSignalError("empty signal has no RMS level")
    mean_sq = float(np.mean(buf.samples**2))
    if mean_sq == 0.0:
        raise SilentSignalError("all-zero signal has no defined level")
    return LevelMeasurement(10.0 * math.log10(mean_sq), "rms")


def _active_frame_energies(buf: AudioBuffer) -> np.ndarray:
    """Smoothed mean-square energy of consecutive 10 ms frames."""
    smooth_len = max(1, int(round(ACTIVITY_SMOOTH_MS * buf.sample_rate / 1000.0)))
    envelope = np.convolve(buf.samples**2, np.full(smooth_len, 1.0 / smooth_len), mode="same")
    frame_len = max(1, int(round(ACTIVITY_FRAME_MS * buf.sample_rate / 1000.0)))
    n_frames = envelope.size // frame_len
    if n_frames == 0:
        return envelope.mean(keepdims=True)
    return envelope[: n_frames * frame_len].reshape(n_frames, frame_len).mean(axis=1)


def active_speech_level(buf: AudioBuffer) -> LevelMeasurement:
    """RMS level over active frames only.

    A 10 ms frame is active when its smoothed energy is within 40 dB of the
    loudest frame; smoothing is a 16 ms moving average of the squared signal.
    """
    if buf.samples.size == 0:
        raise SilentSignalError("empty signal has no active level")
    energies = _active_frame_energies(buf)
    peak = float(energies.max())
    if peak <= 0.0:
        raise NoActivityError("no active frames: signal is silent")
    active = energies >= peak * 10.0 ** (-ACTIVITY_MARGIN_DB / 10.0)
    return LevelMeasurement(10.0 * math.log10(float(energies[active].mean())), "active_speech")


def align_speech(speech: np.ndarray, length: int, offset: int) -> np.ndarray:
    """Circularly tile speech from `offset` to cover `length` samples."""
    reps = (offset + length) // speech.size + 1
    return np.tile(speech, reps)[offset : offset + length]


def mix_at_sbr(
    background: AudioBuffer,
    speech: AudioBuffer,
    target_sbr_db: float,
    rng_seed: int,
    background_id: str = "",
    speech_id: str = "",
) -> tuple[AudioBuffer, MixSpec]:
    """Add speech to a background at an exact speech-to-background ratio.

    speech_gain = 10^((target + bg_rms_db - speech_active_db) / 20), with the
    active level measured on the looped/offset speech actually added. If the
    sum would clip, the whole mix is attenuated (SBR unchanged) and the
    applied headroom gain recorded.
    """
    if background.sample_rate != speech.sample_rate:
        raise RateMismatchError(
            f"background at {background.sample_rate} Hz, speech at {speech.sample_rate} Hz"
        )
    if background.channel_count != 1 or speech.channel_count != 1:
        raise ValueError("mix_at_sbr expects mono buffers")
    bg_rms = rms_level(background)  # SilentSignalError for silent backgrounds
    if not np.any(speech.samples):
        raise SilentSignalError("speech signal is silent")

    rng = np.random.default_rng(rng_seed)
    offset = int(rng.integers(0, speech.samples.size))
    aligned = align_speech(speech.samples, background.samples.size, offset)
    speech_active = active_speech_level(AudioBuffer(aligned, speech.sample_rate))

    gain = 10.0 ** ((target_sbr_db + bg_rms.level_db - speech_active.level_db) / 20.0)
    mix = background.samples + gain * aligned
    peak = float(np.max(np.abs(mix)))
    headroom = 1.0 if peak <= 1.0 else 1.0 / peak
    if headroom != 1.0:
        mix = mix * headroom
    spec = MixSpec(
        background_id=background_id,
        speech_id=speech_id,
        target_sbr_db=float(target_sbr_db),
        speech_gain=float(gain),
        headroom_gain=float(headroom),
        speech_offset=offset,
        rng_seed=int(rng_seed),
    )
    return AudioBuffer(mix, background.sample_rate), spec


def condition_tag(sbr_db) -> str:
    """Manifest condition tag for one mixing condition (None = no speech)."""
    return "clean" if sbr_db is None else f"sbr{sbr_db:+g}dB"


def _mix_seed(root_seed: int, condition_index: int, entry_index: int) -> int:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(condition_index, entry_index))
    return int(ss.generate_state(1)[0])


def build_multicondition_corpus(
    manifest: CorpusManifest,
    sbr_list_db,
    speech_pool: CorpusManifest,
    rng_seed: int,
    out_dir,
    exclude_speakers=(),
) -> CorpusManifest:
    """Mix every background at every SBR condition; None passes through.

    Speech clips are drawn from the pool deterministically given the seed,
    never from excluded speakers. Mixed files are written under out_dir as
    16-bit WAV; labels are inherited from the background recording.
    """
    conditions = list(sbr_list_db)
    numeric = [c for c in conditions if c is not None]
    excluded = set(exclude_speakers)
    pool = [e for e in speech_pool.entries if e.speaker_id not in excluded]
    if numeric and not pool:
        raise ValueError("speech pool is empty (or fully excluded) but numeric SBRs requested")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_entries: list[ManifestEntry] = []
    for ci, cond in enumerate(conditions):
        if cond is None:
            # Pass-through: keep records but resolve paths so they stay
            # readable from the output manifest's directory.
            out_entries.extend(
                replace(e, path=str(manifest.resolve(e))) for e in manifest.entries
            )
            continue
        tag = condition_tag(cond)
        for ei, entry in enumerate(manifest.entries):
            seed = _mix_seed(rng_seed, ci, ei)
            rng = np.random.default_rng(seed)
            speech_entry = pool[int(rng.integers(0, len(pool)))]

            background = read_wav(manifest.resolve(entry))
            speech = read_wav(speech_pool.resolve(speech_entry))
            if speech.sample_rate != background.sample_rate:
                speech = resample(speech, background.sample_rate)
            mixed, spec = mix_at_sbr(
                background,
                speech,
                cond,
                rng_seed=seed,
                background_id=entry.path,
                speech_id=speech_entry.path,
            )
            out_name = f"{ei:05d}_{Path(entry.path).stem}_{tag}.wav"
            write_wav(out_dir / out_name, mixed)
            out_entries.append(
                ManifestEntry(
                    path=out_name,
                    label=entry.label,
                    speaker_id=speech_entry.speaker_id,
                    condition=tag,
                    seed=seed,
                    gain=spec.speech_gain * spec.headroom_gain,
                )
            )
    return CorpusManifest(out_entries, base_dir=out_dir)
