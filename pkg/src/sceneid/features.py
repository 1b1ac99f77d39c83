"""MFCC and shifted-delta-cepstral features computed from power spectrograms.

The static front end keeps 21 cepstral coefficients (c0 included) from 40
mel bands; temporal context comes from shifted delta blocks instead of
conventional derivative appends. A noise-floor variant of the spectrogram
can be substituted before the mel stage (see sceneid.noisefloor).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft

from .audio import AudioBuffer, FrameConfig, Frames, frame_signal
from .errors import SceneidError

MEL_LOG_FLOOR = 1e-10  # added to band energies before log; keeps silence finite

_FEATURE_MAGIC = b"SCNF"
_FEATURE_VERSION = 1


class FeatureDimError(SceneidError):
    """Shapes of spectrogram, filter bank or feature matrix do not line up."""


@dataclass(frozen=True)
class Spectrogram:
    """Per-frame one-sided power spectra (T x B, B = fft_size/2 + 1)."""

    frames: np.ndarray
    bin_hz: float
    frame_hop_s: float

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("spectrogram frames must be 2-D (T x B)")
        if frames.size and frames.min() < 0:
            raise ValueError("spectrogram entries must be non-negative")
        object.__setattr__(self, "frames", frames)

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MelFilterBank:
    """Triangular unit-peak filters, centers equally spaced on the mel scale."""

    weights: np.ndarray  # (M, B)
    center_freqs_hz: np.ndarray  # (M,) strictly increasing

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-frame feature vectors with source metadata."""

    rows: np.ndarray  # (T, dim) float64
    recording_id: str = ""
    noise_floor: bool = False

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("feature rows must be 2-D (T x dim)")
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def n_frames(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class SdcConfig:
    """Shifted-delta parameters: spread m, k context blocks per side, first n
    coefficients differenced, blocks p frames apart."""

    m: int = 2
    k: int = 2
    n: int = 11
    p: int = 3

    def __post_init__(self) -> None:
        for name in ("m", "k", "n", "p"):
            if getattr(self, name) < 1:
                raise ValueError(f"SdcConfig.{name} must be strictly positive")

    @property
    def appended_dim(self) -> int:
        return (2 * self.k + 1) * self.n


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def power_spectrogram(frames: Frames) -> Spectrogram:
    """Squared FFT magnitudes of windowed frames, bins 0..fft/2.

    fft size is the next power of two at or above the frame length.
    """
    if frames.data.shape[0] == 0:
        raise ValueError("no frames to transform")
    fft_size = 1 << (frames.frame_len - 1).bit_length()
    spectrum = np.fft.rfft(frames.data, n=fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    return Spectrogram(power, frames.sample_rate / fft_size, frames.hop / frames.sample_rate)


def make_mel_bank(
    n_filters: int,
    fft_size: int,
    sample_rate: int,
    fmin_hz: float = 0.0,
    fmax_hz: float | None = None,
) -> MelFilterBank:
    """Triangular filters with M+2 vertices equally spaced in mel.

    Uses the HTK mel map mel(f) = 2595*log10(1 + f/700). Triangles have unit
    peak; adjacent filters overlap so interior bins are covered with total
    weight at most one.
    """
    if fmax_hz is None:
        fmax_hz = sample_rate / 2.0
    if not (0.0 <= fmin_hz < fmax_hz <= sample_rate / 2.0):
        raise ValueError(f"need 0 <= fmin < fmax <= Nyquist, got [{fmin_hz}, {fmax_hz}]")
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")

    mel_pts = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2)
    hz_pts = mel_to_hz(mel_pts)
    n_bins = fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * (sample_rate / fft_size)

    lower = hz_pts[:-2, None]
    center = hz_pts[1:-1, None]
    upper = hz_pts[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterBank(weights, hz_pts[1:-1].copy())


def mfcc(spec: Spectrogram, bank: MelFilterBank, n_ceps: int) -> FeatureMatrix:
    """Orthonormal DCT-II of log mel band powers, coefficients 0..n_ceps-1.

    Band powers are normalized by each filter's total weight so that a flat
    spectrum maps to a flat mel vector (all information about flat gain ends
    up in c0 only). c0 is kept and not normalized.
    """
    if bank.weights.shape[1] != spec.n_bins:
        raise FeatureDimError(
            f"bank built for {bank.weights.shape[1]} bins, spectrogram has {spec.n_bins}"
        )
    if n_ceps > bank.n_filters:
        raise ValueError(f"n_ceps={n_ceps} exceeds n_filters={bank.n_filters}")
    band_power = spec.frames @ bank.weights.T / bank.row_sums
    ceps = scipy.fft.dct(np.log(band_power + MEL_LOG_FLOOR), type=2, norm="ortho", axis=1)
    return FeatureMatrix(np.ascontiguousarray(ceps[:, :n_ceps]))


def append_sdc(feats: FeatureMatrix, cfg: SdcConfig) -> FeatureMatrix:
    """Concatenate 2k+1 shifted delta blocks to each static vector.

    The delta at frame u is c[0:n](u+m) - c[0:n](u-m); blocks are taken at
    offsets {-k*p .. -p, 0, p .. k*p} around the current frame and frame
    indices are clamped to the valid range, so edge frames are retained.
    """
    rows = feats.rows
    n_frames, dim = rows.shape
    if n_frames < 1:
        raise ValueError("feature matrix is empty")
    if cfg.n > dim:
        raise FeatureDimError(f"SDC needs {cfg.n} static coefficients, only {dim} present")

    t = np.arange(n_frames)
    blocks = []
    for j in range(-cfg.k, cfg.k + 1):
        base = t + j * cfg.p
        hi = np.clip(base + cfg.m, 0, n_frames - 1)
        lo = np.clip(base - cfg.m, 0, n_frames - 1)
        blocks.append(rows[hi, : cfg.n] - rows[lo, : cfg.n])
    out = np.hstack([rows] + blocks)
    return replace(feats, rows=out)


@dataclass(frozen=True)
class FeatureConfig:
    """Everything needed to turn a mono waveform into feature rows."""

    sample_rate: int = 16000
    frame: FrameConfig = FrameConfig()
    n_mels: int = 40
    n_ceps: int = 21
    fmin_hz: float = 0.0
    fmax_hz: float | None = None
    sdc: SdcConfig = SdcConfig()
    use_sdc: bool = True

    def fft_size(self) -> int:
        return 1 << (self.frame.frame_len(self.sample_rate) - 1).bit_length()


def extract_features(
    buf: AudioBuffer,
    config: FeatureConfig = FeatureConfig(),
    use_noise_floor: bool = False,
    spp_params=None,
    n_init: int = 5,
    recording_id: str = "",
) -> FeatureMatrix:
    """Full front end: frame -> power spectrogram -> [noise floor] -> MFCC -> SDC."""
    if buf.channel_count != 1:
        raise ValueError("extract_features expects a mono buffer")
    if buf.sample_rate != config.sample_rate:
        raise ValueError(
            f"buffer rate {buf.sample_rate} differs from configured {config.sample_rate}"
        )
    spec = power_spectrogram(frame_signal(buf, config.frame))
    if use_noise_floor:
        from .noisefloor import SppParams, noise_floor_spectrogram

        spec = noise_floor_spectrogram(spec, spp_params or SppParams(), n_init)
    bank = make_mel_bank(
        config.n_mels, config.fft_size(), config.sample_rate, config.fmin_hz, config.fmax_hz
    )
    feats = mfcc(spec, bank, config.n_ceps)
    if config.use_sdc:
        feats = append_sdc(feats, config.sdc)
    return replace(feats, recording_id=recording_id, noise_floor=use_noise_floor)


def save_features(feats: FeatureMatrix, path) -> None:
    """Binary container: header (dim, rows, flag, id) + row-major float32."""
    rid = feats.recording_id.encode("utf-8")
    header = struct.pack(
        "<4sHBIIH",
        _FEATURE_MAGIC,
        _FEATURE_VERSION,
        1 if feats.noise_floor else 0,
        feats.dim,
        feats.n_frames,
        len(rid),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rid)
        fh.write(feats.rows.astype("<f4").tobytes())


def load_features(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 17 or raw[:4] != _FEATURE_MAGIC:
        raise SceneidError(f"{path}: not a sceneid feature container")
    version, flag, dim, rows, id_len = struct.unpack("<HBIIH", raw[4:17])
    if version != _FEATURE_VERSION:
        raise SceneidError(f"{path}: unsupported feature container version {version}")
    rid = raw[17 : 17 + id_len].decode("utf-8")
    data = np.frombuffer(raw[17 + id_len :], dtype="<f4", count=dim * rows)
    if data.size != dim * rows:
        raise SceneidError(f"{path}: feature payload truncated")
    matrix = data.astype(np.float64).reshape(rows, dim)
    return FeatureMatrix(matrix, recording_id=rid, noise_floor=bool(flag))


def export_csv(feats: FeatureMatrix, path) -> None:
    """Debug CSV: frame index column then one column per feature dimension."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame," + ",".join(f"f{i}" for i in range(feats.dim)) + "\n")
        for t, row in enumerate(feats.rows):
            fh.write(f"{t}," + ",".join(repr(float(v)) for v in row) + "\n")
