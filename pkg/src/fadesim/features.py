"""MFCC and separable Gabor filter bank (SGBFB) features.

Both feature types start from a natural-log mel spectrogram laid out as
(channel, frame). Feature matrices are (frame, coefficient).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .frontend import AudioBuffer, FrontendConfig, LogMelSpectrogram, compute_log_mel, next_pow2

MFCC = "MFCC"
SGBFB = "SGBFB"


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (frames, coefficients)
    frame_shift: float
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


# -- MFCC ---------------------------------------------------------------------


@dataclass(frozen=True)
class MfccConfig:
    num_ceps: int = 13
    include_c0: bool = True
    delta_orders: int = 2
    delta_window: int = 2

    def validate(self, num_bands: int):
        if not 1 <= self.num_ceps <= num_bands:
            raise ValueError(f"num_ceps must be in [1, {num_bands}], got {self.num_ceps}")
        if not self.include_c0 and self.num_ceps < 2:
            raise ValueError("dropping c0 from a single cepstral coefficient leaves nothing")
        if self.delta_orders not in (0, 1, 2):
            raise ValueError(f"delta_orders must be 0, 1 or 2, got {self.delta_orders}")
        if self.delta_window < 1:
            raise ValueError(f"delta_window must be >= 1, got {self.delta_window}")


def dct_matrix(n: int, k: int) -> np.ndarray:
    """Orthonormal DCT-II basis, shape (k, n)."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rows = np.arange(k)[:, None]
    cols = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * rows * (cols + 0.5) / n)
    m[0] = np.sqrt(1.0 / n)
    return m


def delta(fm: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Regression-slope time derivative over +-window frames.

    Edges are handled by replicating the first and last frame.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if fm.num_frames == 0:
        raise ValueError("cannot take delta of an empty feature matrix")
    x = fm.values
    padded = np.concatenate([np.repeat(x[:1], window, 0), x, np.repeat(x[-1:], window, 0)])
    n = fm.num_frames
    out = np.zeros_like(x)
    for theta in range(1, window + 1):
        out += theta * (padded[window + theta : window + theta + n] - padded[window - theta : window - theta + n])
    out /= 2.0 * sum(t * t for t in range(1, window + 1))
    return FeatureMatrix(out, fm.frame_shift, fm.kind)


def mfcc(lm: LogMelSpectrogram, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    cfg.validate(lm.num_bands)
    ceps = (dct_matrix(lm.num_bands, cfg.num_ceps) @ lm.values).T
    if not cfg.include_c0:
        ceps = ceps[:, 1:]
    base = FeatureMatrix(ceps, lm.frame_shift, MFCC)
    blocks = [base.values]
    current = base
    for _ in range(cfg.delta_orders):
        current = delta(current, cfg.delta_window)
        blocks.append(current.values)
    return FeatureMatrix(np.hstack(blocks), lm.frame_shift, MFCC)


# -- SGBFB --------------------------------------------------------------------


@dataclass(frozen=True)
class GaborFilter1D:
    coefficients: np.ndarray
    center: int
    omega: float

    @property
    def width(self) -> int:
        return self.coefficients.shape[0]


def _odd(n: float) -> int:
    n = max(1, int(round(n)))
    return n if n % 2 else n + 1


def gabor_filter_1d(omega: float, nu: float = 3.5, max_width: int = 41) -> GaborFilter1D:
    """Hann-windowed cosine carrier spanning ``nu`` half-waves.

    The DC filter (omega=0) has no natural width and uses ``max_width``;
    it is scaled to unit sum. Band-pass filters have a scaled copy of the
    envelope subtracted so their coefficients sum to zero, then are scaled
    to unit peak magnitude response.
    """
    if not 0 <= omega < np.pi:
        raise ValueError(f"omega must lie in [0, pi), got {omega}")
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    width = _odd(max_width) if omega == 0 else _odd(nu * np.pi / omega)
    center = width // 2
    envelope = np.hanning(width + 2)[1:-1]
    if omega == 0:
        return GaborFilter1D(envelope / envelope.sum(), center, 0.0)
    x = np.arange(width) - center
    g = envelope * np.cos(omega * x)
    g = g - envelope * (g.sum() / envelope.sum())
    nfft = max(4096, next_pow2(8 * width))
    g = g / np.abs(np.fft.rfft(g, nfft)).max()
    return GaborFilter1D(g, center, float(omega))


def build_modulation_freqs(omega_min: float, omega_max: float, growth: float) -> list[float]:
    """DC plus a geometric series from ``omega_min`` with ratio (1+c)/(1-c)."""
    if not 0 < omega_min <= omega_max < np.pi:
        raise ValueError(f"need 0 < omega_min <= omega_max < pi, got {omega_min}, {omega_max}")
    if not 0 < growth < 1:
        raise ValueError(f"growth factor must be in (0, 1), got {growth}")
    ratio = (1 + growth) / (1 - growth)
    freqs = [0.0]
    omega = omega_min
    while omega <= omega_max * (1 + 1e-12):
        freqs.append(min(omega, omega_max))
        omega *= ratio
    return freqs


@dataclass(frozen=True)
class SgbfbConfig:
    spectral_omega_min: float = np.pi / 16
    spectral_omega_max: float = np.pi / 2
    temporal_omega_min: float = np.pi / 32
    temporal_omega_max: float = np.pi / 4
    growth: float = 1.0 / 3.0  # ratio (1+c)/(1-c) = 2
    nu: float = 3.5
    spectral_dc_width: int = 69
    temporal_dc_width: int = 41
    channel_subsample_factor: float = 4.0

    @property
    def spectral_mod_freqs(self) -> list[float]:
        return build_modulation_freqs(self.spectral_omega_min, self.spectral_omega_max, self.growth)

    @property
    def temporal_mod_freqs(self) -> list[float]:
        return build_modulation_freqs(self.temporal_omega_min, self.temporal_omega_max, self.growth)

    def validate(self):
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.channel_subsample_factor <= 0:
            raise ValueError("channel_subsample_factor must be positive")
        if self.spectral_dc_width < 1 or self.temporal_dc_width < 1:
            raise ValueError("DC filter widths must be >= 1")
        # raises on bad ranges
        self.spectral_mod_freqs, self.temporal_mod_freqs

    def spectral_filters(self) -> list[GaborFilter1D]:
        return [gabor_filter_1d(w, self.nu, self.spectral_dc_width) for w in self.spectral_mod_freqs]

    def temporal_filters(self) -> list[GaborFilter1D]:
        return [gabor_filter_1d(w, self.nu, self.temporal_dc_width) for w in self.temporal_mod_freqs]


def retained_channels(num_bands: int, filter_width: int, factor: float = 4.0) -> np.ndarray:
    """Channels kept after spectral filtering: a stride grid through the center."""
    stride = max(1, math.ceil(filter_width / factor))
    center = (num_bands - 1) // 2
    below = np.arange(center, -1, -stride)[::-1]
    above = np.arange(center + stride, num_bands, stride)
    return np.concatenate([below, above])


def sgbfb_dim(cfg: SgbfbConfig, num_bands: int) -> int:
    n_temporal = len(cfg.temporal_mod_freqs)
    return sum(
        len(retained_channels(num_bands, f.width, cfg.channel_subsample_factor)) * n_temporal
        for f in cfg.spectral_filters()
    )


def sgbfb(lm: LogMelSpectrogram, cfg: SgbfbConfig = SgbfbConfig()) -> FeatureMatrix:
    """Separable spectro-temporal Gabor features.

    Each (spectral, temporal) filter pair filters the mel channels first,
    keeps a subsampled set of channels, then filters those trajectories
    over time. Both axes use reflective boundary extension.
    """
    cfg.validate()
    if lm.num_frames == 0 or lm.num_bands == 0:
        raise ValueError("empty log-mel spectrogram")
    blocks = []
    temporal = cfg.temporal_filters()
    for sf in cfg.spectral_filters():
        spec = convolve1d(lm.values, sf.coefficients, axis=0, mode="reflect")
        spec = spec[retained_channels(lm.num_bands, sf.width, cfg.channel_subsample_factor)]
        for tf in temporal:
            blocks.append(convolve1d(spec, tf.coefficients, axis=1, mode="reflect"))
    return FeatureMatrix(np.vstack(blocks).T, lm.frame_shift, SGBFB)


# -- conditioning and pipeline -------------------------------------------------


def mean_variance_normalize(fm: FeatureMatrix) -> FeatureMatrix:
    """Per-coefficient zero mean, unit population variance over the utterance."""
    if fm.num_frames < 2:
        raise ValueError("mean/variance normalization needs at least 2 frames")
    mean = fm.values.mean(axis=0)
    centered = fm.values - mean
    std = np.sqrt((centered**2).mean(axis=0))
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    out = centered / np.where(flat, 1.0, std)
    out[:, flat] = 0.0
    return FeatureMatrix(out, fm.frame_shift, fm.kind)


@dataclass(frozen=True)
class FeatureSpec:
    """Everything needed to turn a waveform into recognizer observations."""

    kind: str = SGBFB
    frontend: FrontendConfig = FrontendConfig()
    mfcc: MfccConfig = MfccConfig()
    sgbfb: SgbfbConfig = SgbfbConfig()
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in (MFCC, SGBFB):
            raise ValueError(f"feature kind must be {MFCC!r} or {SGBFB!r}, got {self.kind!r}")


def extract_features(audio: AudioBuffer, spec: FeatureSpec = FeatureSpec()) -> FeatureMatrix:
    lm = compute_log_mel(audio, spec.frontend)
    fm = mfcc(lm, spec.mfcc) if spec.kind == MFCC else sgbfb(lm, spec.sgbfb)
    return mean_variance_normalize(fm) if spec.normalize else fm


def write_feature_csv(fm: FeatureMatrix, path) -> Path:
    """Frame rows, coefficient columns; the first column is the frame time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"c{i}" for i in range(fm.dim)])
        for n, row in enumerate(fm.values):
            writer.writerow([repr(n * fm.frame_shift)] + [repr(float(v)) for v in row])
    return path


def read_feature_csv(path, kind: str = SGBFB) -> FeatureMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    data = np.array([[float(v) for v in r] for r in rows])
    shift = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
    return FeatureMatrix(data[:, 1:], shift, kind)
