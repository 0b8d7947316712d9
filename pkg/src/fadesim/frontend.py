"""Waveform container, WAV I/O, STFT and log-mel spectrogram."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import InputTooShortError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path) -> AudioBuffer:
    """Read a mono 16-bit integer or 32-bit float WAV file."""
    sample_rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples, sample_rate)


def write_wav(path, audio: AudioBuffer) -> Path:
    """Write audio as 32-bit float WAV (no clipping)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), audio.sample_rate, audio.samples.astype(np.float32))
    return path


def hz_to_mel(f):
    """Mel value of frequency ``f`` in Hz: 2595 * log10(1 + f/700)."""
    f_arr = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f_arr)) or np.any(f_arr < 0):
        raise ValueError(f"frequency must be finite and >= 0, got {f}")
    mel = 2595.0 * np.log10(1.0 + f_arr / 700.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(m):
    """Inverse of :func:`hz_to_mel`."""
    m_arr = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m_arr)) or np.any(m_arr < 0):
        raise ValueError(f"mel value must be finite and >= 0, got {m}")
    hz = 700.0 * (10.0 ** (m_arr / 2595.0) - 1.0)
    return float(hz) if hz.ndim == 0 else hz


def _ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def frame_count(num_samples: int, window: int, shift: int) -> int:
    return (num_samples - window) // shift + 1


def stft(audio: AudioBuffer, window_ms: float = 25.0, shift_ms: float = 10.0) -> np.ndarray:
    """Hamming-windowed magnitude spectra, shape (frames, fft_size // 2 + 1).

    The first frame starts at sample 0 and no padding is applied, so the
    frame count is ``floor((len - win) / shift) + 1``.
    """
    win = _ms_to_samples(window_ms, audio.sample_rate)
    hop = _ms_to_samples(shift_ms, audio.sample_rate)
    if win < 1 or hop < 1:
        raise ValueError("window and shift must each span at least one sample")
    if len(audio) < win:
        raise InputTooShortError(
            f"audio has {len(audio)} samples, shorter than the {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, win)[::hop]
    nfft = next_pow2(win)
    return np.abs(np.fft.rfft(frames * np.hamming(win), n=nfft, axis=1))


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters equally spaced on the mel axis.

    Triangles are linear in mel, so two neighbouring bands cross exactly
    at the mel midpoint between their centers.
    """

    num_bands: int
    f_min: float
    f_max: float
    fft_size: int
    sample_rate: int
    weights: np.ndarray = field(repr=False)  # (num_bands, fft_size // 2 + 1)
    band_centers: np.ndarray = field(repr=False)
    band_edges_mel: np.ndarray = field(repr=False)

    def response(self, freqs_hz) -> np.ndarray:
        """Continuous triangle weights evaluated at arbitrary frequencies."""
        mel = hz_to_mel(np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64)))
        return _triangles(np.atleast_1d(mel), self.band_edges_mel)


def _triangles(mel: np.ndarray, edges: np.ndarray) -> np.ndarray:
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (mel[None, :] - lo) / (mid - lo)
    falling = (hi - mel[None, :]) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def build_mel_filterbank(
    num_bands: int = 31,
    f_min: float = 64.0,
    f_max: float = 8000.0,
    fft_size: int = 512,
    sample_rate: int = 16000,
) -> MelFilterbank:
    if num_bands < 2:
        raise ValueError(f"num_bands must be >= 2, got {num_bands}")
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise ValueError(
            f"need 0 <= f_min < f_max <= sample_rate/2, got f_min={f_min}, "
            f"f_max={f_max}, sample_rate={sample_rate}"
        )
    edges = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_bands + 2)
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    weights = _triangles(hz_to_mel(bin_freqs), edges)
    centers = mel_to_hz(edges[1:-1])
    # bands narrower than the bin spacing fall back to their nearest bin
    for k in np.flatnonzero(weights.sum(axis=1) == 0):
        weights[k, int(np.argmin(np.abs(bin_freqs - centers[k])))] = 1.0
    return MelFilterbank(
        num_bands=num_bands,
        f_min=float(f_min),
        f_max=float(f_max),
        fft_size=fft_size,
        sample_rate=sample_rate,
        weights=weights,
        band_centers=centers,
        band_edges_mel=edges,
    )


@dataclass(frozen=True)
class LogMelSpectrogram:
    values: np.ndarray  # (num_bands, frames), natural log
    frame_shift: float  # seconds
    band_centers: np.ndarray

    @property
    def num_bands(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FrontendConfig:
    num_bands: int = 31
    f_min: float = 64.0
    f_max: float = 8000.0
    window_ms: float = 25.0
    shift_ms: float = 10.0
    preemphasis: float = 0.0  # 0 disables

    def filterbank(self, sample_rate: int) -> MelFilterbank:
        return _cached_filterbank(self, sample_rate)


@functools.lru_cache(maxsize=16)
def _cached_filterbank(cfg: FrontendConfig, sample_rate: int) -> MelFilterbank:
    win = _ms_to_samples(cfg.window_ms, sample_rate)
    return build_mel_filterbank(
        cfg.num_bands, cfg.f_min, min(cfg.f_max, sample_rate / 2), next_pow2(win), sample_rate
    )


def log_mel_spectrogram(
    audio: AudioBuffer,
    fb: MelFilterbank,
    window_ms: float = 25.0,
    shift_ms: float = 10.0,
    preemphasis: float = 0.0,
) -> LogMelSpectrogram:
    """Natural-log mel band energies with a floor of ``LOG_FLOOR``."""
    if audio.sample_rate != fb.sample_rate:
        raise ValueError(
            f"audio rate {audio.sample_rate} Hz does not match filterbank rate {fb.sample_rate} Hz"
        )
    if preemphasis:
        x = audio.samples
        audio = AudioBuffer(np.concatenate([x[:1], x[1:] - preemphasis * x[:-1]]), audio.sample_rate)
    mag = stft(audio, window_ms, shift_ms)
    if mag.shape[1] != fb.weights.shape[1]:
        raise ValueError(
            f"filterbank expects {fb.weights.shape[1]} bins, STFT produced {mag.shape[1]}"
        )
    energy = fb.weights @ (mag**2).T
    return LogMelSpectrogram(
        values=np.log(np.maximum(energy, LOG_FLOOR)),
        frame_shift=shift_ms / 1000.0,
        band_centers=fb.band_centers,
    )


def compute_log_mel(audio: AudioBuffer, cfg: FrontendConfig = FrontendConfig()) -> LogMelSpectrogram:
    return log_mel_spectrogram(
        audio, cfg.filterbank(audio.sample_rate), cfg.window_ms, cfg.shift_ms, cfg.preemphasis
    )


def window_samples(ms: float, sample_rate: int) -> int:
    return _ms_to_samples(ms, sample_rate)

