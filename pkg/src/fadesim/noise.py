"""Maskers and SNR-controlled mixing.

SNR convention: broadband RMS over the full extent of the speech signal
versus the RMS of the noise section actually added, in dB (20 log10).
Absolute SRT values shift with this convention, so it is fixed here and
nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch

from .frontend import AudioBuffer, next_pow2, read_wav, write_wav

FILE = "file"
STATIONARY = "stationary_surrogate"
GATED = "gated_surrogate"


@dataclass(frozen=True)
class NoiseSource:
    kind: str
    audio: AudioBuffer
    label: str

    def __post_init__(self):
        if self.kind not in (FILE, STATIONARY, GATED):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if len(self.audio) == 0 or rms_level(self.audio) == 0:
            raise ValueError(f"noise {self.label!r} is silent")


@dataclass(frozen=True)
class SnrSpec:
    snr_db: float

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError(f"SNR must be finite, got {self.snr_db}")


def rms_level(a: AudioBuffer) -> float:
    if len(a) == 0:
        raise ValueError("RMS of an empty signal is undefined")
    return float(np.sqrt(np.mean(a.samples**2)))


def snr_db(speech: np.ndarray, noise: np.ndarray) -> float:
    """Measured SNR of two separate components."""
    return float(20 * np.log10(np.sqrt(np.mean(speech**2)) / np.sqrt(np.mean(noise**2))))


def mix_components(speech: AudioBuffer, noise: NoiseSource, snr, rng_seed):
    """Return ``(speech_samples, scaled_noise_section)`` for the requested SNR."""
    snr = snr.snr_db if isinstance(snr, SnrSpec) else float(snr)
    if not np.isfinite(snr):
        raise ValueError(f"SNR must be finite, got {snr}")
    if speech.sample_rate != noise.audio.sample_rate:
        raise ValueError(
            f"speech at {speech.sample_rate} Hz cannot be mixed with noise at "
            f"{noise.audio.sample_rate} Hz"
        )
    n_speech, n_noise = len(speech), len(noise.audio)
    if n_noise <= n_speech:
        raise ValueError(
            f"noise {noise.label!r} ({n_noise} samples) must be longer than speech ({n_speech})"
        )
    speech_rms = rms_level(speech)
    if speech_rms == 0:
        raise ValueError("speech is silent; SNR is undefined")
    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, n_noise - n_speech + 1))
    section = noise.audio.samples[start : start + n_speech]
    section_rms = np.sqrt(np.mean(section**2))
    if section_rms == 0:
        raise ValueError(f"selected section of noise {noise.label!r} is silent")
    gain = speech_rms / (section_rms * 10 ** (snr / 20))
    return speech.samples, gain * section


def mix_at_snr(speech: AudioBuffer, noise: NoiseSource, snr, rng_seed) -> AudioBuffer:
    """Add a random noise section scaled to the requested SNR. No clipping."""
    s, n = mix_components(speech, noise, snr, rng_seed)
    return AudioBuffer(s + n, speech.sample_rate)


def long_term_spectrum(audio: AudioBuffer, nperseg: int = 4096):
    """Welch power spectral density (frequencies, power)."""
    nperseg = min(nperseg, 1 << (len(audio).bit_length() - 1))
    return welch(audio.samples, fs=audio.sample_rate, window="hann", nperseg=nperseg)


def gen_stationary_speech_shaped(
    reference: AudioBuffer, duration: float, rng_seed, label: str = "icra1"
) -> NoiseSource:
    """Random-phase noise with the long-term spectrum of ``reference``.

    The output has the reference's global RMS.
    """
    if len(reference) == 0:
        raise ValueError("reference signal is empty")
    if duration < 1.0:
        raise ValueError(f"surrogate noise must last at least 1 s, got {duration}")
    sr = reference.sample_rate
    freqs, psd = long_term_spectrum(reference)
    n = next_pow2(int(round(duration * sr)))
    grid = np.fft.rfftfreq(n, 1.0 / sr)
    magnitude = np.sqrt(np.interp(grid, freqs, psd))
    magnitude[0] = 0.0
    rng = np.random.default_rng(rng_seed)
    phase = rng.uniform(0, 2 * np.pi, grid.shape[0])
    x = np.fft.irfft(magnitude * np.exp(1j * phase), n)[: int(round(duration * sr))]
    x *= rms_level(reference) / np.sqrt(np.mean(x**2))
    return NoiseSource(STATIONARY, AudioBuffer(x, sr), label)


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 * (1 - np.cos(np.pi * (np.arange(n) + 0.5) / n))


def gate_envelope(
    num_samples: int,
    sample_rate: int,
    max_gap_ms: float,
    rng: np.random.Generator,
    on_ms=(80.0, 600.0),
    off_ms=(20.0, 250.0),
    ramp_ms: float = 10.0,
) -> np.ndarray:
    """Random on/off envelope whose silent stretches never exceed ``max_gap_ms``.

    Each gap of length g is flanked by raised-cosine ramps of
    ``min(ramp_ms, g)`` so the envelope tends to 1 as the gap bound shrinks.
    """
    if not max_gap_ms > 0:
        raise ValueError(f"max_gap_ms must be positive, got {max_gap_ms}")
    if not (0 < on_ms[0] <= on_ms[1] and 0 <= off_ms[0] <= off_ms[1] and ramp_ms >= 0):
        raise ValueError(f"invalid gate ranges on={on_ms} off={off_ms} ramp={ramp_ms}")
    off_lo, off_hi = min(off_ms[0], max_gap_ms), min(off_ms[1], max_gap_ms)
    ms = sample_rate / 1000.0
    env = np.ones(num_samples)
    # random phase: the signal may start inside an on-segment
    pos = -int(rng.uniform(0, on_ms[1]) * ms)
    while pos < num_samples:
        pos += int(round(rng.uniform(*on_ms) * ms))
        gap = rng.uniform(off_lo, off_hi)
        g = int(round(gap * ms))
        r = int(round(min(ramp_ms, gap) * ms))
        shape = np.concatenate([_raised_cosine(r)[::-1], np.zeros(g), _raised_cosine(r)])
        lo, hi = pos, pos + shape.shape[0]
        a, b = max(lo, 0), min(hi, num_samples)
        if a < b:
            env[a:b] = shape[a - lo : b - lo]
        pos = hi
    return env


def gen_gated(
    base: NoiseSource,
    max_gap_ms: float = 250.0,
    rng_seed=0,
    label: str = "icra5-250",
    on_ms=(80.0, 600.0),
    off_ms=(20.0, 250.0),
    ramp_ms: float = 10.0,
) -> NoiseSource:
    """Multiply ``base`` by a random gate with bounded gaps."""
    rng = np.random.default_rng(rng_seed)
    sr = base.audio.sample_rate
    env = gate_envelope(len(base.audio), sr, max_gap_ms, rng, on_ms, off_ms, ramp_ms)
    return NoiseSource(GATED, AudioBuffer(base.audio.samples * env, sr), label)


def load_noise(path, label: str) -> NoiseSource:
    return NoiseSource(FILE, read_wav(path), label)


def export_noise(noise: NoiseSource, path):
    return write_wav(path, noise.audio)
