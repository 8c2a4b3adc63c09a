"""From-scratch MFCC extraction producing the [100, 40] audio representation.

Pipeline per frame: pre-emphasis -> Hamming window -> power spectrum via an
iterative radix-2 FFT -> triangular mel filterbank -> log -> orthonormal
DCT-II -> first 40 coefficients.  Frames inside each one-second span are
mean-aggregated into a single row; waveforms shorter than 100 seconds are
padded with the silence feature, longer ones are strided down to 100 rows
with the same even-selection rule used for video frames.

The FFT and DCT are verified against naive O(n^2) oracles in the tests.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, FormatError, ValidationError

LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono PCM samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise ValidationError("waveform contains non-finite samples")


@dataclass(frozen=True)
class MfccConfig:
    n_coefficients: int = 40
    n_mel_filters: int = 40
    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0
    fft_size: int = 512
    pre_emphasis: float = 0.97
    seconds: int = 100

    def validate(self, sample_rate: int) -> None:
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < self.frame_length(sample_rate):
            raise ConfigError(
                f"fft_size {self.fft_size} shorter than frame "
                f"({self.frame_length(sample_rate)} samples)"
            )
        if self.n_coefficients > self.n_mel_filters:
            raise ConfigError("cannot keep more coefficients than mel filters")

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_length_ms * sample_rate / 1000.0))

    def frame_hop(self, sample_rate: int) -> int:
        return int(round(self.frame_hop_ms * sample_rate / 1000.0))


# -- FFT -----------------------------------------------------------------------


@lru_cache(maxsize=8)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ConfigError(f"FFT length must be a power of two, got {n}")
    a = x[..., _bit_reversal(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        view = a.reshape(a.shape[:-1] + (n // size, size))
        even = view[..., :half].copy()
        odd = view[..., half:] * twiddle
        view[..., :half] = even + odd
        view[..., half:] = even - odd
        size *= 2
    return a


def hamming_window(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def power_spectrum(frame: np.ndarray, fft_size: int = 512, windowed: bool = True) -> np.ndarray:
    """|DFT|^2 / fft_size for the positive-frequency bins of one frame.

    ``windowed=False`` skips the Hamming window (used by tests that place a
    cosine exactly on a bin).
    """
    frame = np.asarray(frame, dtype=np.float64)
    spectra = _power_spectra(frame.reshape(1, -1), fft_size, windowed)
    return spectra[0]


def _power_spectra(frames: np.ndarray, fft_size: int, windowed: bool = True) -> np.ndarray:
    n_frames, frame_len = frames.shape
    if frame_len > fft_size:
        raise ConfigError(f"frame length {frame_len} exceeds fft_size {fft_size}")
    if windowed:
        frames = frames * hamming_window(frame_len)
    padded = np.zeros((n_frames, fft_size))
    padded[:, :frame_len] = frames
    spectrum = fft_radix2(padded)[:, : fft_size // 2 + 1]
    return (spectrum.real ** 2 + spectrum.imag ** 2) / fft_size


# -- mel filterbank --------------------------------------------------------------


def hz_to_mel(hz) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters with 50% overlap from 0 Hz to Nyquist.

    Rows are filters, columns the fft_size/2 + 1 spectrum bins; each row
    peaks at 1.0 on its mel-spaced center.
    """
    n_bins = config.fft_size // 2 + 1
    nyquist = sample_rate / 2.0
    corners = mel_to_hz(np.linspace(0.0, float(hz_to_mel(nyquist)), config.n_mel_filters + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / config.fft_size
    bank = np.zeros((config.n_mel_filters, n_bins))
    for j in range(config.n_mel_filters):
        left, center, right = corners[j], corners[j + 1], corners[j + 2]
        if center - left <= 0 or right - center <= 0:
            raise ConfigError(
                f"mel filter {j} is degenerate; too many filters for this resolution"
            )
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[j] = np.clip(np.minimum(rising, falling), 0.0, None)
        if bank[j].max() <= 0.0:
            raise ConfigError(
                f"mel filter {j} covers no spectrum bin; too many filters for this fft size"
            )
    return bank


# -- DCT ----------------------------------------------------------------------


@lru_cache(maxsize=8)
def _dct_matrix(n: int) -> np.ndarray:
    j = np.arange(n)
    k = j[:, None]
    m = np.cos(np.pi * (j + 0.5) * k / n)
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


def dct_ii(v: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 1:
        raise ValidationError("dct_ii needs at least one element")
    return v @ _dct_matrix(v.shape[-1]).T


# -- full pipeline ---------------------------------------------------------------


def _frame_mfccs(samples: np.ndarray, config: MfccConfig, sample_rate: int) -> np.ndarray:
    """Per-frame MFCC matrix [n_frames, n_coefficients] (possibly empty)."""
    frame_len = config.frame_length(sample_rate)
    hop = config.frame_hop(sample_rate)
    if samples.size < frame_len:
        return np.zeros((0, config.n_coefficients))
    emphasized = np.empty_like(samples)
    emphasized[0] = samples[0]
    emphasized[1:] = samples[1:] - config.pre_emphasis * samples[:-1]
    n_frames = 1 + (samples.size - frame_len) // hop
    starts = np.arange(n_frames) * hop
    frames = emphasized[starts[:, None] + np.arange(frame_len)]
    bank = mel_filterbank(config, sample_rate).T
    out = np.empty((n_frames, config.n_coefficients))
    chunk = 4096
    for lo in range(0, n_frames, chunk):
        spectra = _power_spectra(frames[lo:lo + chunk], config.fft_size)
        mel = np.log(spectra @ bank + LOG_FLOOR)
        out[lo:lo + chunk] = dct_ii(mel)[:, : config.n_coefficients]
    return out


def silence_feature(config: MfccConfig, sample_rate: int) -> np.ndarray:
    """MFCC row of an all-zero frame (the padding value for short audio)."""
    frame_len = config.frame_length(sample_rate)
    spectrum = power_spectrum(np.zeros(frame_len), config.fft_size)
    bank = mel_filterbank(config, sample_rate)
    return dct_ii(np.log(bank @ spectrum + LOG_FLOOR))[: config.n_coefficients]


def mfcc_features(wav: Waveform, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """Extract the [seconds, n_coefficients] feature matrix from a waveform.

    One row per second (mean over that second's frames); short waveforms pad
    with the silence feature, long ones select evenly spaced second rows.
    """
    config.validate(wav.sample_rate)
    sr = wav.sample_rate
    per_frame = _frame_mfccs(wav.samples, config, sr)
    hop = config.frame_hop(sr)
    silence = silence_feature(config, sr)

    n_secs = int(np.ceil(wav.samples.size / sr)) if wav.samples.size else 0
    rows = np.empty((n_secs, config.n_coefficients))
    if per_frame.shape[0]:
        seconds_of_frame = (np.arange(per_frame.shape[0]) * hop) // sr
    else:
        seconds_of_frame = np.zeros(0, dtype=np.int64)
    for s in range(n_secs):
        mask = seconds_of_frame == s
        rows[s] = per_frame[mask].mean(axis=0) if mask.any() else silence

    target = config.seconds
    if n_secs == target:
        return rows
    if n_secs < target:
        out = np.empty((target, config.n_coefficients))
        out[:n_secs] = rows
        out[n_secs:] = silence
        return out
    # same even-selection rule as video frame sampling
    from .data import sample_frame_indices

    plan = sample_frame_indices(n_secs, target)
    return rows[np.array(plan.indices)]


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM WAV file; stereo is averaged down to mono."""
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"not a readable WAV file: {path}: {exc}") from exc
    if width != 2:
        raise FormatError(f"only 16-bit PCM WAV is supported, got {8 * width}-bit: {path}")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return Waveform(samples=data, sample_rate=rate)
