"""Shared DSP substrate: WAV I/O, windowed STFT, Mel banding, speech levels
and SNR-controlled noise mixing."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .errors import RevtimeError

# Linear-magnitude floor applied before taking logs (-200 dB) so silence
# stays finite.
LOG_FLOOR = 1e-10

PCM16_SCALE = 32768.0

# Activity gate used by active_speech_level: 10 ms frames, frames more than
# 35 dB below the loudest frame are treated as silence.
ACTIVITY_FRAME_S = 0.010
ACTIVITY_THRESHOLD_DB = -35.0

WINDOW_KINDS = ("hann", "hamming", "rect")


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono sampled signal, float64, nominally within [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise RevtimeError("audio must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise RevtimeError("audio contains NaN or Inf samples")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise RevtimeError("sample_rate must be a positive integer")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate


def load_wav(path) -> AudioBuffer:
    """Read a RIFF WAV file (PCM16 or IEEE float) as a mono AudioBuffer.

    int16 samples are scaled by 1/32768. Multichannel files are reduced to
    channel 0 with a warning.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise RevtimeError(f"unreadable WAV file {path}: {exc}") from exc
    if data.size == 0:
        raise RevtimeError(f"zero-length audio: {path}")
    if data.ndim == 2:
        warnings.warn(f"{path}: multichannel input, taking channel 0")
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data / PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise RevtimeError(f"unsupported WAV sample format {data.dtype}: {path}")
    return AudioBuffer(samples, int(rate))


def save_wav(buf: AudioBuffer, path, fmt: str = "pcm16") -> None:
    """Write an AudioBuffer as mono WAV, 16-bit PCM by default.

    Samples outside [-1, 1] are clipped with a warning. fmt="float32"
    writes IEEE float (used for impulse responses, which keep full range).
    """
    if fmt == "pcm16":
        x = buf.samples
        if np.max(np.abs(x)) > 1.0:
            warnings.warn(f"{path}: samples exceed full scale, clipping")
            x = np.clip(x, -1.0, 1.0)
        pcm = np.clip(np.rint(x * PCM16_SCALE), -32768, 32767).astype(np.int16)
        wavfile.write(path, buf.sample_rate, pcm)
    elif fmt == "float32":
        wavfile.write(path, buf.sample_rate, buf.samples.astype(np.float32))
    else:
        raise RevtimeError(f"unknown WAV output format: {fmt}")


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters for the windowed STFT (all lengths in samples)."""

    frame_len: int
    hop: int
    window: str = "hamming"
    fft_len: int = 0

    def __post_init__(self):
        if self.fft_len == 0:
            object.__setattr__(self, "fft_len", _next_pow2(self.frame_len))
        if not (0 < self.hop <= self.frame_len <= self.fft_len):
            raise RevtimeError(
                "need 0 < hop <= frame_len <= fft_len, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_len={self.fft_len}"
            )
        if self.window not in WINDOW_KINDS:
            raise RevtimeError(f"window must be one of {WINDOW_KINDS}")

    @classmethod
    def for_sample_rate(cls, sample_rate: int, frame_ms: float = 32.0,
                        hop_ms: float = 16.0, window: str = "hamming") -> "StftConfig":
        frame = max(2, int(round(sample_rate * frame_ms / 1000.0)))
        hop = max(1, int(round(sample_rate * hop_ms / 1000.0)))
        return cls(frame_len=frame, hop=min(hop, frame), window=window)

    def window_array(self) -> np.ndarray:
        if self.window == "hann":
            return np.hanning(self.frame_len)
        if self.window == "hamming":
            return np.hamming(self.frame_len)
        return np.ones(self.frame_len)


@dataclass(frozen=True, eq=False)
class BandSpectrogram:
    """Log-magnitude time-frequency matrix in dB, linear FFT bins or Mel bands.

    values has shape (n_bands, n_frames); band_centers are in Hz and
    frame_times in seconds (uniform hop spacing).
    """

    values: np.ndarray
    band_centers: np.ndarray
    frame_times: np.ndarray
    mode: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        centers = np.asarray(self.band_centers, dtype=np.float64)
        times = np.asarray(self.frame_times, dtype=np.float64)
        if self.mode not in ("linear_bins", "mel_bands"):
            raise RevtimeError(f"unknown spectrogram mode: {self.mode}")
        if values.ndim != 2:
            raise RevtimeError("spectrogram values must be 2-D (bands x frames)")
        if not np.all(np.isfinite(values)):
            raise RevtimeError("spectrogram contains non-finite values")
        if centers.shape != (values.shape[0],) or np.any(np.diff(centers) <= 0):
            raise RevtimeError("band_centers must be strictly increasing, one per band")
        if times.shape != (values.shape[1],):
            raise RevtimeError("frame_times length must match frame count")
        if times.size > 1:
            steps = np.diff(times)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
                raise RevtimeError("frame_times must increase uniformly")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "band_centers", centers)
        object.__setattr__(self, "frame_times", times)

    @property
    def n_bands(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_signal(buf: AudioBuffer, frame_len: int, hop: int) -> np.ndarray:
    """Slice a signal into overlapping frames (n_frames x frame_len).

    The final partial frame is dropped.
    """
    if len(buf) < frame_len:
        raise RevtimeError(
            f"signal of {len(buf)} samples is shorter than one frame ({frame_len})"
        )
    return sliding_window_view(buf.samples, frame_len)[::hop]


def stft_complex(buf: AudioBuffer, cfg: StftConfig) -> np.ndarray:
    """Complex STFT, shape (fft_len//2 + 1, n_frames)."""
    frames = frame_signal(buf, cfg.frame_len, cfg.hop)
    windowed = frames * cfg.window_array()
    return np.fft.rfft(windowed, n=cfg.fft_len, axis=1).T


def stft_log_magnitude(buf: AudioBuffer, cfg: StftConfig) -> BandSpectrogram:
    """Log-magnitude STFT in dB: 20*log10(|X| + LOG_FLOOR) per bin and frame."""
    spec = stft_complex(buf, cfg)
    values = 20.0 * np.log10(np.abs(spec) + LOG_FLOOR)
    n_bins, n_frames = values.shape
    centers = np.arange(n_bins) * (buf.sample_rate / cfg.fft_len)
    times = np.arange(n_frames) * (cfg.hop / buf.sample_rate)
    return BandSpectrogram(values, centers, times, "linear_bins")


def hz_to_mel(f):
    """Mel scale: 2595*log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular Mel filters; each row averages FFT bins (rows sum to 1)."""

    weights: np.ndarray
    band_centers: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        centers = np.asarray(self.band_centers, dtype=np.float64)
        if weights.ndim != 2 or centers.shape != (weights.shape[0],):
            raise RevtimeError("filterbank shape mismatch")
        if np.any(weights < 0):
            raise RevtimeError("filterbank weights must be non-negative")
        sums = weights.sum(axis=1)
        if np.any(sums <= 0):
            raise RevtimeError("every filterbank band needs nonzero support")
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise RevtimeError("filterbank rows must sum to 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "band_centers", centers)

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(n_fft_bins: int, n_bands: int, sample_rate: int) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the Mel scale.

    Covers 0 Hz to sample_rate/2 over n_fft_bins rfft bins; rows are
    renormalized to sum to 1 so banding is an average, not a sum.
    """
    if n_bands < 2:
        raise RevtimeError("need at least 2 Mel bands")
    if n_fft_bins < n_bands:
        raise RevtimeError(f"{n_bands} bands exceed the {n_fft_bins} available bins")
    bin_freqs = np.arange(n_fft_bins) * (sample_rate / 2.0) / (n_fft_bins - 1)
    mel_points = np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), n_bands + 2)
    hz_points = mel_to_hz(mel_points)
    weights = np.zeros((n_bands, n_fft_bins))
    for b in range(n_bands):
        lo, mid, hi = hz_points[b], hz_points[b + 1], hz_points[b + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        weights[b] = np.maximum(0.0, np.minimum(rising, falling))
    sums = weights.sum(axis=1)
    if np.any(sums <= 0):
        raise RevtimeError("too many Mel bands for this FFT resolution")
    weights /= sums[:, None]
    return MelFilterbank(weights, hz_points[1:-1])


def apply_mel(spec: BandSpectrogram, fb: MelFilterbank) -> BandSpectrogram:
    """Average a linear-bin dB spectrogram into Mel bands.

    Averaging happens in the linear power domain (10^(dB/10)), then the
    result is converted back to dB, so a spectrally flat frame is unchanged.
    """
    if spec.mode != "linear_bins":
        raise RevtimeError("apply_mel expects a linear-bin spectrogram")
    if spec.n_bands != fb.weights.shape[1]:
        raise RevtimeError(
            f"spectrogram has {spec.n_bands} bins, filterbank expects {fb.weights.shape[1]}"
        )
    power = 10.0 ** (spec.values / 10.0)
    banded = fb.weights @ power
    values = 10.0 * np.log10(banded)
    return BandSpectrogram(values, fb.band_centers, spec.frame_times, "mel_bands")


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def rms_level_db(buf: AudioBuffer) -> float:
    """Whole-signal RMS level in dB relative to full scale."""
    rms = _rms(buf.samples)
    if rms == 0.0:
        raise RevtimeError("cannot measure the level of digital silence")
    return 20.0 * np.log10(rms)


def active_speech_level(buf: AudioBuffer) -> float:
    """RMS level in dB over speech-active frames only.

    A 10 ms frame counts as active when its RMS is within 35 dB of the
    loudest frame. Raises if no frame is active (pure silence).
    """
    frame = max(1, int(round(buf.sample_rate * ACTIVITY_FRAME_S)))
    n_frames = int(np.ceil(len(buf) / frame))
    frame_rms = np.empty(n_frames)
    for i in range(n_frames):
        frame_rms[i] = _rms(buf.samples[i * frame:(i + 1) * frame])
    peak = frame_rms.max()
    if peak == 0.0:
        raise RevtimeError("no active frames: signal is silent")
    active = frame_rms >= peak * 10.0 ** (ACTIVITY_THRESHOLD_DB / 20.0)
    chunks = [buf.samples[i * frame:(i + 1) * frame] for i in np.nonzero(active)[0]]
    return 20.0 * float(np.log10(_rms(np.concatenate(chunks))))


def noise_gain_for_snr(speech: AudioBuffer, noise: AudioBuffer, snr_db: float) -> float:
    """Gain to apply to noise so that active-speech level minus noise RMS
    level (over the speech span) equals snr_db."""
    if speech.sample_rate != noise.sample_rate:
        raise RevtimeError(
            f"sample-rate mismatch: speech {speech.sample_rate} Hz vs noise {noise.sample_rate} Hz"
        )
    if len(noise) < len(speech):
        raise RevtimeError(
            f"noise ({len(noise)} samples) is shorter than speech ({len(speech)})"
        )
    span = noise.samples[:len(speech)]
    noise_rms = _rms(span)
    if noise_rms == 0.0:
        raise RevtimeError("noise is silent over the speech span")
    speech_level = active_speech_level(speech)
    noise_level = 20.0 * np.log10(noise_rms)
    return float(10.0 ** ((speech_level - noise_level - snr_db) / 20.0))


def mix_at_snr(speech: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise to speech at the requested SNR.

    Noise is truncated to the speech length and scaled; the sum is not
    renormalized, so the speech component is returned untouched.
    """
    gain = noise_gain_for_snr(speech, noise, snr_db)
    mixed = speech.samples + gain * noise.samples[:len(speech)]
    return AudioBuffer(mixed, speech.sample_rate)


def convolve(signal: AudioBuffer, kernel: AudioBuffer) -> AudioBuffer:
    """Full linear convolution (output length len(a) + len(b) - 1)."""
    if signal.sample_rate != kernel.sample_rate:
        raise RevtimeError(
            f"sample-rate mismatch: {signal.sample_rate} Hz vs {kernel.sample_rate} Hz"
        )
    out = fftconvolve(signal.samples, kernel.samples, mode="full")
    return AudioBuffer(out, signal.sample_rate)
