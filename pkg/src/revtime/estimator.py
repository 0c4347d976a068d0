"""Blind T60 estimation from the negative-side variance of per-band decay
slopes in a log-magnitude spectrogram.

Two front-end variants exist: full_band fits a decay slope in every FFT bin
and pools them all, while mel_band first averages bins into Mel bands and
gates time-frequency points on a per-band SNR estimate before pooling. The
pooled negative-slope variance is mapped to a T60 through a trained
polynomial in log10(NSV).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.polynomial import polynomial as npoly

from .errors import EstimationError, RevtimeError
from .signal_core import (
    LOG_FLOOR,
    AudioBuffer,
    BandSpectrogram,
    StftConfig,
    build_mel_filterbank,
)

VARIANTS = ("full_band", "mel_band")

# Fraction of frames assumed noise-dominated when estimating each band's
# noise floor.
NOISE_FLOOR_PERCENTILE = 10.0


@dataclass(frozen=True, eq=False)
class GradientMatrix:
    """Per-band, per-window decay slopes in dB/s with a selection mask."""

    slopes: np.ndarray
    selected: np.ndarray
    window_frames: int

    def __post_init__(self):
        slopes = np.asarray(self.slopes, dtype=np.float64)
        selected = np.asarray(self.selected, dtype=bool)
        if slopes.ndim != 2 or selected.shape != slopes.shape:
            raise RevtimeError("selection mask must match the slope matrix shape")
        if not np.all(np.isfinite(slopes)):
            raise RevtimeError("slopes contain non-finite values")
        if int(self.window_frames) < 2:
            raise RevtimeError("window_frames must be at least 2")
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "selected", selected)
        object.__setattr__(self, "window_frames", int(self.window_frames))


@dataclass(frozen=True)
class NsvStatistic:
    """Population variance of the selected negative slopes, in (dB/s)^2."""

    value: float
    n_negative: int
    n_selected: int

    def __post_init__(self):
        if self.value < 0:
            raise RevtimeError("variance cannot be negative")
        if self.n_negative > self.n_selected:
            raise RevtimeError("negative count cannot exceed selected count")


@dataclass(frozen=True)
class EstimatorConfig:
    """Front-end settings; a trained model is only valid with the settings
    it was fitted under.

    dynamic_range_db clamps the banded spectrogram that far below its own
    maximum. Without it the ungated full-band variant pools slopes from
    bins at the bottom of the representable range (deep nulls of the room
    response), where 16-bit quantization of stored audio rewrites the
    statistics entirely.
    """

    variant: str
    stft: StftConfig
    n_mel_bands: int = 23
    window_frames: int = 7
    snr_margin: float = 6.0
    min_duration_s: float = 1.0
    dynamic_range_db: float = 80.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise RevtimeError(f"variant must be one of {VARIANTS}")
        if self.window_frames < 2:
            raise RevtimeError("window_frames must be at least 2")
        if self.n_mel_bands < 2:
            raise RevtimeError("need at least 2 Mel bands")
        if self.dynamic_range_db <= 0:
            raise RevtimeError("dynamic_range_db must be positive")

    @classmethod
    def default(cls, variant: str, sample_rate: int = 16000) -> "EstimatorConfig":
        return cls(variant=variant, stft=StftConfig.for_sample_rate(sample_rate))


@dataclass(frozen=True, eq=False)
class MappingModel:
    """Trained NSV -> T60 mapping: a polynomial in log10(NSV).

    coefficients are in ascending order. target records whether the fit
    predicted T60 directly or log10(T60). t60_train_max is the nominal top
    of the training range and doubles as the saturated-output value.
    """

    coefficients: np.ndarray
    t60_train_max: float
    variant_tag: str
    config: EstimatorConfig
    target: str = "t60"

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if coeffs.ndim != 1 or coeffs.size == 0 or not np.all(np.isfinite(coeffs)):
            raise RevtimeError("coefficients must be a non-empty finite vector")
        if self.t60_train_max <= 0:
            raise RevtimeError("t60_train_max must be positive")
        if self.variant_tag not in VARIANTS:
            raise RevtimeError(f"variant_tag must be one of {VARIANTS}")
        if self.target not in ("t60", "log_t60"):
            raise RevtimeError("target must be 't60' or 'log_t60'")
        object.__setattr__(self, "coefficients", coeffs)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant_tag,
            "coefficients": [float(c) for c in self.coefficients],
            "t60_train_max": float(self.t60_train_max),
            "target": self.target,
            "stft": {
                "frame_len": self.config.stft.frame_len,
                "hop": self.config.stft.hop,
                "window": self.config.stft.window,
                "fft_len": self.config.stft.fft_len,
            },
            "n_mel_bands": self.config.n_mel_bands,
            "window_frames": self.config.window_frames,
            "snr_margin": self.config.snr_margin,
            "min_duration_s": self.config.min_duration_s,
            "dynamic_range_db": self.config.dynamic_range_db,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MappingModel":
        cfg = EstimatorConfig(
            variant=data["variant"],
            stft=StftConfig(**data["stft"]),
            n_mel_bands=int(data["n_mel_bands"]),
            window_frames=int(data["window_frames"]),
            snr_margin=float(data["snr_margin"]),
            min_duration_s=float(data.get("min_duration_s", 1.0)),
            dynamic_range_db=float(data.get("dynamic_range_db", 80.0)),
        )
        return cls(
            coefficients=np.asarray(data["coefficients"], dtype=np.float64),
            t60_train_max=float(data["t60_train_max"]),
            variant_tag=data["variant"],
            config=cfg,
            target=data.get("target", "t60"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MappingModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EstimateResult:
    t60: float
    nsv: NsvStatistic
    flags: tuple


@lru_cache(maxsize=8)
def _mel_filterbank(n_fft_bins: int, n_bands: int, sample_rate: int):
    # The filterbank depends only on these three ints; rebuilding it per
    # utterance would dominate the Mel variant's runtime.
    return build_mel_filterbank(n_fft_bins, n_bands, sample_rate)


@lru_cache(maxsize=32)
def _slope_row(window_frames: int, dt: float) -> np.ndarray:
    # Second row of the pseudoinverse of the shared [1, t] design matrix.
    design = np.column_stack([np.ones(window_frames),
                              np.arange(window_frames) * dt])
    row = np.linalg.pinv(design)[1].copy()
    row.setflags(write=False)
    return row


def decay_gradients(spec: BandSpectrogram, window_frames: int) -> GradientMatrix:
    """Least-squares decay slope of every length-window_frames sliding window.

    The pseudoinverse of the common (window_frames x 2) design matrix is
    computed once; its slope row applied to all windows of all bands in a
    single matrix product. Slopes are in dB per second.
    """
    w = int(window_frames)
    if w < 2:
        raise RevtimeError("window_frames must be at least 2")
    if spec.n_frames < w:
        raise RevtimeError(
            f"spectrogram has {spec.n_frames} frames, need at least {w}"
        )
    dt = spec.frame_times[1] - spec.frame_times[0]
    slope_row = _slope_row(w, float(dt))
    windows = sliding_window_view(spec.values, w, axis=1)
    slopes = windows @ slope_row
    return GradientMatrix(slopes, np.ones(slopes.shape, dtype=bool), w)


def estimate_band_snr(spec: BandSpectrogram) -> np.ndarray:
    """Per-band SNR map in dB: values minus the band's 10th-percentile floor.

    The floor uses the linear-interpolation percentile convention, computed
    with a partial sort (cheaper than a full percentile call at this size).
    """
    n = spec.n_frames
    if n < 10:
        raise RevtimeError("need at least 10 frames to estimate band noise floors")
    pos = NOISE_FLOOR_PERCENTILE / 100.0 * (n - 1)
    lo = int(pos)
    frac = pos - lo
    part = np.partition(spec.values, (lo, min(lo + 1, n - 1)), axis=1)
    floor = part[:, lo] + frac * (part[:, min(lo + 1, n - 1)] - part[:, lo])
    return spec.values - floor[:, None]


def select_bins(grads: GradientMatrix, snr: np.ndarray, margin_db: float) -> GradientMatrix:
    """Keep only slopes whose window starts at a frame with SNR >= margin_db."""
    snr = np.asarray(snr, dtype=np.float64)
    n_bands, n_windows = grads.slopes.shape
    if snr.ndim != 2 or snr.shape[0] != n_bands or snr.shape[1] < n_windows:
        raise RevtimeError(
            f"SNR map {snr.shape} incompatible with gradients {grads.slopes.shape}"
        )
    mask = grads.selected & (snr[:, :n_windows] >= margin_db)
    return GradientMatrix(grads.slopes, mask, grads.window_frames)


def nsv(grads: GradientMatrix) -> NsvStatistic:
    """Population variance of the selected negative slopes."""
    negatives = grads.slopes[grads.selected & (grads.slopes < 0.0)]
    if negatives.size < 2:
        raise EstimationError(
            "insufficient decay evidence: fewer than 2 selected negative gradients"
        )
    return NsvStatistic(
        value=float(np.var(negatives)),
        n_negative=int(negatives.size),
        n_selected=int(np.count_nonzero(grads.selected)),
    )


def map_nsv_to_t60(stat: NsvStatistic, model: MappingModel):
    """Evaluate the trained mapping. Returns (t60_seconds, flags).

    An NSV of exactly 0 saturates to t60_train_max (indistinguishable from
    an arbitrarily long decay). Negative polynomial output clamps to 0.0;
    there is no upper clamp.
    """
    if stat.value < 0:
        raise RevtimeError("NSV cannot be negative")
    if stat.value == 0.0:
        return float(model.t60_train_max), ("saturated",)
    pred = float(npoly.polyval(np.log10(stat.value), model.coefficients))
    if model.target == "log_t60":
        return float(10.0 ** pred), ()
    if pred < 0.0:
        return 0.0, ("clamped",)
    return pred, ()


def band_spectrogram(buf: AudioBuffer, cfg: EstimatorConfig) -> BandSpectrogram:
    """Estimator front-end: peak-normalized banded log-magnitude spectrogram
    clamped to the configured dynamic range below its maximum.

    Peak normalization and the relative clamp make the pipeline independent
    of input level. For the mel_band variant, bins are averaged in the power
    domain before the single log, which matches
    apply_mel(stft_log_magnitude(...)) to within rounding while avoiding the
    full-resolution log.
    """
    if buf.duration < cfg.min_duration_s:
        raise EstimationError(
            f"audio of {buf.duration:.3f} s is shorter than the "
            f"{cfg.min_duration_s:.3f} s minimum"
        )
    peak = float(np.max(np.abs(buf.samples)))
    if peak == 0.0:
        raise EstimationError("cannot estimate from digital silence")
    stft = cfg.stft
    if len(buf) < stft.frame_len:
        raise EstimationError(
            f"audio of {len(buf)} samples is shorter than one analysis frame"
        )
    frames = sliding_window_view(buf.samples / peak, stft.frame_len)[::stft.hop]
    # Frame-major keeps abs and the Mel banding on contiguous arrays.
    mag = np.abs(np.fft.rfft(frames * stft.window_array(), n=stft.fft_len, axis=1))
    n_frames, n_bins = mag.shape
    times = np.arange(n_frames) * (stft.hop / buf.sample_rate)
    if cfg.variant == "full_band":
        values = np.ascontiguousarray((20.0 * np.log10(mag + LOG_FLOOR)).T)
        centers = np.arange(n_bins) * (buf.sample_rate / stft.fft_len)
        mode = "linear_bins"
    else:
        fb = _mel_filterbank(n_bins, cfg.n_mel_bands, buf.sample_rate)
        banded = np.square(mag + LOG_FLOOR) @ fb.weights.T
        values = np.ascontiguousarray((10.0 * np.log10(banded)).T)
        centers = fb.band_centers
        mode = "mel_bands"
    np.maximum(values, values.max() - cfg.dynamic_range_db, out=values)
    return BandSpectrogram(values, centers, times, mode)


def nsv_from_audio(buf: AudioBuffer, cfg: EstimatorConfig) -> NsvStatistic:
    """Run the front-end through the NSV statistic (no T60 mapping)."""
    spec = band_spectrogram(buf, cfg)
    grads = decay_gradients(spec, cfg.window_frames)
    if cfg.variant == "mel_band":
        grads = select_bins(grads, estimate_band_snr(spec), cfg.snr_margin)
    return nsv(grads)


def estimate_t60(buf: AudioBuffer, model: MappingModel,
                 cfg: EstimatorConfig | None = None) -> EstimateResult:
    """Blind single-estimate T60 for one utterance.

    cfg defaults to the front-end settings recorded in the model; passing a
    config with a different variant is an error.
    """
    if cfg is None:
        cfg = model.config
    if cfg.variant != model.variant_tag:
        raise RevtimeError(
            f"config variant {cfg.variant!r} does not match model {model.variant_tag!r}"
        )
    stat = nsv_from_audio(buf, cfg)
    t60, flags = map_nsv_to_t60(stat, model)
    return EstimateResult(t60=t60, nsv=stat, flags=flags)
