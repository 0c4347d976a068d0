"""Simulated ground truth: shoebox image-method impulse responses and
Schroeder backward-integration T60 measurement."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import RevtimeError
from .signal_core import AudioBuffer

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.161

# Fit window of the decay-curve line, per the T30 convention: regress
# between -5 dB and -35 dB and extrapolate to 60 dB.
FIT_START_DB = -5.0
FIT_STOP_DB = -35.0

EDC_FLOOR = 1e-40  # relative energy floor, -400 dB


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with one source and one microphone."""

    dims: tuple
    source: tuple
    mic: tuple
    target_t60: float
    sample_rate: int
    rir_length: float
    max_image_order: int

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dims)
        source = tuple(float(v) for v in self.source)
        mic = tuple(float(v) for v in self.mic)
        if len(dims) != 3 or len(source) != 3 or len(mic) != 3:
            raise RevtimeError("dims, source and mic must each have 3 components")
        if any(d <= 0 for d in dims):
            raise RevtimeError("room dimensions must be positive")
        for name, point in (("source", source), ("mic", mic)):
            if not all(0.0 < p < d for p, d in zip(point, dims)):
                raise RevtimeError(f"{name} must lie strictly inside the room")
        if source == mic:
            raise RevtimeError("source and mic must not coincide")
        if self.target_t60 <= 0:
            raise RevtimeError("target_t60 must be positive")
        if self.rir_length < self.target_t60:
            raise RevtimeError("rir_length must be at least target_t60")
        if int(self.sample_rate) <= 0:
            raise RevtimeError("sample_rate must be positive")
        if int(self.max_image_order) < 0:
            raise RevtimeError("max_image_order must be non-negative")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "mic", mic)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "max_image_order", int(self.max_image_order))

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "source": list(self.source),
            "mic": list(self.mic),
            "target_t60": self.target_t60,
            "sample_rate": self.sample_rate,
            "rir_length": self.rir_length,
            "max_image_order": self.max_image_order,
        }


@dataclass(frozen=True, eq=False)
class Rir:
    """Impulse response plus where it came from (a RoomSpec or "measured")."""

    buf: AudioBuffer
    provenance: object = "measured"
    order_warning: bool = False

    def __post_init__(self):
        if not np.any(self.buf.samples != 0.0):
            raise RevtimeError("impulse response has zero energy")


@dataclass(frozen=True, eq=False)
class Edc:
    """Energy decay curve in dB per sample, normalized to 0 dB at the start."""

    curve: np.ndarray

    def __post_init__(self):
        curve = np.asarray(self.curve, dtype=np.float64)
        if curve.ndim != 1 or curve.size == 0:
            raise RevtimeError("EDC must be a non-empty 1-D curve")
        if abs(curve[0]) > 1e-9:
            raise RevtimeError("EDC must start at 0 dB")
        if curve.size > 1 and np.any(np.diff(curve) > 1e-9):
            raise RevtimeError("EDC must be non-increasing")
        object.__setattr__(self, "curve", curve)


def sabine_absorption(dims, t60: float) -> float:
    """Uniform surface absorption that yields t60 under the Sabine relation
    alpha = 0.161 * V / (S * t60)."""
    lx, ly, lz = (float(v) for v in dims)
    if min(lx, ly, lz) <= 0 or t60 <= 0:
        raise RevtimeError("dimensions and t60 must be positive")
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + ly * lz + lx * lz)
    alpha = SABINE_CONSTANT * volume / (surface * t60)
    if alpha > 1.0 + 1e-9:
        raise RevtimeError(
            f"room cannot achieve target T60: required absorption {alpha:.3f} > 1"
        )
    return min(alpha, 1.0)


def required_image_order(dims, rir_length: float) -> int:
    """Per-axis image order needed for reflections to cover rir_length."""
    reach = SPEED_OF_SOUND * rir_length
    return int(np.ceil(reach / (2.0 * min(float(d) for d in dims)))) + 1


def image_method_rir(spec: RoomSpec) -> Rir:
    """Rectangular-room image-method impulse response.

    Wall reflections have magnitude sqrt(1 - alpha), with alpha from the
    Sabine inversion of target_t60, and reverse phase. The sign alternation
    matters with nearest-sample delay rounding: all-positive images pile up
    coherently in late bins and drag the measured decay far past the target.
    Each image contributes amplitude 1 / (4*pi*distance) at the
    nearest-sample arrival time.
    """
    alpha = sabine_absorption(spec.dims, spec.target_t60)
    beta = -float(np.sqrt(1.0 - alpha))
    fs = spec.sample_rate
    n_out = int(round(spec.rir_length * fs))
    reach = SPEED_OF_SOUND * spec.rir_length
    dims = np.asarray(spec.dims)
    src = np.asarray(spec.source)
    mic = np.asarray(spec.mic)

    order_warning = False
    orders = []
    for d in range(3):
        needed = int(np.ceil(reach / (2.0 * dims[d]))) + 1
        if needed > spec.max_image_order:
            needed = spec.max_image_order
            order_warning = True
        orders.append(needed)
    if order_warning:
        warnings.warn(
            "max_image_order truncates the image set before rir_length is covered"
        )

    h = np.zeros(n_out)
    axis_n = [np.arange(-orders[d], orders[d] + 1) for d in range(3)]
    for px, py, pz in product((0, 1), repeat=3):
        parity = (px, py, pz)
        # Image coordinates 2*n*L + (1-2p)*s; reflection count |2n - p| per axis.
        coords = [
            2.0 * axis_n[d] * dims[d] + (1 - 2 * parity[d]) * src[d] - mic[d]
            for d in range(3)
        ]
        counts = [np.abs(2 * axis_n[d] - parity[d]) for d in range(3)]
        dist = np.sqrt(
            coords[0][:, None, None] ** 2
            + coords[1][None, :, None] ** 2
            + coords[2][None, None, :] ** 2
        ).ravel()
        refl = (
            counts[0][:, None, None]
            + counts[1][None, :, None]
            + counts[2][None, None, :]
        ).ravel()
        sample = np.rint(fs * dist / SPEED_OF_SOUND).astype(np.int64)
        keep = sample < n_out
        amp = beta ** refl[keep].astype(np.float64) / (4.0 * np.pi * dist[keep])
        h += np.bincount(sample[keep], weights=amp, minlength=n_out)
    return Rir(AudioBuffer(h, fs), provenance=spec, order_warning=order_warning)


def schroeder_edc(rir) -> Edc:
    """Backward-integrated energy decay curve of an impulse response.

    curve[n] = 10*log10(sum_{m>=n} h^2[m] / total energy), floored at
    -400 dB where the tail energy is exactly zero.
    """
    buf = rir.buf if isinstance(rir, Rir) else rir
    energy = np.square(buf.samples)
    tail = np.cumsum(energy[::-1])[::-1]
    total = tail[0]
    if total <= 0.0:
        raise RevtimeError("cannot integrate a zero-energy impulse response")
    curve = 10.0 * np.log10(np.maximum(tail / total, EDC_FLOOR))
    curve[0] = 0.0
    return Edc(curve)


def t60_from_edc(edc: Edc, sample_rate: int) -> float:
    """T60 from a line fit to the EDC between -5 dB and -35 dB, extrapolated
    to a 60 dB traversal."""
    curve = edc.curve
    below_start = np.nonzero(curve <= FIT_START_DB)[0]
    below_stop = np.nonzero(curve <= FIT_STOP_DB)[0]
    if below_stop.size == 0:
        raise RevtimeError(
            f"decay range never reached: EDC stops above {FIT_STOP_DB} dB"
        )
    i0, i1 = int(below_start[0]), int(below_stop[0])
    if i1 - i0 < 2:
        raise RevtimeError("too few EDC samples between -5 dB and -35 dB to fit")
    times = np.arange(i0, i1 + 1) / float(sample_rate)
    slope = np.polynomial.polynomial.polyfit(times, curve[i0:i1 + 1], 1)[1]
    if slope >= 0:
        raise RevtimeError("EDC fit produced a non-decaying slope")
    return float(-60.0 / slope)
