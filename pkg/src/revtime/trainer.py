"""Training-set construction over simulated rooms and the NSV -> T60 fit."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EstimationError, RevtimeError
from .estimator import EstimatorConfig, MappingModel, nsv_from_audio
from .room_acoustics import (
    RoomSpec,
    image_method_rir,
    required_image_order,
    sabine_absorption,
    schroeder_edc,
    t60_from_edc,
)
from .signal_core import convolve, load_wav


@dataclass(frozen=True)
class TrainingPair:
    """One (NSV, true T60) observation with its provenance."""

    nsv: float
    t60_true: float
    room_id: str
    utt_id: str

    def __post_init__(self):
        if self.nsv <= 0 or self.t60_true <= 0:
            raise RevtimeError("training pairs need positive NSV and T60")


@dataclass(frozen=True)
class FitReport:
    rms_residual: float
    n_pairs: int


@dataclass(frozen=True)
class RoomSampler:
    """Seeded random room geometry for a requested T60.

    Room scale is solved from a drawn absorption coefficient so the Sabine
    inversion stays in its diffuse-field comfort zone; dims are then clamped
    to [min_dim, max_dim] per axis.
    """

    alpha_range: tuple = (0.12, 0.28)
    # Near-cubic rooms: strongly elongated boxes develop a slow axial decay
    # mode that biases the broadband T60 well past the Sabine target.
    width_ratio: tuple = (1.0, 1.3)
    height_ratio: tuple = (0.6, 0.9)
    min_dim: float = 1.0
    max_dim: float = 10.0
    position_margin: float = 0.12
    rir_length_factor: float = 1.3
    rir_length_min: float = 0.25

    def sample(self, rng: np.random.Generator, target_t60: float,
               sample_rate: int) -> RoomSpec:
        shape = np.array([
            1.0,
            rng.uniform(*self.width_ratio),
            rng.uniform(*self.height_ratio),
        ])
        alpha = rng.uniform(*self.alpha_range)
        vol = shape.prod()
        surf = 2.0 * (shape[0] * shape[1] + shape[1] * shape[2] + shape[0] * shape[2])
        scale = alpha * target_t60 * surf / (0.161 * vol)
        scale = max(scale, self.min_dim / shape.min())
        scale = min(scale, self.max_dim / shape.max())
        dims = scale * shape
        sabine_absorption(dims, target_t60)  # raises if the clamp broke feasibility
        margin = self.position_margin * dims
        min_sep = 0.25 * dims.min()
        for _ in range(100):
            source = rng.uniform(margin, dims - margin)
            mic = rng.uniform(margin, dims - margin)
            if np.linalg.norm(source - mic) >= min_sep:
                break
        rir_length = max(self.rir_length_min, self.rir_length_factor * target_t60)
        return RoomSpec(
            dims=tuple(dims),
            source=tuple(source),
            mic=tuple(mic),
            target_t60=float(target_t60),
            sample_rate=sample_rate,
            rir_length=float(rir_length),
            max_image_order=required_image_order(dims, rir_length),
        )


def default_t60_grid(t60_max: float) -> list:
    """0.1 s steps from 0.1 up to (and always including) t60_max."""
    grid = [round(0.1 * k, 10) for k in range(1, int(t60_max / 0.1) + 1)]
    if not grid or grid[-1] < t60_max:
        grid.append(float(t60_max))
    return grid


def list_speech_files(speech_dir) -> list:
    paths = sorted(Path(speech_dir).glob("*.wav"))
    if not paths:
        raise RevtimeError(f"no WAV files found in {speech_dir}")
    return paths


def build_training_set(speech_dir, t60_grid, rooms_per_t60: int,
                       cfg: EstimatorConfig, seed: int,
                       sampler: RoomSampler = RoomSampler()):
    """Simulate rooms over a T60 grid, convolve every utterance, and collect
    (NSV, measured T60) pairs. No noise is added.

    Labels come from Schroeder measurement of each generated impulse
    response, not from the grid target. Returns (pairs, n_skipped) where
    skipped items raised "insufficient decay evidence".
    """
    if not t60_grid:
        raise RevtimeError("t60_grid must not be empty")
    paths = list_speech_files(speech_dir)
    utts = [load_wav(p) for p in paths]
    rates = {u.sample_rate for u in utts}
    if len(rates) != 1:
        raise RevtimeError(f"speech files have mixed sample rates: {sorted(rates)}")
    fs = rates.pop()

    rng = np.random.default_rng(seed)
    pairs = []
    skipped = 0
    for t60 in t60_grid:
        for r in range(rooms_per_t60):
            room = sampler.sample(rng, t60, fs)
            rir = image_method_rir(room)
            t60_true = t60_from_edc(schroeder_edc(rir), fs)
            room_id = f"t60_{t60:.3f}_room{r}"
            for path, utt in zip(paths, utts):
                reverberant = convolve(utt, rir.buf)
                try:
                    stat = nsv_from_audio(reverberant, cfg)
                except EstimationError:
                    skipped += 1
                    continue
                if stat.value <= 0:
                    skipped += 1
                    continue
                pairs.append(TrainingPair(stat.value, t60_true, room_id, path.stem))
    return pairs, skipped


def fit_mapping(pairs, cfg: EstimatorConfig, order: int = 2,
                target: str = "t60", t60_train_max: float | None = None):
    """Ordinary least squares of the target against powers of log10(NSV).

    target "t60" fits seconds directly (the mapping can then go negative,
    which the estimator clamps); "log_t60" fits log10 seconds. Returns
    (MappingModel, FitReport) with the residual reported in seconds either
    way. t60_train_max defaults to the largest measured T60 in the pairs.
    """
    if target not in ("t60", "log_t60"):
        raise RevtimeError("target must be 't60' or 'log_t60'")
    n = len(pairs)
    if n < 10 * (order + 1):
        raise RevtimeError(
            f"need at least {10 * (order + 1)} pairs to fit order {order}, got {n}"
        )
    x = np.log10([p.nsv for p in pairs])
    t60s = np.array([p.t60_true for p in pairs])
    y = np.log10(t60s) if target == "log_t60" else t60s
    design = np.vander(x, order + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < order + 1:
        raise RevtimeError("rank-deficient fit: the NSV values do not span the design")
    pred = design @ coeffs
    pred_seconds = 10.0 ** pred if target == "log_t60" else pred
    rms = float(np.sqrt(np.mean(np.square(t60s - pred_seconds))))
    t_max = float(t60_train_max) if t60_train_max is not None else float(t60s.max())
    model = MappingModel(
        coefficients=coeffs,
        t60_train_max=t_max,
        variant_tag=cfg.variant,
        config=cfg,
        target=target,
    )
    return model, FitReport(rms_residual=rms, n_pairs=n)


def pairs_to_csv(pairs, path) -> None:
    with open(path, "w") as fh:
        fh.write("nsv,t60_true,room_id,utt_id\n")
        for p in pairs:
            fh.write(f"{p.nsv!r},{p.t60_true!r},{p.room_id},{p.utt_id}\n")
