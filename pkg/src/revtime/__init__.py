"""Blind room reverberation time (T60) estimation from noisy reverberant
speech, plus the simulation, training and evaluation tools around it."""

from .errors import EstimationError, RevtimeError
from .estimator import (
    EstimateResult,
    EstimatorConfig,
    GradientMatrix,
    MappingModel,
    NsvStatistic,
    band_spectrogram,
    decay_gradients,
    estimate_band_snr,
    estimate_t60,
    map_nsv_to_t60,
    nsv,
    nsv_from_audio,
    select_bins,
)
from .eval_harness import (
    BoxStats,
    CorpusItem,
    EvalRecord,
    box_stats,
    build_corpus,
    load_items,
    rtf,
    run_eval,
    run_eval_paired,
    write_report,
)
from .room_acoustics import (
    Edc,
    Rir,
    RoomSpec,
    image_method_rir,
    sabine_absorption,
    schroeder_edc,
    t60_from_edc,
)
from .signal_core import (
    AudioBuffer,
    BandSpectrogram,
    MelFilterbank,
    StftConfig,
    active_speech_level,
    apply_mel,
    build_mel_filterbank,
    convolve,
    load_wav,
    mix_at_snr,
    save_wav,
    stft_log_magnitude,
)
from .trainer import (
    FitReport,
    RoomSampler,
    TrainingPair,
    build_training_set,
    default_t60_grid,
    fit_mapping,
)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "BandSpectrogram", "BoxStats", "CorpusItem", "Edc",
    "EstimateResult", "EstimationError", "EstimatorConfig", "EvalRecord",
    "FitReport", "GradientMatrix", "MappingModel", "MelFilterbank",
    "NsvStatistic", "RevtimeError", "Rir", "RoomSampler", "RoomSpec",
    "StftConfig", "TrainingPair", "active_speech_level", "apply_mel",
    "band_spectrogram", "box_stats", "build_corpus", "build_mel_filterbank",
    "build_training_set", "convolve", "decay_gradients", "default_t60_grid",
    "estimate_band_snr", "estimate_t60", "fit_mapping", "image_method_rir",
    "load_items", "load_wav", "map_nsv_to_t60", "mix_at_snr", "nsv",
    "nsv_from_audio", "rtf", "run_eval", "run_eval_paired",
    "sabine_absorption", "save_wav",
    "schroeder_edc", "select_bins", "stft_log_magnitude", "t60_from_edc",
    "write_report",
]
