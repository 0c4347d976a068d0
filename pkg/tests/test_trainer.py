import numpy as np
import pytest

from revtime.errors import RevtimeError
from revtime.estimator import EstimatorConfig, map_nsv_to_t60
from revtime.signal_core import save_wav
from revtime.synth import synthetic_speech
from revtime.trainer import (
    RoomSampler,
    TrainingPair,
    build_training_set,
    default_t60_grid,
    fit_mapping,
)

SR = 16000


@pytest.fixture(scope="module")
def speech_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("train_speech")
    for u in range(2):
        save_wav(synthetic_speech(1.8 + 0.4 * u, SR, seed=50 + u), d / f"u{u}.wav")
    return d


def synthetic_pairs(coeffs, nsv_values, noise=0.0, seed=0):
    """Pairs generated exactly from a known polynomial in log10(NSV)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i, v in enumerate(nsv_values):
        x = np.log10(v)
        t60 = float(np.polynomial.polynomial.polyval(x, coeffs))
        t60 += noise * rng.standard_normal()
        pairs.append(TrainingPair(v, t60, f"room{i}", f"utt{i}"))
    return pairs


CFG = EstimatorConfig.default("mel_band")


class TestDefaultGrid:
    def test_short_profile(self):
        grid = default_t60_grid(0.95)
        assert grid[0] == pytest.approx(0.1)
        assert grid[-1] == 0.95
        assert len(grid) == 10

    def test_extended_profile(self):
        grid = default_t60_grid(1.85)
        assert grid[-1] == 1.85
        assert max(grid) == 1.85


class TestRoomSampler:
    def test_deterministic(self):
        a = RoomSampler().sample(np.random.default_rng(3), 0.6, SR)
        b = RoomSampler().sample(np.random.default_rng(3), 0.6, SR)
        assert a == b

    def test_positions_inside(self):
        rng = np.random.default_rng(4)
        for t60 in (0.1, 0.5, 1.85):
            spec = RoomSampler().sample(rng, t60, SR)
            assert all(0 < p < d for p, d in zip(spec.source, spec.dims))
            assert all(0 < p < d for p, d in zip(spec.mic, spec.dims))
            assert spec.rir_length >= t60


class TestFitMapping:
    def test_recovers_known_quadratic(self):
        coeffs = [1.2, -0.4, 0.05]
        nsv_values = np.logspace(2, 6, 40)
        pairs = synthetic_pairs(coeffs, nsv_values)
        model, report = fit_mapping(pairs, CFG, order=2)
        assert np.allclose(model.coefficients, coeffs, atol=1e-8)
        assert report.rms_residual == pytest.approx(0.0, abs=1e-8)
        assert report.n_pairs == 40

    def test_order_zero_is_mean(self):
        pairs = synthetic_pairs([0.5], np.logspace(2, 5, 12), noise=0.05, seed=1)
        model, _ = fit_mapping(pairs, CFG, order=0)
        expected = np.mean([p.t60_true for p in pairs])
        assert model.coefficients[0] == pytest.approx(expected, rel=1e-12)

    def test_duplicated_dataset_same_coefficients(self):
        pairs = synthetic_pairs([1.2, -0.15], np.logspace(2, 5, 24), noise=0.02, seed=2)
        m1, _ = fit_mapping(pairs, CFG, order=1)
        m2, _ = fit_mapping(pairs + pairs, CFG, order=1)
        assert np.allclose(m1.coefficients, m2.coefficients, rtol=1e-9)

    def test_too_few_pairs(self):
        pairs = synthetic_pairs([0.5], np.logspace(2, 5, 12))
        with pytest.raises(RevtimeError, match="pairs"):
            fit_mapping(pairs, CFG, order=2)

    def test_degenerate_design(self):
        pairs = [TrainingPair(100.0, 0.5 + 0.01 * i, f"r{i}", "u") for i in range(25)]
        with pytest.raises(RevtimeError, match="rank"):
            fit_mapping(pairs, CFG, order=1)

    def test_train_max_override_stamped(self):
        pairs = synthetic_pairs([0.5], np.logspace(2, 5, 12))
        model, _ = fit_mapping(pairs, CFG, order=0, t60_train_max=1.85)
        assert model.t60_train_max == 1.85

    def test_default_train_max_is_measured(self):
        pairs = synthetic_pairs([0.7], np.logspace(2, 5, 12))
        model, _ = fit_mapping(pairs, CFG, order=0)
        assert model.t60_train_max == max(p.t60_true for p in pairs)

    def test_log_target_residual_in_seconds(self):
        coeffs = [-0.3, -0.05]
        nsv_values = np.logspace(2, 6, 30)
        pairs = []
        for i, v in enumerate(nsv_values):
            t60 = 10.0 ** float(np.polynomial.polynomial.polyval(np.log10(v), coeffs))
            pairs.append(TrainingPair(v, t60, f"r{i}", "u"))
        model, report = fit_mapping(pairs, CFG, order=1, target="log_t60")
        assert model.target == "log_t60"
        assert np.allclose(model.coefficients, coeffs, atol=1e-9)
        assert report.rms_residual == pytest.approx(0.0, abs=1e-9)

    def test_mapping_roundtrips_training_pairs(self):
        pairs = synthetic_pairs([1.6, -0.2], np.logspace(2.5, 5.5, 20),
                                noise=0.03, seed=5)
        model, report = fit_mapping(pairs, CFG, order=1)
        residuals = []
        for p in pairs:
            from revtime.estimator import NsvStatistic
            t60, _ = map_nsv_to_t60(NsvStatistic(p.nsv, 2, 2), model)
            residuals.append(p.t60_true - t60)
        assert np.sqrt(np.mean(np.square(residuals))) <= report.rms_residual + 1e-12


class TestBuildTrainingSet:
    GRID = [0.3, 0.6]

    def test_same_seed_identical_pairs(self, speech_dir):
        a, _ = build_training_set(speech_dir, self.GRID, 1, CFG, seed=9)
        b, _ = build_training_set(speech_dir, self.GRID, 1, CFG, seed=9)
        assert a == b
        assert len(a) == len(self.GRID) * 1 * 2

    def test_labels_are_measured_not_targets(self, speech_dir):
        pairs, _ = build_training_set(speech_dir, self.GRID, 1, CFG, seed=9)
        targets = set(self.GRID)
        assert all(p.t60_true not in targets for p in pairs)
        assert all(abs(p.t60_true - g) < 0.25 * g
                   for p, g in zip(pairs, [0.3, 0.3, 0.6, 0.6]))

    def test_grid_capped_at_095_stays_under_115(self, speech_dir):
        pairs, _ = build_training_set(speech_dir, [0.95], 2, CFG, seed=10)
        assert max(p.t60_true for p in pairs) < 1.5

    def test_empty_dir(self, tmp_path):
        with pytest.raises(RevtimeError, match="no WAV"):
            build_training_set(tmp_path, [0.5], 1, CFG, seed=0)

    def test_full_determinism_through_fit(self, speech_dir):
        grids = default_t60_grid(0.5)
        models = []
        for _ in range(2):
            pairs, _ = build_training_set(speech_dir, grids, 1, CFG, seed=4)
            model, _ = fit_mapping(pairs, CFG, order=0)
            models.append(model)
        assert np.array_equal(models[0].coefficients, models[1].coefficients)
