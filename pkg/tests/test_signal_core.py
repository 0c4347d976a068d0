import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revtime.errors import RevtimeError
from revtime.signal_core import (
    LOG_FLOOR,
    AudioBuffer,
    StftConfig,
    active_speech_level,
    apply_mel,
    build_mel_filterbank,
    convolve,
    hz_to_mel,
    load_wav,
    mix_at_snr,
    noise_gain_for_snr,
    save_wav,
    stft_complex,
    stft_log_magnitude,
)

SR = 16000


class TestAudioBuffer:
    def test_rejects_nan(self):
        with pytest.raises(RevtimeError):
            AudioBuffer([0.0, np.nan], SR)

    def test_rejects_empty(self):
        with pytest.raises(RevtimeError):
            AudioBuffer([], SR)

    def test_rejects_bad_rate(self):
        with pytest.raises(RevtimeError):
            AudioBuffer([0.1], 0)

    def test_immutable_samples(self):
        buf = AudioBuffer([0.1, 0.2], SR)
        with pytest.raises(ValueError):
            buf.samples[0] = 1.0


class TestWavIo:
    def test_silence_roundtrip(self, tmp_path):
        path = tmp_path / "silence.wav"
        save_wav(AudioBuffer(np.zeros(SR), SR), path)
        buf = load_wav(path)
        assert buf.sample_rate == SR
        assert len(buf) == SR
        assert np.all(buf.samples == 0.0)

    def test_fullscale_negative_is_minus_one(self, tmp_path):
        import scipy.io.wavfile as wavfile
        path = tmp_path / "fs.wav"
        wavfile.write(path, SR, np.array([-32768, 0, 16384], dtype=np.int16))
        buf = load_wav(path)
        assert buf.samples[0] == -1.0
        assert buf.samples[1] == 0.0
        assert buf.samples[2] == 0.5

    def test_ramp_roundtrip(self, tmp_path):
        path = tmp_path / "ramp.wav"
        original = np.array([-1.0, 0.0, 1.0])
        save_wav(AudioBuffer(original, SR), path)
        reloaded = load_wav(path)
        assert np.max(np.abs(reloaded.samples - original)) <= 1.0 / 32768

    def test_clipping_warns(self, tmp_path):
        path = tmp_path / "clip.wav"
        with pytest.warns(UserWarning, match="clipping"):
            save_wav(AudioBuffer([1.5, 0.0], SR), path)
        assert load_wav(path).samples[0] == pytest.approx(32767 / 32768)

    def test_float32_roundtrip(self, tmp_path):
        path = tmp_path / "f32.wav"
        x = np.random.default_rng(0).normal(scale=0.01, size=500)
        save_wav(AudioBuffer(x, SR), path, fmt="float32")
        reloaded = load_wav(path)
        assert np.allclose(reloaded.samples, x, atol=1e-7)

    def test_multichannel_takes_first(self, tmp_path):
        import scipy.io.wavfile as wavfile
        path = tmp_path / "stereo.wav"
        data = np.stack([np.full(100, 1000), np.full(100, -1000)], axis=1)
        wavfile.write(path, SR, data.astype(np.int16))
        with pytest.warns(UserWarning, match="channel 0"):
            buf = load_wav(path)
        assert np.all(buf.samples > 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    @settings(max_examples=25, deadline=None)
    @given(samples=st.lists(st.floats(min_value=-1.0, max_value=1.0),
                            min_size=1, max_size=200))
    def test_roundtrip_within_one_lsb(self, samples, tmp_path_factory):
        path = tmp_path_factory.mktemp("wav") / "x.wav"
        save_wav(AudioBuffer(samples, SR), path)
        reloaded = load_wav(path)
        assert np.max(np.abs(reloaded.samples - np.asarray(samples))) <= 1.0 / 32768


class TestStft:
    def test_pure_sine_concentrates(self):
        # Bin-center sine with a rectangular window leaks nowhere.
        cfg = StftConfig(frame_len=512, hop=256, window="rect", fft_len=512)
        k = 32
        t = np.arange(SR)
        x = np.sin(2 * np.pi * k * t / 512)
        spec = stft_log_magnitude(AudioBuffer(x, SR), cfg)
        frame = spec.values[:, 3]
        top = frame[k]
        others = np.delete(frame, k)
        assert top - others.max() >= 60.0

    def test_all_zero_input_hits_floor(self):
        cfg = StftConfig(frame_len=64, hop=32)
        spec = stft_log_magnitude(AudioBuffer(np.zeros(1000), SR), cfg)
        assert np.allclose(spec.values, 20 * np.log10(LOG_FLOOR))

    def test_too_short_signal(self):
        cfg = StftConfig(frame_len=512, hop=256)
        with pytest.raises(RevtimeError, match="shorter than one frame"):
            stft_log_magnitude(AudioBuffer(np.zeros(100), SR), cfg)

    def test_frame_count_and_times(self):
        cfg = StftConfig(frame_len=512, hop=256)
        spec = stft_log_magnitude(AudioBuffer(np.zeros(512 + 256 * 3 + 10), SR), cfg)
        assert spec.n_frames == 4  # final partial frame dropped
        assert spec.frame_times[1] - spec.frame_times[0] == pytest.approx(256 / SR)
        assert spec.n_bands == 512 // 2 + 1

    def test_parseval_on_white_noise(self):
        # Spectral energy per frame equals windowed time energy * fft_len.
        cfg = StftConfig(frame_len=480, hop=240, window="hamming", fft_len=512)
        rng = np.random.default_rng(5)
        buf = AudioBuffer(rng.standard_normal(4800), SR)
        spec = stft_complex(buf, cfg)
        frames = np.lib.stride_tricks.sliding_window_view(
            buf.samples, cfg.frame_len)[::cfg.hop]
        windowed = frames * cfg.window_array()
        for i in range(spec.shape[1]):
            full = (np.abs(spec[0, i]) ** 2 + np.abs(spec[-1, i]) ** 2
                    + 2 * np.sum(np.abs(spec[1:-1, i]) ** 2))
            expected = cfg.fft_len * np.sum(windowed[i] ** 2)
            assert full == pytest.approx(expected, rel=1e-6)


class TestMel:
    def test_mel_of_700hz(self):
        assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2), abs=1e-9)
        assert float(hz_to_mel(700.0)) == pytest.approx(781.17, abs=0.01)

    def test_two_band_toy_rows_sum_to_one(self):
        fb = build_mel_filterbank(9, 2, SR)
        assert fb.weights.shape == (2, 9)
        assert np.allclose(fb.weights.sum(axis=1), 1.0, atol=1e-12)

    def test_rows_sum_to_one_default(self):
        fb = build_mel_filterbank(257, 23, SR)
        assert np.allclose(fb.weights.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diff(fb.band_centers) > 0)

    def test_coverage_between_first_and_last_center(self):
        fb = build_mel_filterbank(257, 23, SR)
        freqs = np.arange(257) * (SR / 2) / 256
        inside = (freqs >= fb.band_centers[0]) & (freqs <= fb.band_centers[-1])
        assert np.all(fb.weights.sum(axis=0)[inside] > 0)

    def test_too_many_bands(self):
        with pytest.raises(RevtimeError):
            build_mel_filterbank(4, 5, SR)

    def test_flat_frame_is_identity(self):
        cfg = StftConfig(frame_len=512, hop=256)
        values = np.full((257, 4), -37.0)
        centers = np.arange(257) * (SR / 512)
        times = np.arange(4) * (256 / SR)
        from revtime.signal_core import BandSpectrogram
        spec = BandSpectrogram(values, centers, times, "linear_bins")
        fb = build_mel_filterbank(257, 23, SR)
        banded = apply_mel(spec, fb)
        assert np.allclose(banded.values, -37.0, atol=1e-9)
        assert banded.mode == "mel_bands"

    def test_matches_bruteforce_power_mean(self):
        rng = np.random.default_rng(8)
        values = rng.uniform(-80, 0, size=(257, 6))
        centers = np.arange(257) * (SR / 512)
        times = np.arange(6) * (256 / SR)
        from revtime.signal_core import BandSpectrogram
        spec = BandSpectrogram(values, centers, times, "linear_bins")
        fb = build_mel_filterbank(257, 23, SR)
        banded = apply_mel(spec, fb)
        for b in range(23):
            for f in range(6):
                acc = np.sum(fb.weights[b] * 10 ** (values[:, f] / 10))
                assert banded.values[b, f] == pytest.approx(
                    10 * np.log10(acc), abs=1e-9)

    def test_dimension_mismatch(self):
        from revtime.signal_core import BandSpectrogram
        spec = BandSpectrogram(np.zeros((129, 4)), np.arange(129.0) + 1,
                               np.arange(4) * 0.016, "linear_bins")
        fb = build_mel_filterbank(257, 23, SR)
        with pytest.raises(RevtimeError):
            apply_mel(spec, fb)


class TestLevels:
    def test_constant_signal_level(self):
        buf = AudioBuffer(np.full(SR, 0.1), SR)
        assert active_speech_level(buf) == pytest.approx(20 * np.log10(0.1), abs=1e-9)

    def test_padding_does_not_change_level(self):
        rng = np.random.default_rng(3)
        burst = 0.2 * rng.standard_normal(int(0.6 * SR))
        level_burst = active_speech_level(AudioBuffer(burst, SR))
        padded = np.concatenate([np.zeros(SR + 37), burst, np.zeros(2 * SR + 11)])
        level_padded = active_speech_level(AudioBuffer(padded, SR))
        assert level_padded == pytest.approx(level_burst, abs=0.2)

    def test_silence_raises(self):
        with pytest.raises(RevtimeError, match="no active frames"):
            active_speech_level(AudioBuffer(np.zeros(SR), SR))


class TestMixAtSnr:
    def test_unit_levels_gain_one(self):
        rng = np.random.default_rng(4)
        speech = rng.standard_normal(SR)
        speech /= np.sqrt(np.mean(speech ** 2))
        noise = rng.standard_normal(SR)
        noise /= np.sqrt(np.mean(noise ** 2))
        gain = noise_gain_for_snr(AudioBuffer(speech, SR), AudioBuffer(noise, SR), 0.0)
        assert gain == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("snr", [-1.0, 12.0, 18.0])
    def test_realized_snr_matches_target(self, snr, speech):
        rng = np.random.default_rng(6)
        noise = AudioBuffer(0.05 * rng.standard_normal(len(speech) + 100), SR)
        mixed = mix_at_snr(speech, noise, snr)
        extracted = mixed.samples - speech.samples
        realized = (active_speech_level(speech)
                    - 20 * np.log10(np.sqrt(np.mean(extracted ** 2))))
        assert realized == pytest.approx(snr, abs=0.1)

    def test_rate_mismatch(self, speech):
        noise = AudioBuffer(np.ones(len(speech) + 1), 8000)
        with pytest.raises(RevtimeError, match="sample-rate"):
            mix_at_snr(speech, noise, 10.0)

    def test_noise_too_short(self, speech):
        noise = AudioBuffer(np.ones(10), SR)
        with pytest.raises(RevtimeError, match="shorter"):
            mix_at_snr(speech, noise, 10.0)

    def test_silent_noise(self, speech):
        noise = AudioBuffer(np.zeros(len(speech)), SR)
        with pytest.raises(RevtimeError, match="silent"):
            mix_at_snr(speech, noise, 10.0)

    @settings(max_examples=10, deadline=None)
    @given(gain=st.sampled_from([0.1, 0.5, 2.0, 10.0]),
           snr=st.floats(min_value=-5, max_value=30))
    def test_gain_covariance(self, gain, snr, speech):
        rng = np.random.default_rng(9)
        noise = AudioBuffer(0.03 * rng.standard_normal(len(speech)), SR)
        base = mix_at_snr(speech, noise, snr)
        scaled_speech = AudioBuffer(gain * speech.samples, SR)
        scaled = mix_at_snr(scaled_speech, noise, snr)
        noise_base = base.samples - speech.samples
        noise_scaled = scaled.samples - scaled_speech.samples
        assert np.allclose(noise_scaled, gain * noise_base, rtol=1e-9, atol=1e-12)


class TestConvolve:
    def test_identity_with_impulse(self, speech):
        impulse = AudioBuffer(np.array([1.0]), SR)
        out = convolve(speech, impulse)
        assert np.allclose(out.samples, speech.samples, atol=1e-12)

    def test_rate_mismatch(self, speech):
        with pytest.raises(RevtimeError, match="sample-rate"):
            convolve(speech, AudioBuffer([1.0], 8000))

    def test_hand_computed_three_tap(self):
        x = AudioBuffer([1.0, 2.0, 3.0, 4.0], SR)
        h = AudioBuffer([1.0, 0.5, 0.25], SR)
        out = convolve(x, h)
        expected = [1.0, 2.5, 4.25, 6.0, 2.75, 1.0]
        assert len(out) == 4 + 3 - 1
        assert np.allclose(out.samples, expected, atol=1e-12)
