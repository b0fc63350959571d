"""Frontend tests: I/O, resampling, Mel analysis, sub-bands, bandwidth filter."""

import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings
from hypothesis import strategies as st

from usrcodec import dsp
from usrcodec.errors import (
    AudioIOError,
    ConfigError,
    EmptyInputError,
    InsufficientInputError,
    NumericError,
    ShapeError,
)

from conftest import SR, lowpass_noise_clip, noise_clip, sine_clip, white_noise, write_wav


class TestConfigAndTypes:
    def test_defaults(self):
        cfg = dsp.SpectralConfig()
        assert cfg.sample_rate == 44100
        assert cfg.n_fft == 2048
        assert cfg.hop == 512
        assert cfg.win_length == 2048
        assert cfg.n_mels == 128
        assert cfg.fmax_hz == 22050.0
        assert cfg.log_floor == 1e-5

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(hop=0),
            dict(hop=4096),
            dict(win_length=4096),
            dict(n_mels=1),
            dict(fmin=30000.0),
            dict(fmax=30000.0),
            dict(log_floor=0.0),
            dict(sample_rate=0),
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            dsp.SpectralConfig(**kwargs)

    def test_clip_validation(self):
        with pytest.raises(EmptyInputError):
            dsp.AudioClip(samples=np.zeros(0), sample_rate=SR)
        with pytest.raises(NumericError):
            dsp.AudioClip(samples=np.array([0.0, np.nan]), sample_rate=SR)
        with pytest.raises(ShapeError):
            dsp.AudioClip(samples=np.zeros((2, 10)), sample_rate=SR)
        with pytest.raises(ConfigError):
            dsp.AudioClip(samples=np.zeros(10), sample_rate=0)

    def test_mel_grid_validation(self):
        cfg = dsp.SpectralConfig()
        with pytest.raises(ShapeError):
            dsp.MelSpectrogram(values=np.zeros((64, 10)), config=cfg)
        with pytest.raises(NumericError):
            dsp.MelSpectrogram(values=np.full((128, 4), np.inf), config=cfg)


class TestLoadAudio:
    def test_stereo_48k_resampled_length(self, tmp_path):
        # Resampling length identity: out = round(n * 44100 / 48000).
        n = 48000
        rng = np.random.default_rng(0)
        stereo = 0.5 * rng.standard_normal((n, 2))
        scipy.io.wavfile.write(str(tmp_path / "s.wav"), 48000, stereo.astype(np.float32))
        clip = dsp.load_audio(tmp_path / "s.wav", target_sr=44100)
        assert clip.sample_rate == 44100
        assert clip.samples.ndim == 1
        assert clip.samples.size == round(n * 44100 / 48000)

    def test_downmix_is_channel_mean(self, tmp_path):
        left = 0.5 * np.ones(1000)
        right = -0.25 * np.ones(1000)
        scipy.io.wavfile.write(
            str(tmp_path / "lr.wav"), SR, np.stack([left, right], axis=1).astype(np.float32)
        )
        clip = dsp.load_audio(tmp_path / "lr.wav", target_sr=SR)
        assert np.allclose(clip.samples, 0.125, atol=1e-7)

    def test_int16_scaling(self, tone_wav):
        clip = dsp.load_audio(tone_wav, target_sr=SR)
        assert np.max(np.abs(clip.samples)) <= 1.0
        assert np.max(np.abs(clip.samples)) > 0.9

    def test_peak_normalization_only_above_one(self, tmp_path):
        loud = 2.0 * np.sin(2 * np.pi * 440 * np.arange(SR) / SR)
        scipy.io.wavfile.write(str(tmp_path / "loud.wav"), SR, loud.astype(np.float32))
        clip = dsp.load_audio(tmp_path / "loud.wav", target_sr=SR)
        assert np.isclose(np.max(np.abs(clip.samples)), 1.0)
        quiet = 0.25 * np.sin(2 * np.pi * 440 * np.arange(SR) / SR)
        scipy.io.wavfile.write(str(tmp_path / "quiet.wav"), SR, quiet.astype(np.float32))
        clip = dsp.load_audio(tmp_path / "quiet.wav", target_sr=SR)
        assert np.isclose(np.max(np.abs(clip.samples)), 0.25, atol=1e-6)

    def test_missing_file(self, tmp_path):
        with pytest.raises(AudioIOError):
            dsp.load_audio(tmp_path / "nope.wav")

    def test_undecodable_file(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"this is not audio")
        with pytest.raises(AudioIOError):
            dsp.load_audio(bad)

    def test_zero_length_audio(self, tmp_path):
        scipy.io.wavfile.write(str(tmp_path / "empty.wav"), SR, np.zeros(0, dtype=np.int16))
        with pytest.raises(EmptyInputError):
            dsp.load_audio(tmp_path / "empty.wav")

    def test_flac_requires_optional_decoder(self, tmp_path):
        pytest.importorskip_reason = None
        try:
            import soundfile  # noqa: F401

            pytest.skip("soundfile installed; FLAC path exercised elsewhere")
        except ImportError:
            pass
        fake = tmp_path / "x.flac"
        fake.write_bytes(b"fLaC0000")
        with pytest.raises(AudioIOError):
            dsp.load_audio(fake)

    def test_save_load_roundtrip(self, tmp_path):
        clip = sine_clip(440.0, 0.5, amp=0.7)
        dsp.save_wav(tmp_path / "rt.wav", clip)
        back = dsp.load_audio(tmp_path / "rt.wav", target_sr=SR)
        assert back.samples.size == clip.samples.size
        # int16 quantization plus the 32767-write / 32768-read scale gap.
        assert np.max(np.abs(back.samples - clip.samples)) < 5e-5


class TestResample:
    def test_tone_peak_survives_resampling(self):
        # FFT-peak oracle: a 440 Hz tone keeps its dominant bin across rates.
        sr0 = 22050
        x = np.sin(2 * np.pi * 440 * np.arange(sr0) / sr0)
        y = dsp.resample(x, sr0, 44100)
        spec = np.abs(np.fft.rfft(y))
        peak_hz_bin = np.argmax(spec)
        expected_bin = 440 * y.size / 44100
        assert abs(peak_hz_bin - expected_bin) <= 1.0

    @pytest.mark.parametrize("n,src,dst", [(48000, 48000, 44100), (12345, 44100, 16000),
                                           (999, 16000, 10000), (44100, 44100, 44100)])
    def test_length_contract(self, n, src, dst):
        y = dsp.resample(np.zeros(n), src, dst)
        assert y.size == round(n * dst / src)


class TestMelSpectrogram:
    def test_training_crop_shape(self):
        # 65536 samples at 44.1 kHz with defaults give a 128 x 128 grid.
        clip = dsp.AudioClip(samples=white_noise(0, 65536), sample_rate=SR)
        mel = dsp.mel_spectrogram(clip)
        assert mel.values.shape == (128, 128)

    def test_silence_hits_log_floor(self):
        clip = dsp.AudioClip(samples=np.zeros(65536), sample_rate=SR)
        mel = dsp.mel_spectrogram(clip)
        assert np.all(mel.values == np.log(1e-5))

    def test_tone_argmax_matches_filterbank_center(self):
        # Filterbank-center oracle: the hottest row is the band nearest 1 kHz.
        cfg = dsp.SpectralConfig()
        clip = sine_clip(1000.0, 1.0)
        mel = dsp.mel_spectrogram(clip, cfg)
        hot = np.argmax(mel.values.mean(axis=1))
        centers = dsp.mel_band_centers(cfg)
        assert hot == np.argmin(np.abs(centers - 1000.0))

    def test_values_bounded_below_by_floor(self):
        clip = noise_clip(3, 0.5)
        mel = dsp.mel_spectrogram(clip)
        assert np.all(mel.values >= np.log(1e-5) - 1e-12)
        assert np.all(np.isfinite(mel.values))

    @pytest.mark.parametrize("n", [2048, 4096, 5000, 65536, 70000])
    def test_frame_count_contract(self, n):
        clip = dsp.AudioClip(samples=white_noise(1, n), sample_rate=SR)
        mel = dsp.mel_spectrogram(clip)
        assert mel.n_frames == -(-n // 512)

    def test_too_short_raises(self):
        clip = dsp.AudioClip(samples=np.zeros(1024), sample_rate=SR)
        with pytest.raises(InsufficientInputError):
            dsp.mel_spectrogram(clip)

    def test_sample_rate_mismatch(self):
        clip = dsp.AudioClip(samples=np.zeros(65536), sample_rate=16000)
        with pytest.raises(ConfigError):
            dsp.mel_spectrogram(clip, dsp.SpectralConfig())

    def test_padding_locality(self):
        # Appending silence only adds/affects trailing frames (center padding
        # keeps interior frames bitwise identical; one boundary frame may move).
        x = white_noise(7, 65536)
        a = dsp.mel_spectrogram(dsp.AudioClip(samples=x, sample_rate=SR)).values
        b = dsp.mel_spectrogram(
            dsp.AudioClip(samples=np.concatenate([x, np.zeros(8192)]), sample_rate=SR)
        ).values
        t = a.shape[1]
        assert b.shape[1] == t + 16
        assert np.array_equal(a[:, : t - 1], b[:, : t - 1])


class TestFilterBank:
    def test_shape_and_nonnegativity(self):
        cfg = dsp.SpectralConfig()
        fb = dsp.mel_filter_bank(cfg)
        assert fb.shape == (128, 1025)
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)

    def test_row_peaks_near_band_centers(self):
        cfg = dsp.SpectralConfig()
        fb = dsp.mel_filter_bank(cfg)
        freqs = np.fft.rfftfreq(cfg.n_fft, 1 / cfg.sample_rate)
        centers = dsp.mel_band_centers(cfg)
        bin_width = cfg.sample_rate / cfg.n_fft
        peak_freqs = freqs[np.argmax(fb, axis=1)]
        assert np.all(np.abs(peak_freqs - centers) <= bin_width)

    def test_slaney_mel_scale_knee(self):
        # Linear below 1 kHz (200/3 Hz per mel), logarithmic above.
        assert np.isclose(dsp.hz_to_mel(1000.0), 15.0)
        assert np.isclose(dsp.hz_to_mel(200.0 / 3.0), 1.0)
        assert np.isclose(dsp.mel_to_hz(15.0 + 27.0), 6400.0)
        hz = np.array([0.0, 500.0, 1000.0, 8000.0, 22050.0])
        assert np.allclose(dsp.mel_to_hz(dsp.hz_to_mel(hz)), hz)


class TestSubBands:
    def test_split_shapes(self):
        clip = noise_clip(0, 65536 / SR + 0.01)
        mel = dsp.mel_spectrogram(clip)
        pair = dsp.split_subbands(mel)
        assert pair.low.shape[0] == 64 and pair.high.shape[0] == 64
        assert np.array_equal(pair.low, mel.values[:64])
        assert np.array_equal(pair.high, mel.values[64:])

    def test_odd_rows_rejected(self):
        cfg = dsp.SpectralConfig(n_mels=127)
        mel = dsp.MelSpectrogram(values=np.zeros((127, 8)), config=cfg)
        with pytest.raises(ConfigError):
            dsp.split_subbands(mel)

    @settings(max_examples=25, deadline=None)
    @given(
        m=st.integers(min_value=1, max_value=32).map(lambda k: 2 * k),
        t=st.integers(min_value=1, max_value=16),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_restack_is_identity(self, m, t, seed):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((m, t))
        cfg = dsp.SpectralConfig(n_mels=m)
        pair = dsp.split_subbands(dsp.MelSpectrogram(values=values + 12.0, config=cfg))
        assert np.array_equal(pair.restack(), values + 12.0)


class TestBandwidthDetection:
    @pytest.mark.parametrize("seed", range(5))
    def test_full_band_noise(self, seed):
        native = dsp.detect_native_bandwidth(noise_clip(seed))
        assert native >= 0.9 * SR

    @pytest.mark.parametrize("seed", range(3))
    def test_lowpass_8k_detected(self, seed):
        native = dsp.detect_native_bandwidth(lowpass_noise_clip(seed, 8000.0))
        assert 14400.0 <= native <= 17600.0

    def test_silence_returns_zero(self):
        clip = dsp.AudioClip(samples=np.zeros(SR), sample_rate=SR)
        assert dsp.detect_native_bandwidth(clip) == 0.0

    @pytest.mark.parametrize("gain", [1.0, 0.125, 1e-3])
    def test_gain_invariance(self, gain):
        base = noise_clip(11)
        scaled = dsp.AudioClip(samples=gain * base.samples, sample_rate=SR)
        assert dsp.detect_native_bandwidth(scaled) == dsp.detect_native_bandwidth(base)

    def test_filter_accepts_full_band(self):
        assert dsp.filter_training_clip(noise_clip(2)) is True

    def test_filter_rejects_band_limited(self):
        # A 16 kHz-native clip upsampled to 44.1 kHz must be dropped.
        x = white_noise(5, 16000)
        up = dsp.resample(x, 16000, SR)
        clip = dsp.AudioClip(samples=up / max(1.0, np.max(np.abs(up))), sample_rate=SR)
        assert dsp.filter_training_clip(clip) is False

    def test_filter_rejects_silence(self):
        clip = dsp.AudioClip(samples=np.zeros(SR), sample_rate=SR)
        assert dsp.filter_training_clip(clip) is False

    def test_filter_keeps_quiet_full_band(self):
        quiet = dsp.AudioClip(samples=1e-3 * noise_clip(4).samples, sample_rate=SR)
        assert dsp.filter_training_clip(quiet) is True


class TestStftRoundtrip:
    def test_istft_inverts_interior(self):
        cfg = dsp.SpectralConfig()
        x = white_noise(9, 8192)
        y = dsp.istft(dsp.stft_complex(x, cfg), cfg)
        assert y.size == 512 * -(-x.size // 512)
        core = slice(cfg.n_fft, x.size - cfg.n_fft)
        err = np.max(np.abs(y[: x.size][core] - x[core]))
        assert err < 1e-10

    def test_istft_shape_validation(self):
        cfg = dsp.SpectralConfig()
        with pytest.raises(ShapeError):
            dsp.istft(np.zeros((100, 4), dtype=complex), cfg)
