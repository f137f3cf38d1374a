import numpy as np
import pytest
import torch

from earsep.dsp import (
    StftConfig,
    Waveform,
    frame_context,
    istft,
    peak_normalize,
    read_wav,
    stft,
    write_wav,
)
from earsep.errors import SignalError


class TestWaveform:
    def test_shapes(self):
        w = Waveform(np.zeros(10), 8000)
        assert (w.channels, w.length, w.duration) == (1, 10, 10 / 8000)
        assert Waveform(np.zeros((8, 4))).channel(3).samples.shape == (1, 4)

    @pytest.mark.parametrize("samples", [np.zeros((2, 0)), [np.nan, 1.0], [[np.inf]]])
    def test_invalid(self, samples):
        with pytest.raises(SignalError):
            Waveform(samples)

    def test_invalid_rate(self):
        with pytest.raises(SignalError):
            Waveform([1.0], sample_rate=0)


class TestStft:
    @pytest.mark.parametrize("seed", range(100))
    def test_round_trip(self, seed):
        """Random signals of about one second come back in the interior."""
        rng = np.random.default_rng(seed)
        length = int(rng.integers(12000, 20000))
        w = Waveform(rng.standard_normal(length))
        cfg = StftConfig()
        y = istft(stft(w, cfg))
        assert y.samples.shape == w.samples.shape
        W = cfg.window_length
        x, y = w.samples[0, W:-W], y.samples[0, W:-W]
        assert np.linalg.norm(y - x) <= 1e-6 * np.linalg.norm(x)

    def test_round_trip_channels(self, rng):
        w = Waveform(rng.standard_normal((2, 16000)))
        cfg = StftConfig()
        y = istft(stft(w, cfg))
        assert y.samples.shape == w.samples.shape
        W = cfg.window_length
        assert np.allclose(y.samples[:, W:-W], w.samples[:, W:-W], atol=1e-10)

    def test_round_trip_partial_frame(self, rng):
        """Lengths that are not a whole number of hops keep every sample."""
        w = Waveform(rng.standard_normal(1000))
        cfg = StftConfig(window_length=64, hop=32)
        S = stft(w, cfg)
        assert S.frames == cfg.n_frames(1000) == 31
        y = istft(S)
        assert y.length == 1000
        assert np.allclose(y.samples[:, 64:], w.samples[:, 64:], atol=1e-10)

    def test_tone(self):
        t = np.arange(16000) / 16000
        S = stft(Waveform(np.sin(2 * np.pi * 1000 * t)))
        magnitude = S.values.abs()[0, 10:-10]
        assert (magnitude.argmax(dim=-1) == 32).all()

    def test_linearity(self, rng):
        x, y = rng.standard_normal((2, 4000))
        X, Y = stft(Waveform(x)).values, stft(Waveform(y)).values
        Z = stft(Waveform(2.0 * x - 0.5 * y)).values
        assert torch.allclose(Z, 2.0 * X - 0.5 * Y, atol=1e-10)

    def test_parseval(self, rng):
        cfg = StftConfig(window_length=64, hop=32)
        x = rng.standard_normal(64)
        X = stft(Waveform(x), cfg).values[0, 0].numpy()
        w = cfg.window_tensor().numpy()
        energy = abs(X[0]) ** 2 + 2 * np.sum(abs(X[1:-1]) ** 2) + abs(X[-1]) ** 2
        assert np.isclose(energy, 64 * np.sum((x * w) ** 2))

    def test_short_signal(self):
        with pytest.raises(SignalError, match="at least 512 samples"):
            stft(Waveform(np.ones(100)))

    def test_not_cola(self, rng):
        cfg = StftConfig(window_length=512, hop=400)
        assert not cfg.is_cola
        S = stft(Waveform(rng.standard_normal(4000)), cfg)
        with pytest.raises(SignalError, match="constant-overlap-add"):
            istft(S)

    def test_invalid_config(self):
        with pytest.raises(SignalError):
            StftConfig(window_length=256, hop=512)
        with pytest.raises(SignalError):
            StftConfig(window_length=256, fft_size=128)


class TestContext:
    def test_edges(self, rng):
        S = stft(Waveform(rng.standard_normal(2048)), StftConfig(window_length=64, hop=32))
        c = frame_context(S, t=0, tau=2)
        assert c.values.shape == (1, 5, 33)
        assert (c.values[:, :2] == 0).all()
        assert torch.equal(c.center, S.values[:, 0])
        last = frame_context(S, t=S.frames - 1, tau=2)
        assert (last.values[:, 3:] == 0).all()
        assert torch.equal(last.values[:, :3], S.values[:, -3:])

    def test_out_of_range(self, rng):
        S = stft(Waveform(rng.standard_normal(2048)))
        with pytest.raises(SignalError):
            frame_context(S, t=S.frames, tau=1)


class TestPeakNormalize:
    def test_gain(self):
        w, gain = peak_normalize(Waveform([[-3.0, 1.0]]))
        assert np.isclose(gain, 0.33)
        assert np.isclose(np.abs(w.samples).max(), 0.99)

    def test_zero(self):
        with pytest.raises(SignalError):
            peak_normalize(Waveform(np.zeros(4)))


class TestWav:
    def test_float(self, rng, tmp_path):
        w = Waveform(0.5 * rng.uniform(-1, 1, (8, 1000)), 16000)
        path = tmp_path / "x.wav"
        write_wav(path, w)
        r = read_wav(path, sample_rate=16000)
        assert r.samples.shape == (8, 1000)
        assert np.allclose(r.samples, w.samples, atol=1e-7)

    def test_pcm16(self, rng, tmp_path):
        w = Waveform(0.5 * rng.uniform(-1, 1, 1000), 16000)
        write_wav(tmp_path / "x.wav", w, subtype="PCM_16")
        assert np.allclose(read_wav(tmp_path / "x.wav").samples, w.samples, atol=1e-4)

    def test_rate_mismatch(self, tmp_path):
        write_wav(tmp_path / "x.wav", Waveform(np.ones(10) / 2, 8000))
        with pytest.raises(SignalError, match="8000 Hz"):
            read_wav(tmp_path / "x.wav", sample_rate=16000)
