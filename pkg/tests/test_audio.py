import wave

import numpy as np
import pytest
from scipy.io import wavfile

from oracles import normalized_sum
from scoremeta.audio import Audio, AudioError, load_audio, mix, read_wav, write_wav

RATE = 8000


@pytest.mark.parametrize("dtype, scale", [(np.int16, 32768.0), (np.int32, 2.0 ** 31)])
@pytest.mark.parametrize("channels", [1, 2])
def test_read_matches_scipy(tmp_path, dtype, scale, channels):
    rng = np.random.default_rng(0)
    info = np.iinfo(dtype)
    data = rng.integers(info.min, info.max, size=(500, channels), dtype=dtype)
    p = tmp_path / "a.wav"
    wavfile.write(p, RATE, data if channels > 1 else data[:, 0])
    rate, ref = wavfile.read(p)
    got = read_wav(p)
    assert got.sample_rate == rate == RATE
    assert np.array_equal(got.samples, ref.reshape(500, channels) / scale)


def test_read_8bit_unsigned(tmp_path):
    data = np.array([0, 128, 255], dtype=np.uint8)
    p = tmp_path / "a.wav"
    wavfile.write(p, RATE, data)
    assert read_wav(p).samples[:, 0].tolist() == [-1.0, 0.0, 127 / 128]


def test_read_24bit(tmp_path):
    values = np.array([0, 1, -1, 2 ** 23 - 1, -2 ** 23], dtype=np.int64)
    raw = b"".join(int(v).to_bytes(3, "little", signed=True) for v in values)
    p = tmp_path / "a.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(3)
        w.setframerate(RATE)
        w.writeframes(raw)
    assert np.array_equal(read_wav(p).samples[:, 0], values / 2 ** 23)


def test_write_read_round_trip(tmp_path):
    x = np.sin(np.linspace(0, 20, 1000)) * 0.5
    write_wav(tmp_path / "a.wav", x, RATE)
    back = read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(back.samples[:, 0] - x)) <= 1 / 32767
    assert back.duration == pytest.approx(1000 / RATE)


def test_not_a_wav(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(b"not audio at all")
    with pytest.raises(AudioError):
        read_wav(p)


def test_decode_hook_and_missing_decoder(tmp_path):
    p = tmp_path / "a.flac"
    p.write_bytes(b"")
    with pytest.raises(AudioError, match="decode hook"):
        load_audio(p)
    audio = load_audio(p, {".flac": lambda path: (np.zeros(10), 44100)})
    assert audio.samples.shape == (10, 1) and audio.sample_rate == 44100


def test_mix_single_is_identity():
    a = Audio(np.random.default_rng(1).uniform(-0.3, 0.3, (100, 1)), RATE)
    assert mix([a]) is a


def test_mix_two_identical_tracks():
    x = np.random.default_rng(2).uniform(-0.3, 0.3, (100, 2))
    out = mix([Audio(x, RATE), Audio(x, RATE)])
    assert np.max(np.abs(out.samples)) == pytest.approx(0.95)
    assert np.allclose(out.samples, x * (0.95 / np.max(np.abs(x))))


def test_mix_pads_and_normalizes():
    rng = np.random.default_rng(3)
    stems = [rng.uniform(-1, 1, (n, 1)) for n in (100, 80, 120)]
    out = mix([Audio(s, RATE) for s in stems])
    assert out.samples.shape == (120, 1)
    assert np.max(np.abs(out.samples - normalized_sum(stems))) <= 1e-12


def test_mix_silence_stays_silent():
    z = Audio(np.zeros((10, 1)), RATE)
    assert not mix([z, z]).samples.any()


def test_mix_mismatches():
    with pytest.raises(AudioError, match="sample-rate"):
        mix([Audio(np.zeros((1, 1)), 8000), Audio(np.zeros((1, 1)), 16000)])
    with pytest.raises(AudioError, match="channel"):
        mix([Audio(np.zeros((1, 1)), 8000), Audio(np.zeros((1, 2)), 8000)])
    with pytest.raises(AudioError):
        mix([])
