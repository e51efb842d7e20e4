"""PCM WAV decoding and multi-track mixing.

Only integer PCM WAV is decoded natively. Other formats need a decode hook:
a callable ``path -> (samples, sample_rate)`` registered per extension.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

MIX_PEAK = 0.95

DecodeHook = Callable[[Path], "tuple[np.ndarray, int]"]


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class Audio:
    samples: np.ndarray  # float64, shape (n_samples, n_channels), nominal range [-1, 1]
    sample_rate: int

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def _pcm_to_float(raw: bytes, width: int, channels: int) -> np.ndarray:
    if width == 1:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v & 0x800000, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif width == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise AudioError(f"unsupported sample width {width}")
    return x.reshape(-1, channels)


def read_wav(path) -> Audio:
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = (w.getnchannels(), w.getsampwidth(),
                                        w.getframerate(), w.getnframes())
            raw = w.readframes(n)
    except FileNotFoundError:
        raise
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: cannot decode as PCM WAV: {exc}") from exc
    return Audio(_pcm_to_float(raw, width, channels), rate)


def write_wav(path, samples: np.ndarray, sample_rate: int, sample_width: int = 2) -> None:
    """Write float samples in [-1, 1] as integer PCM (used for fixtures)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if sample_width != 2:
        raise AudioError("only 16-bit output is supported")
    ints = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(ints.tobytes())


def load_audio(path, hooks: Mapping[str, DecodeHook] | None = None) -> Audio:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing audio file: {path}")
    hook = (hooks or {}).get(path.suffix.lower())
    if hook is not None:
        samples, rate = hook(path)
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        return Audio(samples, int(rate))
    if path.suffix.lower() not in (".wav", ".wave"):
        raise AudioError(f"{path}: no decoder for {path.suffix!r}; register a decode hook")
    return read_wav(path)


def mix(tracks: Sequence[Audio], peak: float = MIX_PEAK) -> Audio:
    """Sample-wise sum of tracks, then peak-normalized to ``peak``.

    A single track is returned unchanged. Shorter tracks are zero-padded.
    """
    if not tracks:
        raise AudioError("nothing to mix")
    if len(tracks) == 1:
        return tracks[0]
    rates = {t.sample_rate for t in tracks}
    if len(rates) > 1:
        raise AudioError(f"sample-rate mismatch across tracks: {sorted(rates)}")
    chans = {t.n_channels for t in tracks}
    if len(chans) > 1:
        raise AudioError(f"channel-count mismatch across tracks: {sorted(chans)}")
    n = max(t.samples.shape[0] for t in tracks)
    out = np.zeros((n, chans.pop()))
    for t in tracks:
        out[: t.samples.shape[0]] += t.samples
    m = np.abs(out).max() if out.size else 0.0
    if m > 0:
        out *= peak / m
    return Audio(out, rates.pop())
