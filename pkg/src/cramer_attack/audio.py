"""Waveforms, 16-bit PCM WAV I/O, framing and peak-loudness measures."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0


class UnsupportedFormatError(ValueError):
    """Raised for WAV files that are not 16-bit PCM mono at the expected rate."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """A mono signal with amplitudes nominally in ``[-1, 1]``."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)

    def clamped(self) -> "Waveform":
        return Waveform(np.clip(self.samples, -1.0, 1.0), self.sample_rate_hz)


def quantize_pcm16(x) -> np.ndarray:
    """Round-to-nearest 16-bit codes; +1.0 saturates to 32767."""
    codes = np.rint(np.asarray(x, dtype=np.float64) * PCM_SCALE)
    return np.clip(codes, -32768, 32767).astype(np.int16)


def snap_to_pcm16(x) -> np.ndarray:
    """Project amplitudes onto the 16-bit grid, so a WAV round-trip is exact."""
    return quantize_pcm16(np.clip(x, -1.0, 1.0)).astype(np.float64) / PCM_SCALE


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> Waveform:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comp = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if comp != "NONE":
        raise UnsupportedFormatError(f"{path}: compression type {comp!r}, expected PCM")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: sample width {8 * width} bits, expected 16")
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels, expected mono")
    if expected_rate is not None and rate != expected_rate:
        raise UnsupportedFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate}")
    codes = np.frombuffer(raw, dtype="<i2")
    return Waveform(codes.astype(np.float64) / PCM_SCALE, rate)


def write_wav(path, w: Waveform) -> None:
    x = w.samples
    if x.size and np.max(np.abs(x)) > 1.0:
        raise ValueError(
            f"amplitude {np.max(np.abs(x)):.6g} outside [-1, 1]; clamp or normalize before writing"
        )
    codes = quantize_pcm16(x)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(codes.astype("<i2").tobytes())


def loudness_db(w) -> float:
    """Peak loudness ``20*log10(max|x|)``; ``-inf`` for an all-zero signal."""
    x = _samples(w)
    if x.size == 0:
        raise ValueError("loudness of an empty signal is undefined")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return -np.inf
    return 20.0 * np.log10(peak)


def distortion_db(delta, x_org) -> float:
    """Loudness of the perturbation relative to the original, in dB."""
    d = _samples(delta)
    x = _samples(x_org)
    if d.shape != x.shape:
        raise ValueError(f"length mismatch: delta {d.shape[0]} vs original {x.shape[0]}")
    if isinstance(delta, Waveform) and isinstance(x_org, Waveform):
        if delta.sample_rate_hz != x_org.sample_rate_hz:
            raise ValueError("sample rate mismatch")
    ld = loudness_db(d)
    if ld == -np.inf:
        return -np.inf
    return ld - loudness_db(x)


def threshold_amplitude(x_org, epsilon_db: float) -> float:
    """Largest peak perturbation whose distortion equals ``epsilon_db``."""
    return float(np.max(np.abs(_samples(x_org)))) * 10.0 ** (epsilon_db / 20.0)


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    frames: np.ndarray
    hop_len: int
    window: str

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]

    def starts(self) -> np.ndarray:
        return np.arange(self.num_frames) * self.hop_len


def window_taper(kind: str, frame_len: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(frame_len)
    if kind == "hann":
        # periodic Hann, the usual STFT choice
        n = np.arange(frame_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)
    raise ValueError(f"unknown window {kind!r}; expected 'rect' or 'hann'")


def num_frames(signal_len: int, frame_len: int, hop_len: int) -> int:
    if hop_len < 1:
        raise ValueError("hop_len must be >= 1")
    if frame_len < 1 or signal_len < frame_len:
        raise ValueError(
            f"signal of {signal_len} samples is shorter than one frame ({frame_len})"
        )
    return (signal_len - frame_len) // hop_len + 1


def frame_signal(w, frame_len: int, hop_len: int, window: str = "rect") -> FrameMatrix:
    x = _samples(w)
    n = num_frames(x.shape[0], frame_len, hop_len)
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop_len][:n]
    frames = view * window_taper(window, frame_len)
    return FrameMatrix(frames, hop_len, window)


def rms(x) -> float:
    x = _samples(x)
    return float(np.sqrt(np.mean(x * x)))


def _samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)
