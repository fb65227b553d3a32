"""Simulated over-the-air playback for evaluating finished adversarial audio.

The chain is band-pass (optional), room impulse response, then white noise.
Nothing here is used while an attack is being optimized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import firwin

from .audio import SAMPLE_RATE, Waveform, rms

BANDPASS_TAPS = 101
DECAY_60DB = 3.0 * np.log(10.0)  # ln(1000): a 60 dB drop in amplitude


@dataclass(frozen=True, eq=False)
class Rir:
    taps: np.ndarray
    descriptor: str = "unit"

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64).ravel()
        if t.size == 0:
            raise ValueError("an impulse response needs at least one tap")
        if not np.all(np.isfinite(t)):
            raise ValueError("impulse response taps must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "taps", t)


def unit_rir() -> Rir:
    return Rir(np.ones(1), "unit")


def exp_decay_rir(rt60_s: float, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Rir:
    """Noise-excited exponential decay, unit energy, positive direct path."""
    if not rt60_s > 0:
        raise ValueError(f"rt60 must be positive, got {rt60_s}")
    n = max(1, int(round(0.25 * rt60_s * sample_rate)))
    t = np.arange(n) / sample_rate
    g = np.random.default_rng(seed).standard_normal(n)
    g[0] = abs(g[0]) or 1.0
    taps = np.exp(-t * DECAY_60DB / rt60_s) * g
    taps /= np.sqrt(np.sum(taps * taps))
    return Rir(taps, f"exp:rt60={rt60_s:g},seed={seed}")


def load_rir(path) -> Rir:
    """Plain text, one tap per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"impulse response file not found: {path}")
    taps = np.loadtxt(path, dtype=np.float64, ndmin=1)
    return Rir(taps, f"file:{path}")


def synth_rir(descriptor: str, sample_rate: int = SAMPLE_RATE) -> Rir:
    """Parse ``unit``, ``exp:rt60=0.3,seed=7`` or ``file:<path>``."""
    kind, _, rest = descriptor.partition(":")
    kind = kind.strip().lower()
    if kind in ("unit", "unit_impulse"):
        return unit_rir()
    if kind in ("exp", "exp_decay"):
        opts = {}
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, eq, val = part.partition("=")
            if not eq:
                raise ValueError(f"malformed option {part!r} in {descriptor!r}")
            opts[key.strip()] = val.strip()
        unknown = set(opts) - {"rt60", "seed"}
        if unknown:
            raise ValueError(f"unknown options {sorted(unknown)} in {descriptor!r}")
        return exp_decay_rir(float(opts.get("rt60", 0.3)), int(opts.get("seed", 0)), sample_rate)
    if kind == "file":
        return load_rir(rest)
    raise ValueError(f"unknown impulse response descriptor {descriptor!r}")


@dataclass(frozen=True)
class PlaybackConfig:
    rir: Rir = None
    noise_snr_db: float | None = None
    bandpass_khz: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rir is None:
            object.__setattr__(self, "rir", unit_rir())
        if self.noise_snr_db is not None and not np.isfinite(self.noise_snr_db):
            raise ValueError("noise_snr_db must be finite")
        if self.bandpass_khz is not None:
            lo, hi = self.bandpass_khz
            if not 0 < lo < hi:
                raise ValueError(f"band edges must satisfy 0 < low < high, got {self.bandpass_khz}")


def bandpass_taps(low_khz: float, high_khz: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    if high_khz * 1000.0 >= sample_rate / 2:
        raise ValueError("band-pass upper edge must lie below Nyquist")
    return firwin(BANDPASS_TAPS, [low_khz * 1000.0, high_khz * 1000.0], pass_zero=False, fs=sample_rate)


def playback(w: Waveform, cfg: PlaybackConfig = PlaybackConfig()) -> Waveform:
    x = w.samples.copy()
    n = x.shape[0]
    if cfg.bandpass_khz is not None:
        h = bandpass_taps(*cfg.bandpass_khz, w.sample_rate_hz)
        # linear phase: drop the group delay so the output stays aligned
        d = (BANDPASS_TAPS - 1) // 2
        x = np.convolve(x, h)[d:d + n]
    x = np.convolve(x, cfg.rir.taps)[:n]
    if cfg.noise_snr_db is not None:
        sigma = rms(x) * 10.0 ** (-cfg.noise_snr_db / 20.0)
        x = x + sigma * np.random.default_rng(cfg.seed).standard_normal(n)
    return Waveform(np.clip(x, -1.0, 1.0), w.sample_rate_hz)


@dataclass(frozen=True)
class RobustnessReport:
    n_ota: int
    transcripts: tuple
    max_rounds: int


def measure_n_ota(m, x_adv: Waveform, target, cfg: PlaybackConfig = PlaybackConfig(),
                  max_rounds: int = 10, decode=None) -> RobustnessReport:
    """Replay ``x_adv`` round after round and count the leading rounds that
    still decode to ``target``. ``decode`` defaults to the model's greedy
    transcription."""
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    decode = decode or m.transcribe
    target = tuple(target)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(max_rounds, dtype=np.uint64)
    x = x_adv
    out = []
    n_ota = 0
    alive = True
    for r in range(max_rounds):
        x = playback(x, PlaybackConfig(cfg.rir, cfg.noise_snr_db, cfg.bandpass_khz, int(seeds[r])))
        hyp = tuple(decode(x))
        out.append(hyp)
        if alive and hyp == target:
            n_ota += 1
        else:
            alive = False
    return RobustnessReport(n_ota, tuple(out), max_rounds)
