"""Differentiable log-mel frontend.

window -> |DFT|^2 (as products with fixed cosine/sine bases) -> triangular
mel filterbank -> log(x + floor). ``backward`` is the exact transpose of that
chain, so attack gradients reach the waveform without approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import _backend
from ..audio import SAMPLE_RATE, Waveform, frame_signal, num_frames, window_taper


@dataclass(frozen=True)
class FrontendConfig:
    frame_len: int = 400
    hop_len: int = 160
    num_mels: int = 40
    dft_size: int = 512
    log_floor: float = 1e-8
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.dft_size < self.frame_len:
            raise ValueError("dft_size must be >= frame_len")
        if not self.num_mels < self.dft_size / 2:
            raise ValueError("num_mels must be < dft_size / 2")
        if self.hop_len < 1 or self.log_floor <= 0:
            raise ValueError("hop_len must be >= 1 and log_floor > 0")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(cfg: FrontendConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate_hz / 2), cfg.num_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Peak-one triangular filters, shape ``(dft_size//2 + 1, num_mels)``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate_hz / 2), cfg.num_mels + 2))
    freqs = np.arange(cfg.dft_size // 2 + 1) * cfg.sample_rate_hz / cfg.dft_size
    fb = np.zeros((freqs.shape[0], cfg.num_mels))
    for b in range(cfg.num_mels):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[:, b] = np.maximum(0.0, np.minimum(up, down))
    return fb


class LogMel:
    """Precomputed bases for one :class:`FrontendConfig`."""

    def __init__(self, cfg: FrontendConfig):
        self.cfg = cfg
        n = np.arange(cfg.frame_len)[:, None]
        k = np.arange(cfg.dft_size // 2 + 1)[None, :]
        ang = 2.0 * np.pi * n * k / cfg.dft_size
        self.window = window_taper("hann", cfg.frame_len)
        self.cos_basis = np.cos(ang)
        self.sin_basis = -np.sin(ang)
        self.mel = mel_filterbank(cfg)

    def num_frames(self, signal_len: int) -> int:
        return num_frames(signal_len, self.cfg.frame_len, self.cfg.hop_len)

    def forward(self, x):
        """Return ``(features, cache)``; features have shape ``(T, num_mels)``."""
        cfg = self.cfg
        frames = frame_signal(x, cfg.frame_len, cfg.hop_len, "hann").frames
        re = frames @ self.cos_basis
        im = frames @ self.sin_basis
        power = re * re + im * im
        mel = power @ self.mel + cfg.log_floor
        feats = np.log(mel)
        return feats, (re, im, mel, len(x))

    def backward(self, grad_feats, cache) -> np.ndarray:
        re, im, mel, length = cache
        g_power = (grad_feats / mel) @ self.mel.T
        g_frames = (2.0 * re * g_power) @ self.cos_basis.T + (2.0 * im * g_power) @ self.sin_basis.T
        g_frames *= self.window
        return _backend.overlap_add(g_frames, self.cfg.hop_len, length)


@lru_cache(maxsize=8)
def get_frontend(cfg: FrontendConfig) -> LogMel:
    return LogMel(cfg)


def logmel_features(w, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    return get_frontend(cfg).forward(x)[0]
