"""Deterministic synthetic speech stand-in, plus WAV-manifest ingestion.

Every token is rendered as a 120 ms two-tone chirp whose base frequencies
are fixed by the token index, so the classes are separable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio import SAMPLE_RATE, Waveform, read_wav, snap_to_pcm16
from .frontend import hz_to_mel, mel_to_hz
from .vocab import Vocabulary

TOKEN_SECONDS = 0.120
EDGE_SECONDS = 0.080
FADE_SECONDS = 0.010
GAP_SECONDS = 0.040  # trailing silence inside each token slot
NOISE_PEAK = 0.01
PRIMARY_AMP = 0.30
SECONDARY_AMP = 0.15
CHIRP_SPAN = 0.04  # relative sweep across a segment
F_LOW, F_HIGH = 200.0, 6000.0


@dataclass(frozen=True)
class CorpusItem:
    uid: str
    wave: Waveform
    tokens: tuple[int, ...]
    split: str  # "train" | "held_out"


@dataclass(frozen=True)
class Corpus:
    items: tuple[CorpusItem, ...]
    vocabulary: Vocabulary = Vocabulary()

    def __post_init__(self):
        if not self.items:
            raise ValueError("corpus is empty")
        rates = {it.wave.sample_rate_hz for it in self.items}
        if len(rates) != 1:
            raise ValueError(f"mixed sample rates in corpus: {sorted(rates)}")

    def split(self, name: str) -> list[CorpusItem]:
        return [it for it in self.items if it.split == name]

    @property
    def train(self):
        return self.split("train")

    @property
    def held_out(self):
        return self.split("held_out")


def token_frequencies(num_symbols: int) -> np.ndarray:
    """``(num_symbols, 2)`` table of primary/secondary base frequencies.

    Primaries are evenly spaced on the mel scale; secondaries reuse the same
    grid under a fixed permutation that never maps a token onto itself.
    """
    grid = mel_to_hz(np.linspace(hz_to_mel(F_LOW), hz_to_mel(F_HIGH), num_symbols))
    idx = np.arange(num_symbols)
    perm = (7 * idx + 11) % num_symbols
    return np.stack([grid, grid[perm]], axis=1)


def render_token(token: int, freqs: np.ndarray, rng, sr: int = SAMPLE_RATE) -> np.ndarray:
    slot = int(round(TOKEN_SECONDS * sr))
    n = slot - int(round(GAP_SECONDS * sr))
    t = np.arange(n) / sr
    # phase of a linear chirp: 2*pi * integral of f(t)
    base = t * (1.0 - CHIRP_SPAN / 2) + CHIRP_SPAN * t * t / (2 * t.shape[0] / sr)
    f1, f2 = freqs[token - 1]
    ph1, ph2 = rng.uniform(0.0, 2 * np.pi, size=2)
    seg = PRIMARY_AMP * np.sin(2 * np.pi * f1 * base + ph1)
    seg += SECONDARY_AMP * np.sin(2 * np.pi * f2 * base + ph2)
    fade = int(round(FADE_SECONDS * sr))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    env[:fade] = ramp
    env[-fade:] = ramp[::-1]
    return np.concatenate([seg * env, np.zeros(slot - n)])


def render_phrase(tokens, rng, vocab: Vocabulary = Vocabulary(), sr: int = SAMPLE_RATE) -> np.ndarray:
    freqs = token_frequencies(vocab.num_symbols)
    edge = np.zeros(int(round(EDGE_SECONDS * sr)))
    parts = [edge] + [render_token(tok, freqs, rng, sr) for tok in tokens] + [edge]
    x = np.concatenate(parts)
    x += rng.uniform(-NOISE_PEAK, NOISE_PEAK, size=x.shape[0])
    return snap_to_pcm16(x)


def _phrase_stream(rng, num_symbols):
    """Endless token stream: shuffled decks of every symbol, so each token
    shows up once per deck."""
    while True:
        deck = rng.permutation(np.arange(1, num_symbols + 1))
        yield from (int(t) for t in deck)


def synth_corpus(
    num_utterances: int = 50,
    phrase_len_range: tuple[int, int] = (3, 6),
    seed: int = 0,
    vocab: Vocabulary = Vocabulary(),
    sr: int = SAMPLE_RATE,
) -> Corpus:
    lo, hi = phrase_len_range
    if num_utterances < 2:
        raise ValueError("need at least 2 utterances")
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid phrase length range {phrase_len_range}; lengths must be >= 1")
    rng = np.random.default_rng(seed)
    stream = _phrase_stream(np.random.default_rng(rng.integers(2**63)), vocab.num_symbols)
    n_held = max(1, num_utterances // 5)
    n_train = num_utterances - n_held
    items = []
    for i in range(num_utterances):
        length = int(rng.integers(lo, hi + 1))
        phrase = []
        while len(phrase) < length:
            tok = next(stream)
            # no immediate repeats: a repeated token needs a blank between copies
            if phrase and phrase[-1] == tok:
                continue
            phrase.append(tok)
        wave = Waveform(render_phrase(phrase, rng, vocab, sr), sr)
        split = "train" if i < n_train else "held_out"
        items.append(CorpusItem(f"syn{i:04d}", wave, tuple(phrase), split))
    return Corpus(tuple(items), vocab)


def load_manifest(path, vocab: Vocabulary = Vocabulary()) -> Corpus:
    """Read ``<wav-path>\\t<transcript>`` lines; paths resolve relative to the manifest."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus manifest not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            wav_path, text = line.split("\t", 1)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected '<wav-path>\\t<transcript>'") from None
        wav = Path(wav_path)
        if not wav.is_absolute():
            wav = path.parent / wav
        rows.append((wav, vocab.encode(text.rstrip("\r\n").lower())))
    if not rows:
        raise ValueError(f"{path}: manifest has no entries")
    n_held = max(1, len(rows) // 5) if len(rows) >= 2 else 0
    n_train = len(rows) - n_held
    items = tuple(
        CorpusItem(wav.stem, read_wav(wav), toks, "train" if i < n_train else "held_out")
        for i, (wav, toks) in enumerate(rows)
    )
    return Corpus(items, vocab)


def write_manifest(corpus: Corpus, directory) -> Path:
    """Dump a corpus as WAV files plus a manifest (handy for inspection)."""
    from ..audio import write_wav

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for it in corpus.items:
        name = f"{it.uid}.wav"
        write_wav(directory / name, it.wave)
        lines.append(f"{name}\t{corpus.vocabulary.decode(it.tokens)}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
