"""Attack-success and signal-quality metrics.

WER/SLA score transcripts; segSNR, STOI and LLR compare an adversarial
signal against its original. ``build_report`` aggregates per-sample
records into one row per attack mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from . import _backend
from .audio import Waveform, frame_signal

SEG_FRAME_S = 0.025
SEG_HOP_S = 0.010
SEG_CLAMP_DB = (-10.0, 35.0)
SEG_ENERGY_FLOOR = 1e-8

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_SEGMENT = 30  # frames, 384 ms at 10 kHz with hop 128
STOI_BANDS = 15
STOI_MIN_CF = 150.0
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

LPC_ORDER = 10
LLR_FRAME_S = 0.030


@dataclass(frozen=True)
class EditOps:
    deletions: int
    insertions: int
    substitutions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.deletions + self.insertions + self.substitutions


def tokenize(text) -> list[str]:
    if isinstance(text, str):
        return text.lower().split()
    return [str(w).lower() for w in text]


def word_edit_ops(ref, hyp) -> EditOps:
    """Word-level Levenshtein alignment with unit costs.

    On equal cost the backtrace prefers substitution, then insertion, then
    deletion.
    """
    r, h = tokenize(ref), tokenize(hyp)
    vocab: dict[str, int] = {}
    rid = [vocab.setdefault(w, len(vocab)) for w in r]
    hid = [vocab.setdefault(w, len(vocab)) for w in h]
    d = _backend.edit_distance_table(np.asarray(rid, dtype=np.int64), np.asarray(hid, dtype=np.int64))
    i, j = len(r), len(h)
    D = I = S = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if rid[i - 1] == hid[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                S += cost
                i -= 1
                j -= 1
                continue
        if j > 0 and d[i, j] == d[i, j - 1] + 1:
            I += 1
            j -= 1
            continue
        D += 1
        i -= 1
    return EditOps(D, I, S, len(r))


def wer(ref, hyp) -> float:
    ops = word_edit_ops(ref, hyp)
    if ops.ref_len == 0:
        raise ValueError("WER is undefined for an empty reference")
    return 100.0 * ops.errors / ops.ref_len


def corpus_wer(pairs) -> float:
    """Pooled WER: summed edit counts over summed reference lengths."""
    errors = words = 0
    for ref, hyp in pairs:
        ops = word_edit_ops(ref, hyp)
        errors += ops.errors
        words += ops.ref_len
    if words == 0:
        raise ValueError("WER is undefined for an empty reference")
    return 100.0 * errors / words


def sla(outcomes) -> float:
    outcomes = [bool(o) for o in outcomes]
    if not outcomes:
        raise ValueError("SLA of an empty batch is undefined")
    return 100.0 * sum(outcomes) / len(outcomes)


# -- segmental SNR ----------------------------------------------------------

def _pair(x_org, x_adv):
    a = x_org.samples if isinstance(x_org, Waveform) else np.asarray(x_org, dtype=np.float64)
    b = x_adv.samples if isinstance(x_adv, Waveform) else np.asarray(x_adv, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    fs = x_org.sample_rate_hz if isinstance(x_org, Waveform) else 16000
    return a, b, fs


def seg_snr_frames(x_org, x_adv) -> np.ndarray:
    a, b, fs = _pair(x_org, x_adv)
    flen, hop = int(round(SEG_FRAME_S * fs)), int(round(SEG_HOP_S * fs))
    ref = frame_signal(a, flen, hop).frames
    err = ref - frame_signal(b, flen, hop).frames
    sig_e = np.sum(ref * ref, axis=1)
    err_e = np.sum(err * err, axis=1)
    active = sig_e > SEG_ENERGY_FLOOR
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig_e[active] / err_e[active])
    return np.clip(snr, *SEG_CLAMP_DB)


def seg_snr(x_org, x_adv) -> float:
    snr = seg_snr_frames(x_org, x_adv)
    if snr.size == 0:
        raise ValueError("segSNR: no frame of the reference has energy above the floor")
    return float(np.mean(snr))


# -- STOI -------------------------------------------------------------------

def _third_octave_matrix(fs, nfft, num_bands, min_cf):
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    cf = min_cf * 2.0 ** (k / 3.0)
    lo = min_cf * 2.0 ** ((2 * k - 1) / 6.0)
    hi = min_cf * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((num_bands, freqs.shape[0]))
    for i in range(num_bands):
        lo_bin = int(np.argmin((freqs - lo[i]) ** 2))
        hi_bin = int(np.argmin((freqs - hi[i]) ** 2))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm, cf


def _stoi_window():
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _drop_silent_frames(x, y):
    hop = STOI_FRAME // 2
    w = _stoi_window()
    starts = range(0, x.shape[0] - STOI_FRAME + 1, hop)
    xf = np.array([w * x[s:s + STOI_FRAME] for s in starts])
    yf = np.array([w * y[s:s + STOI_FRAME] for s in starts])
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = (np.max(energies) - STOI_DYN_RANGE_DB - energies) < 0
    xf, yf = xf[keep], yf[keep]
    n = (xf.shape[0] - 1) * hop + STOI_FRAME if xf.shape[0] else 0
    xs, ys = np.zeros(n), np.zeros(n)
    for i in range(xf.shape[0]):
        xs[i * hop:i * hop + STOI_FRAME] += xf[i]
        ys[i * hop:i * hop + STOI_FRAME] += yf[i]
    return xs, ys


def _stft_mag(x):
    hop = STOI_FRAME // 2
    w = _stoi_window()
    frames = np.array([w * x[s:s + STOI_FRAME] for s in range(0, x.shape[0] - STOI_FRAME + 1, hop)])
    return np.abs(np.fft.rfft(frames, n=STOI_NFFT, axis=1)).T  # (bins, frames)


def stoi(x_org, x_adv) -> float:
    """Short-time objective intelligibility, clamped to ``[0, 1]``."""
    a, b, fs = _pair(x_org, x_adv)
    if a.shape[0] < 0.384 * fs:
        raise ValueError("STOI needs at least 384 ms of signal")
    if fs != STOI_FS:
        ratio = Fraction(STOI_FS, fs)
        a = resample_poly(a, ratio.numerator, ratio.denominator)
        b = resample_poly(b, ratio.numerator, ratio.denominator)
    a, b = _drop_silent_frames(a, b)
    obm, _ = _third_octave_matrix(STOI_FS, STOI_NFFT, STOI_BANDS, STOI_MIN_CF)
    X = np.sqrt(obm @ _stft_mag(a) ** 2)
    Y = np.sqrt(obm @ _stft_mag(b) ** 2)
    n_frames = X.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError("STOI: fewer than 384 ms of non-silent signal")
    eps = np.finfo(float).eps
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    scores = []
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = X[:, m - STOI_SEGMENT:m]
        ys = Y[:, m - STOI_SEGMENT:m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + eps)
        yp = np.minimum(alpha * ys, xs * (1.0 + clip))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yp - yp.mean(axis=1, keepdims=True)
        num = np.sum(xc * yc, axis=1)
        den = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + eps
        scores.append(num / den)
    return float(np.clip(np.mean(scores), 0.0, 1.0))


# -- LLR --------------------------------------------------------------------

def lpc(frame, order: int = LPC_ORDER):
    """Autocorrelation-method LPC: ``(a, r)`` with ``a[0] == 1``; ``None`` if degenerate."""
    n = frame.shape[0]
    r = np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])
    if r[0] <= 0.0:
        return None
    a, _, err = _backend.levinson_durbin(r, order)
    if not np.isfinite(err) or err <= 0.0:
        return None
    return a, r


def _toeplitz_quad(a, r):
    p = a.shape[0]
    idx = np.abs(np.arange(p)[:, None] - np.arange(p)[None, :])
    return float(a @ r[idx] @ a)


def llr_frames(x_org, x_adv) -> np.ndarray:
    """Raw per-frame Itakura log-likelihood ratios (degenerate frames skipped)."""
    a, b, fs = _pair(x_org, x_adv)
    flen = int(round(LLR_FRAME_S * fs))
    hop = flen // 4
    ref = frame_signal(a, flen, hop, "hann").frames
    deg = frame_signal(b, flen, hop, "hann").frames
    out = []
    for fr, fd in zip(ref, deg):
        lr = lpc(fr)
        ld = lpc(fd)
        if lr is None or ld is None:
            continue
        a_org, r_org = lr
        a_adv, _ = ld
        num = _toeplitz_quad(a_adv, r_org)
        den = _toeplitz_quad(a_org, r_org)
        if den <= 0.0 or num <= 0.0:
            continue
        out.append(math.log(num / den))
    return np.asarray(out)


def llr_raw(x_org, x_adv) -> float:
    frames = llr_frames(x_org, x_adv)
    if frames.size == 0:
        raise ValueError("LLR: every frame was degenerate")
    return float(np.median(frames))


def llr(x_org, x_adv) -> float:
    """Median frame LLR clamped to ``[0, 1]``."""
    return float(np.clip(llr_raw(x_org, x_adv), 0.0, 1.0))


# -- aggregation ------------------------------------------------------------

REPORT_COLUMNS = (
    "mode", "wer_pct", "wer_std", "sla_pct", "sla_std", "seg_snr_db", "stoi", "llr", "n_ota",
)


@dataclass(frozen=True)
class SampleMetrics:
    """One evaluated (sample, target, mode) triple."""

    mode: str
    sample_id: str
    experiment: int
    reference: str
    target: str
    transcript: str
    wer_pct: float
    edit_errors: int
    ref_words: int
    hit: bool
    seg_snr_db: float
    stoi: float
    llr: float
    llr_raw: float
    n_ota: int


@dataclass(frozen=True)
class QualityReport:
    mode: str
    wer_pct: float
    wer_std: float
    sla_pct: float
    sla_std: float
    seg_snr_db: float
    stoi: float
    llr: float
    n_ota: float
    sample_count: int
    wer_sentence_mean: float = 0.0
    records: tuple = field(default=(), repr=False)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


def sample_metrics(
    mode, sample_id, experiment, reference, target, transcript, x_org, x_adv, n_ota
) -> SampleMetrics:
    ops = word_edit_ops(reference, transcript)
    return SampleMetrics(
        mode=mode,
        sample_id=sample_id,
        experiment=int(experiment),
        reference=reference,
        target=target,
        transcript=transcript,
        wer_pct=100.0 * ops.errors / ops.ref_len if ops.ref_len else float("nan"),
        edit_errors=ops.errors,
        ref_words=ops.ref_len,
        hit=transcript == target,
        seg_snr_db=seg_snr(x_org, x_adv),
        stoi=stoi(x_org, x_adv),
        llr=llr(x_org, x_adv),
        llr_raw=llr_raw(x_org, x_adv),
        n_ota=int(n_ota),
    )


def build_report(records) -> QualityReport:
    """Aggregate one mode's per-sample records.

    WER is pooled over the batch; its ``std`` (and SLA's) is taken across
    experiments, i.e. across groups sharing a target index.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot build a report from an empty batch")
    modes = {r.mode for r in records}
    if len(modes) != 1:
        raise ValueError(f"records mix attack modes: {sorted(modes)}")
    groups: dict[int, list] = {}
    for r in records:
        groups.setdefault(r.experiment, []).append(r)
    g_wer = [_pooled(g) for g in groups.values()]
    g_sla = [100.0 * sum(r.hit for r in g) / len(g) for g in groups.values()]
    return QualityReport(
        mode=records[0].mode,
        wer_pct=_pooled(records),
        wer_std=float(np.std(g_wer)),
        sla_pct=100.0 * sum(r.hit for r in records) / len(records),
        sla_std=float(np.std(g_sla)),
        seg_snr_db=float(np.mean([r.seg_snr_db for r in records])),
        stoi=float(np.mean([r.stoi for r in records])),
        llr=float(np.mean([r.llr for r in records])),
        n_ota=float(np.mean([r.n_ota for r in records])),
        sample_count=len(records),
        wer_sentence_mean=float(np.mean([r.wer_pct for r in records])),
        records=tuple(records),
    )


def _pooled(records) -> float:
    words = sum(r.ref_words for r in records)
    if words == 0:
        return float("nan")
    return 100.0 * sum(r.edit_errors for r in records) / words
