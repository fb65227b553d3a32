"""Targeted attacks on the victim: CTC descent under a peak-distortion
condition, with an optional Cramér-IPM inner loop that pulls the candidate's
sample distribution back toward the clean corpus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import Waveform, distortion_db, snap_to_pcm16, threshold_amplitude
from .cramer import (
    CramerConfig,
    DiscrepancyObjective,
    EmpiricalDistribution,
    cramer2_distance,
    empirical_cdf,
    pooled_reference,
)
from .victim.ctc import InfeasibleAlignmentError, greedy_decode, min_frames
from .victim.frontend import get_frontend
from .victim.model import VictimModel, loss_and_input_gradient
from .victim.vocab import Vocabulary

log = logging.getLogger(__name__)

HIT, CHANGED, FAILED = "hit_target", "changed_but_missed", "failed"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class NonFiniteLossError(FloatingPointError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite attack loss at outer iteration {iteration}: {loss}")
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class AttackConfig:
    epsilon_db: float = -32.0
    loss_scale: float = 1.0
    outer_step: float = 5e-4
    sign_steps: bool = False
    optimizer: str = "adam"  # "adam" | "sgd"
    inner_step: float = 1e-3
    max_outer_iters: int = 2000
    max_inner_iters: int = 50
    mode: str = "cramer"  # "cramer" | "cw"
    seed: int = 0
    # the perturbation is kept this far inside the threshold so that PCM
    # rounding cannot push it over
    margin_db: float = 0.1
    pcm16: bool = True
    ipm: CramerConfig = field(default_factory=CramerConfig)

    def __post_init__(self):
        if not self.epsilon_db < 0:
            raise ValueError("epsilon_db must be negative")
        if self.outer_step <= 0 or self.inner_step <= 0 or self.loss_scale <= 0:
            raise ValueError("step sizes and loss_scale must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("cramer", "cw"):
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.margin_db < 0:
            raise ValueError("margin_db must be non-negative")


@dataclass(frozen=True, eq=False)
class AttackResult:
    x_adv: Waveform
    delta: Waveform
    success: str
    final_distortion_db: float
    final_cramer2: float
    iterations_used: tuple[int, int]
    transcript_before: tuple[int, ...]
    transcript_after: tuple[int, ...]
    target: tuple[int, ...]
    # accepted objective values, one tuple per inner pass
    inner_trace: tuple = ()

    @property
    def hit(self) -> bool:
        return self.success == HIT

    def record(self, vocab: Vocabulary | None = None) -> dict:
        vocab = vocab or Vocabulary()
        return {
            "success": self.success,
            "final_distortion_db": self.final_distortion_db,
            "final_cramer2": self.final_cramer2,
            "outer_iters": self.iterations_used[0],
            "inner_iters": self.iterations_used[1],
            "transcript_before": vocab.decode(self.transcript_before),
            "transcript_after": vocab.decode(self.transcript_after),
            "target": vocab.decode(self.target),
        }


def domain_values(m: VictimModel, x, cfg: CramerConfig) -> np.ndarray:
    if cfg.domain == "amplitude":
        return np.asarray(x, dtype=np.float64)
    return m.features(x).ravel()


def build_reference(m: VictimModel, signals, cfg: CramerConfig = CramerConfig()) -> EmpiricalDistribution:
    """Pooled clean-corpus distribution in the configured domain."""
    vals = [domain_values(m, s.samples if isinstance(s, Waveform) else s, cfg) for s in signals]
    return pooled_reference(vals, cfg.reference_size_cap, cfg.seed)


def _ipm_direction(m, x, obj: DiscrepancyObjective, mu):
    """Waveform-space gradient of the discrepancy, per value.

    The discrepancy averages over ``n`` values, so its raw gradient scales
    with ``1/n``; multiplying by ``n`` gives each value the size of the local
    CDF mismatch, independent of signal length.
    """
    if obj.cfg.domain == "amplitude":
        return x.shape[0] * obj.gradient(x, mu)
    fe = get_frontend(m.frontend)
    feats, cache = fe.forward(x)
    return fe.backward(feats.size * obj.gradient(feats.ravel(), mu).reshape(feats.shape), cache)


def _objective(m, x, obj, mu):
    return obj.value(domain_values(m, x, obj.cfg), mu)


def _shrink_excess(d, box, step):
    """Pull samples above ``box`` in magnitude inward by ``step`` or half their
    excess, whichever is larger, never past ``box``."""
    mag = np.abs(d)
    over = mag > box
    if not np.any(over):
        return d
    out = d.copy()
    m = mag[over]
    pull = np.maximum(step, 0.5 * (m - box))
    out[over] = np.sign(d[over]) * np.maximum(m - pull, box)
    return out


def _clamped(x_org, delta):
    x = np.clip(x_org + delta, -1.0, 1.0)
    return x, x - x_org


def attack(m: VictimModel, x_org: Waveform, target, reference: EmpiricalDistribution | None,
           cfg: AttackConfig = AttackConfig()) -> AttackResult:
    """Run the two-loop attack toward ``target``.

    The outer loop descends ``c * CTC(x, target) + ||delta||_2``. In cramer
    mode, whenever the perturbation breaks the distortion condition, the inner
    loop takes monotone steps on the discrepancy against ``reference`` while
    shrinking the samples that exceed the threshold. In cw mode the
    perturbation is clipped to the threshold instead.
    """
    target = tuple(int(t) for t in target)
    m.vocabulary.validate(target)
    xo = x_org.samples
    n_frames = m.num_frames(xo)
    if min_frames(target) > n_frames:
        raise InfeasibleAlignmentError(
            f"target needs {min_frames(target)} frames, signal has {n_frames}"
        )
    before = m.transcribe(xo)
    if cfg.mode == "cramer" and reference is None:
        raise ValueError("cramer mode needs a reference distribution")
    obj = DiscrepancyObjective(reference, cfg.ipm) if reference is not None else None

    def finish(delta, status, outer, inner, after, trace):
        x_adv = xo + delta
        dist = distortion_db(delta, xo)
        c2 = np.nan
        if reference is not None:
            c2 = cramer2_distance(reference, empirical_cdf(domain_values(m, x_adv, cfg.ipm)))
        return AttackResult(
            Waveform(x_adv, x_org.sample_rate_hz), Waveform(delta, x_org.sample_rate_hz),
            status, float(dist), float(c2), (outer, inner), before, tuple(after), target,
            tuple(trace),
        )

    if before == target:
        return finish(np.zeros_like(xo), HIT, 0, 0, before, ())

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    tau = threshold_amplitude(xo, cfg.epsilon_db)
    box = tau * 10.0 ** (-cfg.margin_db / 20.0)
    # x - x_org can exceed box by an ulp after a projection onto it
    slack = box * (1.0 + 1e-9)
    delta = np.zeros_like(xo)
    x = xo.copy()
    inner_total = 0
    trace = []
    after = before
    outer = 0
    mom, vel = np.zeros_like(xo), np.zeros_like(xo)
    while outer < cfg.max_outer_iters:
        loss, g_ctc, z = loss_and_input_gradient(m, x, target)
        if not np.isfinite(loss):
            raise NonFiniteLossError(outer, loss)
        after = greedy_decode(z, m.vocabulary)
        if after == target:
            x_chk, d_chk = x, delta
            if cfg.pcm16:
                x_chk = snap_to_pcm16(x)
                d_chk = x_chk - xo
                after = m.transcribe(x_chk)
            if after == target and distortion_db(d_chk, xo) < cfg.epsilon_db:
                return finish(d_chk, HIT, outer, inner_total, after, trace)
        outer += 1

        norm = np.linalg.norm(delta)
        g = cfg.loss_scale * g_ctc + (delta / norm if norm > 0 else 0.0)
        if cfg.sign_steps:
            step = np.sign(g)
        elif cfg.optimizer == "adam":
            mom = ADAM_BETAS[0] * mom + (1.0 - ADAM_BETAS[0]) * g
            vel = ADAM_BETAS[1] * vel + (1.0 - ADAM_BETAS[1]) * g * g
            m_hat = mom / (1.0 - ADAM_BETAS[0] ** outer)
            v_hat = vel / (1.0 - ADAM_BETAS[1] ** outer)
            step = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            step = g
        x, delta = _clamped(xo, delta - cfg.outer_step * step)

        if cfg.mode == "cw":
            x, delta = _clamped(xo, np.clip(delta, -box, box))
            continue

        eta = cfg.inner_step
        k = 0
        accepted = []
        cur = None
        while np.max(np.abs(delta)) > slack and k < cfg.max_inner_iters:
            k += 1
            mu = float(rng.uniform(-1.0, 1.0))
            if cur is None or cfg.ipm.mode == "critic":
                # critic objective depends on mu, so it is re-evaluated per draw
                cur = _objective(m, x, obj, mu)
            d = _ipm_direction(m, x, obj, mu)
            # the descent part backs off on rejection; the pull toward the
            # threshold keeps its full size so every pass can reach it
            x_try, d_try = _clamped(xo, _shrink_excess(delta - eta * d, box, cfg.inner_step))
            val = _objective(m, x_try, obj, mu)
            if val <= cur:
                x, delta, cur = x_try, d_try, val
                accepted.append(val)
            else:
                eta *= 0.5
                if eta < cfg.inner_step * 2.0**-20:
                    break
        inner_total += k
        if accepted:
            trace.append(tuple(accepted))
        if np.max(np.abs(delta)) > slack:
            x, delta = _clamped(xo, np.clip(delta, -box, box))

    # caps exhausted: report the last candidate's standing
    loss, _, z = loss_and_input_gradient(m, x, target)
    if cfg.pcm16:
        x = snap_to_pcm16(x)
        delta = x - xo
    after = m.transcribe(x)
    if after == target and distortion_db(delta, xo) < cfg.epsilon_db:
        status = HIT
    elif after != before:
        status = CHANGED
    else:
        status = FAILED
    return finish(delta, status, outer, inner_total, after, trace)


def cw_attack(m: VictimModel, x_org: Waveform, target, cfg: AttackConfig = AttackConfig(),
              reference: EmpiricalDistribution | None = None) -> AttackResult:
    """Baseline: the same outer descent with the dB condition alone.

    ``reference`` is only used to report ``final_cramer2``.
    """
    return attack(m, x_org, target, reference, replace(cfg, mode="cw"))


def pick_nontargeted(y, vocab: Vocabulary = Vocabulary(), seed: int = 0) -> tuple[int, ...]:
    """Uniform random phrase of the same length as ``y``, redrawn until it differs."""
    y = tuple(int(t) for t in y)
    if vocab.num_symbols < 2:
        raise ValueError("need at least 2 non-blank tokens")
    if not y:
        raise ValueError("an empty phrase has no alternative of the same length")
    rng = np.random.default_rng(seed)
    while True:
        cand = tuple(int(t) for t in rng.integers(1, vocab.num_symbols + 1, size=len(y)))
        if cand != y:
            return cand
