"""Empirical distributions, the CDF-mixture critic and Cramér discrepancies.

Conventions: CDFs are right-continuous (``F(t)`` counts mass at values
``<= t``). Gradients use sign comparisons with ``sign(0) = 0``, which is the
midpoint of the one-sided derivatives at ties and the minimum-norm
subgradient when candidate and reference coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("an empirical distribution needs at least one sample")
        if w.shape != v.shape:
            raise ValueError("values and weights differ in length")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be sorted ascending")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)
        cum = np.cumsum(w)
        cum[-1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "cumulative", cum)
        # padded tables for prefix-sum lookups
        object.__setattr__(self, "_cum0", np.concatenate([[0.0], cum]))
        object.__setattr__(self, "_prefix0", np.concatenate([[0.0], np.cumsum(w * v)]))

    def __len__(self):
        return self.values.shape[0]

    def cdf(self, t):
        """Mass at values ``<= t``."""
        return self._cum0[np.searchsorted(self.values, t, side="right")]

    def cdf_left(self, t):
        """Mass at values ``< t``."""
        return self._cum0[np.searchsorted(self.values, t, side="left")]

    def mean_abs_self(self) -> float:
        """``E|X - X'|`` for two independent draws."""
        return float(np.sum(self.weights * _mean_abs_to(self, self.values)))

    def shifted(self, c: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.values + c, self.weights)


def empirical_cdf(samples, weights=None) -> EmpiricalDistribution:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot build a CDF from an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if weights is None:
        return EmpiricalDistribution(np.sort(x), np.full(x.shape[0], 1.0 / x.shape[0]))
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != x.shape:
        raise ValueError("weights must match samples")
    w = w / w.sum()
    order = np.argsort(x, kind="stable")
    return EmpiricalDistribution(x[order], w[order])


@dataclass(frozen=True, eq=False)
class CriticFunction:
    """``f(t) = F_ref(t) + mu * F_cand(t)``."""

    reference: EmpiricalDistribution
    candidate: EmpiricalDistribution
    mu: float

    def __post_init__(self):
        if not -1.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [-1, 1], got {self.mu}")

    def __call__(self, t):
        return critic_eval(self, t)


def critic_eval(f: CriticFunction, t):
    return f.reference.cdf(t) + f.mu * f.candidate.cdf(t)


def ipm_discrepancy(reference: EmpiricalDistribution, candidate: EmpiricalDistribution, mu: float) -> float:
    """``|E_P f - E_Q f|`` for the CDF-mixture critic, computed exactly."""
    f = CriticFunction(reference, candidate, mu)
    e_p = float(np.dot(reference.weights, critic_eval(f, reference.values)))
    e_q = float(np.dot(candidate.weights, critic_eval(f, candidate.values)))
    return abs(e_p - e_q)


def cramer2_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """``integral (F_P - F_Q)^2 dt`` over the merged breakpoints."""
    z = np.sort(np.concatenate([p.values, q.values]), kind="stable")
    diff = p.cdf(z[:-1]) - q.cdf(z[:-1])
    return float(np.sum(diff * diff * np.diff(z)))


def _mean_abs_to(p: EmpiricalDistribution, y) -> np.ndarray:
    """``E_P|y - X|`` for each ``y`` via prefix sums."""
    y = np.asarray(y, dtype=np.float64)
    idx = np.searchsorted(p.values, y, side="right")
    S = p._prefix0[idx]
    return y * (2.0 * p._cum0[idx] - 1.0) + p._prefix0[-1] - 2.0 * S


def energy_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """``2E|X-Y| - E|X-X'| - E|Y-Y'|``; equals ``2 * cramer2_distance`` in 1-D."""
    cross = float(np.dot(q.weights, _mean_abs_to(p, q.values)))
    return 2.0 * cross - p.mean_abs_self() - q.mean_abs_self()


@dataclass(frozen=True)
class CramerConfig:
    domain: str = "amplitude"  # "amplitude" | "logmel"
    mode: str = "cramer2"  # "cramer2" | "critic"
    reference_size_cap: int = 2**16
    seed: int = 0

    def __post_init__(self):
        if self.domain not in ("amplitude", "logmel"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.mode not in ("cramer2", "critic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.reference_size_cap < 1:
            raise ValueError("reference_size_cap must be positive")


def reservoir_indices(n: int, k: int, rng) -> np.ndarray:
    """Algorithm R over ``range(n)``; returns sorted kept indices."""
    if n <= k:
        return np.arange(n)
    res = np.arange(k)
    i = np.arange(k, n)
    j = rng.integers(0, i + 1)
    hit = j < k
    # later replacements win; apply in stream order
    for slot, idx in zip(j[hit], i[hit]):
        res[slot] = idx
    return np.sort(res)


def pooled_reference(signals, cap: int = 2**16, seed: int = 0) -> EmpiricalDistribution:
    """Average of the per-signal empirical CDFs, reservoir-subsampled to ``cap``."""
    signals = [np.asarray(s, dtype=np.float64).ravel() for s in signals]
    if not signals:
        raise ValueError("no reference signals")
    values = np.concatenate(signals)
    weights = np.concatenate([np.full(s.shape[0], 1.0 / (len(signals) * s.shape[0])) for s in signals])
    keep = reservoir_indices(values.shape[0], cap, np.random.default_rng(seed))
    return empirical_cdf(values[keep], weights[keep])


def _interp_slope(d: EmpiricalDistribution, y) -> np.ndarray:
    """Right slope of the piecewise-linear interpolant of the CDF."""
    u, first = np.unique(d.values, return_index=True)
    if u.shape[0] < 2:
        return np.zeros_like(np.asarray(y, dtype=np.float64))
    last = np.concatenate([first[1:], [d.values.shape[0]]]) - 1
    c = d.cumulative[last]
    slope = np.diff(c) / np.diff(u)
    k = np.searchsorted(u, y, side="right") - 1
    inside = (k >= 0) & (k < slope.shape[0])
    out = np.zeros(np.shape(y))
    out[inside] = slope[k[inside]]
    return out


def ipm_gradient(candidate_values, reference: EmpiricalDistribution,
                 cfg: CramerConfig = CramerConfig(), mu: float = 0.0) -> np.ndarray:
    """Per-value (sub)gradient of the discrepancy, in input order.

    ``cramer2`` mode differentiates ``cramer2_distance`` through the
    sign-comparison sums of the energy form. ``critic`` mode holds the critic
    fixed and differentiates ``E_Q f`` using the interpolated CDF slopes, since
    the literal objective is piecewise constant in the candidate values.
    """
    y = np.asarray(candidate_values, dtype=np.float64).ravel()
    n = y.shape[0]
    w = 1.0 / n
    # work on sorted values (much faster lookups), then scatter back
    order = np.argsort(y)
    ys = y[order]
    g = np.empty(n)
    if cfg.mode == "cramer2":
        sp = reference.cdf_left(ys) + reference.cdf(ys)
        sq = (np.searchsorted(ys, ys, side="left") + np.searchsorted(ys, ys, side="right")) * w
        g[order] = w * (sp - sq)
        return g
    cand = EmpiricalDistribution(ys, np.full(n, w))
    f = CriticFunction(reference, cand, mu)
    e_p = float(np.dot(reference.weights, critic_eval(f, reference.values)))
    e_q = float(np.dot(cand.weights, critic_eval(f, ys)))
    g[order] = -np.sign(e_p - e_q) * w * (_interp_slope(reference, ys) + mu * _interp_slope(cand, ys))
    return g


class DiscrepancyObjective:
    """The discrepancy against a fixed reference, as used inside the attack."""

    def __init__(self, reference: EmpiricalDistribution, cfg: CramerConfig = CramerConfig()):
        self.reference = reference
        self.cfg = cfg
        self._ref_self = reference.mean_abs_self()

    def value(self, values, mu: float = 0.0) -> float:
        if self.cfg.mode == "critic":
            return ipm_discrepancy(self.reference, empirical_cdf(values), mu)
        ys = np.sort(np.asarray(values, dtype=np.float64).ravel())
        n = ys.shape[0]
        cross = float(np.mean(_mean_abs_to(self.reference, ys)))
        # E|Y - Y'| for uniform weights from the order statistics
        self_term = 2.0 * float(np.dot(2.0 * np.arange(n) - n + 1.0, ys)) / (n * n)
        return max(0.0, cross - 0.5 * self._ref_self - 0.5 * self_term)

    def cramer2(self, cand: EmpiricalDistribution) -> float:
        cross = float(np.dot(cand.weights, _mean_abs_to(self.reference, cand.values)))
        return max(0.0, cross - 0.5 * self._ref_self - 0.5 * cand.mean_abs_self())

    def gradient(self, values, mu: float = 0.0) -> np.ndarray:
        return ipm_gradient(values, self.reference, self.cfg, mu)
