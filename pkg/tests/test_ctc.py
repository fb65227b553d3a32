import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cramer_attack.victim.ctc import (
    InfeasibleAlignmentError,
    collapse,
    ctc_loss,
    ctc_loss_and_grad,
    greedy_decode,
    log_softmax,
    min_frames,
)


def brute_force_nll(logits, target):
    """Sum the probability of every frame path that collapses onto target."""
    lp = log_softmax(logits)
    T, V = lp.shape
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path) == tuple(target):
            total += np.exp(sum(lp[t, k] for t, k in enumerate(path)))
    return -np.log(total)


CASES = [((4, 3), (1,)), ((4, 3), (1, 2)), ((5, 3), (1, 1)), ((5, 4), (2, 3, 2)), ((3, 3), (2,)), ((6, 3), (1, 2, 1))]


@pytest.mark.parametrize("shape,target", CASES)
def test_loss_matches_enumeration(kernels, shape, target):
    z = np.random.default_rng(hash(target) % 2**32).normal(size=shape)
    assert ctc_loss(z, target) == pytest.approx(brute_force_nll(z, target), rel=1e-10)


@pytest.mark.parametrize("shape,target", CASES)
def test_gradient_matches_finite_differences(kernels, shape, target):
    z = np.random.default_rng(7).normal(size=shape)
    _, g = ctc_loss_and_grad(z, target)
    h = 1e-6
    fd = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd[idx] = (ctc_loss(zp, target) - ctc_loss(zm, target)) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_grad_rows_sum_to_zero(kernels):
    z = np.random.default_rng(0).normal(size=(30, 28))
    _, g = ctc_loss_and_grad(z, (3, 5, 5, 9))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)


def test_shift_invariance_of_logits():
    z = np.random.default_rng(1).normal(size=(10, 5))
    assert ctc_loss(z, (1, 2)) == pytest.approx(ctc_loss(z + 3.7, (1, 2)))
    assert ctc_loss(log_softmax(z), (1, 2)) == pytest.approx(ctc_loss(z, (1, 2)))


def test_min_frames():
    assert min_frames(()) == 0
    assert min_frames((1, 2, 3)) == 3
    assert min_frames((1, 1, 2, 2)) == 6


def test_infeasible():
    z = np.zeros((3, 4))
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(z, (1, 1, 1))
    ctc_loss(np.zeros((3, 4)), (1, 2, 3))


def test_bad_ids():
    with pytest.raises(ValueError):
        ctc_loss(np.zeros((5, 4)), (0, 1))
    with pytest.raises(ValueError):
        ctc_loss(np.zeros((5, 4)), (4,))


def test_empty_target_is_all_blank():
    z = np.random.default_rng(2).normal(size=(6, 4))
    lp = log_softmax(z)
    assert ctc_loss(z, ()) == pytest.approx(-lp[:, 0].sum())


def test_greedy_decode():
    path = [0, 1, 1, 0, 1, 2, 2, 0, 0, 3]
    z = np.full((len(path), 4), -5.0)
    z[np.arange(len(path)), path] = 5.0
    assert greedy_decode(z) == (1, 1, 2, 3)
    assert collapse([0, 0, 0]) == ()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_loss_nonnegative_and_confident_paths(length, seed):
    rng = np.random.default_rng(seed)
    target = tuple(int(t) for t in rng.integers(1, 5, size=length))
    T = min_frames(target) + int(rng.integers(0, 4))
    z = rng.normal(size=(T, 5))
    loss = ctc_loss(z, target)
    assert loss >= 0 and np.isfinite(loss)
    # a sharp path spelling the target gives a near-zero loss
    path = []
    for i, t in enumerate(target):
        if i and target[i - 1] == t:
            path.append(0)
        path.append(t)
    path += [0] * (T - len(path))
    sharp = np.full((T, 5), -30.0)
    sharp[np.arange(T), path] = 30.0
    assert ctc_loss(sharp, target) < 1e-6
    assert greedy_decode(sharp) == target
