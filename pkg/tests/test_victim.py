import numpy as np
import pytest

from cramer_attack.audio import snap_to_pcm16
from cramer_attack.victim.corpus import (
    NOISE_PEAK,
    load_manifest,
    synth_corpus,
    token_frequencies,
    write_manifest,
)
from cramer_attack.victim.model import (
    ModelConfig,
    VictimModel,
    forward,
    init_model,
    input_gradient,
    loss_and_input_gradient,
    loss_and_param_grads,
)
from cramer_attack.victim.train import TrainConfig, TrainingDivergedError, train_victim


def test_corpus_split(corpus):
    assert len(corpus.train) == 40 and len(corpus.held_out) == 10
    for it in corpus.items:
        assert 3 <= len(it.tokens) <= 6
        assert all(a != b for a, b in zip(it.tokens, it.tokens[1:]))
        np.testing.assert_array_equal(snap_to_pcm16(it.wave.samples), it.wave.samples)


def test_corpus_deterministic(corpus):
    again = synth_corpus()
    for a, b in zip(corpus.items, again.items):
        assert a.tokens == b.tokens and a.uid == b.uid
        np.testing.assert_array_equal(a.wave.samples, b.wave.samples)
    other = synth_corpus(seed=1)
    assert other.items[0].tokens != corpus.items[0].tokens or not np.array_equal(
        other.items[0].wave.samples, corpus.items[0].wave.samples)


def test_corpus_edges_are_low_level_noise(corpus):
    x = corpus.items[0].wave.samples
    assert np.max(np.abs(x[:1200])) <= NOISE_PEAK + 1 / 32768


def test_token_frequencies_unique():
    f = token_frequencies(27)
    assert len(np.unique(np.round(f, 6), axis=0)) == 27
    assert np.all(f[:, 0] != f[:, 1])
    assert f.min() >= 200 - 1e-9 and f.max() <= 6000 + 1e-9


def test_corpus_validation():
    with pytest.raises(ValueError):
        synth_corpus(num_utterances=1)
    with pytest.raises(ValueError):
        synth_corpus(phrase_len_range=(0, 3))


def test_manifest_roundtrip(tmp_path):
    c = synth_corpus(num_utterances=5, seed=3)
    man = write_manifest(c, tmp_path)
    back = load_manifest(man)
    assert [it.tokens for it in back.items] == [it.tokens for it in c.items]
    for a, b in zip(back.items, c.items):
        np.testing.assert_array_equal(a.wave.samples, b.wave.samples)
    assert len(back.held_out) == 1
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.tsv")


def small_model(seed=0):
    from cramer_attack.victim.frontend import FrontendConfig

    fe = FrontendConfig(num_mels=8, dft_size=512)
    return init_model(seed, fe, ModelConfig(hidden=5, kernel=3))


def test_param_gradients_finite_differences():
    m = small_model()
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(12, 8))
    target = (2, 5, 5)
    _, grads = loss_and_param_grads(m, feats, target)
    h = 1e-6
    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        p = m.params[name]
        for idx in [tuple(rng.integers(0, s) for s in p.shape) for _ in range(4)]:
            old = p[idx]
            p[idx] = old + h
            lp = loss_and_param_grads(m, feats, target)[0]
            p[idx] = old - h
            lm = loss_and_param_grads(m, feats, target)[0]
            p[idx] = old
            assert grads[name][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-8)


def test_forward_is_log_probabilities():
    m = small_model()
    lp = forward(m, np.random.default_rng(1).normal(size=(7, 8)))
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        forward(m, np.zeros((7, 9)))


def test_checkpoint_roundtrip(victim, tmp_path):
    blob = victim.to_bytes()
    back = VictimModel.from_bytes(blob)
    assert back.to_bytes() == blob
    assert back.history == victim.history and back.heldout_wer == victim.heldout_wer
    victim.save(tmp_path / "v.bin")
    assert (tmp_path / "v.bin").read_bytes() == blob
    with pytest.raises(ValueError):
        VictimModel.from_bytes(b"XX" + blob)


def test_training_quality(victim):
    assert victim.heldout_wer < 5.0
    h = np.array(victim.history)
    assert len(h) == 200
    assert np.mean(np.diff(h) <= 0) >= 0.9


def test_training_deterministic(corpus):
    cfg = TrainConfig(epochs=2, seed=5)
    a, b = train_victim(corpus, cfg), train_victim(corpus, cfg)
    assert a.to_bytes() == b.to_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # lr=1e300 overflows on purpose
def test_training_divergence_reported(corpus):
    with pytest.raises(TrainingDivergedError) as info:
        train_victim(corpus, TrainConfig(epochs=3, learning_rate=1e300))
    assert info.value.epoch == 0


def test_input_gradient_finite_differences(victim, corpus):
    x = corpus.held_out[0].wave.samples
    target = corpus.held_out[1].tokens[:3]
    g = input_gradient(victim, x, target)
    rng = np.random.default_rng(3)
    h = 1e-6
    for i in rng.choice(len(x) - 400, 10, replace=False):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (loss_and_input_gradient(victim, xp, target)[0] - loss_and_input_gradient(victim, xm, target)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-3, abs=1e-6)


def test_confident_target_has_small_gradient(victim, corpus):
    it = corpus.held_out[2]
    own = victim.transcribe(it.wave)
    wrong = tuple(reversed(own))
    g_own = input_gradient(victim, it.wave.samples, own)
    g_wrong = input_gradient(victim, it.wave.samples, wrong)
    assert np.linalg.norm(g_own) < 0.1 * np.linalg.norm(g_wrong)


def test_transcribes_heldout(victim, corpus):
    v = corpus.vocabulary
    for it in corpus.held_out:
        assert victim.transcribe_text(it.wave) == v.decode(it.tokens)
