from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..metrics import corpus_wer
from .corpus import Corpus
from .frontend import FrontendConfig, get_frontend
from .ctc import ctc_loss
from .model import ModelConfig, VictimModel, init_model, loss_and_param_grads

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    hidden: int = 64
    kernel: int = 3
    jitter: bool = True  # random sub-hop time shift of each utterance per step


def train_victim(corpus: Corpus, cfg: TrainConfig = TrainConfig(),
                 frontend: FrontendConfig = FrontendConfig(), on_epoch=None) -> VictimModel:
    """Per-utterance gradient descent on the CTC loss with a fixed step.

    The epoch loss is the mean CTC loss over the training split, measured
    after the epoch's updates. ``on_epoch(epoch, loss)`` is called once per
    epoch.
    """
    train = corpus.train
    if not train:
        raise ValueError("corpus has no training split")
    fe = get_frontend(frontend)
    waves = [it.wave.samples for it in train]
    feats = [fe.forward(x)[0] for x in waves]
    targets = [it.tokens for it in train]

    model = init_model(cfg.seed, frontend, ModelConfig(cfg.hidden, cfg.kernel), corpus.vocabulary)
    stacked = np.concatenate(feats)
    model.params["feat_mean"] = stacked.mean(axis=0)
    model.params["feat_std"] = stacked.std(axis=0) + 1e-3

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    history = []
    for epoch in range(cfg.epochs):
        for idx in rng.permutation(len(train)):
            f = feats[idx]
            if cfg.jitter:
                shift = int(rng.integers(0, frontend.hop_len))
                if shift:
                    f = fe.forward(waves[idx][shift:])[0]
            loss, grads = loss_and_param_grads(model, f, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            for name, g in grads.items():
                model.params[name] -= cfg.learning_rate * g
        epoch_loss = float(np.mean([ctc_loss(model.forward(f), t) for f, t in zip(feats, targets)]))
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)

    model.history = tuple(history)
    model.heldout_wer = heldout_wer(model, corpus)
    return model


def heldout_wer(model: VictimModel, corpus: Corpus) -> float | None:
    held = corpus.held_out
    if not held:
        return None
    voc = corpus.vocabulary
    pairs = [(voc.decode(it.tokens), model.transcribe_text(it.wave)) for it in held]
    return corpus_wer(pairs)
