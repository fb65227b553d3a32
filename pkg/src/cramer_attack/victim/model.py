"""The acoustic model: two temporal convolutions with tanh, then a linear
projection to per-frame log-probabilities. Forward and backward are written
out by hand so the attack gets exact gradients down to the waveform."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..audio import Waveform
from .ctc import ctc_loss_and_grad, greedy_decode, log_softmax
from .frontend import FrontendConfig, get_frontend
from .vocab import Vocabulary

CHECKPOINT_MAGIC = b"CRAMERVICTIM"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("feat_mean", "feat_std", "w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    kernel: int = 3

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel width must be a positive odd number")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")


@dataclass(eq=False)
class VictimModel:
    frontend: FrontendConfig
    arch: ModelConfig
    vocabulary: Vocabulary
    params: dict
    training_seed: int = 0
    history: tuple = ()
    heldout_wer: float | None = None

    def __post_init__(self):
        shapes = param_shapes(self.frontend, self.arch, len(self.vocabulary))
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    # -- inference ---------------------------------------------------------

    def features(self, w) -> np.ndarray:
        return get_frontend(self.frontend).forward(_samples(w))[0]

    def forward(self, feats) -> np.ndarray:
        return forward(self, feats)

    def transcribe(self, w) -> tuple[int, ...]:
        return greedy_decode(self.forward(self.features(w)), self.vocabulary)

    def transcribe_text(self, w) -> str:
        return self.vocabulary.decode(self.transcribe(w))

    def num_frames(self, w) -> int:
        return get_frontend(self.frontend).num_frames(len(_samples(w)))

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "version": CHECKPOINT_VERSION,
            "frontend": vars_of(self.frontend),
            "arch": vars_of(self.arch),
            "vocabulary": list(self.vocabulary.tokens),
            "training_seed": self.training_seed,
            "history": [float(h).hex() for h in self.history],
            "heldout_wer": None if self.heldout_wer is None else float(self.heldout_wer).hex(),
            "params": [[n, list(self.params[n].shape)] for n in PARAM_NAMES],
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        body = b"".join(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes() for n in PARAM_NAMES)
        return CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VictimModel":
        if not blob.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a victim checkpoint (bad magic)")
        off = len(CHECKPOINT_MAGIC)
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            params[name] = arr.astype(np.float64)
            off += 8 * count
        if off != len(blob):
            raise ValueError("trailing bytes in checkpoint")
        wer = header["heldout_wer"]
        return cls(
            frontend=FrontendConfig(**header["frontend"]),
            arch=ModelConfig(**header["arch"]),
            vocabulary=Vocabulary(tuple(header["vocabulary"])),
            params=params,
            training_seed=header["training_seed"],
            history=tuple(float.fromhex(h) for h in header["history"]),
            heldout_wer=None if wer is None else float.fromhex(wer),
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VictimModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def vars_of(cfg) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def param_shapes(frontend: FrontendConfig, arch: ModelConfig, vocab_size: int) -> dict:
    M, H, K = frontend.num_mels, arch.hidden, arch.kernel
    return {
        "feat_mean": (M,),
        "feat_std": (M,),
        "w1": (K * M, H),
        "b1": (H,),
        "w2": (K * H, H),
        "b2": (H,),
        "w3": (H, vocab_size),
        "b3": (vocab_size,),
    }


def init_model(
    seed: int,
    frontend: FrontendConfig = FrontendConfig(),
    arch: ModelConfig = ModelConfig(),
    vocabulary: Vocabulary = Vocabulary(),
) -> VictimModel:
    rng = np.random.default_rng(seed)
    M, H, K, V = frontend.num_mels, arch.hidden, arch.kernel, len(vocabulary)
    params = {
        "feat_mean": np.zeros(M),
        "feat_std": np.ones(M),
        "w1": rng.standard_normal((K * M, H)) / np.sqrt(K * M),
        "b1": np.zeros(H),
        "w2": rng.standard_normal((K * H, H)) / np.sqrt(K * H),
        "b2": np.zeros(H),
        # small output layer: near-uniform posteriors at initialization
        "w3": 0.1 * rng.standard_normal((H, V)) / np.sqrt(H),
        "b3": np.zeros(V),
    }
    return VictimModel(frontend, arch, vocabulary, params, training_seed=seed)


def _im2col(x, k):
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, C, k)
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(x.shape[0], -1)


def _col2im(gcols, k, channels):
    T = gcols.shape[0]
    pad = k // 2
    g = gcols.reshape(T, k, channels)
    out = np.zeros((T + 2 * pad, channels))
    for j in range(k):
        out[j:j + T] += g[:, j, :]
    return out[pad:pad + T]


def forward_cached(m: VictimModel, feats):
    p = m.params
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != m.frontend.num_mels:
        raise ValueError(
            f"features must have shape (T, {m.frontend.num_mels}), got {feats.shape}"
        )
    K = m.arch.kernel
    xn = (feats - p["feat_mean"]) / p["feat_std"]
    c1 = _im2col(xn, K)
    a1 = np.tanh(c1 @ p["w1"] + p["b1"])
    c2 = _im2col(a1, K)
    a2 = np.tanh(c2 @ p["w2"] + p["b2"])
    z = a2 @ p["w3"] + p["b3"]
    return z, (c1, a1, c2, a2)


def forward(m: VictimModel, feats) -> np.ndarray:
    """Per-frame log-probabilities, shape ``(T, |V|)``."""
    return log_softmax(forward_cached(m, feats)[0])


def backward(m: VictimModel, cache, grad_z, want_params: bool = True):
    """Backpropagate ``dL/dz`` (pre-softmax). Returns ``(param_grads, grad_feats)``."""
    p = m.params
    c1, a1, c2, a2 = cache
    K, H, M = m.arch.kernel, m.arch.hidden, m.frontend.num_mels
    g_a2 = grad_z @ p["w3"].T
    g_z2 = g_a2 * (1.0 - a2 * a2)
    g_a1 = _col2im(g_z2 @ p["w2"].T, K, H)
    g_z1 = g_a1 * (1.0 - a1 * a1)
    g_xn = _col2im(g_z1 @ p["w1"].T, K, M)
    g_feats = g_xn / p["feat_std"]
    grads = None
    if want_params:
        grads = {
            "w3": a2.T @ grad_z,
            "b3": grad_z.sum(axis=0),
            "w2": c2.T @ g_z2,
            "b2": g_z2.sum(axis=0),
            "w1": c1.T @ g_z1,
            "b1": g_z1.sum(axis=0),
        }
    return grads, g_feats


def loss_and_param_grads(m: VictimModel, feats, target):
    z, cache = forward_cached(m, feats)
    loss, gz = ctc_loss_and_grad(z, target)
    grads, _ = backward(m, cache, gz)
    return loss, grads


def loss_and_input_gradient(m: VictimModel, w, target):
    """CTC loss of ``target`` on ``w`` and its exact gradient w.r.t. the samples."""
    x = _samples(w)
    fe = get_frontend(m.frontend)
    feats, fcache = fe.forward(x)
    z, cache = forward_cached(m, feats)
    loss, gz = ctc_loss_and_grad(z, target)
    _, g_feats = backward(m, cache, gz, want_params=False)
    return loss, fe.backward(g_feats, fcache), z


def input_gradient(m: VictimModel, w, target) -> np.ndarray:
    return loss_and_input_gradient(m, w, target)[1]


def _samples(w) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
