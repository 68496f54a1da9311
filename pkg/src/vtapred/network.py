"""Multi-task feedforward network with a patient birth-decade embedding.

Architecture: the standardized feature vector is concatenated with a trainable
embedding of the patient's birth decade (one reserved row handles unknown
decades), passed through a shared tanh layer, and then split into three
branches of two tanh layers each.  The branches predict the event class
(2-way softmax), the heart-failure functional class (4-way softmax), and
body-mass index (linear).  Inverted dropout is applied to the input and to
every hidden layer at training time only.

Everything here is plain numpy; training lives in ``optim``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TASKS = ("vta", "nyhac", "bmi")
TASK_UNITS = {"vta": 2, "nyhac": 4, "bmi": 1}

CHECKPOINT_MAGIC = b"VTPN"
CHECKPOINT_VERSION = 1


class NetworkError(Exception):
    """Bad shapes, indices, or configuration passed to the network."""


class CheckpointError(Exception):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class NetworkConfig:
    num_features: int
    num_decades: int = 0           # embedding rows = num_decades + 1 (unknown row last)
    use_embedding: bool = True
    embed_dim: int = 10
    hidden: tuple[int, int, int] = (150, 100, 10)

    def __post_init__(self):
        if self.num_features < 1:
            raise NetworkError("num_features must be >= 1")
        if self.use_embedding and self.num_decades < 1:
            raise NetworkError("embedding enabled but no decades in the vocabulary")
        if len(self.hidden) != 3 or any(h < 1 for h in self.hidden):
            raise NetworkError("hidden must be three positive layer widths")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def input_dim(self) -> int:
        return self.num_features + (self.embed_dim if self.use_embedding else 0)

    @property
    def embedding_rows(self) -> int:
        return self.num_decades + 1


def tensor_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Parameter tensors in their declared (and serialized) order."""
    h1, h2, h3 = config.hidden
    shapes: dict[str, tuple[int, ...]] = {}
    if config.use_embedding:
        shapes["embedding"] = (config.embedding_rows, config.embed_dim)
    shapes["W1"] = (config.input_dim, h1)
    shapes["b1"] = (h1,)
    for task in TASKS:
        shapes[f"{task}_W2"] = (h1, h2)
        shapes[f"{task}_b2"] = (h2,)
        shapes[f"{task}_W3"] = (h2, h3)
        shapes[f"{task}_b3"] = (h3,)
        shapes[f"{task}_Wout"] = (h3, TASK_UNITS[task])
        shapes[f"{task}_bout"] = (TASK_UNITS[task],)
    return shapes


@dataclass(eq=False)
class NetworkParams:
    config: NetworkConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: NetworkConfig, rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights, zero biases, uniform(-0.05, 0.05) embedding.

    Tensors are drawn in declared order, so one seed fixes the whole net.
    """
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        if name == "embedding":
            tensors[name] = rng.uniform(-0.05, 0.05, size=shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return NetworkParams(config, tensors)


@dataclass(frozen=True, eq=False)
class Example:
    """One training/evaluation example with optional auxiliary targets.

    ``features`` must already be standardized to [0, 1]; ``y_bmi`` is the
    range-standardized body-mass index.  ``decade_index`` indexes the
    embedding table (num_decades means "unknown").
    """

    features: np.ndarray
    decade_index: int = 0
    y_vta: int = 0
    y_nyhac: int | None = None  # 0..3
    y_bmi: float | None = None


@dataclass(eq=False)
class Batch:
    """Examples stacked into arrays; missing targets become masks."""

    features: np.ndarray       # (n, f)
    decade_index: np.ndarray   # (n,) int
    y_vta: np.ndarray          # (n,) int in {0, 1}
    y_nyhac: np.ndarray        # (n,) int in {-1 (missing), 0..3}
    y_bmi: np.ndarray          # (n,) float, 0 where missing
    bmi_mask: np.ndarray       # (n,) bool

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Batch":
        if not examples:
            raise NetworkError("cannot build a batch from zero examples")
        features = np.stack([np.asarray(e.features, float) for e in examples])
        decade = np.array([e.decade_index for e in examples], dtype=int)
        y_vta = np.array([e.y_vta for e in examples], dtype=int)
        y_nyhac = np.array([-1 if e.y_nyhac is None else e.y_nyhac for e in examples], dtype=int)
        bmi_mask = np.array([e.y_bmi is not None for e in examples], dtype=bool)
        y_bmi = np.array([0.0 if e.y_bmi is None else e.y_bmi for e in examples], dtype=float)
        return cls(features, decade, y_vta, y_nyhac, y_bmi, bmi_mask)

    def __len__(self) -> int:
        return int(self.features.shape[0])


DROPOUT_LAYERS = ("input", "h1") + tuple(f"{t}_{layer}" for t in TASKS for layer in ("h2", "h3"))


def dropout_layout(config: NetworkConfig) -> list[tuple[str, int]]:
    h1, h2, h3 = config.hidden
    widths = {"input": config.input_dim, "h1": h1}
    for task in TASKS:
        widths[f"{task}_h2"] = h2
        widths[f"{task}_h3"] = h3
    return [(name, widths[name]) for name in DROPOUT_LAYERS]


def draw_dropout_masks(
    config: NetworkConfig, n: int, keep_prob: float, rng: np.random.Generator
) -> dict[str, np.ndarray] | None:
    """Fresh inverted-dropout masks for a batch: entries are 0 or 1/keep_prob.

    One mask row per example per layer; with keep_prob == 1 no masking is
    needed and None is returned.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise NetworkError("keep_prob must be in (0, 1]")
    if keep_prob == 1.0:
        return None
    layout = dropout_layout(config)
    block = rng.random((n, sum(width for _, width in layout)))
    masks: dict[str, np.ndarray] = {}
    offset = 0
    for name, width in layout:
        masks[name] = (block[:, offset:offset + width] < keep_prob) / keep_prob
        offset += width
    return masks


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(
    params: NetworkParams,
    features,
    decade_index=None,
    masks: dict[str, np.ndarray] | None = None,
) -> tuple[dict, dict]:
    """Run the network on a batch.

    Args:
        features: (n, num_features) standardized inputs (a single vector is
            promoted to a batch of one).
        decade_index: (n,) embedding rows; required when the config uses the
            embedding, ignored otherwise.
        masks: dropout masks from :func:`draw_dropout_masks`, or None for
            inference.

    Returns:
        (outputs, cache) where outputs has ``vta_probs``, ``vta_logits``,
        ``nyhac_probs``, ``nyhac_logits`` and ``bmi``, and cache holds the
        activations backward() needs.
    """
    cfg = params.config
    t = params.tensors
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != cfg.num_features:
        raise NetworkError(f"expected {cfg.num_features} features, got {x.shape[1]}")
    if cfg.use_embedding:
        if decade_index is None:
            raise NetworkError("decade_index is required when the embedding is enabled")
        idx = np.atleast_1d(np.asarray(decade_index, dtype=int))
        if idx.shape[0] != x.shape[0]:
            raise NetworkError("decade_index length must match the batch")
        if idx.min() < 0 or idx.max() >= cfg.embedding_rows:
            raise NetworkError(f"decade_index outside [0, {cfg.embedding_rows})")
        x0 = np.concatenate([x, t["embedding"][idx]], axis=1)
    else:
        idx = None
        x0 = x

    def masked(name: str, value: np.ndarray) -> np.ndarray:
        return value * masks[name] if masks is not None else value

    x0d = masked("input", x0)
    h1 = np.tanh(x0d @ t["W1"] + t["b1"])
    h1d = masked("h1", h1)

    outputs: dict = {}
    cache: dict = {"x0d": x0d, "h1": h1, "h1d": h1d, "masks": masks, "decade_index": idx}
    for task in TASKS:
        h2 = np.tanh(h1d @ t[f"{task}_W2"] + t[f"{task}_b2"])
        h2d = masked(f"{task}_h2", h2)
        h3 = np.tanh(h2d @ t[f"{task}_W3"] + t[f"{task}_b3"])
        h3d = masked(f"{task}_h3", h3)
        logits = h3d @ t[f"{task}_Wout"] + t[f"{task}_bout"]
        cache[task] = {"h2": h2, "h2d": h2d, "h3": h3, "h3d": h3d}
        if task == "bmi":
            outputs["bmi"] = logits[:, 0]
            cache["bmi"]["pred"] = logits[:, 0]
        else:
            outputs[f"{task}_logits"] = logits
            outputs[f"{task}_probs"] = _softmax(logits)
            cache[task]["logits"] = logits
            cache[task]["probs"] = outputs[f"{task}_probs"]
    return outputs, cache


def _cross_entropy_rows(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    log_probs = _log_softmax(logits)
    return -log_probs[np.arange(logits.shape[0]), targets]


def loss(
    outputs: dict,
    batch: Batch,
    lam_nyhac: float = 1.0,
    lam_bmi: float = 1.0,
) -> tuple[float, dict[str, float]]:
    """Mean multi-task loss over a batch.

    Per example: cross entropy of the event head, plus ``lam_nyhac`` times
    the functional-class cross entropy when that target is present, plus
    ``lam_bmi`` times the squared BMI error when that target is present.
    Returns (total, parts) where parts are the three contributions to the
    mean and always sum to the total.
    """
    n = len(batch)
    vta_part = float(np.mean(_cross_entropy_rows(outputs["vta_logits"], batch.y_vta)))

    nyhac_part = 0.0
    present = batch.y_nyhac >= 0
    if lam_nyhac != 0.0 and present.any():
        safe_targets = np.where(present, batch.y_nyhac, 0)
        ce = _cross_entropy_rows(outputs["nyhac_logits"], safe_targets)
        nyhac_part = float(lam_nyhac * ce[present].sum() / n)

    bmi_part = 0.0
    if lam_bmi != 0.0 and batch.bmi_mask.any():
        err = outputs["bmi"] - batch.y_bmi
        bmi_part = float(lam_bmi * (err[batch.bmi_mask] ** 2).sum() / n)

    parts = {"vta": vta_part, "nyhac": nyhac_part, "bmi": bmi_part}
    return vta_part + nyhac_part + bmi_part, parts


def _one_hot(targets: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((targets.shape[0], width))
    out[np.arange(targets.shape[0]), targets] = 1.0
    return out


def backward(
    params: NetworkParams,
    cache: dict,
    batch: Batch,
    lam_nyhac: float = 1.0,
    lam_bmi: float = 1.0,
) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss for every tensor.

    Softmax + cross entropy collapse to (probs - one_hot) at each head.
    Branches whose targets are absent (or whose weight is zero) contribute
    exactly zero, so their tensors receive zero gradient and the shared
    tensors see only the event-head signal.
    """
    cfg = params.config
    t = params.tensors
    masks = cache["masks"]
    n = len(batch)
    grads = {name: np.zeros_like(tensor) for name, tensor in t.items()}

    # Output-layer deltas per task, already scaled for the batch mean.
    deltas: dict[str, np.ndarray | None] = {}
    deltas["vta"] = (cache["vta"]["probs"] - _one_hot(batch.y_vta, TASK_UNITS["vta"])) / n

    present = batch.y_nyhac >= 0
    if lam_nyhac != 0.0 and present.any():
        safe_targets = np.where(present, batch.y_nyhac, 0)
        d = cache["nyhac"]["probs"] - _one_hot(safe_targets, TASK_UNITS["nyhac"])
        deltas["nyhac"] = lam_nyhac * d * present[:, None] / n
    else:
        deltas["nyhac"] = None

    if lam_bmi != 0.0 and batch.bmi_mask.any():
        err = (cache["bmi"]["pred"] - batch.y_bmi) * batch.bmi_mask
        deltas["bmi"] = (2.0 * lam_bmi * err / n)[:, None]
    else:
        deltas["bmi"] = None

    d_h1d = np.zeros_like(cache["h1d"])
    for task in TASKS:
        d_out = deltas[task]
        if d_out is None:
            continue
        c = cache[task]
        grads[f"{task}_Wout"] = c["h3d"].T @ d_out
        grads[f"{task}_bout"] = d_out.sum(axis=0)
        d_h3d = d_out @ t[f"{task}_Wout"].T
        d_h3 = d_h3d * masks[f"{task}_h3"] if masks is not None else d_h3d
        d_z3 = d_h3 * (1.0 - c["h3"] ** 2)
        grads[f"{task}_W3"] = c["h2d"].T @ d_z3
        grads[f"{task}_b3"] = d_z3.sum(axis=0)
        d_h2d = d_z3 @ t[f"{task}_W3"].T
        d_h2 = d_h2d * masks[f"{task}_h2"] if masks is not None else d_h2d
        d_z2 = d_h2 * (1.0 - c["h2"] ** 2)
        grads[f"{task}_W2"] = cache["h1d"].T @ d_z2
        grads[f"{task}_b2"] = d_z2.sum(axis=0)
        d_h1d += d_z2 @ t[f"{task}_W2"].T

    d_h1 = d_h1d * masks["h1"] if masks is not None else d_h1d
    d_z1 = d_h1 * (1.0 - cache["h1"] ** 2)
    grads["W1"] = cache["x0d"].T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    if cfg.use_embedding:
        d_x0d = d_z1 @ t["W1"].T
        d_x0 = d_x0d * masks["input"] if masks is not None else d_x0d
        np.add.at(grads["embedding"], cache["decade_index"], d_x0[:, cfg.num_features:])
    return grads


def predict(params: NetworkParams, examples: Sequence[Example]) -> np.ndarray:
    """Event-class probabilities for a list of examples (inference mode)."""
    batch = Batch.from_examples(examples)
    outputs, _ = forward(params, batch.features, batch.decade_index)
    return outputs["vta_probs"][:, 1]


def save_checkpoint(path, params: NetworkParams, extra: dict | None = None) -> None:
    """Serialize parameters: magic, version byte, JSON config echo, tensors.

    Layout: 4-byte magic, 1 version byte, little-endian uint32 header length,
    UTF-8 JSON header, then every tensor as float64 little-endian C-order in
    declared order.  The header echoes the network config (plus any ``extra``
    run settings) so a reader can rebuild the shapes.
    """
    cfg = params.config
    header = {
        "network": {
            "num_features": cfg.num_features,
            "num_decades": cfg.num_decades,
            "use_embedding": cfg.use_embedding,
            "embed_dim": cfg.embed_dim,
            "hidden": list(cfg.hidden),
        },
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for tensor in params.tensors.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path, expect_input_dim: int | None = None) -> tuple[NetworkParams, dict]:
    """Read a checkpoint back; rejects bad magic, truncation, or a mismatched
    input width when ``expect_input_dim`` is given.  Returns (params, header).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 9 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data[4] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {data[4]}")
    (header_len,) = struct.unpack("<I", data[5:9])
    if len(data) < 9 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[9:9 + header_len].decode("utf-8"))
        net = header["network"]
        config = NetworkConfig(
            num_features=int(net["num_features"]),
            num_decades=int(net["num_decades"]),
            use_embedding=bool(net["use_embedding"]),
            embed_dim=int(net["embed_dim"]),
            hidden=tuple(net["hidden"]),
        )
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header: {exc}") from None
    if expect_input_dim is not None and config.input_dim != expect_input_dim:
        raise CheckpointError(
            f"{path}: checkpoint input width {config.input_dim} != expected {expect_input_dim}"
        )
    offset = 9 + header_len
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return NetworkParams(config, tensors), header
