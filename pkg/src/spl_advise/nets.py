"""Small feed-forward networks with manual forward/backward passes.

The two networks in the protocol (embedding net and student classifier) are
both plain MLPs with ReLU hidden layers and a linear final layer. Parameters
are value objects; optimizer steps return fresh containers so the trainer can
hand immutable snapshots between workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .numerics import log_sum_exp_rows

CHECKPOINT_FORMAT = "mlp-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpParams:
    """Per-layer weight matrices / bias vectors; ReLU on hidden layers."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases layer counts differ")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: W {W.shape} vs b {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(
                    f"layers {i - 1}->{i}: {self.weights[i - 1].shape} then {W.shape}"
                )
        if not all(
            np.all(np.isfinite(a)) for a in (*self.weights, *self.biases)
        ):
            raise ValueError("non-finite parameters")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> tuple[np.ndarray, ...]:
        """Flat tuple of parameter arrays, weights then bias per layer."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return tuple(out)


@dataclass(frozen=True)
class Tape:
    """Activations cached by forward(); consumed by backward()."""

    inputs: tuple[np.ndarray, ...]   # per-layer inputs, inputs[0] is X
    preacts: tuple[np.ndarray, ...]  # pre-activation of every layer


def init_mlp(layer_dims, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights (U(+-sqrt(6/fan_in))) and zero biases, seeded."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


def forward(params: MlpParams, X) -> tuple[np.ndarray, Tape]:
    """Forward pass; returns the output batch and the tape for backprop."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"input shape {X.shape} incompatible with dims {params.layer_dims}"
        )
    inputs, preacts = [X], []
    h = X
    last = params.n_layers - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        if i != last:
            inputs.append(h)
    return h, Tape(tuple(inputs), tuple(preacts))


def backward(params: MlpParams, tape: Tape, grad_output) -> MlpParams:
    """Exact reverse-mode gradients wrt all parameters.

    `grad_output` is the upstream gradient of a scalar wrt the forward
    output. Returns gradients packaged in an MlpParams of matching shapes.
    """
    if len(tape.inputs) != params.n_layers or len(tape.preacts) != params.n_layers:
        raise ValueError("tape does not match network depth")
    delta = np.asarray(grad_output, dtype=np.float64)
    if delta.shape != tape.preacts[-1].shape:
        raise ValueError(
            f"grad_output shape {delta.shape} vs output {tape.preacts[-1].shape}"
        )
    grad_w = [None] * params.n_layers
    grad_b = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        grad_w[i] = tape.inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (tape.preacts[i - 1] > 0)
    return MlpParams(tuple(grad_w), tuple(grad_b))


def ce_loss_per_sample(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and its gradient wrt the logits.

    loss_i = logsumexp(logits_i) - logits_i[y_i];
    grad_i = softmax(logits_i) - onehot(y_i). The gradient is per-sample:
    callers scale by 1/n (or sample weights) for reduced objectives.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} for {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels outside [0, {c})")
    lse = log_sum_exp_rows(logits)
    losses = lse - logits[np.arange(n), labels]
    grad = np.exp(logits - lse[:, None])
    grad[np.arange(n), labels] -= 1.0
    return losses, grad


@dataclass(frozen=True)
class OptimizerState:
    """SGD-with-momentum or Adam state; buffers mirror parameter shapes."""

    kind: str  # "sgd" | "adam"
    lr: float
    momentum: float = 0.0
    nesterov: bool = False
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slot1: tuple[np.ndarray, ...] = ()  # momentum (sgd) / first moment (adam)
    slot2: tuple[np.ndarray, ...] = ()  # second moment (adam)

    def with_lr(self, lr: float) -> "OptimizerState":
        return replace(self, lr=lr)


def init_optimizer(kind: str, params: MlpParams, lr: float, **kwargs) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {kind!r}")
    zeros = tuple(np.zeros_like(a) for a in params.arrays())
    slot2 = zeros if kind == "adam" else ()
    return OptimizerState(kind=kind, lr=lr, slot1=zeros, slot2=slot2, **kwargs)


def _check_shapes(params: MlpParams, grads: MlpParams):
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"param {p.shape} vs grad {g.shape}")


def _repack(params: MlpParams, flat: list[np.ndarray]) -> MlpParams:
    n = params.n_layers
    return MlpParams(
        tuple(flat[2 * i] for i in range(n)),
        tuple(flat[2 * i + 1] for i in range(n)),
        params.activation,
    )


def sgd_step(
    params: MlpParams, grads: MlpParams, state: OptimizerState
) -> tuple[MlpParams, OptimizerState]:
    """One (Nesterov-)momentum SGD step with L2 weight decay in the gradient."""
    if state.kind != "sgd":
        raise ValueError("state is not SGD state")
    _check_shapes(params, grads)
    new_params, new_buf = [], []
    for p, g, buf in zip(params.arrays(), grads.arrays(), state.slot1):
        g = g + state.weight_decay * p
        buf = state.momentum * buf + g
        step = g + state.momentum * buf if state.nesterov else buf
        new_params.append(p - state.lr * step)
        new_buf.append(buf)
    return _repack(params, new_params), replace(
        state, slot1=tuple(new_buf), step_count=state.step_count + 1
    )


def adam_step(
    params: MlpParams, grads: MlpParams, state: OptimizerState
) -> tuple[MlpParams, OptimizerState]:
    """One Adam step with bias correction; weight decay as an L2 term."""
    if state.kind != "adam":
        raise ValueError("state is not Adam state")
    _check_shapes(params, grads)
    t = state.step_count + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        params.arrays(), grads.arrays(), state.slot1, state.slot2
    ):
        g = g + state.weight_decay * p
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - state.lr * step)
        new_m.append(m)
        new_v.append(v)
    return _repack(params, new_params), replace(
        state, slot1=tuple(new_m), slot2=tuple(new_v), step_count=t
    )


def optimizer_step(
    params: MlpParams, grads: MlpParams, state: OptimizerState
) -> tuple[MlpParams, OptimizerState]:
    return (sgd_step if state.kind == "sgd" else adam_step)(params, grads, state)


def checkpoint_doc(params: MlpParams) -> dict:
    """Stable JSON-serializable checkpoint container (format v1)."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": params.activation,
        "layer_dims": list(params.layer_dims),
        "weights": [W.ravel().tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_doc(doc: dict) -> MlpParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    dims = doc["layer_dims"]
    weights = tuple(
        np.array(flat, dtype=np.float64).reshape(fan_in, fan_out)
        for flat, fan_in, fan_out in zip(doc["weights"], dims[:-1], dims[1:])
    )
    biases = tuple(np.array(b, dtype=np.float64) for b in doc["biases"])
    return MlpParams(weights, biases, doc["activation"])


def save_checkpoint(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_doc(params)))


def load_checkpoint(path) -> MlpParams:
    try:
        return params_from_doc(json.loads(Path(path).read_text()))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
