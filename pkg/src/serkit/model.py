"""LSTM classifier with a dense ReLU/dropout head, written directly in numpy.

Shapes follow one convention throughout: a single utterance is ``(T, D)``
and a batch is ``(B, T, D)``. Gate matrices act on the concatenation
``[h_prev, x_t]`` so ``W_* @ concat`` has the recurrent block first.

Gradients from :func:`model_backward` are for the *mean* loss over the
batch, including whatever dropout masks the forward pass sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotOneHot, TraceMismatch

GATES = ("f", "i", "c", "o")
PROB_FLOOR = 1e-12


def sigmoid(z):
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shape = self.W_f.shape
        if len(shape) != 2 or shape[1] <= shape[0]:
            raise DimensionMismatch(f"W_f must be H x (H + D), got {shape}")
        for g in GATES:
            if getattr(self, f"W_{g}").shape != shape:
                raise DimensionMismatch(f"W_{g} shape differs from W_f")
            if getattr(self, f"b_{g}").shape != (shape[0],):
                raise DimensionMismatch(f"b_{g} must have length {shape[0]}")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self):
        """Gate weights stacked as (4H, H+D) in f, i, c, o order, plus stacked bias."""
        W = np.vstack([self.W_f, self.W_i, self.W_c, self.W_o])
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return W, b

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int) -> "LstmParams":
        H, D = hidden_size, input_size
        return cls(*(np.zeros((H, H + D)) for _ in GATES), *(np.zeros(H) for _ in GATES))


@dataclass
class DenseLayer:
    W: np.ndarray  # out x in
    b: np.ndarray
    activation: str = "relu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.activation not in ("relu", "softmax", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch("dense bias length must equal the layer's output width")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


@dataclass
class ModelState:
    lstm: LstmParams
    head: list[DenseLayer]
    labels: list[str]

    def __post_init__(self):
        width = self.lstm.hidden_size
        for k, layer in enumerate(self.head):
            if layer.W.shape[1] != width:
                raise DimensionMismatch(f"head layer {k} expects {layer.W.shape[1]} inputs, gets {width}")
            width = layer.W.shape[0]
        if not self.head or self.head[-1].activation != "softmax" or self.head[-1].dropout:
            raise DimensionMismatch("the final head layer must be softmax without dropout")
        if any(l.activation == "softmax" for l in self.head[:-1]):
            raise DimensionMismatch("softmax is only allowed on the final head layer")
        if width != len(self.labels):
            raise DimensionMismatch(f"head emits {width} classes for {len(self.labels)} labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")

    def params(self) -> dict[str, np.ndarray]:
        """Every learnable array by name; the arrays are the live parameters."""
        out = {}
        for g in GATES:
            out[f"lstm.W_{g}"] = getattr(self.lstm, f"W_{g}")
        for g in GATES:
            out[f"lstm.b_{g}"] = getattr(self.lstm, f"b_{g}")
        for k, layer in enumerate(self.head):
            out[f"head.{k}.W"] = layer.W
            out[f"head.{k}.b"] = layer.b
        return out

    def copy(self) -> "ModelState":
        lstm = LstmParams(**{k: v.copy() for k, v in vars(self.lstm).items()})
        head = [DenseLayer(l.W.copy(), l.b.copy(), l.activation, l.dropout) for l in self.head]
        return ModelState(lstm, head, list(self.labels))


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_model(
    labels,
    rng: np.random.Generator,
    input_size: int = 40,
    hidden_size: int = 128,
    dense_sizes=(64, 32),
    dropout: float = 0.2,
) -> ModelState:
    """Glorot-uniform weights, zero biases except a forget-gate bias of 1."""
    H, D = hidden_size, input_size
    gates = {f"W_{g}": glorot_uniform(rng, H, H + D) for g in GATES}
    biases = {f"b_{g}": np.zeros(H) for g in GATES}
    biases["b_f"][:] = 1.0
    lstm = LstmParams(**gates, **biases)

    head = []
    width = H
    for size in dense_sizes:
        head.append(DenseLayer(glorot_uniform(rng, size, width), np.zeros(size), "relu", dropout))
        width = size
    head.append(DenseLayer(glorot_uniform(rng, len(labels), width), np.zeros(len(labels)), "softmax"))
    return ModelState(lstm, head, list(labels))


# -- per-step reference path -------------------------------------------------


@dataclass
class LstmStepTrace:
    f: np.ndarray
    i: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    C: np.ndarray
    h: np.ndarray


def lstm_step(x_t, h_prev, C_prev, p: LstmParams) -> LstmStepTrace:
    x_t = np.asarray(x_t, dtype=np.float64)
    H = p.hidden_size
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != H or C_prev.shape[-1] != H:
        raise DimensionMismatch(
            f"step expects x of width {p.input_size} and state of width {H}, "
            f"got {x_t.shape[-1]}, {h_prev.shape[-1]}, {C_prev.shape[-1]}"
        )
    z = np.concatenate([h_prev, x_t], axis=-1)
    f = sigmoid(z @ p.W_f.T + p.b_f)
    i = sigmoid(z @ p.W_i.T + p.b_i)
    c_tilde = np.tanh(z @ p.W_c.T + p.b_c)
    C = f * C_prev + i * c_tilde
    o = sigmoid(z @ p.W_o.T + p.b_o)
    h = o * np.tanh(C)
    return LstmStepTrace(f, i, c_tilde, o, C, h)


def lstm_forward(seq, p: LstmParams):
    """Run one utterance from zero state. Returns ``(h_T, [LstmStepTrace, ...])``."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != p.input_size:
        raise DimensionMismatch(f"sequence must be T x {p.input_size}, got {seq.shape}")
    if seq.shape[0] == 0:
        raise DimensionMismatch("sequence has no frames")
    h = np.zeros(p.hidden_size)
    C = np.zeros(p.hidden_size)
    traces = []
    for x_t in seq:
        step = lstm_step(x_t, h, C, p)
        h, C = step.h, step.C
        traces.append(step)
    return h, traces


# -- batched training path ---------------------------------------------------


@dataclass
class LstmCache:
    X: np.ndarray  # B x T x D
    gates: np.ndarray  # T x B x 4H, post-activation
    C: np.ndarray  # (T+1) x B x H, C[0] is the zero state
    h: np.ndarray  # (T+1) x B x H


def _lstm_batch(X: np.ndarray, p: LstmParams, keep: bool):
    B, T, _ = X.shape
    H = p.hidden_size
    W, b = p.stacked()
    Wh, Wx = W[:, :H], W[:, H:]
    # input projections for every step in one product
    xz = (X.reshape(B * T, -1) @ Wx.T).reshape(B, T, 4 * H)
    h = np.zeros((B, H))
    C = np.zeros((B, H))
    if keep:
        gates = np.empty((T, B, 4 * H))
        Cs = np.empty((T + 1, B, H))
        hs = np.empty((T + 1, B, H))
        Cs[0] = 0.0
        hs[0] = 0.0
    for t in range(T):
        z = xz[:, t] + h @ Wh.T + b
        a = np.empty_like(z)
        a[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        a[:, 2 * H: 3 * H] = np.tanh(z[:, 2 * H: 3 * H])
        a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        C = a[:, :H] * C + a[:, H: 2 * H] * a[:, 2 * H: 3 * H]
        h = a[:, 3 * H:] * np.tanh(C)
        if keep:
            gates[t] = a
            Cs[t + 1] = C
            hs[t + 1] = h
    cache = LstmCache(X, gates, Cs, hs) if keep else None
    return h, cache


def _lstm_backward(dh_T: np.ndarray, cache: LstmCache, p: LstmParams) -> dict[str, np.ndarray]:
    T, B, H4 = cache.gates.shape
    H = H4 // 4
    W, _ = p.stacked()
    Wh = W[:, :H]
    dW_h = np.zeros((4 * H, H))
    dW_x = np.zeros((4 * H, p.input_size))
    db = np.zeros(4 * H)
    dh = dh_T
    dC = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        a = cache.gates[t]
        f, i, c, o = a[:, :H], a[:, H: 2 * H], a[:, 2 * H: 3 * H], a[:, 3 * H:]
        C_prev = cache.C[t]
        tanh_C = np.tanh(cache.C[t + 1])
        dC = dC + dh * o * (1.0 - tanh_C**2)
        dz[:, :H] = dC * C_prev * f * (1.0 - f)
        dz[:, H: 2 * H] = dC * c * i * (1.0 - i)
        dz[:, 2 * H: 3 * H] = dC * i * (1.0 - c**2)
        dz[:, 3 * H:] = dh * tanh_C * o * (1.0 - o)
        dW_h += dz.T @ cache.h[t]
        dW_x += dz.T @ cache.X[:, t]
        db += dz.sum(axis=0)
        dh = dz @ Wh
        dC = dC * f
    dW = np.hstack([dW_h, dW_x])
    grads = {}
    for k, g in enumerate(GATES):
        grads[f"lstm.W_{g}"] = dW[k * H:(k + 1) * H]
        grads[f"lstm.b_{g}"] = db[k * H:(k + 1) * H]
    return grads


@dataclass
class DenseTrace:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    probs: np.ndarray | None = None


def dense_forward(x, head: list[DenseLayer], training: bool = False, rng: np.random.Generator | None = None):
    """Affine, activation, then inverted dropout (training only) for each layer.

    Accepts one vector or a ``B x width`` batch. Returns ``(probs, trace)``.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != head[0].W.shape[1]:
        raise DimensionMismatch(f"head expects width {head[0].W.shape[1]}, got {a.shape[-1]}")
    if training and rng is None and any(l.dropout > 0 for l in head):
        raise ValueError("training-mode dropout needs an rng")
    trace = DenseTrace()
    for layer in head:
        trace.inputs.append(a)
        z = a @ layer.W.T + layer.b
        trace.pre.append(z)
        if layer.activation == "relu":
            a = np.maximum(z, 0.0)
        elif layer.activation == "softmax":
            a = softmax(z)
        else:
            a = z
        mask = None
        if training and layer.dropout > 0:
            keep = rng.random(a.shape) >= layer.dropout
            mask = keep / (1.0 - layer.dropout)
            a = a * mask
        trace.masks.append(mask)
    trace.probs = a
    return a, trace


@dataclass
class ForwardTrace:
    state: ModelState
    lstm: LstmCache
    dense: DenseTrace
    probs: np.ndarray  # B x K


def _as_batch(X, state: ModelState) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != state.lstm.input_size or X.shape[1] == 0:
        raise DimensionMismatch(f"expected (B, T, {state.lstm.input_size}) input, got {X.shape}")
    return X


def forward(state: ModelState, X, training: bool = False, rng=None) -> ForwardTrace:
    """Full forward pass keeping everything :func:`model_backward` needs."""
    X = _as_batch(X, state)
    h_T, cache = _lstm_batch(X, state.lstm, keep=True)
    probs, dense = dense_forward(h_T, state.head, training, rng)
    return ForwardTrace(state, cache, dense, probs)


def predict_proba(state: ModelState, X, batch_size: int = 512) -> np.ndarray:
    """Inference-mode class probabilities, ``B x K``; no dropout, no trace kept."""
    X = _as_batch(X, state)
    out = []
    for s in range(0, len(X), batch_size):
        h_T, _ = _lstm_batch(X[s:s + batch_size], state.lstm, keep=False)
        out.append(dense_forward(h_T, state.head)[0])
    return np.vstack(out)


def predict(state: ModelState, seq):
    """``(label, probs)`` for one utterance; ties go to the lowest class index."""
    probs = predict_proba(state, seq)[0]
    return state.labels[int(np.argmax(probs))], probs


def _check_one_hot(target):
    t = np.asarray(target, dtype=np.float64)
    if not (np.all((t == 0.0) | (t == 1.0)) and np.all(t.sum(axis=-1) == 1.0)):
        raise NotOneHot("target must be a one-hot vector")
    return t


def cross_entropy(probs, target) -> float:
    """``-ln p[true]`` with the probability clamped at 1e-12; batches are averaged."""
    t = _check_one_hot(target)
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionMismatch(f"probs {p.shape} vs target {t.shape}")
    picked = np.sum(p * t, axis=-1)
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def model_backward(trace: ForwardTrace, targets) -> dict[str, np.ndarray]:
    """Gradient of the mean cross-entropy for every parameter in ``trace.state``."""
    state = trace.state
    Y = _check_one_hot(targets)
    if Y.ndim == 1:
        Y = Y[None]
    if Y.shape != trace.probs.shape:
        raise TraceMismatch(f"targets {Y.shape} do not match the traced batch {trace.probs.shape}")
    B = Y.shape[0]
    grads = {}
    # softmax + cross-entropy fold into probs - target
    delta = (trace.probs - Y) / B
    for k in range(len(state.head) - 1, -1, -1):
        layer = state.head[k]
        mask = trace.dense.masks[k]
        if mask is not None:
            delta = delta * mask
        if layer.activation == "relu":
            delta = delta * (trace.dense.pre[k] > 0)
        # softmax is only allowed last and is already folded in above
        grads[f"head.{k}.W"] = delta.T @ trace.dense.inputs[k]
        grads[f"head.{k}.b"] = delta.sum(axis=0)
        delta = delta @ layer.W
    grads.update(_lstm_backward(delta, trace.lstm, state.lstm))
    return {name: grads[name] for name in state.params()}


def loss_and_grads(state: ModelState, X, Y, training: bool = False, rng=None):
    trace = forward(state, X, training, rng)
    Y = np.atleast_2d(Y)
    return cross_entropy(trace.probs, Y), model_backward(trace, Y)
