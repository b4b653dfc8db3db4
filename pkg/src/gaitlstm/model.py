"""LSTM cell, unrolled forward pass, dense classifier head and hand-derived BPTT.

Gate pre-activations are computed with the four input matrices and the four
recurrent matrices stacked in the fixed order (input, forget, output,
candidate). Everything is batched over a leading axis so that a mini-batch of
segments runs through one Python loop over time; the single-sequence
functions are thin wrappers with batch size one.

Shapes used below: ``B`` batch, ``T`` timesteps, ``D`` input features,
``H`` hidden units, ``K`` classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, ShapeError
from .numerics import DTYPE, softmax
from .optim import LossBreakdown, is_weight, l2_gradients, l2_penalty, weight_arrays

GATE_ORDER = ("i", "f", "o", "c")
LSTM_NAMES = (
    "w_xi", "w_xf", "w_xo", "w_xc",
    "w_hi", "w_hf", "w_ho", "w_hc",
    "b_i", "b_f", "b_o", "b_c",
)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign so exp never sees a positive argument
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class LstmParameters:
    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xo: np.ndarray
    w_xc: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_ho: np.ndarray
    w_hc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.ascontiguousarray(getattr(self, f.name), dtype=DTYPE))
        self.validate()

    @property
    def hidden_dim(self) -> int:
        return self.w_xi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[1]

    def validate(self) -> None:
        H, D = self.w_xi.shape if self.w_xi.ndim == 2 else (-1, -1)
        expected = {}
        for g in GATE_ORDER:
            expected[f"w_x{g}"] = (H, D)
            expected[f"w_h{g}"] = (H, H)
            expected[f"b_{g}"] = (H,)
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"LstmParameters.{name} has shape {got}, expected {shape}")

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in LSTM_NAMES}

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        wx = np.concatenate([self.w_xi, self.w_xf, self.w_xo, self.w_xc], axis=0)
        wh = np.concatenate([self.w_hi, self.w_hf, self.w_ho, self.w_hc], axis=0)
        b = np.concatenate([self.b_i, self.b_f, self.b_o, self.b_c])
        return wx, wh, b

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParameters":
        kw = {}
        for g in GATE_ORDER:
            kw[f"w_x{g}"] = np.zeros((hidden_dim, input_dim))
            kw[f"w_h{g}"] = np.zeros((hidden_dim, hidden_dim))
            kw[f"b_{g}"] = np.zeros(hidden_dim)
        return cls(**kw)


@dataclass
class HeadParameters:
    """Dense output layer, optionally preceded by one ReLU layer (``w_mid``/``b_mid``)."""

    w_out: np.ndarray
    b_out: np.ndarray
    w_mid: np.ndarray | None = None
    b_mid: np.ndarray | None = None

    def __post_init__(self):
        self.w_out = np.ascontiguousarray(self.w_out, dtype=DTYPE)
        self.b_out = np.ascontiguousarray(self.b_out, dtype=DTYPE)
        if (self.w_mid is None) != (self.b_mid is None):
            raise ShapeError("w_mid and b_mid must be given together")
        if self.w_mid is not None:
            self.w_mid = np.ascontiguousarray(self.w_mid, dtype=DTYPE)
            self.b_mid = np.ascontiguousarray(self.b_mid, dtype=DTYPE)
            if self.b_mid.shape != (self.w_mid.shape[0],) or self.w_out.shape[1] != self.w_mid.shape[0]:
                raise ShapeError(
                    f"head shapes inconsistent: w_mid {self.w_mid.shape}, b_mid {self.b_mid.shape}, "
                    f"w_out {self.w_out.shape}"
                )
        if self.b_out.shape != (self.w_out.shape[0],):
            raise ShapeError(f"b_out {self.b_out.shape} does not match w_out {self.w_out.shape}")

    @property
    def num_classes(self) -> int:
        return self.w_out.shape[0]

    @property
    def input_dim(self) -> int:
        return (self.w_mid if self.w_mid is not None else self.w_out).shape[1]

    @property
    def dense_dim(self) -> int:
        return 0 if self.w_mid is None else self.w_mid.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        if self.w_mid is not None:
            out["w_mid"] = self.w_mid
            out["b_mid"] = self.b_mid
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StepTrace:
    """Everything one timestep computed; gate blocks are stacked (i, f, o, c)."""

    x: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray
    c: np.ndarray
    h: np.ndarray

    def _block(self, arr, k):
        H = self.c.shape[-1]
        return arr[..., k * H:(k + 1) * H]

    @property
    def i(self):
        return self._block(self.act, 0)

    @property
    def f(self):
        return self._block(self.act, 1)

    @property
    def o(self):
        return self._block(self.act, 2)

    @property
    def candidate(self):
        return self._block(self.act, 3)


@dataclass
class ForwardTrace:
    """Per-timestep caches with a leading time axis: ``x`` (T,B,D), ``pre``/``act`` (T,B,4H), ``c``/``h`` (T,B,H)."""

    x: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    c: np.ndarray
    h: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def step(self, t: int) -> StepTrace:
        zeros = np.zeros_like(self.c[0])
        return StepTrace(
            x=self.x[t], pre=self.pre[t], act=self.act[t],
            c_prev=self.c[t - 1] if t > 0 else zeros,
            h_prev=self.h[t - 1] if t > 0 else zeros,
            c=self.c[t], h=self.h[t],
        )


def _cell(pre: np.ndarray, c_prev: np.ndarray, H: int):
    act = np.empty_like(pre)
    act[..., :3 * H] = _sigmoid(pre[..., :3 * H])
    act[..., 3 * H:] = np.tanh(pre[..., 3 * H:])
    c = act[..., H:2 * H] * c_prev + act[..., :H] * act[..., 3 * H:]
    h = act[..., 2 * H:3 * H] * np.tanh(c)
    return act, c, h


def lstm_step(p: LstmParameters, x_t, prev: LstmState) -> tuple[LstmState, StepTrace]:
    """One cell update: gates, candidate, ``c = f*c_prev + i*cand``, ``h = o*tanh(c)``."""
    x_t = np.asarray(x_t, dtype=DTYPE)
    H, D = p.hidden_dim, p.input_dim
    if x_t.shape[-1] != D:
        raise ShapeError(f"lstm_step: input has {x_t.shape[-1]} features, parameters expect {D}")
    if prev.h.shape[-1] != H or prev.c.shape[-1] != H:
        raise ShapeError(f"lstm_step: state shapes {prev.h.shape}/{prev.c.shape}, hidden_dim {H}")
    wx, wh, b = p.stacked()
    pre = x_t @ wx.T + prev.h @ wh.T + b
    act, c, h = _cell(pre, prev.c, H)
    return LstmState(h, c), StepTrace(x_t, pre, act, prev.c, prev.h, c, h)


def lstm_forward_batch(
    p: LstmParameters, xs, keep_trace: bool = True
) -> tuple[LstmState, ForwardTrace | None]:
    """Run ``xs`` of shape (B, T, D) from the zero state; returns final state and trace."""
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim != 3:
        raise ShapeError(f"expected a (batch, time, features) array, got shape {xs.shape}")
    B, T, D = xs.shape
    if T < 1:
        raise InvalidInputError("sequence must contain at least one timestep")
    if D != p.input_dim:
        raise ShapeError(f"sequence has {D} features, parameters expect {p.input_dim}")
    H = p.hidden_dim
    wx, wh, b = p.stacked()
    xt = np.ascontiguousarray(xs.transpose(1, 0, 2))
    xproj = xt @ wx.T + b  # (T,B,4H)

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    if keep_trace:
        pre_all = np.empty((T, B, 4 * H))
        act_all = np.empty((T, B, 4 * H))
        c_all = np.empty((T, B, H))
        h_all = np.empty((T, B, H))
    for t in range(T):
        pre = xproj[t] + h @ wh.T if t else xproj[t].copy()
        act, c, h = _cell(pre, c, H)
        if keep_trace:
            pre_all[t] = pre
            act_all[t] = act
            c_all[t] = c
            h_all[t] = h
    state = LstmState(h, c)
    if not keep_trace:
        return state, None
    return state, ForwardTrace(xt, pre_all, act_all, c_all, h_all)


def lstm_forward(p: LstmParameters, seq) -> tuple[LstmState, ForwardTrace]:
    """Single sequence (T, D). The returned state is unbatched; the trace keeps a batch axis of 1."""
    seq = np.asarray(seq, dtype=DTYPE)
    if seq.ndim != 2:
        raise ShapeError(f"expected a (time, features) sequence, got shape {seq.shape}")
    if seq.shape[0] == 0:
        raise InvalidInputError("sequence must contain at least one timestep")
    state, trace = lstm_forward_batch(p, seq[None])
    return LstmState(state.h[0], state.c[0]), trace


def lstm_backward(p: LstmParameters, trace: ForwardTrace, grad_h) -> dict[str, np.ndarray]:
    """Full-length BPTT from ``grad_h = dL/dh_T`` to every LSTM weight and bias.

    Gradients are summed over the batch axis of the trace.
    """
    H, D = p.hidden_dim, p.input_dim
    T, B = trace.x.shape[:2]
    if trace.x.shape[2] != D or trace.c.shape[2] != H:
        raise ShapeError(
            f"trace (features {trace.x.shape[2]}, hidden {trace.c.shape[2]}) does not match "
            f"parameters (features {D}, hidden {H})"
        )
    dh = np.asarray(grad_h, dtype=DTYPE).reshape(B, H) if np.ndim(grad_h) == 1 else np.asarray(grad_h, dtype=DTYPE)
    if dh.shape != (B, H):
        raise ShapeError(f"grad_h has shape {dh.shape}, expected {(B, H)}")
    _, wh, _ = p.stacked()

    da_all = np.empty((T, B, 4 * H))
    dc = np.zeros((B, H))
    act, c_all = trace.act, trace.c
    for t in range(T - 1, -1, -1):
        a = act[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(c_all[t])
        dc = dc + dh * o * (1.0 - tc * tc)
        da = da_all[t]
        da[:, :H] = dc * g * i * (1.0 - i)
        if t:
            da[:, H:2 * H] = dc * c_all[t - 1] * f * (1.0 - f)
        else:
            da[:, H:2 * H] = 0.0
        da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H:] = dc * i * (1.0 - g * g)
        dh = da @ wh
        dc = dc * f

    flat_da = da_all.reshape(T * B, 4 * H)
    dwx = flat_da.T @ trace.x.reshape(T * B, D)
    if T > 1:
        dwh = da_all[1:].reshape((T - 1) * B, 4 * H).T @ trace.h[:-1].reshape((T - 1) * B, H)
    else:
        dwh = np.zeros((4 * H, H))
    db = flat_da.sum(axis=0)

    grads = {}
    for k, g in enumerate(GATE_ORDER):
        rows = slice(k * H, (k + 1) * H)
        grads[f"w_x{g}"] = np.ascontiguousarray(dwx[rows])
        grads[f"w_h{g}"] = np.ascontiguousarray(dwh[rows])
        grads[f"b_{g}"] = np.ascontiguousarray(db[rows])
    return {n: grads[n] for n in LSTM_NAMES}


@dataclass
class HeadOutput:
    logits: np.ndarray
    probs: np.ndarray
    mask: np.ndarray
    z: np.ndarray
    scale: float
    u: np.ndarray | None = None
    r: np.ndarray | None = None


def _check_dropout(p: float) -> None:
    if not (0.0 <= p < 1.0):
        raise InvalidConfigError(f"dropout probability must lie in [0, 1), got {p}")


def draw_mask(rng: np.random.Generator, shape, dropout_p: float) -> np.ndarray:
    """Bernoulli keep-mask: each entry is 1 with probability ``1 - dropout_p``."""
    _check_dropout(dropout_p)
    return (rng.random(shape) >= dropout_p).astype(DTYPE)


def head_forward(
    hp: HeadParameters,
    h,
    mode: str = "infer",
    dropout_p: float = 0.5,
    rng: np.random.Generator | None = None,
    mask=None,
) -> HeadOutput:
    """Dense head on the final hidden state.

    ``train`` multiplies ``h`` by a Bernoulli keep-mask (drawn from ``rng``
    unless ``mask`` is given). ``infer`` uses no mask and scales the first
    head matrix by ``1 - dropout_p`` instead.
    """
    _check_dropout(dropout_p)
    h = np.asarray(h, dtype=DTYPE)
    single = h.ndim == 1
    h2 = h[None] if single else h
    if h2.shape[-1] != hp.input_dim:
        raise ShapeError(f"head expects {hp.input_dim} inputs, got {h2.shape[-1]}")
    if mode == "train":
        if mask is None:
            if rng is None:
                raise InvalidConfigError("train mode needs an rng or an explicit mask")
            mask = draw_mask(rng, h2.shape, dropout_p)
        mask = np.asarray(mask, dtype=DTYPE).reshape(h2.shape)
        z = h2 * mask
        scale = 1.0
    elif mode == "infer":
        mask = np.ones_like(h2)
        z = h2
        scale = 1.0 - dropout_p
    else:
        raise InvalidConfigError(f"unknown head mode {mode!r}")

    u = r = None
    if hp.w_mid is not None:
        u = z @ (scale * hp.w_mid).T + hp.b_mid
        r = np.maximum(u, 0.0)
        logits = r @ hp.w_out.T + hp.b_out
    else:
        logits = z @ (scale * hp.w_out).T + hp.b_out
    probs = softmax(logits)
    if single:
        return HeadOutput(logits[0], probs[0], mask[0], z[0], scale,
                          None if u is None else u[0], None if r is None else r[0])
    return HeadOutput(logits, probs, mask, z, scale, u, r)


def head_backward(hp: HeadParameters, out: HeadOutput, dlogits) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backprop ``dL/dlogits`` through the head; returns (head grads, dL/dh)."""
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=DTYPE))
    z = np.atleast_2d(out.z)
    mask = np.atleast_2d(out.mask)
    s = out.scale
    grads = {}
    if hp.w_mid is not None:
        r = np.atleast_2d(out.r)
        u = np.atleast_2d(out.u)
        grads["w_out"] = dlogits.T @ r
        grads["b_out"] = dlogits.sum(axis=0)
        du = (dlogits @ hp.w_out) * (u > 0)
        grads_mid_w = s * (du.T @ z)
        grads = {"w_mid": grads_mid_w, "b_mid": du.sum(axis=0), **grads}
        dz = s * (du @ hp.w_mid)
    else:
        grads["w_out"] = s * (dlogits.T @ z)
        grads["b_out"] = dlogits.sum(axis=0)
        dz = s * (dlogits @ hp.w_out)
    dh = dz * mask
    return {k: grads[k] for k in hp.arrays()}, dh


@dataclass
class LstmClassifier:
    lstm: LstmParameters
    head: HeadParameters
    dropout_p: float = 0.5

    def __post_init__(self):
        _check_dropout(self.dropout_p)
        if self.head.input_dim != self.lstm.hidden_dim:
            raise ShapeError(
                f"head expects {self.head.input_dim} inputs but LSTM hidden_dim is {self.lstm.hidden_dim}"
            )

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array, LSTM first then head; in-place edits stick."""
        return {**self.lstm.arrays(), **self.head.arrays()}

    def copy(self) -> "LstmClassifier":
        lstm = LstmParameters(**{k: v.copy() for k, v in self.lstm.arrays().items()})
        head = HeadParameters(**{k: v.copy() for k, v in self.head.arrays().items()})
        return LstmClassifier(lstm, head, self.dropout_p)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_classifier(
    input_dim: int,
    hidden_dim: int,
    rng: np.random.Generator,
    num_classes: int = 2,
    dense_dim: int = 0,
    dropout_p: float = 0.5,
    forget_bias: float = 1.0,
) -> LstmClassifier:
    """Glorot-uniform matrices, forget-gate bias ``forget_bias``, other biases zero."""
    if input_dim < 1 or hidden_dim < 1:
        raise InvalidConfigError(f"dimensions must be positive (input {input_dim}, hidden {hidden_dim})")
    kw = {}
    for g in GATE_ORDER:
        kw[f"w_x{g}"] = glorot(rng, hidden_dim, input_dim)
    for g in GATE_ORDER:
        kw[f"w_h{g}"] = glorot(rng, hidden_dim, hidden_dim)
    for g in GATE_ORDER:
        kw[f"b_{g}"] = np.full(hidden_dim, forget_bias if g == "f" else 0.0)
    lstm = LstmParameters(**kw)
    if dense_dim:
        head = HeadParameters(
            w_out=glorot(rng, num_classes, dense_dim),
            b_out=np.zeros(num_classes),
            w_mid=glorot(rng, dense_dim, hidden_dim),
            b_mid=np.zeros(dense_dim),
        )
    else:
        head = HeadParameters(glorot(rng, num_classes, hidden_dim), np.zeros(num_classes))
    return LstmClassifier(lstm, head, dropout_p)


def data_gradient_sum(model: LstmClassifier, xs, labels, masks) -> tuple[float, dict[str, np.ndarray]]:
    """Summed cross-entropy and summed (not averaged) data gradients over a batch in train mode."""
    labels = np.asarray(labels, dtype=np.int64)
    state, trace = lstm_forward_batch(model.lstm, xs)
    out = head_forward(model.head, state.h, "train", model.dropout_p, mask=masks)
    B = len(labels)
    picked = np.clip(out.probs[np.arange(B), labels], 1e-12, 1.0)
    ce_sum = float(-np.sum(np.log(picked)))
    dlogits = out.probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    head_grads, dh = head_backward(model.head, out, dlogits)
    grads = lstm_backward(model.lstm, trace, dh)
    grads.update(head_grads)
    return ce_sum, grads


def loss_and_gradients(
    model: LstmClassifier,
    xs,
    labels,
    l2: float = 0.0,
    rng: np.random.Generator | None = None,
    masks=None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch plus ``l2 * sum(w**2)``, with its exact gradient."""
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim == 2:
        xs = xs[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B = xs.shape[0]
    if masks is None:
        if rng is None:
            raise InvalidConfigError("need an rng or explicit dropout masks")
        masks = draw_mask(rng, (B, model.lstm.hidden_dim), model.dropout_p)
    ce_sum, grads = data_gradient_sum(model, xs, labels, masks)
    params = model.params()
    reg = l2_gradients(params, l2)
    grads = {k: grads[k] / B + reg[k] for k in params}
    return LossBreakdown(ce_sum / B, l2_penalty(weight_arrays(params), l2)), grads


def predict_proba(model: LstmClassifier, xs, batch_size: int = 256) -> np.ndarray:
    """Inference-mode class probabilities for (B, T, D) input, computed in fixed-size chunks."""
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim == 2:
        xs = xs[None]
    out = []
    for start in range(0, xs.shape[0], batch_size):
        state, _ = lstm_forward_batch(model.lstm, xs[start:start + batch_size], keep_trace=False)
        out.append(head_forward(model.head, state.h, "infer", model.dropout_p).probs)
    if not out:
        return np.zeros((0, model.head.num_classes))
    return np.concatenate(out, axis=0)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple[str, tuple[int, ...], float, float] | None
    failures: list[tuple[str, tuple[int, ...], float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


GradFn = Callable[[LstmClassifier, np.ndarray, np.ndarray, float, np.ndarray], dict]


def _analytic(model, xs, labels, l2, masks):
    return loss_and_gradients(model, xs, labels, l2, masks=masks)[1]


def reference_loss(params: dict[str, np.ndarray], seq, label: int, l2: float, mask, dropout_p: float) -> float:
    """Train-mode regularized loss of one sequence, written out gate by gate.

    Used as the finite-difference oracle: it shares no code with the batched
    forward pass and runs in whatever float type ``params`` carries
    (``np.longdouble`` in :func:`gradient_check`).
    """
    P = params
    dt = P["w_xi"].dtype
    one = dt.type(1)

    def sig(v):
        return one / (one + np.exp(-v))

    H = P["w_xi"].shape[0]
    h = np.zeros(H, dtype=dt)
    c = np.zeros(H, dtype=dt)
    for x in np.asarray(seq).astype(dt):
        i = sig(P["w_xi"] @ x + P["w_hi"] @ h + P["b_i"])
        f = sig(P["w_xf"] @ x + P["w_hf"] @ h + P["b_f"])
        o = sig(P["w_xo"] @ x + P["w_ho"] @ h + P["b_o"])
        cand = np.tanh(P["w_xc"] @ x + P["w_hc"] @ h + P["b_c"])
        c = f * c + i * cand
        h = o * np.tanh(c)
    z = h * np.asarray(mask).reshape(H).astype(dt)
    if "w_mid" in P:
        z = np.maximum(P["w_mid"] @ z + P["b_mid"], dt.type(0))
    logits = P["w_out"] @ z + P["b_out"]
    logits = logits - logits.max()
    log_probs = logits - np.log(np.sum(np.exp(logits)))
    data = -max(log_probs[label], np.log(dt.type(1e-12)))
    reg = dt.type(l2) * sum(np.sum(a * a) for k, a in P.items() if is_weight(k))
    return data + reg


def gradient_check(
    model: LstmClassifier,
    seq,
    label: int,
    l2: float = 0.0,
    tolerance: float = 1e-6,
    eps: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
    mask=None,
    grad_fn: GradFn | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the regularized loss with central differences.

    The dropout mask is drawn once (or taken from ``mask``) and held fixed so
    the loss is a deterministic function of the parameters. Differences are
    taken on :func:`reference_loss` in extended precision, which keeps
    round-off well below the 1e-6 relative tolerance even for gradients of
    order 1e-6. With ``sample`` set, that many coordinates are drawn uniformly
    without replacement.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seq = np.asarray(seq, dtype=DTYPE)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InvalidInputError(f"gradient_check needs a non-empty (time, features) sequence, got {seq.shape}")
    xs = seq[None]
    labels = np.array([label])
    H = model.lstm.hidden_dim
    if mask is None:
        mask = draw_mask(rng, (1, H), model.dropout_p)
    mask = np.asarray(mask, dtype=DTYPE).reshape(1, H)
    grads = (grad_fn or _analytic)(model, xs, labels, l2, mask)

    ld = {k: a.astype(np.longdouble) for k, a in model.params().items()}
    coords = [(k, idx) for k, a in ld.items() for idx in np.ndindex(a.shape)]
    if sample is not None and sample < len(coords):
        pick = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[j] for j in sorted(pick)]

    step = np.longdouble(eps)
    worst = None
    max_err = 0.0
    failures = []
    for name, idx in coords:
        arr = ld[name]
        orig = arr[idx]
        arr[idx] = orig + step
        up = reference_loss(ld, seq, label, l2, mask, model.dropout_p)
        arr[idx] = orig - step
        down = reference_loss(ld, seq, label, l2, mask, model.dropout_p)
        arr[idx] = orig
        numeric = float((up - down) / (2 * step))
        analytic = float(grads[name][idx])
        err = relative_error(analytic, numeric)
        if worst is None or err > max_err:
            max_err = err
            worst = (name, idx, analytic, numeric)
        if err >= tolerance:
            failures.append((name, idx, err))
    return GradCheckReport(max_err, tolerance, len(coords), worst, failures)


__all__ = [
    "LstmParameters", "HeadParameters", "LstmState", "StepTrace", "ForwardTrace", "HeadOutput",
    "LstmClassifier", "GradCheckReport", "lstm_step", "lstm_forward", "lstm_forward_batch",
    "lstm_backward", "head_forward", "head_backward", "draw_mask", "init_classifier",
    "loss_and_gradients", "data_gradient_sum", "predict_proba", "gradient_check",
    "relative_error", "reference_loss",
]
