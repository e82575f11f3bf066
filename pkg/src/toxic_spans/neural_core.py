"""Small float64 numpy layers with hand-written backward passes.

Every layer is a pair ``*_forward(...) -> (output, cache)`` and
``*_backward(grad_output, cache) -> grads``. Batched sequence layers take
``(batch, time, features)`` arrays plus per-row lengths; padded positions
never influence valid ones.

Randomness always comes from :func:`make_rng`, a numpy ``Generator`` over
PCG64 seeded with a 64-bit integer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class ModelParams:
    """Named parameter tensors with matching gradient accumulators."""

    def __init__(self):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.ascontiguousarray(value, dtype=DTYPE)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def names(self) -> List[str]:
        return sorted(self.values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ModelParams":
        new = ModelParams()
        for name in self.names():
            new.add(name, self.values[name].copy())
        return new

    def load_values(self, other: "ModelParams"):
        for name in self.names():
            np.copyto(self.values[name], other.values[name])

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values.values())


# ---------------------------------------------------------------- init

def uniform_init(rng, shape, scale=0.1):
    return rng.uniform(-scale, scale, size=shape)


def xavier_init(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_lstm(params: ModelParams, prefix: str, d_in: int, hidden: int, rng):
    W = xavier_init(rng, d_in + hidden, 4 * hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate
    params.add(prefix + ".W", W)
    params.add(prefix + ".b", b)


def add_bilstm(params: ModelParams, prefix: str, d_in: int, hidden: int, rng):
    add_lstm(params, prefix + ".fwd", d_in, hidden, rng)
    add_lstm(params, prefix + ".bwd", d_in, hidden, rng)


def add_ffnn(params: ModelParams, prefix: str, d_in: int, hidden: int, d_out: int, rng):
    params.add(prefix + ".W1", xavier_init(rng, d_in, hidden))
    params.add(prefix + ".b1", np.zeros(hidden))
    params.add(prefix + ".W2", xavier_init(rng, hidden, d_out))
    params.add(prefix + ".b2", np.zeros(d_out))


# ---------------------------------------------------------------- elementwise

def sigmoid(x):
    # split by sign for overflow safety
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logsumexp(x, axis=-1, keepdims=False):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # an all -inf slice gives -inf, not a warning
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=DTYPE)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=DTYPE)
    return z - logsumexp(z, axis=axis, keepdims=True)


ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(DTYPE)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
}


# ---------------------------------------------------------------- dropout

def dropout_mask(rng, shape, rate: float) -> Optional[np.ndarray]:
    if rng is None or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(DTYPE) / keep


def apply_mask(x, mask):
    return x if mask is None else x * mask


# ---------------------------------------------------------------- embedding

def embed_lookup(table: np.ndarray, token_id: int) -> np.ndarray:
    """Row ``token_id`` of ``table``; ids outside the table fall back to UNK (row 0)."""
    if not 0 <= token_id < table.shape[0]:
        token_id = 0
    return table[token_id].copy()


def embedding_forward(table, ids):
    return table[ids], ids


def embedding_backward(dout, ids, table_shape):
    dtable = np.zeros(table_shape, dtype=DTYPE)
    np.add.at(dtable, ids.reshape(-1), dout.reshape(-1, table_shape[1]))
    return dtable


# ---------------------------------------------------------------- dense

def linear_forward(x, W, b):
    return x @ W + b, x


def linear_backward(dy, x, W):
    d_in, d_out = W.shape
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, d_out)
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ W.T
    return dx, dW, db


def ffnn_forward(x, params: ModelParams, prefix: str, activation: str = "relu", drop_mask=None):
    """One hidden layer with ``activation`` then a linear output layer."""
    act, _ = ACTIVATIONS[activation]
    a, _ = linear_forward(x, params[prefix + ".W1"], params[prefix + ".b1"])
    h = act(a)
    hd = apply_mask(h, drop_mask)
    y, _ = linear_forward(hd, params[prefix + ".W2"], params[prefix + ".b2"])
    return y, (x, a, h, hd, drop_mask, activation, prefix)


def ffnn_backward(dy, cache, params: ModelParams):
    x, a, h, hd, drop_mask, activation, prefix = cache
    _, dact = ACTIVATIONS[activation]
    dhd, dW2, db2 = linear_backward(dy, hd, params[prefix + ".W2"])
    dh = apply_mask(dhd, drop_mask)
    da = dh * dact(a, h)
    dx, dW1, db1 = linear_backward(da, x, params[prefix + ".W1"])
    g = params.grads
    g[prefix + ".W1"] += dW1
    g[prefix + ".b1"] += db1
    g[prefix + ".W2"] += dW2
    g[prefix + ".b2"] += db2
    return dx


# ---------------------------------------------------------------- LSTM

def lstm_forward(x, W, b):
    """Unidirectional LSTM over ``x`` of shape (B, T, d). Gate order: i, f, o, g."""
    B, T, d = x.shape
    h = W.shape[1] // 4
    H = np.empty((B, T, h), dtype=DTYPE)
    XH = np.empty((T, B, d + h), dtype=DTYPE)
    gates = np.empty((T, B, 4 * h), dtype=DTYPE)
    C_prev = np.empty((T, B, h), dtype=DTYPE)
    TC = np.empty((T, B, h), dtype=DTYPE)
    h_prev = np.zeros((B, h), dtype=DTYPE)
    c_prev = np.zeros((B, h), dtype=DTYPE)
    for t in range(T):
        xh = XH[t]
        xh[:, :d] = x[:, t]
        xh[:, d:] = h_prev
        z = xh @ W + b
        ifo = sigmoid(z[:, : 3 * h])
        g = np.tanh(z[:, 3 * h :])
        gates[t, :, : 3 * h] = ifo
        gates[t, :, 3 * h :] = g
        C_prev[t] = c_prev
        c = ifo[:, h : 2 * h] * c_prev + ifo[:, :h] * g
        tc = np.tanh(c)
        TC[t] = tc
        h_prev = ifo[:, 2 * h : 3 * h] * tc
        c_prev = c
        H[:, t] = h_prev
    return H, (XH, gates, C_prev, TC, d, h)


def lstm_backward(dH, cache, W):
    XH, gates, C_prev, TC, d, h = cache
    T, B, _ = XH.shape
    dx = np.empty((B, T, d), dtype=DTYPE)
    dZ = np.empty((T, B, 4 * h), dtype=DTYPE)
    dh_next = np.zeros((B, h), dtype=DTYPE)
    dc_next = np.zeros((B, h), dtype=DTYPE)
    for t in range(T - 1, -1, -1):
        gt = gates[t]
        i, f, o, g = gt[:, :h], gt[:, h : 2 * h], gt[:, 2 * h : 3 * h], gt[:, 3 * h :]
        tc = TC[t]
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dZ[t]
        dz[:, :h] = dc * g * i * (1.0 - i)
        dz[:, h : 2 * h] = dc * C_prev[t] * f * (1.0 - f)
        dz[:, 2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        dz[:, 3 * h :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dxh = dz @ W.T
        dx[:, t] = dxh[:, :d]
        dh_next = dxh[:, d:]
    dW = XH.reshape(T * B, -1).T @ dZ.reshape(T * B, -1)
    db = dZ.reshape(T * B, -1).sum(axis=0)
    return dx, dW, db


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-row time index that reverses each row within its length (self-inverse)."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def length_mask(lengths, T) -> np.ndarray:
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(DTYPE)


def bilstm_forward_batch(x, lengths, params: ModelParams, prefix: str):
    """Bidirectional LSTM; returns (B, T, 2h) with padded positions zeroed."""
    B, T, _ = x.shape
    rows = np.arange(B)[:, None]
    rev = reverse_index(lengths, T)
    Wf, bf = params[prefix + ".fwd.W"], params[prefix + ".fwd.b"]
    Wb, bb = params[prefix + ".bwd.W"], params[prefix + ".bwd.b"]
    Hf, cf = lstm_forward(x, Wf, bf)
    Hb_rev, cb = lstm_forward(x[rows, rev], Wb, bb)
    mask = length_mask(lengths, T)[:, :, None]
    out = np.concatenate([Hf, Hb_rev[rows, rev]], axis=-1) * mask
    return out, (cf, cb, rev, mask, prefix, Hf.shape[-1])


def bilstm_backward_batch(dout, cache, params: ModelParams):
    cf, cb, rev, mask, prefix, h = cache
    B = dout.shape[0]
    rows = np.arange(B)[:, None]
    dout = dout * mask
    dxf, dWf, dbf = lstm_backward(np.ascontiguousarray(dout[:, :, :h]), cf, params[prefix + ".fwd.W"])
    dHb_rev = dout[:, :, h:][rows, rev]
    dxb_rev, dWb, dbb = lstm_backward(dHb_rev, cb, params[prefix + ".bwd.W"])
    g = params.grads
    g[prefix + ".fwd.W"] += dWf
    g[prefix + ".fwd.b"] += dbf
    g[prefix + ".bwd.W"] += dWb
    g[prefix + ".bwd.b"] += dbb
    return dxf + dxb_rev[rows, rev]


def bilstm_forward(inputs: Sequence[np.ndarray], params: ModelParams, prefix: str) -> List[np.ndarray]:
    """Unbatched convenience wrapper: list of (d,) vectors -> list of (2h,) vectors."""
    if len(inputs) == 0:
        raise ValueError("bilstm_forward needs a nonempty sequence")
    x = np.stack([np.asarray(v, dtype=DTYPE) for v in inputs])[None]
    out, _ = bilstm_forward_batch(x, np.array([len(inputs)]), params, prefix)
    return list(out[0])


# ---------------------------------------------------------------- char-BiLSTM word embedding

def char_embed_forward(char_ids, char_lengths, params: ModelParams, prefix: str):
    """Words as char-id rows (N, Lmax) -> (N, 2c): last forward state ++ last backward state."""
    table = params[prefix + ".emb"]
    E, _ = embedding_forward(table, char_ids)
    out, cache = bilstm_forward_batch(E, char_lengths, params, prefix + ".lstm")
    c = out.shape[-1] // 2
    rows = np.arange(len(char_ids))
    last = np.asarray(char_lengths) - 1
    emb = np.concatenate([out[rows, last, :c], out[rows, 0, c:]], axis=-1)
    return emb, (char_ids, out.shape, cache, last, c, prefix)


def char_embed_backward(demb, cache, params: ModelParams):
    char_ids, out_shape, lstm_cache, last, c, prefix = cache
    rows = np.arange(len(char_ids))
    dout = np.zeros(out_shape, dtype=DTYPE)
    dout[rows, last, :c] += demb[:, :c]
    dout[rows, 0, c:] += demb[:, c:]
    dE = bilstm_backward_batch(dout, lstm_cache, params)
    table = params[prefix + ".emb"]
    params.grads[prefix + ".emb"] += embedding_backward(dE, char_ids, table.shape)


def char_word_embedding(word: str, params: ModelParams, prefix: str, char_vocab) -> np.ndarray:
    if not word:
        raise ValueError("word must be nonempty")
    ids = np.array([[char_vocab.get(ch, 0) for ch in word]])
    emb, _ = char_embed_forward(ids, np.array([len(word)]), params, prefix)
    return emb[0]


# ---------------------------------------------------------------- biaffine

def biaffine_form(hs, he, U, W, b):
    """Category scores for one (start, end) pair: hs.U[:,k,:].he + W[k].(hs ++ he) + b[k]."""
    hs = np.asarray(hs, dtype=DTYPE)
    he = np.asarray(he, dtype=DTYPE)
    return np.einsum("p,pkq,q->k", hs, U, he) + W @ np.concatenate([hs, he]) + b


def biaffine_forward(Hs, He, U, W, b):
    """All pairs at once: (B, n, p) x (B, n, p) -> (B, n_start, n_end, c)."""
    p = Hs.shape[-1]
    A = np.einsum("bsp,pkq->bskq", Hs, U)
    S = np.einsum("bskq,beq->bsek", A, He)
    S += (Hs @ W[:, :p].T)[:, :, None, :]
    S += (He @ W[:, p:].T)[:, None, :, :]
    S += b
    return S, (Hs, He, A)


def biaffine_backward(dS, cache, U, W):
    Hs, He, A = cache
    p = Hs.shape[-1]
    dA = np.einsum("bsek,beq->bskq", dS, He)
    dHe = np.einsum("bsek,bskq->beq", dS, A)
    dHs = np.einsum("bskq,pkq->bsp", dA, U)
    dU = np.einsum("bsp,bskq->pkq", Hs, dA)
    dS_s = dS.sum(axis=2)  # (B, n, c)
    dS_e = dS.sum(axis=1)
    dHs += dS_s @ W[:, :p]
    dHe += dS_e @ W[:, p:]
    dW = np.concatenate(
        [np.einsum("bsk,bsp->kp", dS_s, Hs), np.einsum("bek,bep->kp", dS_e, He)], axis=1
    )
    db = dS.sum(axis=(0, 1, 2))
    return dHs, dHe, dU, dW, db


# ---------------------------------------------------------------- optimizers

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams):
        for name in params.names():
            params.values[name] -= self.lr * params.grads[name]


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ModelParams):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in params.names():
            g = params.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params.values[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    name = name.lower()
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def clip_grad_norm(params: ModelParams, max_norm: Optional[float]) -> float:
    norm = params.grad_norm()
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in params.grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    per_param: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"{name:32s} max_rel_err={err:.3e}" for name, err in sorted(self.per_param.items())]
        status = "PASS" if self.passed else "FAIL: " + ", ".join(self.failures)
        lines.append(f"checked {self.checked} entries, max_rel_err={self.max_rel_error:.3e} -> {status}")
        return "\n".join(lines)


def gradient_check(
    loss_and_grad: Callable[[], Tuple[float, Dict[str, np.ndarray]]],
    params: ModelParams,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    abs_tolerance: float = 1e-8,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    names: Optional[Iterable[str]] = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_and_grad`` must read ``params.values`` and return the loss plus
    a name -> gradient mapping. Tensors larger than ``max_entries`` are
    checked on a random sample of entries drawn from ``rng``.
    """
    _, analytic = loss_and_grad()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    report = GradCheckReport()
    for name in names or params.names():
        value = params.values[name]
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or make_rng(0)).choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        bad = False
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            up, _ = loss_and_grad()
            flat[k] = orig - step
            down, _ = loss_and_grad()
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name].reshape(-1)[k]
            diff = abs(a - numeric)
            rel = diff / max(abs(a), abs(numeric), 1e-300)
            if diff < abs_tolerance:
                rel = min(rel, diff)
            worst = max(worst, rel)
            if rel > tolerance and diff >= abs_tolerance:
                bad = True
            report.checked += 1
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        if bad:
            report.failures.append(name)
    return report
