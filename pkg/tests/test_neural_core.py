import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from toxic_spans import neural_core as nc
from toxic_spans.encoder import Vocab


def ref_lstm(xs, W, b):
    """Textbook single-sequence LSTM, gate order i, f, o, g."""
    h_dim = W.shape[1] // 4
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    out = []
    for x in xs:
        z = np.concatenate([x, h]) @ W + b
        i = 1 / (1 + np.exp(-z[:h_dim]))
        f = 1 / (1 + np.exp(-z[h_dim : 2 * h_dim]))
        o = 1 / (1 + np.exp(-z[2 * h_dim : 3 * h_dim]))
        g = np.tanh(z[3 * h_dim :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def lstm_params(rng, d, h, prefix="l"):
    p = nc.ModelParams()
    nc.add_bilstm(p, prefix, d, h, rng)
    # random biases so the forget-gate init does not hide mistakes
    for k in p.names():
        if k.endswith(".b"):
            p.values[k][:] = rng.normal(size=p[k].shape)
    return p


def test_sigmoid_is_stable_and_correct():
    x = np.array([-1000.0, -3.0, 0.0, 2.0, 1000.0])
    with np.errstate(over="raise"):
        y = nc.sigmoid(x)
    assert np.allclose(y, [0.0, 1 / (1 + np.exp(3)), 0.5, 1 / (1 + np.exp(-2)), 1.0])


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-500, 500)))
def test_softmax_properties(z):
    p = nc.softmax(z)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert np.allclose(nc.softmax(z + 37.5), p)
    assert np.allclose(np.exp(nc.log_softmax(z)), p)
    assert abs(nc.logsumexp(z) - (np.max(z) + np.log(np.sum(np.exp(z - np.max(z)))))) < 1e-9


def test_logsumexp_handles_all_minus_inf():
    assert nc.logsumexp(np.array([-np.inf, -np.inf])) == -np.inf


def test_embed_lookup_falls_back_to_unk():
    table = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(nc.embed_lookup(table, 2), table[2])
    assert np.array_equal(nc.embed_lookup(table, 99), table[0])
    assert np.array_equal(nc.embed_lookup(table, -1), table[0])


def test_embedding_backward_accumulates_repeats():
    ids = np.array([[1, 1, 2]])
    d = nc.embedding_backward(np.ones((1, 3, 2)), ids, (4, 2))
    assert np.array_equal(d, [[0, 0], [2, 2], [1, 1], [0, 0]])


def test_lstm_matches_reference(rng):
    d, h = 3, 4
    W = rng.normal(size=(d + h, 4 * h))
    b = rng.normal(size=4 * h)
    x = rng.normal(size=(2, 5, d))
    H, _ = nc.lstm_forward(x, W, b)
    for row in range(2):
        assert np.allclose(H[row], ref_lstm(x[row], W, b), atol=1e-12)


def test_bilstm_batch_matches_unbatched_reference(rng):
    d, h = 3, 2
    p = lstm_params(rng, d, h)
    lengths = np.array([4, 1, 3])
    x = rng.normal(size=(3, 4, d))
    out, _ = nc.bilstm_forward_batch(x, lengths, p, "l")
    for row, L in enumerate(lengths):
        xs = x[row, :L]
        fwd = ref_lstm(xs, p["l.fwd.W"], p["l.fwd.b"])
        bwd = ref_lstm(xs[::-1], p["l.bwd.W"], p["l.bwd.b"])[::-1]
        assert np.allclose(out[row, :L], np.concatenate([fwd, bwd], axis=1), atol=1e-12)
        assert np.all(out[row, L:] == 0.0)
    single = nc.bilstm_forward(list(x[0]), p, "l")
    assert np.allclose(np.stack(single), out[0])


def test_bilstm_padding_content_is_irrelevant(rng):
    p = lstm_params(rng, 2, 3)
    x = rng.normal(size=(1, 5, 2))
    y = x.copy()
    y[0, 3:] = rng.normal(size=(2, 2)) * 100
    a, _ = nc.bilstm_forward_batch(x, np.array([3]), p, "l")
    b, _ = nc.bilstm_forward_batch(y, np.array([3]), p, "l")
    assert np.array_equal(a, b)


def test_reverse_index_is_self_inverse():
    lengths = np.array([3, 5, 1, 0])
    r = nc.reverse_index(lengths, 5)
    rows = np.arange(4)[:, None]
    assert np.array_equal(r[rows, r], np.tile(np.arange(5), (4, 1)))
    assert list(r[0]) == [2, 1, 0, 3, 4]


def test_char_word_embedding_uses_boundary_states(rng):
    p = nc.ModelParams()
    p.add("c.emb", nc.uniform_init(rng, (5, 3)))
    nc.add_bilstm(p, "c.lstm", 3, 2, rng)
    chars = Vocab.from_list(["<unk>", "a", "b", "c", "d"])
    emb = nc.char_word_embedding("abc", p, "c", chars)
    xs = p["c.emb"][[1, 2, 3]]
    fwd = ref_lstm(xs, p["c.lstm.fwd.W"], p["c.lstm.fwd.b"])
    bwd = ref_lstm(xs[::-1], p["c.lstm.bwd.W"], p["c.lstm.bwd.b"])
    assert np.allclose(emb, np.concatenate([fwd[-1], bwd[-1]]))
    with pytest.raises(ValueError):
        nc.char_word_embedding("", p, "c", chars)


def test_ffnn_forward_values(rng):
    p = nc.ModelParams()
    nc.add_ffnn(p, "f", 3, 4, 2, rng)
    x = rng.normal(size=(5, 3))
    y, _ = nc.ffnn_forward(x, p, "f", "relu")
    ref = np.maximum(x @ p["f.W1"] + p["f.b1"], 0) @ p["f.W2"] + p["f.b2"]
    assert np.allclose(y, ref)


def test_dropout_mask():
    assert nc.dropout_mask(None, (3,), 0.5) is None
    assert nc.dropout_mask(np.random.default_rng(0), (3,), 0.0) is None
    m = nc.dropout_mask(np.random.default_rng(0), (20000,), 0.25)
    assert set(np.unique(m)) <= {0.0, 1 / 0.75}
    assert abs(m.mean() - 1.0) < 0.03


def test_biaffine_forward_matches_triple_loop(rng):
    B, n, p_dim, c = 2, 4, 3, 2
    Hs, He = rng.normal(size=(B, n, p_dim)), rng.normal(size=(B, n, p_dim))
    U, W, b = rng.normal(size=(p_dim, c, p_dim)), rng.normal(size=(c, 2 * p_dim)), rng.normal(size=c)
    S, _ = nc.biaffine_forward(Hs, He, U, W, b)
    for bb in range(B):
        for s in range(n):
            for e in range(n):
                for k in range(c):
                    v = sum(Hs[bb, s, i] * U[i, k, j] * He[bb, e, j] for i in range(p_dim) for j in range(p_dim))
                    v += W[k] @ np.concatenate([Hs[bb, s], He[bb, e]]) + b[k]
                    assert abs(S[bb, s, e, k] - v) < 1e-10
    assert np.allclose(S[1, 2, 3], nc.biaffine_form(Hs[1, 2], He[1, 3], U, W, b))


def _check_component(params, forward, backward, rng, **kw):
    """Gradient check of sum(R * forward()) through a hand-written backward."""
    out = forward()
    R = rng.normal(size=out.shape)

    def fn():
        params.zero_grad()
        y, cache = forward(cache=True)
        backward(R, cache)
        return float(np.sum(R * y)), params.grads

    report = nc.gradient_check(fn, params, **kw)
    assert report.passed, report.summary()
    assert report.max_rel_error < 1e-6


def test_bilstm_backward_gradcheck(rng):
    p = lstm_params(rng, 3, 2)
    p.add("x", rng.normal(size=(2, 4, 3)))
    lengths = np.array([4, 2])

    def forward(cache=False):
        y, c = nc.bilstm_forward_batch(p["x"], lengths, p, "l")
        return (y, c) if cache else y

    def backward(R, cache):
        p.grads["x"] += nc.bilstm_backward_batch(R, cache, p)

    _check_component(p, forward, backward, rng)


def test_char_embedding_backward_gradcheck(rng):
    p = nc.ModelParams()
    p.add("c.emb", nc.uniform_init(rng, (6, 3), 1.0))
    nc.add_bilstm(p, "c.lstm", 3, 2, rng)
    ids = np.array([[1, 2, 3], [4, 5, 0]])
    lengths = np.array([3, 2])

    def forward(cache=False):
        y, c = nc.char_embed_forward(ids, lengths, p, "c")
        return (y, c) if cache else y

    _check_component(p, forward, lambda R, c: nc.char_embed_backward(R, c, p), rng)


@pytest.mark.parametrize("activation", ["relu", "tanh", "identity"])
def test_ffnn_backward_gradcheck(rng, activation):
    p = nc.ModelParams()
    nc.add_ffnn(p, "f", 3, 4, 2, rng)
    p.values["f.b1"][:] = rng.normal(size=4)
    p.add("x", rng.normal(size=(5, 3)))
    mask = nc.dropout_mask(rng, (5, 4), 0.3)

    def forward(cache=False):
        y, c = nc.ffnn_forward(p["x"], p, "f", activation, mask)
        return (y, c) if cache else y

    def backward(R, cache):
        p.grads["x"] += nc.ffnn_backward(R, cache, p)

    _check_component(p, forward, backward, rng)


def test_biaffine_backward_gradcheck(rng):
    p = nc.ModelParams()
    p.add("Hs", rng.normal(size=(2, 3, 2)))
    p.add("He", rng.normal(size=(2, 3, 2)))
    p.add("U", rng.normal(size=(2, 3, 2)))
    p.add("W", rng.normal(size=(3, 4)))
    p.add("b", rng.normal(size=3))

    def forward(cache=False):
        y, c = nc.biaffine_forward(p["Hs"], p["He"], p["U"], p["W"], p["b"])
        return (y, c) if cache else y

    def backward(R, cache):
        dHs, dHe, dU, dW, db = nc.biaffine_backward(R, cache, p["U"], p["W"])
        for k, v in zip(("Hs", "He", "U", "W", "b"), (dHs, dHe, dU, dW, db)):
            p.grads[k] += v

    _check_component(p, forward, backward, rng)


def test_gradient_check_detects_wrong_gradient(rng):
    p = nc.ModelParams()
    p.add("w", rng.normal(size=4))

    def fn():
        w = p["w"]
        return float(np.sum(w ** 3)), {"w": 3 * w ** 2 * 1.01}

    report = nc.gradient_check(fn, p)
    assert not report.passed and report.failures == ["w"]
    assert "FAIL" in report.summary()


def test_gradient_check_samples_entries(rng):
    p = nc.ModelParams()
    p.add("w", rng.normal(size=100))
    fn = lambda: (float(np.sum(p["w"] ** 2)), {"w": 2 * p["w"]})
    report = nc.gradient_check(fn, p, max_entries=7, rng=rng)
    assert report.checked == 7 and report.passed


def test_optimizers_and_clipping():
    p = nc.ModelParams()
    p.add("w", np.array([1.0, -2.0]))
    p.grads["w"][:] = [3.0, 4.0]
    assert nc.clip_grad_norm(p, 1.0) == pytest.approx(5.0)
    assert np.allclose(p.grads["w"], [0.6, 0.8])
    nc.SGD(0.5).step(p)
    assert np.allclose(p["w"], [0.7, -2.4])
    adam = nc.make_optimizer("adam", 0.1)
    adam.step(p)
    # first Adam step moves each coordinate by lr against the gradient sign
    assert np.allclose(p["w"], [0.6, -2.5], atol=1e-6)
    with pytest.raises(ValueError):
        nc.make_optimizer("rmsprop", 0.1)


def test_model_params_helpers():
    p = nc.ModelParams()
    p.add("b", np.zeros(2))
    p.add("a", np.ones((2, 2)))
    assert p.names() == ["a", "b"] and p.size() == 6
    with pytest.raises(KeyError):
        p.add("a", np.zeros(1))
    q = p.copy()
    p.values["a"][:] = 5
    assert np.all(q["a"] == 1)
    p.load_values(q)
    assert np.all(p["a"] == 1)
    p.values["b"][0] = np.nan
    assert not p.all_finite()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lstm_init_has_unit_forget_bias(seed):
    p = nc.ModelParams()
    nc.add_lstm(p, "x", 3, 4, nc.make_rng(seed))
    assert np.all(p["x.b"][4:8] == 1.0) and np.all(p["x.b"][:4] == 0.0)
    limit = np.sqrt(6 / (7 + 16))
    assert np.all(np.abs(p["x.W"]) <= limit)
