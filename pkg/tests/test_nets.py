import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgain.errors import ContractError
from dexgain.nets import tensor as T
from dexgain.nets.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from dexgain.nets.layers import (
    AttentionSpec,
    action_squash,
    cross_attention_forward,
    gain_squash,
    init_cross_attention,
    init_layer_norm,
    init_mlp,
    init_self_attention,
    layer_norm,
    mlp_forward,
    self_attention_forward,
)
from dexgain.nets.optim import Adam, adam_update, clip_grad_norm
from dexgain.nets.params import ParamSet
from dexgain.nets.tensor import Tensor

from helpers import gradcheck_input, gradcheck_params, weighted_sum

SMALL = AttentionSpec(token_dim_in=5, output_dim=3, query_dim_in=4, embed_dim=8, num_heads=2, mlp_head_dims=(6,),
                      n_positions=6)


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_mlp(p, prefix, x):
    i = 0
    while f"{prefix}.{i}.W" in p:
        W, b = p[f"{prefix}.{i}.W"].value, p[f"{prefix}.{i}.b"].value
        y = np.zeros(W.shape[1])
        for j in range(W.shape[1]):  # per-neuron loop
            y[j] = sum(x[k] * W[k, j] for k in range(W.shape[0])) + b[j]
        i += 1
        x = np.tanh(y) if f"{prefix}.{i}.W" in p else y
    return x


def np_embed(p, prefix, tokens, off=0):
    x = tokens @ p[f"{prefix}.embed.W"].value + p[f"{prefix}.embed.b"].value
    x = x + p[f"{prefix}.pos"].value[off:off + len(tokens)]
    return np_layer_norm(x, p[f"{prefix}.ln.gain"].value, p[f"{prefix}.ln.bias"].value)


def lin(p, name, x):
    return x @ p[f"{name}.W"].value + p[f"{name}.b"].value


def np_cross(p, spec, query, tokens, prefix="ca"):
    x = np_embed(p, prefix, tokens)
    q = lin(p, f"{prefix}.q", query)
    k, v = lin(p, f"{prefix}.k", x), lin(p, f"{prefix}.v", x)
    hd = spec.head_dim
    out = np.zeros(spec.embed_dim)
    for h in range(spec.num_heads):
        sl = slice(h * hd, (h + 1) * hd)
        s = np.array([q[sl] @ k[t, sl] / math.sqrt(hd) for t in range(len(tokens))])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[sl] = sum(w[t] * v[t, sl] for t in range(len(tokens)))
    return np_mlp(p, f"{prefix}.head", out)


# -- MLP --------------------------------------------------------------------------

def test_mlp_zero_params_zero_output():
    p = ParamSet()
    init_mlp(p, "m", (4, 8, 3), np.random.default_rng(0))
    p.set_values({k: np.zeros_like(v) for k, v in p.values().items()})
    assert np.all(mlp_forward(p, np.ones(4), "m").value == 0)


def test_mlp_identity_layer():
    p = ParamSet()
    p.add("m.0.W", np.eye(3))
    p.add("m.0.b", np.zeros(3))
    x = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(mlp_forward(p, x, "m").value, x)


@pytest.mark.parametrize("seed", range(5))
def test_mlp_matches_per_neuron_loop(seed):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    init_mlp(p, "m", (5, 7, 6, 2), rng)
    x = rng.normal(size=5)
    assert np.max(np.abs(mlp_forward(p, x, "m").value - np_mlp(p, "m", x))) < 1e-12


def test_mlp_shape_mismatch():
    p = ParamSet()
    init_mlp(p, "m", (4, 3), np.random.default_rng(0))
    with pytest.raises(ContractError):
        mlp_forward(p, np.ones(5), "m")


# -- attention ----------------------------------------------------------------------

def _self_attn(seed, spec=SMALL):
    p = ParamSet()
    init_self_attention(p, spec, np.random.default_rng(seed), out_scale=1.0)
    return p


def _cross_attn(seed, spec=SMALL):
    p = ParamSet()
    init_cross_attention(p, spec, np.random.default_rng(seed), out_scale=1.0)
    return p


def test_self_attention_single_token_is_value_path():
    p = _self_attn(0)
    tok = np.random.default_rng(1).normal(size=(1, 5))
    x = np_embed(p, "sa", tok)
    expected = np_mlp(p, "sa.head", lin(p, "sa.v", x)[0])
    assert np.allclose(self_attention_forward(p, tok, SMALL).value, expected, atol=1e-12)


def test_self_attention_duplicate_tokens():
    p = _self_attn(0)
    p["sa.pos"].value[1] = p["sa.pos"].value[0]  # identical positions make the two tokens identical
    tok = np.random.default_rng(2).normal(size=(1, 5))
    one = self_attention_forward(p, tok, SMALL).value
    two = self_attention_forward(p, np.repeat(tok, 2, axis=0), SMALL).value
    assert np.allclose(one, two, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_attention_weights_normalized(seed):
    p = _self_attn(seed)
    tok = np.random.default_rng(seed).normal(size=(3, 4, 5))
    _, w = self_attention_forward(p, tok, SMALL, return_weights=True)
    assert np.max(np.abs(w.value.sum(-1) - 1.0)) < 1e-12
    pc = _cross_attn(seed)
    _, w = cross_attention_forward(pc, np.ones((3, 4)), tok, SMALL, return_weights=True)
    assert np.max(np.abs(w.value.sum(-1) - 1.0)) < 1e-12


def test_empty_sequence_rejected():
    with pytest.raises(ContractError):
        self_attention_forward(_self_attn(0), np.zeros((0, 5)), SMALL)
    with pytest.raises(ContractError):
        cross_attention_forward(_cross_attn(0), np.zeros(4), np.zeros((0, 5)), SMALL)


def test_cross_attention_single_token_ignores_keys():
    p = _cross_attn(0)
    rng = np.random.default_rng(3)
    tok, q = rng.normal(size=(1, 5)), rng.normal(size=4)
    a = cross_attention_forward(p, q, tok, SMALL).value
    p["ca.k.W"].value = rng.normal(size=p["ca.k.W"].shape)
    b = cross_attention_forward(p, q, tok, SMALL).value
    assert np.allclose(a, b, atol=1e-12)


def test_cross_attention_joint_permutation():
    p = _cross_attn(0)
    rng = np.random.default_rng(4)
    tok, q = rng.normal(size=(4, 5)), rng.normal(size=4)
    a = cross_attention_forward(p, q, tok, SMALL).value
    perm = np.array([2, 0, 3, 1])
    p["ca.pos"].value[:4] = p["ca.pos"].value[:4][perm]
    b = cross_attention_forward(p, q, tok[perm], SMALL).value
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_cross_attention_matches_loop_oracle(seed):
    p = _cross_attn(seed)
    rng = np.random.default_rng(100 + seed)
    tok, q = rng.normal(size=(5, 5)), rng.normal(size=4)
    out = cross_attention_forward(p, q, tok, SMALL).value
    assert np.max(np.abs(out - np_cross(p, SMALL, q, tok))) < 1e-12


def test_positional_offset_matters():
    p = _self_attn(0)
    tok = np.random.default_rng(5).normal(size=(3, 5))
    a = self_attention_forward(p, tok, SMALL, pos_offset=0).value
    b = self_attention_forward(p, tok, SMALL, pos_offset=2).value
    assert not np.allclose(a, b)
    with pytest.raises(ContractError):
        self_attention_forward(p, tok, SMALL, pos_offset=5)


def test_forward_is_pure():
    p = _self_attn(0)
    tok = np.random.default_rng(6).normal(size=(2, 3, 5))
    assert np.array_equal(self_attention_forward(p, tok, SMALL).value, self_attention_forward(p, tok, SMALL).value)


def test_spec_head_divisibility():
    with pytest.raises(ContractError):
        AttentionSpec(token_dim_in=2, output_dim=1, embed_dim=10, num_heads=3)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_softmax_stable(a, b, c):
    out = T.softmax(Tensor(np.array([[a, b, c]]))).value
    assert np.all(np.isfinite(out)) and abs(out.sum() - 1.0) < 1e-12


# -- gradients -------------------------------------------------------------------------

def test_constant_loss_zero_grad():
    p = ParamSet()
    init_mlp(p, "m", (3, 4, 2), np.random.default_rng(0))
    out = mlp_forward(p, np.ones(3), "m")
    loss = T.add(T.mul(T.tsum(out), 0.0), 3.0)
    loss.backward()
    assert all(np.all(g == 0) for g in p.grads().values())


def test_closed_form_quadratic_grad():
    rng = np.random.default_rng(0)
    p = ParamSet()
    W = p.add("W", rng.normal(size=(3, 4)))
    x = rng.normal(size=(4, 1))
    y = T.matmul(W, Tensor(x))
    T.mul(T.tsum(T.square(y)), 0.5).backward()
    assert np.allclose(W.grad, (W.value @ x) @ x.T, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_mlp(seed):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    init_mlp(p, "m", (4, 5, 3), rng)
    x = rng.normal(size=(2, 4))
    w = rng.normal(size=(2, 3))
    assert gradcheck_params(p, lambda: T.tsum(T.mul(mlp_forward(p, x, "m"), w))) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_layer_norm(seed):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    init_layer_norm(p, "ln", 6)
    p.set_values({"ln.gain": rng.normal(size=6), "ln.bias": rng.normal(size=6)})
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(3, 6))
    assert gradcheck_params(p, lambda: T.tsum(T.mul(layer_norm(p, "ln", x), w))) < 1e-4
    assert gradcheck_input(lambda t: T.tsum(T.mul(layer_norm(p, "ln", t), w)), x) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_squash_heads(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    assert gradcheck_input(lambda t: T.tsum(T.mul(action_squash(t, 0.05), w)), x) < 1e-4
    assert gradcheck_input(lambda t: T.tsum(T.mul(gain_squash(t), w)), x) < 1e-4


def test_gradcheck_attention_smoke():
    rng = np.random.default_rng(0)
    p = _cross_attn(0)
    tok, q = rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 4))
    loss = lambda: weighted_sum(cross_attention_forward(p, q, tok, SMALL), np.random.default_rng(1))
    assert gradcheck_params(p, loss) < 1e-4


# -- optimizer ---------------------------------------------------------------------------

def test_adam_zero_grad_unchanged():
    p = ParamSet()
    p.add("x", np.array([1.0, -2.0]))
    before = p["x"].value.copy()
    opt = Adam(p, lr=0.1)
    opt.step({"x": np.zeros(2)})
    assert np.array_equal(p["x"].value, before)


@pytest.mark.parametrize("g", [3.0, -0.01])
def test_adam_first_step_bounded_by_lr(g):
    p = ParamSet()
    p.add("x", np.array([0.0]))
    m, v = {"x": np.zeros(1)}, {"x": np.zeros(1)}
    adam_update(p, {"x": np.array([g])}, 0.01, 0.9, 0.999, 1e-8, 1, m, v)
    step = p["x"].value[0]
    assert np.sign(step) == -np.sign(g)
    assert 0.99 * 0.01 < abs(step) <= 0.01


def test_adam_quadratic_converges():
    p = ParamSet()
    p.add("x", np.array([3.0, -4.0]))
    target = np.array([0.5, 1.5])
    opt = Adam(p, lr=0.05)
    for _ in range(5000):
        opt.step({"x": p["x"].value - target})
    assert np.max(np.abs(p["x"].value - target)) < 1e-6


def test_adam_skips_nonfinite():
    p = ParamSet()
    p.add("x", np.array([1.0]))
    opt = Adam(p)
    opt.step({"x": np.array([np.nan])})
    assert p["x"].value[0] == 1.0 and opt.skipped == 1
    with pytest.raises(ValueError):
        adam_update(p, {"x": np.ones(1)}, 0.1, 0.9, 0.999, 1e-8, 0, opt.m, opt.v)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 4.0])}
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(g["a"]) == pytest.approx(1.0)


# -- params and checkpoints ----------------------------------------------------------------

def test_paramset_contract():
    p = ParamSet()
    p.add("a", np.zeros((2, 3)))
    with pytest.raises(KeyError):
        p.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        p.set_values({"a": np.zeros(3)})
    c = p.copy()
    c["a"].value[0, 0] = 1.0
    assert p["a"].value[0, 0] == 0.0


def test_checkpoint_roundtrip_bytes(tmp_path):
    p = _cross_attn(3)
    meta = {"kind": "test", "nested": {"b": [1, 2], "a": 0.1}}
    path = save_checkpoint(tmp_path / "a.ckpt", p, meta)
    q, meta2 = load_checkpoint(path)
    assert meta2 == meta and q.names() == p.names()
    assert all(np.array_equal(q[k].value, p[k].value) for k in p)
    path2 = save_checkpoint(tmp_path / "b.ckpt", q, meta2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_corruption():
    buf = encode_checkpoint(_self_attn(0), {})
    with pytest.raises(ValueError):
        decode_checkpoint(b"XXXXXXXX" + buf[8:])
    with pytest.raises(ValueError):
        decode_checkpoint(buf + b"\x00")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 4)), min_size=1, max_size=4), st.integers(0, 1000))
def test_checkpoint_roundtrip_property(shapes, seed):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    for i, (ndim, n) in enumerate(shapes):
        p.add(f"p{i}", rng.normal(size=(n,) * ndim))
    q, _ = decode_checkpoint(encode_checkpoint(p))
    assert encode_checkpoint(q) == encode_checkpoint(p)
