import numpy as np
import pytest

from dpmld import autodiff as ad
from dpmld.autodiff import Tensor
from dpmld.model import (
    EEGTokenizer,
    ModelConfig,
    MultimodalModel,
    attention,
    om_image,
    patchify,
)

from _gradcheck import check, rel_error

SMALL = ModelConfig(d_model=8, d_k=8, d_feat=4, d_ff=8, head_hidden=6, eeg_channels=2, om_dims=4, om_width=8)


@pytest.fixture
def model():
    m = MultimodalModel.create(ModelConfig(), seed=3)
    return m


@pytest.fixture
def prepared(model, tiny_dataset):
    model.fit_tokenizer(tiny_dataset)
    data = model.prepare(tiny_dataset)
    model.fit_normalization(data)
    return data


def test_tokenizer_constant_and_boundary():
    tok = EEGTokenizer(lo=np.array([-1.0, -2.0]), hi=np.array([1.0, 2.0]), vocab=32)
    zeros = tok(np.zeros((2, 10)))
    assert np.all(zeros == zeros[0, 0]) or np.all(zeros == zeros[0])
    assert len(np.unique(zeros[:, 0])) == 1 and len(np.unique(zeros[:, 1])) == 1
    top = tok(np.array([[1.0], [2.0]]))
    assert np.all(top == 31)
    a = np.array([[0.1], [0.3]])
    assert np.array_equal(tok(a), tok(a + 1e-9))
    with pytest.raises(ValueError):
        tok(np.zeros((2, 0)))


def test_transform_eeg_shape(model, prepared):
    h = model.transform_eeg(prepared.tokens[:3])
    assert h.shape == (3, prepared.tokens.shape[1], model.cfg.d_model)


def test_encode_eeg_shape_and_order_sensitivity(model, prepared):
    tokens = prepared.tokens[:1]
    f = model.encode_eeg(model.transform_eeg(tokens))
    assert f.shape == (1, model.cfg.d_feat)
    flipped = model.encode_eeg(model.transform_eeg(tokens[:, ::-1]))
    assert not np.allclose(f.data, flipped.data)


def _token_effect(model, base, j, new_token):
    other = base.copy()
    other[0, j] = new_token
    enc = lambda t: model.encode_eeg(model.transform_eeg(t)).data
    return enc(other) - enc(base)


def test_zero_value_projection_removes_token_mixing(model, prepared):
    # residual paths still carry each token forward, but nothing crosses positions:
    # changing one token shifts the pooled output by the same amount whatever the context
    a = prepared.tokens[:1].copy()
    b = prepared.tokens[1:2].copy()
    b[0, 3] = a[0, 3]
    mixed = _token_effect(model, a, 3, (a[0, 3] + 5) % 32), _token_effect(model, b, 3, (a[0, 3] + 5) % 32)
    assert not np.allclose(*mixed)
    for i in range(model.cfg.enc_layers):
        model.params[f"eeg.layer{i}.Wv"].data[:] = 0.0
    local = _token_effect(model, a, 3, (a[0, 3] + 5) % 32), _token_effect(model, b, 3, (a[0, 3] + 5) % 32)
    assert np.allclose(*local, atol=1e-13)


def test_om_image_contract():
    x = np.random.default_rng(0).standard_normal((4, 32))
    assert np.array_equal(om_image(x, 32)[..., 0], x)
    assert np.allclose(om_image(np.full((4, 17), 2.5), 32), 2.5)
    for t in (1, 5, 32, 100):
        assert om_image(np.ones((4, t)), 32).shape == (4, 32, 1)
    with pytest.raises(ValueError):
        om_image(np.zeros((4, 0)), 32)


def test_om_interpolation_is_linear():
    x = np.array([[0.0, 1.0, 4.0]])
    img = om_image(x, 5)[0, :, 0]
    assert np.allclose(img, [0.0, 0.5, 1.0, 2.5, 4.0])


def test_patchify_layout_and_errors():
    img = np.arange(4 * 8, dtype=float).reshape(4, 8, 1)
    p = patchify(img, 4)
    assert p.shape == (2, 16)
    assert np.array_equal(p[1].reshape(4, 4), img[:, 4:, 0])
    with pytest.raises(ValueError):
        patchify(np.zeros((4, 6, 1)), 4)


def test_encode_om_contract(model):
    patch = np.random.default_rng(1).standard_normal((1, 1, 16))
    single = model.encode_om(patch).data
    assert single.shape == (1, model.cfg.d_feat)
    many = model.encode_om(np.repeat(patch, 8, axis=1)).data
    assert np.allclose(single, many, rtol=1e-13)
    for k in ("om.b1", "om.b2"):
        model.params[k].data[:] = 0.0
    assert np.array_equal(model.encode_om(np.zeros((1, 8, 16))).data, np.zeros((1, model.cfg.d_feat)))


def test_attention_singleton_and_uniform():
    rng = np.random.default_rng(2)
    q = Tensor(rng.standard_normal((1, 3, 4)))
    k = Tensor(rng.standard_normal((1, 1, 4)))
    v = Tensor(rng.standard_normal((1, 1, 4)))
    out, w = attention(q, k, v)
    assert np.array_equal(w.data, np.ones((1, 3, 1)))
    assert np.allclose(out.data, np.repeat(v.data, 3, axis=1))
    vv = Tensor(rng.standard_normal((1, 5, 4)))
    out, w = attention(Tensor(np.zeros((1, 2, 4))), Tensor(rng.standard_normal((1, 5, 4))), vv)
    assert np.allclose(out.data, vv.data.mean(axis=1, keepdims=True).repeat(2, axis=1))


def test_attention_maps_row_stochastic(model, prepared):
    batch = prepared.subset(slice(0, 5))
    model.raw_features(batch)
    assert len(model.attention_maps) == model.cfg.cross_layers
    for w in model.attention_maps:
        assert np.all(np.abs(w.sum(axis=-1) - 1) < 1e-12)


def test_cross_attention_dimension_check(model):
    with pytest.raises(ad.ShapeError):
        model.cross_attention_layer(Tensor(np.zeros((1, 2, 5))), Tensor(np.zeros((1, 3, 32))), 0)


def test_single_layer_equals_layer_call_plus_pool(model, prepared):
    batch = prepared.subset(slice(0, 2))
    h_e = model.transform_eeg(batch.tokens)
    via = model.extract_cross_modal(h_e, batch.patches, n_layers=1).data
    x, _ = model.cross_attention_layer(model.om_tokens(batch.patches), h_e, 0)
    assert np.array_equal(via, model.pool_cross_modal(x).data)
    assert model.extract_cross_modal(h_e, batch.patches).shape == (2, model.cfg.d_feat)


def test_forward_features_contract(model, prepared):
    f = model.forward_features(prepared.subset(slice(0, 10))).data
    assert f.shape == (10, 3 * model.cfg.d_feat)
    assert np.all((f >= 0) & (f <= 1))
    twin = prepared.subset(np.array([4, 4]))
    g = model.forward_features(twin).data
    assert np.array_equal(g[0], g[1])


def test_classify_contract(model):
    out = model.classify(np.full(model.cfg.n_features, 0.5))
    assert out.shape == (1, 2)
    for k in ("head.W1", "head.b1", "head.W2", "head.b2"):
        model.params[k].data[:] = 0.0
    logits = model.classify(np.random.default_rng(0).random((4, model.cfg.n_features)))
    assert ad.cross_entropy(logits, np.array([0, 1, 1, 0])).item() == pytest.approx(np.log(2))
    with pytest.raises(ad.ShapeError):
        model.classify(np.zeros(5))


def test_classifier_gradient(model):
    f = np.random.default_rng(3).random((3, model.cfg.n_features))
    W1 = model.params["head.W1"]
    check(lambda W: ad.cross_entropy(
        ad.linear(ad.relu(ad.linear(Tensor(f), W, model.params["head.b1"])), model.params["head.W2"],
                  model.params["head.b2"]), np.array([0, 1, 1])), [W1.data])


def _small_model_batch():
    from dpmld.data import GeneratorConfig, generate

    samples = generate(GeneratorConfig(n_samples=6, eeg_channels=2, om_dims=4, timesteps=8, seed=1))
    m = MultimodalModel.create(SMALL, seed=5)
    m.fit_tokenizer(samples)
    data = m.prepare(samples)
    m.fit_normalization(data)
    # widen the bounds so no feature sits on the clip boundary
    m.norm = type(m.norm)(m.norm.lo - 1.0, m.norm.hi + 1.0)
    return m, data


def test_cross_attention_wq_gradient():
    m, data = _small_model_batch()
    h_e = m.transform_eeg(data.tokens)
    name = "ca.layer0.W_Q"
    orig = m.params[name]

    def build(W):
        m.params.tensors[name] = W
        try:
            return m.extract_cross_modal(h_e.detach(), data.patches)
        finally:
            m.params.tensors[name] = orig

    check(build, [orig.data.copy()])


def test_full_model_loss_gradient_every_group():
    """Finite differences on every parameter tensor of the end-to-end loss."""
    m, data = _small_model_batch()
    labels = data.labels

    def loss():
        return ad.cross_entropy(m.classify(m.forward_features(data)), labels)

    m.params.zero_grad()
    loss().backward()
    analytic = {k: p.grad.copy() for k, p in m.params.items()}

    def fn():
        with ad.no_grad():
            return loss().item()

    for name, p in m.params.items():
        num = ad.numerical_gradient(fn, p.data)
        assert rel_error(analytic[name], num) < 1e-4, name
