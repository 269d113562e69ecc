import numpy as np
import pytest

from diffmatte.errors import DomainError
from diffmatte.losses import matting_loss_grad
from diffmatte.net.gradcheck import grad_check, numeric_grad, relative_error
from diffmatte.net.layers import (
    Conv2d,
    Sigmoid,
    SiLU,
    TimeEmbedding,
    conv2d,
    upsample2,
    upsample2_backward,
)
from diffmatte.net.model import Block, Decoder, DecoderConfig, Encoder, MattingModel

from conftest import tiny_config

TOL = 1e-4


def _conv_oracle(x, w, b, stride):
    """Direct nested-loop cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, o, ho, wo))
    for nn in range(n):
        for oo in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oo]
                    for cc in range(c):
                        for di in range(k):
                            for dj in range(k):
                                y, xx = i * stride + di - p, j * stride + dj - p
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[nn, cc, y, xx] * w[oo, cc, di, dj]
                    out[nn, oo, i, j] = acc
    return out


# convolution -------------------------------------------------------------------------


def test_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 6))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(x, w, np.zeros(3)), x)


def test_ones_kernel_on_constant_interior():
    out = conv2d(np.ones((1, 1, 6, 6)), np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_array_equal(out[0, 0, 1:-1, 1:-1], 9.0)
    assert out[0, 0, 0, 0] == 4.0 and out[0, 0, 0, 2] == 6.0


def test_random_4x4_matches_sliding_window_oracle():
    r = np.random.default_rng(1)
    x, w, b = r.standard_normal((1, 1, 4, 4)), r.standard_normal((1, 1, 3, 3)), r.standard_normal(1)
    np.testing.assert_allclose(conv2d(x, w, b), _conv_oracle(x, w, b, 1), atol=1e-6)


@pytest.mark.parametrize("stride,size", [(1, 5), (2, 6), (2, 7)])
def test_multichannel_matches_oracle(stride, size):
    r = np.random.default_rng(stride * 10 + size)
    x, w, b = r.standard_normal((2, 3, size, size)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)
    out = conv2d(x, w, b, stride)
    assert out.shape[2] == -(-size // stride)
    np.testing.assert_allclose(out, _conv_oracle(x, w, b, stride), atol=1e-10)


def test_conv_shape_errors():
    with pytest.raises(DomainError):
        conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(DomainError):
        conv2d(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(2))
    with pytest.raises(DomainError):
        Conv2d(2, 2, k=5)


# gradient checks ------------------------------------------------------------------------


def _f64(layer):
    return layer.astype(np.float64)


@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 1), (1, 2)])
def test_conv_grad_check(k, stride):
    r = np.random.default_rng(k + stride)
    conv = _f64(Conv2d(3, 4, k, stride, r))
    conv.params["b"][:] = r.standard_normal(4)
    assert grad_check(conv, [r.standard_normal((2, 3, 6, 6))]) < 1e-5


@pytest.mark.parametrize("cls", [SiLU, Sigmoid])
def test_activation_grad_check(cls):
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4)) * 3
    assert grad_check(cls(), [x]) < TOL


def test_upsample_adjoint():
    r = np.random.default_rng(0)
    x, dy = r.standard_normal((1, 2, 3, 4)), r.standard_normal((1, 2, 6, 8))
    assert np.sum(upsample2(x) * dy) == pytest.approx(np.sum(x * upsample2_backward(dy)), rel=1e-12)
    assert upsample2(x).shape == (1, 2, 6, 8)


def test_time_embedding_grad_check_and_flow():
    r = np.random.default_rng(0)
    for kind in ("linear", "sinusoidal"):
        emb = _f64(TimeEmbedding(5, kind, r))
        t = np.array([0.1, 0.6, 0.9])
        assert grad_check(emb, [t], wrt=[]) < TOL
        emb.zero_grad()
        emb.forward(t)
        emb.backward(np.ones((3, 5)))
        assert np.any(emb.grads["w"] != 0)


def test_time_embedding_zero_and_affine():
    emb = _f64(TimeEmbedding(6, "linear", np.random.default_rng(0)))
    e = emb.forward(np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(e[1], (e[0] + e[2]) / 2, atol=1e-15)
    for name in emb.params:
        emb.params[name][:] = 0
    np.testing.assert_array_equal(emb.forward(np.array([0.3])), 0.0)


@pytest.mark.parametrize("up", [False, True])
def test_block_grad_check(up):
    r = np.random.default_rng(int(up))
    block = _f64(Block(3, 4, up=up, c_skip=2 if up else 0, rng=r))
    t = np.array([0.2, 0.7])
    if up:
        args = [r.standard_normal((2, 3, 2, 2)), t, r.standard_normal((2, 2, 4, 4))]
        assert grad_check(block, args, wrt=[0, 2]) < TOL
    else:
        assert grad_check(block, [r.standard_normal((2, 3, 4, 4)), t], wrt=[0]) < TOL


@pytest.mark.parametrize("stride", [16, 32])
def test_decoder_grad_check(stride):
    r = np.random.default_rng(stride)
    cfg = DecoderConfig(n_d=4, n_f=3, feature_stride=stride)
    dec = _f64(Decoder(cfg, r))
    size = 8 if stride == 16 else 16
    # 8x8 is below one feature cell at stride 16, so use the smallest legal input
    size = max(size, stride)
    x = r.standard_normal((1, 5, size, size))
    feats = r.standard_normal((1, 3, size // stride, size // stride))
    err = grad_check(dec, [x, np.array([0.4]), feats], wrt=[0, 2], max_entries=40, seed=1)
    assert err < TOL


def test_encoder_grad_check():
    r = np.random.default_rng(0)
    enc = _f64(Encoder(3, 5, 16, rng=r))
    assert grad_check(enc, [r.standard_normal((1, 4, 16, 16))], max_entries=40) < TOL


def test_end_to_end_loss_grad_check():
    model = MattingModel(tiny_config(n_d=4, n_f=4), seed=0).astype(np.float64)
    r = np.random.default_rng(3)
    size = 16
    image = r.random((1, 3, size, size))
    trimap = r.choice([0.0, 0.5, 1.0], size=(1, 1, size, size))
    gt = r.random((size, size))
    x_t = r.standard_normal((1, 1, size, size))
    state = {}

    def forward(x, img, tri):
        pred = model.forward(x, np.array([0.5]), img, tri)
        loss, dpred = matting_loss_grad(pred[0, 0], gt, tri[0, 0])
        state["dpred"] = dpred[None, None]
        return np.array(loss.total)

    def backward(w):
        model.backward(w * state["dpred"])

    err = grad_check(model, [x_t, image, trimap], wrt=[], forward=forward, backward=backward, max_entries=25, seed=2)
    assert err < TOL


def test_relative_error_floor():
    assert relative_error(np.array([1e-12]), np.array([0.0])) < 1e-5
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


# architecture --------------------------------------------------------------------------


def test_channel_lists_paper_width():
    cfg = DecoderConfig(n_d=32, feature_stride=16)
    assert cfg.down_list() == (32, 64, 128)
    assert cfg.up_list() == (256, 128, 64, 32)
    dec = Decoder(cfg, np.random.default_rng(0))
    assert len(dec.downs) == 3 and len(dec.ups) == 4
    cfg32 = DecoderConfig(n_d=32, feature_stride=32)
    assert cfg32.down_list() == (32, 64, 128, 128)
    assert cfg32.up_list() == (256, 256, 128, 64, 32)


def test_each_block_has_three_3x3_convs():
    block = Block(4, 8, up=False, rng=np.random.default_rng(0))
    convs = [c for c in block.children.values() if isinstance(c, Conv2d) and c.k == 3]
    assert len(convs) == 3


def test_custom_channel_lists_validated():
    DecoderConfig(n_d=4, down_channels=(2, 3, 4), up_channels=(5, 6, 7, 8))
    with pytest.raises(DomainError):
        DecoderConfig(n_d=4, down_channels=(2, 3), up_channels=(5, 6, 7, 8))
    with pytest.raises(DomainError):
        DecoderConfig(feature_stride=8)
    with pytest.raises(DomainError):
        DecoderConfig(n_d=0)


@pytest.mark.parametrize("stride", [16, 32])
def test_model_output_shape_and_range(stride):
    model = MattingModel(tiny_config(n_d=8, stride=stride), seed=0)
    r = np.random.default_rng(0)
    x = r.standard_normal((2, 1, 64, 64)).astype(np.float32)
    img = r.random((2, 3, 64, 64)).astype(np.float32)
    tri = r.choice([0.0, 0.5, 1.0], size=(2, 1, 64, 64)).astype(np.float32)
    feats = model.encode(img, tri)
    assert feats.shape == (2, 8, 64 // stride, 64 // stride)
    out = model.decode(x, np.array([0.3, 0.8]), img, tri, feats)
    assert out.shape == (2, 1, 64, 64)
    assert out.min() >= 0 and out.max() <= 1


def test_output_in_range_for_extreme_parameters():
    model = MattingModel(tiny_config(), seed=0)
    for _, p in model.named_parameters():
        p *= 50
    x = np.random.default_rng(0).standard_normal((1, 5, 16, 16)).astype(np.float32)
    out = model.decoder.forward(x, np.array([0.5]), np.ones((1, 8, 1, 1), np.float32))
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1


def test_encoder_shape_example():
    enc = Encoder(8, 64, 16, rng=np.random.default_rng(0))
    assert enc.forward(np.zeros((1, 4, 64, 64), np.float32)).shape == (1, 64, 4, 4)
    with pytest.raises(DomainError):
        enc.forward(np.zeros((1, 4, 40, 40), np.float32))


def test_decoder_shape_errors(tiny_model):
    x = np.zeros((1, 5, 16, 16), np.float32)
    with pytest.raises(DomainError):
        tiny_model.decoder.forward(x, np.array([0.5]), np.zeros((1, 8, 2, 2), np.float32))
    with pytest.raises(DomainError):
        tiny_model.decoder.forward(np.zeros((1, 5, 24, 24), np.float32), np.array([0.5]), np.zeros((1, 8, 1, 1), np.float32))
    with pytest.raises(DomainError):
        tiny_model.decoder.forward(np.zeros((1, 4, 16, 16), np.float32), np.array([0.5]), np.zeros((1, 8, 1, 1), np.float32))


def test_parameter_count_grows_with_width():
    counts = [MattingModel(tiny_config(n_d=n), seed=0).parameter_count() for n in (8, 16, 32)]
    assert counts[0] < counts[1] < counts[2]


def test_time_changes_output(tiny_model):
    r = np.random.default_rng(0)
    x = r.standard_normal((1, 5, 16, 16)).astype(np.float32)
    feats = r.standard_normal((1, 8, 1, 1)).astype(np.float32)
    a = tiny_model.decoder.forward(x, np.array([0.1]), feats)
    b = tiny_model.decoder.forward(x, np.array([0.9]), feats)
    assert not np.array_equal(a, b)


def test_zero_head_gives_half(tiny_model):
    for p in tiny_model.decoder.head.params.values():
        p[...] = 0
    x = np.random.default_rng(0).standard_normal((1, 5, 16, 16)).astype(np.float32)
    out = tiny_model.decoder.forward(x, np.array([0.5]), np.zeros((1, 8, 1, 1), np.float32))
    np.testing.assert_array_equal(out, 0.5)


def test_forward_is_bit_reproducible(tiny_model):
    r = np.random.default_rng(0)
    args = (r.standard_normal((1, 1, 16, 16)).astype(np.float32), np.array([0.5]),
            r.random((1, 3, 16, 16)).astype(np.float32), np.full((1, 1, 16, 16), 0.5, np.float32))
    np.testing.assert_array_equal(tiny_model.forward(*args), tiny_model.forward(*args))
    same = MattingModel(tiny_model.config, seed=3)
    np.testing.assert_array_equal(same.forward(*args), tiny_model.forward(*args))


def test_backward_without_forward_raises(tiny_model):
    with pytest.raises(RuntimeError):
        tiny_model.decoder.head.backward(np.zeros((1, 1, 16, 16)))
    with tiny_model.no_grad():
        tiny_model.forward(np.zeros((1, 1, 16, 16), np.float32), np.array([0.5]),
                           np.zeros((1, 3, 16, 16), np.float32), np.zeros((1, 1, 16, 16), np.float32))
    with pytest.raises(RuntimeError):
        tiny_model.backward(np.zeros((1, 1, 16, 16), np.float32))


def test_five_point_stencil_exact_on_quartic():
    # the five-point stencil has no truncation error up to degree 4
    x = np.array([0.7, -1.3])
    loss = lambda: float(np.sum(x**4 - 2 * x**3))  # noqa: E731
    num = numeric_grad(loss, x, 0.1, [0, 1], order=4)
    np.testing.assert_allclose(num, 4 * x**3 - 6 * x**2, rtol=1e-12)
