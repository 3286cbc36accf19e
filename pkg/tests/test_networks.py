import numpy as np
import pytest

from artifact.autodiff import Tensor, no_grad
from artifact.masking import CorruptionConfig, MaskGrid, sample_mask, stack_masks
from artifact.networks import (
    Discriminator,
    Network,
    RepairTrace,
    SpecError,
    build_models,
    checksum,
    decoder_spec,
    discriminator_spec,
    empirical_receptive_field,
    encoder_spec,
    forward_autoencode,
    forward_damage_repair,
    parse_layers,
    receptive_field,
)

PAPER_ENCODER = "(32)3c1-(64)2c2-(128)2c2-(256)2c2-(512)2c2"
PAPER_DECODER = "(256)3rc2-(128)3rc2-(64)3rc2-(32)3rc2-(3)3c1"


@pytest.fixture(scope="module")
def desk():
    enc, dec, rep, disc = build_models("desk-32", np.random.default_rng(0))
    return enc, dec, rep, disc


def _images(n=4, seed=1):
    return np.random.default_rng(seed).random((n, 3, 32, 32)).astype(np.float32)


# --- spec parsing ------------------------------------------------------------
def test_parse_paper_notation():
    layers = parse_layers(PAPER_DECODER)
    assert [l.kind for l in layers] == ["resize-conv"] * 4 + ["conv"]
    assert (layers[0].filters, layers[0].kernel, layers[0].stride) == (256, 3, 2)
    assert "-".join(l.notation() for l in layers) == PAPER_DECODER


def test_parse_rejects_garbage_with_index():
    with pytest.raises(SpecError, match="1"):
        parse_layers("(32)3c1-32x3")


def test_encoder_presets_keep_locality():
    for preset in ("paper-128", "desk-64", "desk-32"):
        layers = encoder_spec(preset).layers
        assert layers[0].stride == 1
        assert all(l.kernel == l.stride for l in layers[1:])


# --- building ----------------------------------------------------------------
def test_paper_encoder_bottleneck_is_8x8():
    enc = Network(encoder_spec("paper-128"), np.random.default_rng(0))
    with no_grad():
        phi = enc(Tensor(np.zeros((1, 3, 128, 128), np.float32)))
    assert phi.shape == (1, 512, 8, 8)


def test_desk32_bottleneck_is_2x2(desk):
    enc = desk[0]
    assert enc.out_hw(32, 32) == (2, 2)
    with no_grad():
        assert enc(Tensor(_images(2))).shape == (2, 128, 2, 2)


def test_same_seed_builds_identical_parameters():
    a = build_models("desk-32", np.random.default_rng(5))
    b = build_models("desk-32", np.random.default_rng(5))
    for ma, mb in zip(a, b):
        assert checksum(ma) == checksum(mb)
        assert ma.num_parameters() == mb.num_parameters()


def test_initialization_conventions(desk):
    enc = desk[0]
    block = enc.blocks[1]
    assert np.all(block.conv.b.data == 0)
    assert np.all(block.norm.bn.gamma.data == 1) and np.all(block.norm.bn.beta.data == 0)
    fan_in = block.conv.w.shape[1] * block.conv.w.shape[2] * block.conv.w.shape[3]
    assert abs(block.conv.w.data.std() - np.sqrt(2.0 / fan_in)) < 0.2 * np.sqrt(2.0 / fan_in)


def test_batchnorm_placement():
    enc, dec, disc = encoder_spec("paper-128"), decoder_spec("paper-128", 512), discriminator_spec("paper-128")
    assert all(l.batchnorm for l in enc.layers)
    assert [l.batchnorm for l in dec.layers] == [True] * 4 + [False]
    assert [l.batchnorm for l in disc.layers] == [False] * 4 + [True]
    assert all(l.activation == "leaky_relu_0.1" for l in enc.layers + dec.layers)


def test_incompatible_spec_rejected():
    spec = encoder_spec("desk-32")
    bad = type(spec)(layers=[type(spec.layers[0])("pool", 8, 2, 2)], preset="desk-32", in_channels=3)
    with pytest.raises(SpecError, match="layer 0"):
        Network(bad, np.random.default_rng(0))


# --- forward paths -----------------------------------------------------------
def test_autoencode_shape_and_finite(desk):
    enc, dec = desk[:2]
    with no_grad():
        out = forward_autoencode(enc, dec, Tensor(_images()))
    assert out.shape == (4, 3, 32, 32)
    assert np.all(np.isfinite(out.data))


def test_autoencode_rejects_wrong_channels(desk):
    with pytest.raises(ValueError):
        forward_autoencode(desk[0], desk[1], Tensor(np.zeros((1, 1, 32, 32), np.float32)))


def test_all_ones_mask_full_mode_is_bit_identical(desk):
    enc, dec, rep, _ = desk
    x = Tensor(_images())
    ones = MaskGrid(np.ones((2, 2), np.uint8), 0.0)
    with no_grad():
        ae = forward_autoencode(enc, dec, x).data
        full = forward_damage_repair(enc, dec, rep, x, [ones] * 4, "full").data
    assert np.array_equal(ae, full)


def test_gating_identity_on_random_masks(desk):
    enc, dec, rep, _ = desk
    rng = np.random.default_rng(3)
    for _ in range(5):
        masks = [sample_mask(2, 2, CorruptionConfig(0.5), rng) for _ in range(4)]
        trace = RepairTrace([], [])
        with no_grad():
            forward_damage_repair(enc, dec, rep, Tensor(_images(seed=int(rng.integers(99)))), masks, "full", trace=trace)
        assert len(trace.corrections) == 5
        for corr, om in zip(trace.corrections, trace.masks):
            kept = np.broadcast_to(om, corr.shape) == 1
            assert np.all(corr[kept] == 0)


def test_ungated_all_ones_differs_from_autoencoder(desk):
    enc, dec, rep, _ = desk
    x = Tensor(_images())
    ones = MaskGrid(np.ones((2, 2), np.uint8), 0.0)
    with no_grad():
        ae = forward_autoencode(enc, dec, x).data
        ungated = forward_damage_repair(enc, dec, rep, x, [ones] * 4, "ungated").data
    assert not np.allclose(ae, ungated)


def test_no_repair_and_double_pass_differ_from_full(desk):
    enc, dec, rep, _ = desk
    x = Tensor(_images())
    masks = [MaskGrid(np.array([[1, 0], [0, 1]], np.uint8), 0.5)] * 4
    with no_grad():
        full = forward_damage_repair(enc, dec, rep, x, masks, "full").data
        none = forward_damage_repair(enc, dec, rep, x, masks, "no-repair").data
        twice = forward_damage_repair(enc, dec, rep, x, masks, "double-pass", rng=np.random.default_rng(0)).data
    assert not np.array_equal(full, none)
    assert not np.array_equal(full, twice)


def test_mask_bottleneck_mismatch(desk):
    enc, dec, rep, _ = desk
    with pytest.raises(ValueError, match="mask dims"):
        forward_damage_repair(enc, dec, rep, Tensor(_images(1)), MaskGrid(np.ones((4, 4), np.uint8), 0.0))


def test_unknown_mode(desk):
    with pytest.raises(ValueError):
        forward_damage_repair(*desk[:3], Tensor(_images(1)), MaskGrid(np.ones((2, 2), np.uint8), 0.0), mode="half")


def test_local_layout_stacks_blocks_at_bottleneck():
    enc, dec, rep, _ = build_models("desk-32", np.random.default_rng(0), layout="local")
    masks = [MaskGrid(np.array([[0, 1], [1, 1]], np.uint8), 0.5)] * 2
    trace = RepairTrace([], [])
    with no_grad():
        forward_damage_repair(enc, dec, rep, Tensor(_images(2)), masks, "full", trace=trace)
    assert [c.shape[2:] for c in trace.corrections] == [(2, 2)] * 5


def test_repair_receives_gradient_in_full_mode(desk):
    from artifact.autodiff import backward, ops

    enc, dec, rep, _ = desk
    masks = [MaskGrid(np.array([[1, 0], [1, 1]], np.uint8), 0.5)] * 2
    rep.blocks[0].conv2.b.grad = None
    out = forward_damage_repair(enc, dec, rep, Tensor(_images(2)), masks, "full", repair_training=True)
    backward(ops.mean(out))
    assert np.any(rep.blocks[0].conv2.b.grad != 0)


# --- discriminator -----------------------------------------------------------
def test_discriminator_heads(desk):
    disc = desk[3]
    with no_grad():
        out = disc(Tensor(_images()), training=False)
    assert out.class_logit.shape == (4,)
    assert out.mask_logits.shape == (4, 2, 2)
    p = out.class_prob
    assert np.all((p > 0) & (p < 1))


def test_discriminator_inference_is_deterministic(desk):
    disc = desk[3]
    x = Tensor(_images())
    with no_grad():
        a, b = disc(x), disc(x)
    assert np.array_equal(a.class_logit.data, b.class_logit.data)
    assert np.array_equal(a.mask_logits.data, b.mask_logits.data)


def test_paper_discriminator_mask_head_is_8x8():
    # small hidden layer keeps the test light; the trunk is the paper-128 one
    disc = Discriminator(discriminator_spec("paper-128"), 128, (8, 8), 16, np.random.default_rng(0))
    with no_grad():
        out = disc(Tensor(np.random.default_rng(0).random((1, 3, 128, 128)).astype(np.float32)))
    assert out.mask_logits.shape == (1, 8, 8)


def test_discriminator_rejects_wrong_size(desk):
    with pytest.raises(ValueError):
        desk[3](Tensor(np.zeros((1, 3, 64, 64), np.float32)))


# --- receptive field ---------------------------------------------------------
def test_receptive_field_examples():
    s = receptive_field(PAPER_ENCODER)
    assert (s.receptive_field, s.effective_stride, s.overlap) == (18, 16, 2)
    s = receptive_field("(8)3c1")
    assert (s.receptive_field, s.effective_stride, s.overlap) == (3, 1, 2)
    s = receptive_field("(32)3c1-(64)3c2-(128)3c2-(256)3c2-(512)3c2")
    assert (s.receptive_field, s.effective_stride, s.overlap) == (33, 16, 17)
    assert str(receptive_field(PAPER_ENCODER)) == "rf=18 stride=16 overlap=2"


def test_receptive_field_rejects_resize_conv():
    with pytest.raises(SpecError):
        receptive_field(PAPER_DECODER)


@pytest.mark.parametrize("kernel,expected", [(2, (18, 16)), (3, (33, 16))])
def test_empirical_receptive_field_matches(kernel, expected):
    enc = Network(encoder_spec("desk-64", kernel=kernel), np.random.default_rng(0))
    emp = empirical_receptive_field(enc, 64, site=(1, 1))
    assert abs(emp.receptive_field - expected[0]) <= 1
    assert abs(emp.effective_stride - expected[1]) <= 1


def test_encoder_locality_single_patch():
    enc = Network(encoder_spec("desk-64"), np.random.default_rng(0))
    x = np.random.default_rng(1).random((1, 3, 64, 64)).astype(np.float32)
    y = x.copy()
    # perturb the stride-aligned patch of bottleneck site (1, 1), interior only
    y[:, :, 17:31, 17:31] += 1.0
    with no_grad():
        a = enc(Tensor(x)).data[0]
        b = enc(Tensor(y)).data[0]
    changed = np.abs(a - b).sum(axis=0) > 0
    assert changed[1, 1]
    assert changed.sum() == 1
    # a pixel on the shared border row falls in two neighboring fields
    z = x.copy()
    z[:, :, 16, 20] += 1.0
    with no_grad():
        c = enc(Tensor(z)).data[0]
    assert set(zip(*np.nonzero(np.abs(a - c).sum(axis=0)))) == {(0, 1), (1, 1)}
