import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from phama.models import (
    DegenerateEmbedding,
    EncoderSpec,
    PhaMaNet,
    ProjectionHead,
    fuse_levels,
    level_shapes,
    load_checkpoint,
    save_checkpoint,
)
from tests.oracles import gradcheck_params


def tiny_spec(**kw):
    base = dict(num_classes=3, input_size=4, width=4, num_blocks=2, fusion_levels=(1, 2), proj_dim=8)
    return EncoderSpec(**(base | kw))


def test_small_convnet_levels():
    shapes = level_shapes(EncoderSpec(input_size=32))
    assert [s[1:] for s in shapes] == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert all(s[0] == 64 for s in shapes)


def test_resnet18_levels():
    spec = EncoderSpec(arch="resnet_style", depth=18, input_size=224, num_classes=7)
    shapes = level_shapes(spec)
    assert [s[1:] for s in shapes] == [(56, 56), (28, 28), (14, 14), (7, 7)]
    assert [s[0] for s in shapes] == [64, 128, 256, 512]


def test_resnet_rejects_depth():
    with pytest.raises(ValueError, match="depth"):
        PhaMaNet(EncoderSpec(arch="resnet_style", depth=20))


def test_wrong_input_size():
    net = PhaMaNet(EncoderSpec(input_size=32))
    with pytest.raises(ValueError, match=r"expected input of shape \(batch, 3, 32, 32\)"):
        net(torch.zeros(1, 3, 28, 28))


def test_zero_classifier_gives_zero_logits():
    net = PhaMaNet(EncoderSpec(input_size=32)).eval()
    torch.nn.init.zeros_(net.classifier.weight)
    torch.nn.init.zeros_(net.classifier.bias)
    assert torch.count_nonzero(net(torch.rand(2, 3, 32, 32))) == 0


def test_eval_mode_deterministic():
    net = PhaMaNet(EncoderSpec(input_size=32)).eval()
    x = torch.rand(3, 3, 32, 32)
    torch.testing.assert_close(net(x), net(x), rtol=0, atol=0)


@pytest.mark.parametrize("levels", [(1, 2), (2, 3), (3, 4), (1, 4)])
def test_fusion_levels_supported(levels):
    net = PhaMaNet(EncoderSpec(input_size=32, width=8, fusion_levels=levels)).eval()
    logits, patches = net.embed(torch.rand(2, 3, 32, 32))
    side = 32 // 2 ** levels[0]
    assert logits.shape == (2, 5) and patches.shape == (2, side * side, 128)


def test_fuse_shape_arithmetic():
    levels = [torch.rand(1, 64, 16, 16), torch.rand(1, 128, 8, 8), torch.rand(1, 256, 4, 4), torch.rand(1, 512, 2, 2)]
    assert fuse_levels(levels, (3, 4)).shape == (1, 768, 4, 4)


def test_fuse_same_size_is_identity():
    a, b = torch.rand(2, 3, 5, 5), torch.rand(2, 4, 5, 5)
    fused = fuse_levels([a, b], (1, 2))
    assert torch.equal(fused[:, 3:], b)
    same = torch.nn.functional.interpolate(b, size=(5, 5), mode="bilinear", align_corners=False)
    torch.testing.assert_close(same, b)


def test_fuse_missing_level():
    with pytest.raises(ValueError, match="not available"):
        fuse_levels([torch.rand(1, 2, 4, 4)] * 2, (2, 3))
    with pytest.raises(ValueError):
        EncoderSpec(fusion_levels=(4, 3))


def test_projection_zero_input_is_degenerate():
    head = ProjectionHead(6, out_dim=4)
    for m in (head.fc1, head.fc2):
        torch.nn.init.zeros_(m.bias)
    with pytest.raises(DegenerateEmbedding, match="degenerate embedding"):
        head(torch.zeros(1, 6, 2, 2))


def test_projection_distinct_inputs_distinct_rows():
    torch.manual_seed(0)
    head = ProjectionHead(4, out_dim=4)
    with torch.no_grad():
        head.fc1.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
        head.fc2.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
        head.fc1.bias.zero_()
        head.fc2.bias.zero_()
    x = torch.eye(4).view(1, 4, 2, 2)
    z = head(x)[0]
    torch.testing.assert_close(z @ z.T, torch.eye(4))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(1, 5), w=st.integers(1, 5))
def test_projection_equivariance_and_unit_rows(seed, h, w):
    torch.manual_seed(seed)
    head = ProjectionHead(6, out_dim=5).double()
    x = torch.randn(2, 6, h, w, dtype=torch.float64)
    perm = torch.randperm(h * w)
    permuted = x.flatten(2)[:, :, perm].view(2, 6, h, w)
    z, zp = head(x), head(permuted)
    torch.testing.assert_close(zp, z[:, perm])
    torch.testing.assert_close(z.norm(dim=-1), torch.ones(2, h * w, dtype=torch.float64), atol=1e-5, rtol=0)


@settings(max_examples=10, deadline=None)
@given(batch=st.integers(1, 4), seed=st.integers(0, 1000))
def test_patch_shape_depends_only_on_spec(batch, seed):
    torch.manual_seed(seed)
    net = PhaMaNet(EncoderSpec(input_size=32, width=8)).eval()
    _, patches = net.embed(torch.rand(batch, 3, 32, 32) * seed / 1000)
    assert patches.shape == (batch, 16, 128)


@pytest.mark.parametrize("batchnorm", [True, False])
def test_logit_and_embedding_gradients(batchnorm):
    torch.manual_seed(1)
    net = PhaMaNet(tiny_spec(batchnorm=batchnorm)).double().train()
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    w_logit = torch.randn(2, 3, dtype=torch.float64)
    w_patch = torch.randn(2, 4, 8, dtype=torch.float64)

    def scalar(model):
        logits, patches = model.embed(x)
        return (logits * w_logit).sum() + (patches * w_patch).sum()

    gradcheck_params(net, scalar)


def test_checkpoint_round_trip(tmp_path):
    net = PhaMaNet(EncoderSpec(input_size=32, width=8, fusion_levels=(2, 3))).eval()
    save_checkpoint(tmp_path / "m.ckpt", net, {"epoch": 3, "history": [1.0]})
    back, manifest = load_checkpoint(tmp_path / "m.ckpt")
    assert manifest["epoch"] == 3 and manifest["version"] == 1
    assert back.spec == net.spec
    x = torch.rand(2, 3, 32, 32)
    torch.testing.assert_close(back(x), net(x), rtol=0, atol=0)


def test_checkpoint_rejects_foreign_archive(tmp_path):
    import zipfile

    with zipfile.ZipFile(tmp_path / "x.ckpt", "w") as zf:
        zf.writestr("manifest.json", '{"format": "other"}')
    with pytest.raises(ValueError, match="not a"):
        load_checkpoint(tmp_path / "x.ckpt")
