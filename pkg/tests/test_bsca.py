import numpy as np
import pytest

from stlca import autodiff as ad
from stlca import flow as fl
from stlca import mask_geometry as mg
from stlca import video_data as vd
from stlca.autodiff import Tensor
from stlca.bsca import BscaModule
from stlca.errors import ConfigError


def make_module(channels=3, factor=1, d=4, seed=0):
    return BscaModule(channels, factor, d, np.random.default_rng(seed))


def identity_refine(module):
    """Disable both refinement blocks so alignment itself can be inspected."""
    module.align_refine = lambda x: x
    module.out_refine = lambda x: x
    return module


def square_mask(h, w, top, left, side):
    mask = np.ones((h, w), np.uint8)
    mask[top : top + side, left : left + side] = 0
    return mask


def rand_feat(rng, c, h, w, requires_grad=False):
    return Tensor(rng.standard_normal((c, h, w)), requires_grad=requires_grad)


class TestAlignReference:
    def test_zero_flow_identity_box(self):
        rng = np.random.default_rng(0)
        mod = identity_refine(make_module())
        mask = square_mask(32, 32, 12, 12, 8)
        ctx = mg.extract_boundary_context(mask, d=4)
        target = rand_feat(rng, 3, 32, 32)
        patch, fallback = mod.align_reference(target, target, ctx, fl.zero_flow(32, 32))
        assert not fallback
        box = mg.bounding_box(ctx, (32, 32))
        expected = target.data[:, box.top : box.bottom, box.left : box.right]
        np.testing.assert_array_equal(patch.data, expected)

    def test_constant_flow_matches_shifted_crop(self):
        rng = np.random.default_rng(1)
        mod = identity_refine(make_module())
        mask = square_mask(32, 32, 10, 10, 8)
        ctx = mg.extract_boundary_context(mask, d=3)
        target = rand_feat(rng, 3, 32, 32)
        ref = Tensor(rng.standard_normal((3, 32, 32)))
        vecs = np.broadcast_to([3.0, 2.0], (32, 32, 2)).copy()
        patch, fallback = mod.align_reference(
            target, ref, ctx, fl.FlowField(vecs, 0, 1)
        )
        assert not fallback
        box = mg.bounding_box(ctx, (32, 32))
        shifted = ref.data[
            :, box.top + 3 : box.bottom + 3, box.left + 2 : box.right + 2
        ]
        np.testing.assert_array_equal(patch.data, shifted)

    def test_fully_out_of_frame_falls_back(self):
        rng = np.random.default_rng(2)
        mod = identity_refine(make_module())
        mask = square_mask(32, 32, 12, 12, 8)
        ctx = mg.extract_boundary_context(mask, d=3)
        target = rand_feat(rng, 3, 32, 32)
        ref = Tensor(rng.standard_normal((3, 32, 32)))
        vecs = np.broadcast_to([500.0, 0.0], (32, 32, 2)).copy()
        patch, fallback = mod.align_reference(target, ref, ctx, fl.FlowField(vecs, 0, 1))
        assert fallback
        box = mg.bounding_box(ctx, (32, 32))
        np.testing.assert_array_equal(
            patch.data, ref.data[:, box.top : box.bottom, box.left : box.right]
        )

    def test_resizes_clamped_box(self):
        # flow pushes half the ring outside: the clamped reference box is
        # smaller, so the crop must be resized onto the target box shape
        rng = np.random.default_rng(3)
        mod = identity_refine(make_module())
        mask = square_mask(32, 32, 2, 2, 6)
        ctx = mg.extract_boundary_context(mask, d=3)
        target = rand_feat(rng, 3, 32, 32)
        ref = Tensor(rng.standard_normal((3, 32, 32)))
        vecs = np.broadcast_to([-4.0, 0.0], (32, 32, 2)).copy()
        patch, fallback = mod.align_reference(target, ref, ctx, fl.FlowField(vecs, 0, 1))
        box = mg.bounding_box(ctx, (32, 32))
        assert not fallback
        assert patch.shape == (3, box.height, box.width)


class TestAttentionAggregate:
    def test_identical_patches_unchanged(self):
        rng = np.random.default_rng(4)
        mod = make_module(channels=4)
        p = rand_feat(rng, 4, 6, 6)
        out = mod.attention_aggregate([p] * 5)
        np.testing.assert_allclose(out.data, p.data, atol=1e-12)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(5)
        mod = make_module(channels=4)
        for _ in range(10):
            patches = [rand_feat(rng, 4, 5, 7) for _ in range(5)]
            a = mod.attention_maps(patches)
            np.testing.assert_allclose(a.data.sum(axis=0), 1.0, atol=1e-5)
            assert a.data.min() >= 0.0 and a.data.max() <= 1.0

    def test_saturated_softmax_selects_patch(self):
        rng = np.random.default_rng(6)
        mod = make_module(channels=4)
        mod.score_conv.weight.data[:] = 0.0
        mod.score_conv.bias.data[:] = 0.0
        mod.score_conv.bias.data[2] = 1e4  # favor the third patch
        patches = [rand_feat(rng, 4, 6, 6) for _ in range(5)]
        out = mod.attention_aggregate(patches)
        np.testing.assert_allclose(out.data, patches[2].data, atol=1e-3)

    def test_uniform_logits_give_mean(self):
        rng = np.random.default_rng(7)
        mod = make_module(channels=4)
        mod.score_conv.weight.data[:] = 0.0
        mod.score_conv.bias.data[:] = 0.0
        patches = [rand_feat(rng, 4, 6, 6) for _ in range(5)]
        out = mod.attention_aggregate(patches)
        mean = np.mean([p.data for p in patches], axis=0)
        np.testing.assert_allclose(out.data, mean, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        mod = make_module(channels=4)
        patches = [rand_feat(rng, 4, 6, 6) for _ in range(4)]
        patches.append(rand_feat(rng, 4, 5, 6))
        with pytest.raises(ConfigError):
            mod.attention_aggregate(patches)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        mod = make_module(channels=2)
        arrays = [rng.standard_normal((2, 4, 4)) for _ in range(5)]
        probe = rng.standard_normal((2, 4, 4))

        def value(arrs):
            patches = [Tensor(a) for a in arrs]
            return float((mod.attention_aggregate(patches).data * probe).sum())

        patches = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = mod.attention_aggregate(patches)
        ad.tsum(out * probe).backward()
        eps = 1e-5
        for j in (0, 3, 4):
            a = arrays[j]
            for idx in [(0, 1, 2), (1, 3, 0)]:
                orig = a[idx]
                a[idx] = orig + eps
                hi = value(arrays)
                a[idx] = orig - eps
                lo = value(arrays)
                a[idx] = orig
                num = (hi - lo) / (2 * eps)
                ana = patches[j].grad[idx]
                assert abs(num - ana) <= 1e-2 * max(1.0, abs(num))


class TestStep:
    def _inputs(self, rng, mask, c=3, h=32, w=32):
        target = rand_feat(rng, c, h, w, requires_grad=True)
        refs = [rand_feat(rng, c, h, w) for _ in range(4)]
        flows = [fl.zero_flow(h, w) for _ in range(4)]
        return target, refs, flows

    def test_no_missing_passthrough(self):
        rng = np.random.default_rng(10)
        mod = make_module()
        mask = np.ones((32, 32), np.uint8)
        target, refs, flows = self._inputs(rng, mask)
        out, diag = mod.step(target, refs, mask, flows)
        assert diag.components == []
        np.testing.assert_array_equal(diag.pre_refine, target.data)
        expected = mod.out_refine(target)
        np.testing.assert_array_equal(out.data, expected.data)

    def test_identical_refs_zero_flow_region_unchanged(self):
        rng = np.random.default_rng(11)
        mod = identity_refine(make_module())
        mask = square_mask(32, 32, 12, 12, 8)
        target = rand_feat(rng, 3, 32, 32)
        out, diag = mod.step(target, [target] * 4, mask, [fl.zero_flow(32, 32)] * 4)
        np.testing.assert_allclose(diag.pre_refine, target.data, atol=1e-12)

    def test_writes_only_inside_boxes(self):
        rng = np.random.default_rng(12)
        mod = make_module()
        mask = square_mask(32, 32, 4, 4, 6)
        mask[20:26, 22:28] = 0  # second component
        target, refs, flows = self._inputs(rng, mask)
        out, diag = mod.step(target, refs, mask, flows)
        assert len(diag.components) == 2
        inside = np.zeros((32, 32), bool)
        for comp in diag.components:
            b = comp.box
            inside[b.top : b.bottom, b.left : b.right] = True
        np.testing.assert_array_equal(
            diag.pre_refine[:, ~inside], target.data[:, ~inside]
        )
        changed = diag.pre_refine[:, inside] != target.data[:, inside]
        assert changed.any()

    def test_all_missing_skips_with_flag(self):
        rng = np.random.default_rng(13)
        mod = make_module()
        mask = np.zeros((32, 32), np.uint8)
        target, refs, flows = self._inputs(rng, mask)
        out, diag = mod.step(target, refs, mask, flows)
        assert diag.degenerate_mask
        assert all(c.skipped for c in diag.components)
        np.testing.assert_array_equal(diag.pre_refine, target.data)

    def test_gradients_reach_everything(self):
        rng = np.random.default_rng(14)
        mod = make_module()
        mask = square_mask(32, 32, 10, 14, 8)
        target = rand_feat(rng, 3, 32, 32, requires_grad=True)
        refs = [rand_feat(rng, 3, 32, 32, requires_grad=True) for _ in range(4)]
        flows = [fl.zero_flow(32, 32) for _ in range(4)]
        out, _ = mod.step(target, refs, mask, flows)
        ad.tsum(ad.tabs(out)).backward()
        assert target.grad is not None and np.isfinite(target.grad).all()
        for r in refs:
            assert r.grad is not None and np.isfinite(r.grad).all()
        for name, p in mod.named_parameters():
            assert p.grad is not None and np.isfinite(p.grad).all(), name


def test_alignment_beats_unaligned_crop_on_moving_scene():
    """With a hole inside a large textured moving shape, the flow-aligned
    reference box matches the target's true content better than a box taken
    at the target's own coordinates."""
    shape = vd.ShapeTrack(
        "rect", np.array([0.5, 0.4, 0.6]), (32, 32), (6, 6), (2, 1),
        shading=(0.22, -0.18),
    )
    motion = vd.SyntheticMotion(64, 64, 10, np.full((64, 64, 3), 0.1), [shape])
    seq = vd.VideoSequence(
        [motion.render(t) for t in range(10)],
        [np.ones((64, 64), np.uint8)] * 10,
        motion=motion,
    )
    provider = fl.SyntheticFlowProvider()
    mod = identity_refine(make_module(channels=3, factor=1, d=4))

    def cos(a, b):
        a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))

    for t, i in [(2, 5), (4, 1), (3, 6)]:
        top, left = shape.top_left(t)
        mask = square_mask(64, 64, top + 12, left + 12, 8)  # hole inside the shape
        ctx = mg.extract_boundary_context(mask, d=4)
        box = mg.bounding_box(ctx, (64, 64))
        target_clean = Tensor(np.transpose(seq.frames[t], (2, 0, 1)))
        ref = Tensor(np.transpose(seq.frames[i], (2, 0, 1)))
        field = fl.get_flow(provider, seq, t, i)
        aligned, fallback = mod.align_reference(target_clean, ref, ctx, field)
        assert not fallback
        true_patch = target_clean.data[:, box.top : box.bottom, box.left : box.right]
        unaligned = ref.data[:, box.top : box.bottom, box.left : box.right]
        assert cos(aligned.data, true_patch) > cos(unaligned, true_patch)
