import numpy as np
import pytest

from stlca import autodiff as ad
from stlca import losses as ls
from stlca.autodiff import Tensor
from stlca.errors import ConfigError


class IdentityExtractor:
    """Single tap returning the input itself; makes hand computation easy."""

    def taps(self, x):
        return [ad.as_tensor(x)]


class DoubledExtractor:
    def __init__(self, inner):
        self.inner = inner

    def taps(self, x):
        t = self.inner.taps(x)
        return t + t


def frames(rng, n=2, c=3, h=8, w=8):
    return [rng.random((c, h, w)) for _ in range(n)]


class TestRecLoss:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(0)
        ys = frames(rng)
        assert ls.rec_loss(ys, ys).data.item() == 0.0

    def test_uniform_offset(self):
        y = [np.zeros((3, 4, 4))]
        p = [np.full((3, 4, 4), 0.1)]
        np.testing.assert_allclose(ls.rec_loss(p, y).data.item(), 0.1)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = frames(rng), frames(rng)
        assert ls.rec_loss(a, b).data.item() == ls.rec_loss(b, a).data.item()

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            ls.rec_loss([np.zeros((3, 4, 4))], [np.zeros((3, 5, 4))])


class TestMreLoss:
    def test_all_known_is_zero(self):
        rng = np.random.default_rng(2)
        p, y = frames(rng, 1), frames(rng, 1)
        masks = [np.ones((8, 8), np.uint8)]
        assert ls.mre_loss(p, y, masks).data.item() == 0.0

    def test_hole_restricted_mean(self):
        y = [np.zeros((1, 4, 4))]
        p = [np.zeros((1, 4, 4))]
        p[0][0, 1, 1] = 0.3
        p[0][0, 0, 0] = 9.9  # error outside the hole must not count
        mask = np.ones((4, 4), np.uint8)
        mask[1, 1] = 0
        mask[1, 2] = 0
        got = ls.mre_loss(p, y, [mask]).data.item()
        np.testing.assert_allclose(got, 0.3 / 2.0)

    def test_all_missing_equals_rec(self):
        rng = np.random.default_rng(3)
        p, y = frames(rng, 1), frames(rng, 1)
        masks = [np.zeros((8, 8), np.uint8)]
        np.testing.assert_allclose(
            ls.mre_loss(p, y, masks).data.item(),
            ls.rec_loss(p, y).data.item(),
        )


class TestPerLoss:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(4)
        ys = frames(rng)
        ext = ls.FixedRandomExtractor()
        assert ls.per_loss(ys, ys, ext).data.item() == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        ext = ls.FixedRandomExtractor()
        assert ls.per_loss(frames(rng), frames(rng), ext).data.item() >= 0.0

    def test_duplicated_taps_unchanged(self):
        rng = np.random.default_rng(6)
        p, y = frames(rng), frames(rng)
        ext = ls.FixedRandomExtractor()
        a = ls.per_loss(p, y, ext).data.item()
        b = ls.per_loss(p, y, DoubledExtractor(ext)).data.item()
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_extractor_is_frozen(self):
        ext = ls.FixedRandomExtractor()
        p = [Tensor(np.random.default_rng(7).random((3, 8, 8)), requires_grad=True)]
        y = [np.random.default_rng(8).random((3, 8, 8))]
        ls.per_loss(p, y, ext).backward()
        assert p[0].grad is not None
        for conv in ext.blocks:
            assert conv.weight.grad is None


class TestStyleLoss:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(9)
        ys = frames(rng)
        assert ls.style_loss(ys, ys, ls.FixedRandomExtractor()).data.item() == 0.0

    def test_gram_of_constant_single_channel(self):
        feat = Tensor(np.full((1, 4, 5), 0.7))
        gram = ls._gram(feat)
        np.testing.assert_allclose(gram.data, [[0.7 * 0.7]])

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(10)
        p, y = frames(rng, 1), frames(rng, 1)
        ext = IdentityExtractor()
        base = ls.style_loss(p, y, ext).data.item()
        perm = rng.permutation(64)
        p2 = [p[0].reshape(3, -1)[:, perm].reshape(3, 8, 8)]
        y2 = [y[0].reshape(3, -1)[:, perm].reshape(3, 8, 8)]
        np.testing.assert_allclose(ls.style_loss(p2, y2, ext).data.item(), base,
                                   rtol=1e-12)


class TestTotalLoss:
    def test_all_zero_on_identical(self):
        rng = np.random.default_rng(11)
        ys = frames(rng)
        masks = [np.ones((8, 8), np.uint8)] * 2
        total, report = ls.total_loss(ys, ys, masks, ls.LossWeights(),
                                      ls.FixedRandomExtractor())
        assert report.total == 0.0
        assert report.rec == report.mre == report.per == report.style == 0.0

    def test_zero_weights_leave_rec(self):
        rng = np.random.default_rng(12)
        p, y = frames(rng), frames(rng)
        masks = [np.ones((8, 8), np.uint8)] * 2
        total, report = ls.total_loss(p, y, masks, ls.LossWeights(0, 0, 0),
                                      ls.FixedRandomExtractor())
        np.testing.assert_allclose(report.total, report.rec)

    def test_hand_computed_toy_case(self):
        # 2x2 single-channel tensors, identity extractor, default weights
        p = [np.array([[[0.6, 0.2], [0.4, 0.8]]])]
        y = [np.array([[[0.5, 0.2], [0.1, 0.9]]])]
        mask = np.array([[1, 1], [0, 1]], np.uint8)
        rec = (0.1 + 0.0 + 0.3 + 0.1) / 4.0
        mre = 0.3 / 1.0
        per = rec  # identity extractor: same L1 mean
        gram_p = (0.6**2 + 0.2**2 + 0.4**2 + 0.8**2) / 4.0
        gram_y = (0.5**2 + 0.2**2 + 0.1**2 + 0.9**2) / 4.0
        style = abs(gram_p - gram_y)
        expected = rec + 2.0 * mre + 0.01 * per + 1.0 * style
        total, report = ls.total_loss(p, y, [mask], ls.LossWeights(),
                                      IdentityExtractor())
        np.testing.assert_allclose(report.total, expected, atol=1e-6)
        np.testing.assert_allclose(
            report.total,
            report.rec + 2 * report.mre + 0.01 * report.per + report.style,
            atol=1e-12,
        )

    def test_default_weights(self):
        w = ls.LossWeights()
        assert (w.mre, w.per, w.style) == (2.0, 0.01, 1.0)


class TestGradients:
    @staticmethod
    def _fd_check(loss_fn, shape=(1, 4, 4), seed=13, rtol=1e-3):
        rng = np.random.default_rng(seed)
        x = rng.random(shape) * 0.8 + 0.1
        y = rng.random(shape) * 0.8 + 0.1
        pred = Tensor(x.copy(), requires_grad=True)
        loss_fn(pred, y).backward()
        eps = 1e-6
        flat = x.ravel()
        for i in range(0, flat.size, 3):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(Tensor(x), y).data.item()
            flat[i] = orig - eps
            lo = loss_fn(Tensor(x), y).data.item()
            flat[i] = orig
            num = (hi - lo) / (2 * eps)
            ana = pred.grad.ravel()[i]
            assert abs(num - ana) <= rtol * max(1.0, abs(num)), (i, num, ana)

    def test_rec_grad(self):
        self._fd_check(lambda p, y: ls.rec_loss([p], [y]))

    def test_mre_grad(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[:2] = 1
        self._fd_check(lambda p, y: ls.mre_loss([p], [y], [mask]))

    def test_per_grad(self):
        ext = ls.FixedRandomExtractor(in_channels=1, seed=1)
        self._fd_check(lambda p, y: ls.per_loss([p], [y], ext), shape=(1, 8, 8))

    def test_style_grad(self):
        ext = ls.FixedRandomExtractor(in_channels=1, seed=2)
        self._fd_check(lambda p, y: ls.style_loss([p], [y], ext), shape=(1, 8, 8))


class TestClassifierExtractor:
    def test_missing_weights_is_config_error(self):
        with pytest.raises(ConfigError):
            ls.ClassifierExtractor("/nonexistent/vgg.npz")
        with pytest.raises(ConfigError):
            ls.build_extractor("pretrained-classifier", weights_path=None)

    def test_loads_and_taps(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {}
        cin = 3
        for name, cout, _ in ls._VGG_LAYERS:
            arrays[f"{name}/weight"] = rng.standard_normal((cout, cin, 3, 3)) * 0.01
            arrays[f"{name}/bias"] = np.zeros(cout)
            cin = cout
        path = tmp_path / "vgg.npz"
        np.savez(path, **arrays)
        ext = ls.ClassifierExtractor(path)
        taps = ext.taps(Tensor(rng.random((3, 32, 32))))
        assert [t.shape[0] for t in taps] == [128, 256, 512]
        assert [t.shape[1] for t in taps] == [16, 8, 4]

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ls.build_extractor("mystery")
