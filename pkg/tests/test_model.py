import numpy as np
import pytest

from helpers import hinge_margin, max_relative_error, micro_batch
from rmsh.errors import BadMagicError, ContractError, DimensionMismatchError, ShapeMismatchError, TruncatedFileError, ValidationError
from rmsh.model import (
    PARAM_ORDER,
    HashModel,
    ModelDims,
    backward,
    binarize,
    encode,
    forward_classifier,
    forward_head,
    forward_pcn,
    forward_triplets,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

DIMS = ModelDims(6, 5, 7, 8, 3)


def oracle_head(p, prefix, x):
    h = np.tanh(x @ p[prefix + ".w1"] + p[prefix + ".b1"])
    return np.tanh(h @ p[prefix + ".w2"] + p[prefix + ".b2"])


class TestForward:
    def test_head_matches_oracle(self, rng):
        m = init_params(DIMS, 0)
        for k in m.params:
            m.params[k] += 0.1 * rng.standard_normal(m.params[k].shape)
        x = rng.standard_normal((9, 6))
        np.testing.assert_allclose(forward_head(m, "image", x), oracle_head(m.params, "image", x), rtol=0, atol=1e-12)

    def test_pcn_and_classifier(self, rng):
        m = init_params(DIMS, 1)
        z1, z2 = np.tanh(rng.standard_normal((2, 4, 8)))
        W = m.params["pcn.union"]
        expected = np.tanh(np.hstack([z1, z2]) @ W.T)
        np.testing.assert_allclose(forward_pcn(m, "union", z1, z2), expected, atol=1e-12)
        probs = forward_classifier(m, z1)
        np.testing.assert_allclose(probs, 1 / (1 + np.exp(-(z1 @ m.params["cls.w"] + m.params["cls.b"]))), atol=1e-12)

    def test_triplet_forward_layout(self, rng):
        m = init_params(DIMS, 2)
        xi, xt = rng.standard_normal((4, 3, 6)), rng.standard_normal((4, 3, 5))
        out = forward_triplets(m, xi, xt)
        assert out.codes.shape == (4, 2, 5, 8) and out.probs.shape == (4, 2, 5, 3)
        np.testing.assert_allclose(out.codes[:, 1, :3], oracle_head(m.params, "text", xt), atol=1e-12)
        np.testing.assert_allclose(out.codes[:, 0, 4], forward_pcn(m, "intersect", out.codes[:, 0, 0], out.codes[:, 0, 1]), atol=1e-12)

    def test_open_interval(self):
        m = init_params(DIMS, 0)
        m.params["image.w1"][:] = 1e3
        m.params["image.w2"][:] = 1e3
        z = forward_head(m, "image", np.ones((1, 6)))
        assert np.all(np.abs(z) < 1.0)
        m.params["cls.b"][:] = 1e4
        p = forward_classifier(m, z)
        assert np.all((p > 0) & (p < 1))

    def test_errors(self, rng):
        m = init_params(DIMS, 0)
        with pytest.raises(ValidationError):
            forward_head(m, "audio", np.zeros((1, 6)))
        with pytest.raises(ShapeMismatchError):
            forward_head(m, "image", np.zeros((1, 5)))
        with pytest.raises(ContractError):
            backward(m, np.zeros((1, 2, 5, 8)), np.zeros((1, 2, 5, 3)))


class TestInit:
    def test_ranges(self):
        m = init_params(ModelDims(100, 50, 64, 32, 10), 0)
        assert np.abs(m.params["image.w1"]).max() <= 0.1
        assert np.abs(m.params["pcn.union"]).max() <= 1 / np.sqrt(64)
        assert np.abs(m.params["cls.w"]).max() <= 1 / np.sqrt(32)
        for b in ("image.b1", "text.b2", "cls.b"):
            assert not m.params[b].any()

    def test_seeded(self):
        a, b = init_params(DIMS, 5), init_params(DIMS, 5)
        for k in PARAM_ORDER:
            np.testing.assert_array_equal(a.params[k], b.params[k])


class TestGradient:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_finite_differences(self, seed):
        args = micro_batch(seed, n=6, K=6, C=3, hidden=5, dx=4, dy=3)
        model = args[0]
        assert hinge_margin(model, args[1], args[2], args[3], args[5]) > 1e-4
        assert max_relative_error(*args) < 1e-6

    def test_accumulates(self):
        model, xi, xt, lab, uni, w = micro_batch(3, n=5, K=4, C=3, hidden=4, dx=4, dy=3)
        from helpers import analytic_grads

        g1 = analytic_grads(model, xi, xt, lab, uni, w)
        fwd = forward_triplets(model, xi, xt)
        from rmsh.objective import objective

        _, dc, dp = objective(fwd.codes, fwd.probs, lab, uni, w)
        backward(model, dc, dp)  # grads still hold g1
        for k in g1:
            np.testing.assert_allclose(model.grads[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


class TestEncode:
    def test_binarize_zero(self):
        assert binarize(np.array([0.0, -0.0, -1e-9, 2.0])).tolist() == [1, 1, -1, 1]

    def test_encode(self, rng):
        m = init_params(DIMS, 0)
        x = rng.standard_normal((10, 5))
        c = encode(m, "text", x, batch=3)
        assert c.dtype == np.int8
        np.testing.assert_array_equal(c, np.where(forward_head(m, "text", x) >= 0, 1, -1))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = init_params(DIMS, 0)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, m)
        r = load_checkpoint(p, expected=DIMS)
        for k in PARAM_ORDER:
            np.testing.assert_allclose(r.params[k], m.params[k], rtol=1e-7, atol=1e-8)

    def test_errors(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, init_params(DIMS, 0))
        raw = p.read_bytes()
        with pytest.raises(DimensionMismatchError):
            load_checkpoint(p, expected=ModelDims(6, 5, 7, 16, 3))
        p.write_bytes(raw[:-3])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(p)
        p.write_bytes(raw + b"x")
        with pytest.raises(DimensionMismatchError):
            load_checkpoint(p)
        p.write_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(BadMagicError):
            load_checkpoint(p)

    def test_bad_params(self):
        with pytest.raises(ShapeMismatchError):
            HashModel(DIMS, {k: np.zeros(1) for k in PARAM_ORDER})
