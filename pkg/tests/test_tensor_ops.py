"""SVD, truncation, unfold/fold, and n-mode product checks.

Reconstruction and orthonormality are verified by direct multiplication;
none of the oracles here call back into the code under test.
"""

import numpy as np
import pytest

from tuckertrain import tensor_ops
from tuckertrain.errors import DomainError, RankError, ShapeError
from tuckertrain.tensor_ops import SvdResult, fold, mode_multiply, svd, truncate


def ortho_defect(m):
    """max |M^T M - I| computed in float64."""
    m = m.astype(np.float64)
    return np.max(np.abs(m.T @ m - np.eye(m.shape[1])))


def recon_error(a, r: SvdResult):
    a = np.asarray(a, dtype=np.float64)
    approx = (r.u.astype(np.float64) * r.s.astype(np.float64)) @ r.v.astype(np.float64).T
    return np.linalg.norm(a - approx) / max(np.linalg.norm(a), 1e-30)


class TestSvd:
    def test_identity(self):
        r = svd(np.eye(3, dtype=np.float32))
        np.testing.assert_allclose(r.s, [1.0, 1.0, 1.0], atol=1e-6)

    def test_diagonal(self):
        r = svd(np.diag([3.0, 2.0, 1.0]).astype(np.float32))
        np.testing.assert_allclose(r.s, [3.0, 2.0, 1.0], atol=1e-6)
        # sign convention makes u and v exactly the identity here
        np.testing.assert_allclose(r.u, np.eye(3), atol=1e-6)
        np.testing.assert_allclose(r.v, np.eye(3), atol=1e-6)

    def test_random_50x30(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((50, 30)).astype(np.float32)
        r = svd(a)
        assert recon_error(a, r) <= 1e-6
        assert ortho_defect(r.u) <= 1e-6
        assert ortho_defect(r.v) <= 1e-6

    def test_nonincreasing_and_nonnegative(self):
        rng = np.random.default_rng(3)
        r = svd(rng.standard_normal((12, 20)))
        assert np.all(r.s >= 0)
        assert np.all(np.diff(r.s) <= 0)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((17, 9))
        r1, r2 = svd(a), svd(a)
        assert np.array_equal(r1.u, r2.u)
        assert np.array_equal(r1.s, r2.s)
        assert np.array_equal(r1.v, r2.v)

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        r = svd(rng.standard_normal((10, 10)))
        for j in range(10):
            i = int(np.argmax(np.abs(r.u[:, j])))
            assert r.u[i, j] > 0

    def test_zero_matrix_orthonormal_basis(self):
        r = svd(np.zeros((4, 3), dtype=np.float32))
        np.testing.assert_allclose(r.s, 0.0)
        assert ortho_defect(r.u) <= 1e-6
        assert ortho_defect(r.v) <= 1e-6

    def test_rank_deficient(self):
        u = np.arange(1, 7, dtype=np.float64)
        v = np.array([2.0, -1.0, 0.5, 3.0])
        a = np.outer(u, v)
        r = svd(a)
        assert recon_error(a, r) <= 1e-6
        np.testing.assert_allclose(r.s[1:], 0.0, atol=1e-5 * r.s[0])

    def test_rejects_nonfinite(self):
        a = np.ones((3, 3))
        a[1, 1] = np.nan
        with pytest.raises(DomainError):
            svd(a)

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            svd(np.zeros((0, 3)))

    def test_property_sweep_varied_shapes(self):
        # >= 100 random matrices covering m<n, m>n, m=n
        rng = np.random.default_rng(2024)
        shapes = []
        for _ in range(36):
            shapes.append((int(rng.integers(1, 40)), int(rng.integers(1, 40))))
        shapes += [(1, 1), (1, 7), (7, 1), (64, 64), (5, 48), (48, 5)]
        count = 0
        for m, n in shapes:
            for scale in (1.0, 1e-3, 40.0):
                a = (scale * rng.standard_normal((m, n))).astype(np.float32)
                r = svd(a)
                assert np.all(np.diff(r.s) <= 0)
                assert np.all(r.s >= 0)
                assert ortho_defect(r.u) <= 1e-6
                assert ortho_defect(r.v) <= 1e-6
                assert recon_error(a, r) <= 1e-6
                count += 1
        assert count >= 100


class TestTruncate:
    def test_diag_residual(self):
        # diag(3,2,1) truncated to rank 1: residual^2 = 2^2 + 1^2 = 5
        a = np.diag([3.0, 2.0, 1.0])
        t = truncate(svd(a), 1)
        approx = (t.u.astype(np.float64) * t.s) @ t.v.T.astype(np.float64)
        np.testing.assert_allclose(approx, np.diag([3.0, 0.0, 0.0]), atol=1e-6)
        assert np.linalg.norm(a - approx) ** 2 == pytest.approx(5.0, rel=1e-5)

    def test_full_rank_is_identity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 9)).astype(np.float32)
        t = truncate(svd(a), 6)
        assert recon_error(a, t) <= 1e-6

    def test_exactly_low_rank(self):
        rng = np.random.default_rng(2)
        a = np.outer(rng.standard_normal(8), rng.standard_normal(5))
        t = truncate(svd(a), 1)
        assert recon_error(a, t) <= 1e-6

    def test_eckart_young_tail_sum(self):
        # residual^2 of a rank-k truncation equals the tail energy sum_{i>k} s_i^2
        rng = np.random.default_rng(9)
        a = rng.standard_normal((14, 10))
        r = svd(a)
        s64 = r.s.astype(np.float64)
        for k in range(1, 10):
            t = truncate(r, k)
            approx = (t.u.astype(np.float64) * t.s) @ t.v.T.astype(np.float64)
            resid2 = np.linalg.norm(a - approx) ** 2
            tail = float(np.sum(s64[k:] ** 2))
            assert resid2 == pytest.approx(tail, rel=1e-5, abs=1e-9)

    @pytest.mark.parametrize("k", [0, 4])
    def test_invalid_rank(self, k):
        r = svd(np.eye(3))
        with pytest.raises(RankError):
            truncate(r, k)


class TestUnfoldFold:
    def test_scalar_tensor(self):
        t = np.array([[[[5.0]]]])
        assert tensor_ops.unfold(t, 0).shape == (1, 1)
        assert tensor_ops.unfold(t, 0)[0, 0] == 5.0

    def test_mode0_enumeration(self):
        # t[a,b,0,0] = 10a + b; oracle is index enumeration under the stated
        # ordering (remaining modes ascending, last fastest)
        t = np.zeros((2, 3, 1, 1))
        for a in range(2):
            for b in range(3):
                t[a, b, 0, 0] = 10 * a + b
        np.testing.assert_array_equal(
            tensor_ops.unfold(t, 0), [[0.0, 1.0, 2.0], [10.0, 11.0, 12.0]]
        )

    def test_fold_reproduces_mode0_example(self):
        m = np.array([[0.0, 1.0, 2.0], [10.0, 11.0, 12.0]])
        t = fold(m, 0, (2, 3, 1, 1))
        for a in range(2):
            for b in range(3):
                assert t[a, b, 0, 0] == 10 * a + b

    def test_roundtrip_all_modes_exact(self):
        rng = np.random.default_rng(4)
        t = rng.standard_normal((4, 3, 2, 2)).astype(np.float32)
        for mode in range(4):
            back = fold(tensor_ops.unfold(t, mode), mode, t.shape)
            assert np.array_equal(back, t)

    def test_invalid_mode(self):
        t = np.zeros((2, 2, 2, 2))
        with pytest.raises(ShapeError):
            tensor_ops.unfold(t, 4)

    def test_fold_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fold(np.zeros((2, 5)), 0, (2, 3, 1, 1))


class TestModeMultiply:
    def test_identity_factor(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((3, 4, 2, 2))
        out = mode_multiply(t, np.eye(4), 1)
        np.testing.assert_allclose(out, t, atol=1e-12)

    def test_ones_row_sums_mode(self):
        # all-ones 1xn factor sums the tensor over that mode (direct oracle)
        rng = np.random.default_rng(8)
        t = rng.standard_normal((3, 4, 2, 5))
        for mode in range(4):
            out = mode_multiply(t, np.ones((1, t.shape[mode])), mode)
            np.testing.assert_allclose(
                np.squeeze(out, axis=mode), t.sum(axis=mode), atol=1e-12
            )

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(10)
        t = rng.standard_normal((5, 4, 3, 3))
        a = rng.standard_normal((2, 5))
        b = rng.standard_normal((6, 4))
        left = mode_multiply(mode_multiply(t, a, 0), b, 1)
        right = mode_multiply(mode_multiply(t, b, 1), a, 0)
        np.testing.assert_allclose(left, right, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            mode_multiply(np.zeros((2, 3, 1, 1)), np.zeros((2, 4)), 0)
