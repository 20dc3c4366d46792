import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pawpkit.errors import DataError
from pawpkit.tensor import (
    Modality,
    TensorSample,
    fold,
    maxpool_downsample,
    mode_product,
    unfold,
    zscore_normalize,
)


def sample(data, **kwargs):
    return TensorSample(np.asarray(data, dtype=float), **kwargs)


def two_pass_zscore(data):
    # independent oracle: explicit two-pass mean / population variance
    flat = [float(v) for v in np.asarray(data).ravel()]
    mean = sum(flat) / len(flat)
    var = sum((v - mean) ** 2 for v in flat) / len(flat)
    return (np.asarray(data) - mean) / np.sqrt(var)


class TestZscore:
    def test_constant_tensor_maps_to_zeros(self):
        out = zscore_normalize(sample(np.full((2, 3, 4), 5.0)))
        assert np.array_equal(out.data, np.zeros((2, 3, 4)))

    def test_small_tensor_matches_two_pass_oracle(self):
        data = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
        out = zscore_normalize(sample(data))
        expected = two_pass_zscore(data)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        np.testing.assert_allclose(
            out.data.ravel(), [-1.2247448, 0.0, 1.2247448], atol=1e-6
        )

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        once = zscore_normalize(sample(rng.normal(size=(4, 5, 3))))
        twice = zscore_normalize(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-9)

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(11)
        data = rng.normal(3.0, 2.5, size=(6, 6, 5))
        out = zscore_normalize(sample(data))
        np.testing.assert_allclose(out.data, two_pass_zscore(data), atol=1e-10)

    def test_rejects_non_finite_with_subject_in_message(self):
        data = np.ones((2, 2, 2))
        data[0, 0, 0] = np.nan
        with pytest.raises(DataError, match="S123"):
            zscore_normalize(sample(data, subject_id="S123"))

    def test_rejects_single_voxel(self):
        with pytest.raises(DataError):
            zscore_normalize(sample(np.ones((1, 1, 1))))


class TestMaxpool:
    def test_2x2_block(self):
        data = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        out = maxpool_downsample(sample(data), 2)
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 4.0

    def test_512_to_128_shape(self):
        data = np.zeros((512, 512, 2))
        out = maxpool_downsample(sample(data), 4)
        assert out.data.shape == (128, 128, 2)

    def test_constant_tensor_stays_constant(self):
        out = maxpool_downsample(sample(np.full((8, 8, 3), 2.5)), 4)
        assert out.data.shape == (2, 2, 3)
        assert np.all(out.data == 2.5)

    def test_per_phase_max_preserved(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(16, 16, 5))
        out = maxpool_downsample(sample(data), 4)
        np.testing.assert_array_equal(out.data.max(axis=(0, 1)), data.max(axis=(0, 1)))

    def test_rejects_non_divisible(self):
        with pytest.raises(DataError, match="not divisible"):
            maxpool_downsample(sample(np.zeros((6, 6, 1))), 4)

    def test_rejects_bad_factor(self):
        with pytest.raises(DataError):
            maxpool_downsample(sample(np.zeros((6, 6, 1))), 3)


class TestUnfoldFold:
    def test_mode1_convention(self):
        t = np.empty((2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    t[i, j, k] = 4 * i + 2 * j + k
        m = unfold(t, 1)
        np.testing.assert_array_equal(m[0], [0, 1, 2, 3])
        np.testing.assert_array_equal(m[1], [4, 5, 6, 7])

    def test_zero_tensor(self):
        assert not unfold(np.zeros((3, 4, 5)), 2).any()
        assert not fold(np.zeros((4, 15)), 2, (3, 4, 5)).any()

    def test_roundtrip_many_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            t = rng.normal(size=(3, 4, 5))
            for mode in (1, 2, 3):
                assert np.array_equal(fold(unfold(t, mode), mode, t.shape), t)

    @settings(max_examples=100, deadline=None)
    @given(
        st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
        st.integers(1, 3),
        st.integers(0, 2**32 - 1),
    )
    def test_roundtrip_property(self, dims, mode, seed):
        t = np.random.default_rng(seed).normal(size=dims)
        assert np.array_equal(fold(unfold(t, mode), mode, dims), t)

    def test_rejects_bad_mode(self):
        with pytest.raises(DataError):
            unfold(np.zeros((2, 2, 2)), 4)
        with pytest.raises(DataError):
            fold(np.zeros((2, 4)), 0, (2, 2, 2))

    def test_fold_rejects_shape_mismatch(self):
        with pytest.raises(DataError):
            fold(np.zeros((2, 5)), 1, (2, 2, 2))


class TestModeProduct:
    def test_identity_projection(self):
        rng = np.random.default_rng(1)
        t = rng.normal(size=(3, 4, 5))
        for mode, dim in ((1, 3), (2, 4), (3, 5)):
            np.testing.assert_allclose(mode_product(t, np.eye(dim), mode), t)

    def test_rank1_against_outer_product_oracle(self):
        rng = np.random.default_rng(2)
        a, b, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=5)
        t = np.einsum("i,j,k->ijk", a, b, c)
        u = (a / np.linalg.norm(a)).reshape(-1, 1)
        out = mode_product(t, u, 1)
        expected = np.linalg.norm(a) * np.einsum("j,k->jk", b, c)
        assert out.shape == (1, 3, 5)
        np.testing.assert_allclose(out[0], expected, atol=1e-9)

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(4)
        t = rng.normal(size=(4, 5, 6))
        u1 = rng.normal(size=(4, 2))
        u2 = rng.normal(size=(5, 3))
        ab = mode_product(mode_product(t, u1, 1), u2, 2)
        ba = mode_product(mode_product(t, u2, 2), u1, 1)
        np.testing.assert_allclose(ab, ba, atol=1e-9)

    def test_orthonormal_projection_contracts_norm(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            t = rng.normal(size=(5, 6, 4))
            q, _ = np.linalg.qr(rng.normal(size=(6, 3)))
            out = mode_product(t, q, 2)
            assert np.linalg.norm(out) <= np.linalg.norm(t) * (1 + 1e-9)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DataError):
            mode_product(np.zeros((2, 3, 4)), np.zeros((5, 2)), 1)


def test_tensor_sample_validation():
    with pytest.raises(DataError):
        TensorSample(np.zeros((2, 2)))
    s = TensorSample(np.zeros((2, 2, 2)), modality="four_chamber")
    assert s.modality is Modality.FOUR_CHAMBER
