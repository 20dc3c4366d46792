import numpy as np
import pytest

from pawpkit.errors import ConfigError, DataError
from pawpkit.fusion import (
    BlockStandardizer,
    FusionSpec,
    FusionStrategy,
    build_model_roster,
    early_fuse,
    late_fuse,
)
from pawpkit.tensor import Modality, TensorSample


def make_pair(rng, shape=(8, 8, 4)):
    sa = TensorSample(rng.normal(size=shape), Modality.SHORT_AXIS, "S1")
    fc = TensorSample(rng.normal(size=shape), Modality.FOUR_CHAMBER, "S1")
    return sa, fc


class TestEarlyFuse:
    def test_shapes_stack_on_mode1(self):
        rng = np.random.default_rng(0)
        sa, fc = make_pair(rng, (64, 64, 20))
        fused = early_fuse(sa, fc)
        assert fused.data.shape == (128, 64, 20)
        assert fused.modality is Modality.FUSED

    def test_block_placement(self):
        rng = np.random.default_rng(1)
        sa, _ = make_pair(rng)
        fc = TensorSample(np.zeros((8, 8, 4)), Modality.FOUR_CHAMBER, "S1")
        fused = early_fuse(sa, fc)
        np.testing.assert_array_equal(fused.data[:8], sa.data)
        assert not fused.data[8:].any()

    def test_slicing_recovers_both_inputs(self):
        rng = np.random.default_rng(2)
        sa, fc = make_pair(rng)
        fused = early_fuse(sa, fc)
        np.testing.assert_array_equal(fused.data[:8], sa.data)
        np.testing.assert_array_equal(fused.data[8:], fc.data)

    def test_shape_mismatch_names_both(self):
        rng = np.random.default_rng(3)
        sa, _ = make_pair(rng)
        fc = TensorSample(np.zeros((4, 8, 4)), Modality.FOUR_CHAMBER)
        with pytest.raises(DataError, match=r"\(8, 8, 4\).*\(4, 8, 4\)"):
            early_fuse(sa, fc)


class TestStandardizer:
    def test_training_rows_become_standard(self):
        rng = np.random.default_rng(4)
        rows = rng.normal(3.0, 2.0, size=(50, 7))
        std = BlockStandardizer.fit(rows)
        out = std.transform(rows)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)

    def test_constant_column_maps_to_zero(self):
        rows = np.column_stack([np.full(10, 4.2), np.arange(10.0)])
        std = BlockStandardizer.fit(rows)
        out = std.transform(rows)
        assert not out[:, 0].any()

    def test_width_mismatch_rejected(self):
        std = BlockStandardizer.fit(np.zeros((5, 3)))
        with pytest.raises(DataError):
            std.transform(np.zeros((5, 4)))


class TestLateFuse:
    def test_lengths_concatenate(self):
        rng = np.random.default_rng(5)
        image_block = rng.normal(size=(20, 210))
        tabular = rng.normal(size=(20, 2))
        stds = [BlockStandardizer.fit(image_block), BlockStandardizer.fit(tabular)]
        out = late_fuse([image_block, tabular], stds)
        assert out.shape == (20, 212)

    def test_single_block_is_standardized_block(self):
        rng = np.random.default_rng(6)
        block = rng.normal(size=(15, 5))
        std = BlockStandardizer.fit(block)
        np.testing.assert_array_equal(late_fuse([block], [std]), std.transform(block))

    def test_permuting_blocks_permutes_coordinates(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(10, 4))
        sa, sb = BlockStandardizer.fit(a), BlockStandardizer.fit(b)
        ab = late_fuse([a, b], [sa, sb])
        ba = late_fuse([b, a], [sb, sa])
        np.testing.assert_array_equal(ab[:, :3], ba[:, 4:])
        np.testing.assert_array_equal(ab[:, 3:], ba[:, :4])

    def test_mismatched_standardizer_count(self):
        with pytest.raises(DataError):
            late_fuse([np.zeros((2, 2))], [])


class TestRoster:
    def test_default_roster_has_eight_families(self):
        roster = build_model_roster()
        assert len(roster) == 8
        names = [spec.name for spec in roster]
        assert names == [
            "ehr", "sa", "fc", "sa_fc_early", "sa_fc_late",
            "sa_ehr_late", "fc_ehr_late", "trimodal_hybrid",
        ]

    def test_trimodal_late_behind_flag(self):
        roster = build_model_roster(include_trimodal_late=True)
        assert [s.name for s in roster][-1] == "trimodal_late"
        assert len(roster) == 9

    def test_restricted_to_single_modality(self):
        roster = build_model_roster(modalities=("four_chamber",))
        assert len(roster) == 1
        assert roster[0].name == "fc"
        assert roster[0].strategy is FusionStrategy.UNIMODAL

    def test_unknown_modality_rejected(self):
        with pytest.raises(ConfigError):
            build_model_roster(modalities=("four_chamber", "ultrasound"))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            FusionSpec("bad", FusionStrategy.EARLY, ("short_axis", "tabular"))
        with pytest.raises(ConfigError):
            FusionSpec("bad", FusionStrategy.HYBRID, ("short_axis", "four_chamber"))
        with pytest.raises(ConfigError):
            FusionSpec("bad", FusionStrategy.UNIMODAL, ("short_axis", "tabular"))
