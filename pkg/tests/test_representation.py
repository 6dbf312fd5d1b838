import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anyreid.representation import (
    DecoupledFeature,
    RepresentationError,
    SampleRepresentation,
    build_representation,
    normalize_slots,
)


def feat(modality, d=4, seed=0, scale=1.0):
    rng = np.random.default_rng(seed + hash(modality) % 1000)
    return DecoupledFeature(
        modality, scale * rng.normal(size=d), scale * rng.normal(size=d)
    )


class TestBuildRepresentation:
    def test_mask_missing_tir(self):
        rep = build_representation([feat("R"), feat("N")], {"R", "N"})
        assert rep.mask.tolist() == [1, 1, 0, 1, 1, 0]

    def test_mask_and_layout_rgb_only(self):
        f = feat("R")
        rep = build_representation([f], {"R"})
        assert rep.mask.tolist() == [1, 0, 0, 1, 0, 0]
        np.testing.assert_array_equal(rep.slots[0], f.specific)
        np.testing.assert_array_equal(rep.slots[3], f.shared)
        assert np.all(rep.slots[[1, 2, 4, 5]] == 0.0)

    def test_mask_all_present(self):
        rep = build_representation(
            [feat("R"), feat("N"), feat("T")], {"R", "N", "T"}
        )
        assert rep.mask.tolist() == [1, 1, 1, 1, 1, 1]

    def test_empty_modality_set_rejected(self):
        with pytest.raises(RepresentationError, match="no modality"):
            build_representation([], set())

    def test_duplicate_modality_rejected(self):
        with pytest.raises(RepresentationError, match="duplicate"):
            build_representation([feat("R"), feat("R", seed=1)], {"R"})

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(RepresentationError, match="dimension"):
            build_representation([feat("R", d=4), feat("N", d=5)], {"R", "N"})

    def test_coverage_mismatch_rejected(self):
        with pytest.raises(RepresentationError):
            build_representation([feat("R")], {"R", "N"})

    @given(
        present=st.sets(st.sampled_from(["R", "N", "T"]), min_size=1),
        d=st.integers(min_value=1, max_value=8),
        seed=st.integers(min_value=0, max_value=100),
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip_and_mask_pairing(self, present, d, seed):
        feats = [feat(m, d=d, seed=seed) for m in sorted(present)]
        rep = build_representation(feats, present)
        assert set(rep.present()) == present
        for f in feats:
            back = rep.feature(f.modality)
            np.testing.assert_array_equal(back.specific, f.specific)
            np.testing.assert_array_equal(back.shared, f.shared)
        for i in range(3):
            assert rep.mask[i] == rep.mask[3 + i]


class TestNormalizeSlots:
    def test_three_four_five(self):
        rep = build_representation(
            [DecoupledFeature("R", np.array([3.0, 4.0]), np.array([0.0, 2.0]))], {"R"}
        )
        normed = normalize_slots(rep)
        np.testing.assert_allclose(normed.slots[0], [0.6, 0.8])
        np.testing.assert_allclose(normed.slots[3], [0.0, 1.0])
        assert normed.normalized

    def test_idempotent(self):
        rep = build_representation([feat("R"), feat("T", seed=3)], {"R", "T"})
        once = normalize_slots(rep)
        twice = normalize_slots(once)
        assert np.abs(twice.slots - once.slots).max() <= 1e-12

    def test_already_unit_slot_unchanged(self):
        u = np.zeros(4)
        u[1] = 1.0
        rep = build_representation([DecoupledFeature("N", u, u.copy())], {"N"})
        normed = normalize_slots(rep)
        np.testing.assert_array_equal(normed.slots[1], u)

    def test_masked_out_slots_stay_zero(self):
        rep = build_representation([feat("N")], {"N"})
        normed = normalize_slots(rep)
        assert np.all(normed.slots[[0, 2, 3, 5]] == 0.0)

    def test_degenerate_feature_rejected(self):
        tiny = DecoupledFeature("R", np.full(3, 1e-14), np.ones(3))
        rep = build_representation([tiny], {"R"})
        with pytest.raises(RepresentationError, match="degenerate feature"):
            normalize_slots(rep)


class TestInvariants:
    def test_slots_immutable(self):
        rep = build_representation([feat("R")], {"R"})
        with pytest.raises(ValueError):
            rep.slots[0, 0] = 1.0
        with pytest.raises(ValueError):
            rep.mask[0] = 0

    def test_unpaired_mask_rejected(self):
        slots = np.zeros((6, 2))
        slots[0] = [1.0, 0.0]
        mask = np.array([1, 0, 0, 0, 0, 0], dtype=np.uint8)
        with pytest.raises(RepresentationError, match="pairing"):
            SampleRepresentation(slots, mask)

    def test_nonzero_masked_slot_rejected(self):
        slots = np.ones((6, 2))
        mask = np.array([1, 1, 0, 1, 1, 0], dtype=np.uint8)
        with pytest.raises(RepresentationError, match="zero"):
            SampleRepresentation(slots, mask)

    def test_all_absent_rejected(self):
        with pytest.raises(RepresentationError, match="no modality"):
            SampleRepresentation(np.zeros((6, 2)), np.zeros(6, dtype=np.uint8))

    def test_normalized_flag_checked(self):
        slots = np.zeros((6, 2))
        slots[0] = [3.0, 4.0]
        slots[3] = [1.0, 0.0]
        mask = np.array([1, 0, 0, 1, 0, 0], dtype=np.uint8)
        with pytest.raises(RepresentationError, match="not unit"):
            SampleRepresentation(slots, mask, normalized=True)
