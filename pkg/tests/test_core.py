import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poselift.core import (OcclusionMask, PoseSequence2D, PoseSequence3D,
                           SequenceFormatError, SkeletonSpec, default_skeleton,
                           load_mask, load_sequence, save_mask, save_sequence,
                           validate_sequence)


def make_seq2d(t=5, j=17, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-1, 1, size=(t, j, 3)).astype(np.float32)
    data[:, :, 2] = 1.0
    return PoseSequence2D(data)


def make_seq3d(t=5, j=17, seed=0, root=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(0, 200, size=(t, j, 3)).astype(np.float32)
    data[:, root, :] = 0.0
    return PoseSequence3D(data)


class TestSkeletonSpec:
    def test_default_is_valid_tree(self):
        spec = default_skeleton()
        assert spec.n_joints == 17
        assert spec.parents[spec.root_index] == spec.root_index

    def test_rejects_cycle(self):
        with pytest.raises(ValueError, match="cycle|own parent"):
            SkeletonSpec(n_joints=3, parents=(0, 2, 1),
                         joint_names=("a", "b", "c"))

    def test_rejects_single_joint(self):
        with pytest.raises(ValueError):
            SkeletonSpec(n_joints=1, parents=(0,), joint_names=("a",))

    def test_rejects_root_not_self_parent(self):
        with pytest.raises(ValueError):
            SkeletonSpec(n_joints=3, parents=(1, 0, 0),
                         joint_names=("a", "b", "c"))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 7), min_size=8, max_size=8))
    def test_random_parent_arrays_accept_only_trees(self, parents):
        parents = tuple(parents)
        names = tuple(f"j{i}" for i in range(8))
        # ground truth: parents form a tree rooted at 0 iff parent[0] == 0,
        # no other self-loops, and every walk reaches 0
        def is_tree():
            if parents[0] != 0:
                return False
            for j in range(1, 8):
                if parents[j] == j:
                    return False
            for j in range(8):
                cur, hops = j, 0
                while cur != 0:
                    cur = parents[cur]
                    hops += 1
                    if hops > 8:
                        return False
            return True

        if is_tree():
            SkeletonSpec(n_joints=8, root_index=0, parents=parents,
                         joint_names=names)
        else:
            with pytest.raises(ValueError):
                SkeletonSpec(n_joints=8, root_index=0, parents=parents,
                             joint_names=names)


class TestValidateSequence:
    def test_well_formed_sequence_ok(self):
        res = validate_sequence(make_seq2d(), default_skeleton())
        assert res.ok and res.violations == []

    def test_root_off_origin_is_violation(self):
        seq = make_seq3d()
        data = np.array(seq.data)
        data[:, 0, :] = (1.0, 0.0, 0.0)
        res = validate_sequence(PoseSequence3D(data), default_skeleton())
        assert not res.ok
        assert any("root not at origin" in v for v in res.violations)

    def test_confidence_out_of_range_is_violation(self):
        seq = make_seq2d()
        data = np.array(seq.data)
        data[0, 0, 2] = 1.5
        res = validate_sequence(PoseSequence2D(data), default_skeleton())
        assert not res.ok
        assert any("confidence out of range" in v for v in res.violations)

    def test_nan_is_violation(self):
        data = np.array(make_seq2d().data)
        data[1, 2, 0] = np.nan
        res = validate_sequence(PoseSequence2D(data), default_skeleton())
        assert any("non-finite" in v for v in res.violations)

    def test_joint_count_mismatch(self):
        res = validate_sequence(make_seq2d(j=16), default_skeleton())
        assert any("shape mismatch" in v for v in res.violations)


class TestPseqRoundTrip:
    def test_round_trip_2d_bit_exact(self, tmp_path):
        seq = make_seq2d(t=9, j=17, seed=3)
        path = tmp_path / "a.pseq2d"
        save_sequence(seq, path)
        back = load_sequence(path)
        assert isinstance(back, PoseSequence2D)
        assert back.data.tobytes() == seq.data.tobytes()

    def test_round_trip_3d_bit_exact(self, tmp_path):
        seq = make_seq3d(t=4, j=17, seed=5)
        path = tmp_path / "a.pseq3d"
        save_sequence(seq, path)
        back = load_sequence(path)
        assert isinstance(back, PoseSequence3D)
        assert back.data.tobytes() == seq.data.tobytes()

    @settings(max_examples=25, deadline=None)
    @given(t=st.integers(1, 12), j=st.integers(1, 20), seed=st.integers(0, 10 ** 6))
    def test_round_trip_property(self, tmp_path_factory, t, j, seed):
        rng = np.random.default_rng(seed)
        seq = PoseSequence2D(rng.normal(size=(t, j, 3)).astype(np.float32))
        path = tmp_path_factory.mktemp("pseq") / "x.pseq2d"
        save_sequence(seq, path)
        assert load_sequence(path).data.tobytes() == seq.data.tobytes()

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "a.pseq2d"
        save_sequence(make_seq2d(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(SequenceFormatError, match="payload length mismatch"):
            load_sequence(path)

    def test_zero_frames_header_rejected(self, tmp_path):
        path = tmp_path / "a.pseq2d"
        save_sequence(make_seq2d(t=1), path)
        raw = path.read_bytes()
        fixed = raw.replace(b'"frames": 1', b'"frames": 0')
        assert fixed != raw
        path.write_bytes(fixed)
        with pytest.raises(SequenceFormatError, match="t >= 1 violated"):
            load_sequence(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "a.pseq2d"
        save_sequence(make_seq2d(), path)
        raw = bytearray(path.read_bytes())
        raw[0:8] = b"PSEQv999"
        path.write_bytes(bytes(raw))
        with pytest.raises(SequenceFormatError, match="unknown format version"):
            load_sequence(path)

    def test_empty_sequence_rejected_at_construction(self):
        with pytest.raises(ValueError, match="t >= 1"):
            PoseSequence2D(np.zeros((0, 17, 3), dtype=np.float32))


class TestMaskIO:
    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        present = rng.uniform(size=(6, 17)) > 0.4
        mask = OcclusionMask(present=present, seed=42, n_missing_per_frame=7)
        path = tmp_path / "m.mask.json"
        save_mask(mask, path)
        back = load_mask(path)
        assert np.array_equal(back.present, mask.present)
        assert back.seed == 42 and back.n_missing_per_frame == 7
