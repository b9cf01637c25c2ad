import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradrev import datasets as ds
from gradrev import formats
from gradrev.errors import IngestionError, ValidationError
from gradrev.pose_synth import DEFAULT_POSE_GRID, PoseSpec


def small_config(**kw):
    base = dict(num_classes=4, samples_per_class_source=1, samples_per_class_target=30, seed=0)
    base.update(kw)
    return ds.ToyShiftConfig(**base)


def test_toy_is_deterministic():
    a = ds.gen_toy_samples(small_config(seed=5))
    b = ds.gen_toy_samples(small_config(seed=5))
    assert [s.sample_id for s in a] == [s.sample_id for s in b]
    assert all(x.input.tobytes() == y.input.tobytes() for x, y in zip(a, b))
    c = ds.gen_toy_samples(small_config(seed=6))
    assert any(x.input.tobytes() != y.input.tobytes() for x, y in zip(a, c))


def test_default_toy_counts():
    bundle = ds.gen_two_domain_toy(ds.ToyShiftConfig(), 0)
    assert len(bundle.S) == 10
    assert len(bundle.T) + len(bundle.test) == 2000
    assert bundle.T_l == []
    assert bundle.num_classes == 10
    assert all(s.input.shape == (ds.TOY_FEATURE_DIM,) for _, s in bundle.roles())


def test_zero_shift_domains_match_in_distribution():
    cfg = ds.ToyShiftConfig(samples_per_class_source=200, shift_rotation=0.0, noise_sigma=0.0,
                            blur_kernel_width=1, seed=3)
    samples = ds.gen_toy_samples(cfg)
    xs = np.array([s.input for s in samples if s.domain == ds.SOURCE])
    xt = np.array([s.input for s in samples if s.domain == ds.TARGET])
    # two-sample z statistic per feature
    z = (xs.mean(0) - xt.mean(0)) / np.sqrt(xs.var(0, ddof=1) / len(xs) + xt.var(0, ddof=1) / len(xt))
    assert np.abs(z).max() < 4.0


def test_shift_moves_target_away_from_source():
    samples = ds.gen_toy_samples(ds.ToyShiftConfig(samples_per_class_source=50, seed=1))
    xs = np.array([s.input for s in samples if s.domain == ds.SOURCE])
    xt = np.array([s.input for s in samples if s.domain == ds.TARGET])
    assert np.linalg.norm(xs.mean(0) - xt.mean(0)) > 0.1


def test_build_splits_counts_and_membership():
    samples = ds.gen_toy_samples(ds.ToyShiftConfig())
    b0 = ds.build_splits(samples, 0, 0.33, seed=0)
    assert b0.T_l == []
    b3 = ds.build_splits(samples, 3, 0.33, seed=0)
    assert len(b3.T_l) == 30
    assert sorted(s.class_label for s in b3.T_l) == sorted(list(range(10)) * 3)
    again = ds.build_splits(samples, 3, 0.33, seed=0)
    assert [s.sample_id for s in again.T_l] == [s.sample_id for s in b3.T_l]
    other = ds.build_splits(samples, 3, 0.33, seed=1)
    assert {s.sample_id for s in other.T_l} != {s.sample_id for s in b3.T_l}
    # each class contributes round(0.33 * 197) = 65 test samples
    assert len(b3.test) == 650 and len(b3.T) == 2000 - 30 - 650
    assert len(b3.target_labeled) == len(b3.T) + len(b3.T_l)


def test_build_splits_insufficient_labels():
    samples = ds.gen_toy_samples(small_config(samples_per_class_target=2))
    with pytest.raises(ValidationError, match="fewer than 3"):
        ds.build_splits(samples, 3)
    with pytest.raises(ValidationError):
        ds.build_splits(samples, -1)
    with pytest.raises(ValidationError):
        ds.build_splits(samples, 0, test_fraction=1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.floats(0.0, 0.9), st.integers(0, 1000))
def test_split_disjointness_and_label_hygiene(k, frac, seed):
    samples = ds.gen_toy_samples(small_config(samples_per_class_target=12, seed=seed % 7))
    b = ds.build_splits(samples, k, frac, seed)
    ids = [{s.sample_id for s in getattr(b, r)} for r in ("T", "T_l", "test")]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert sum(len(i) for i in ids) == 4 * 12
    assert all(s.class_label is None for s in b.T)
    assert all(s.class_label is not None for s in (*b.T_l, *b.test, *b.S))
    assert all(s.domain == ds.TARGET for s in (*b.T, *b.T_l, *b.test))


def test_attach_virtual_views():
    bundle = ds.gen_two_domain_toy(small_config(), 1)
    views = ds.toy_virtual_views(bundle.S)
    out = ds.attach_virtual(bundle, views)
    assert len(out.S_v) == 6 * len(bundle.S)
    assert bundle.S_v == []
    by_id = {s.sample_id: s for s in bundle.S}
    for v in out.S_v:
        parent = by_id[v.parent_id]
        assert v.class_label == parent.class_label
        assert v.origin == ds.VIRTUAL and v.domain == ds.SOURCE
    assert out.S_v[0].sample_id == f"{bundle.S[0].sample_id}@yaw-45_pitch0"
    assert ds.attach_virtual(bundle, {}) is bundle


def test_toy_views_preserve_class_geometry():
    bundle = ds.gen_two_domain_toy(small_config(), 0)
    s = bundle.S[0]
    (zero_view, _), = ds.toy_virtual_views([s], [PoseSpec()])[s.sample_id]
    np.testing.assert_allclose(zero_view, s.input, atol=1e-12)
    views = ds.toy_virtual_views([s], DEFAULT_POSE_GRID)[s.sample_id]
    assert all(np.linalg.norm(v - s.input) > 0 for v, _ in views)


def test_attach_virtual_rejects_non_source_parent():
    bundle = ds.gen_two_domain_toy(small_config(), 1)
    t = bundle.test[0]
    with pytest.raises(ValidationError, match="not a member of S"):
        ds.attach_virtual(bundle, {t.sample_id: [(t.input, PoseSpec(yaw=15.0))]})


def test_sample_validation():
    with pytest.raises(ValidationError):
        ds.Sample("x", np.zeros(2), None, ds.SOURCE)
    with pytest.raises(ValidationError):
        ds.Sample("x", np.zeros(2), 1, "elsewhere")
    bad = ds.SplitBundle(T=[ds.Sample("t", np.zeros(2), 1, ds.TARGET)])
    with pytest.raises(ValidationError):
        bad.validate()


def write_tree(root, layout):
    for rel, value in layout.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        formats.write_pgm(p, np.full((4, 4), value))


def test_load_image_dataset(tmp_path):
    layout = {f"{d}/{c}/img{i}.pgm": (i + 1) / 10 for d in ("source", "target") for c in ("0", "1", "2")
              for i in range(1)}
    layout.update({f"target/{c}/img1.pgm": 0.9 for c in ("0", "1", "2")})
    write_tree(tmp_path, layout)
    samples = ds.load_image_dataset(tmp_path)
    assert len(samples) == 9
    ids = [s.sample_id for s in samples]
    assert ids == sorted(ids)
    assert samples[0].sample_id == "source/0/img0.pgm" and samples[0].class_label == 0
    assert all(s.input.shape == (4, 4) for s in samples)


def test_load_image_dataset_empty_and_errors(tmp_path):
    assert ds.load_image_dataset(tmp_path) == []
    with pytest.raises(IngestionError):
        ds.load_image_dataset(tmp_path / "nope")
    write_tree(tmp_path, {"source/abc/x.pgm": 0.5})
    with pytest.raises(IngestionError, match="not an integer"):
        ds.load_image_dataset(tmp_path)


def test_load_image_dataset_corrupt_file(tmp_path):
    write_tree(tmp_path, {"source/0/a.pgm": 0.5})
    (tmp_path / "source/0/b.pgm").write_bytes(b"JUNK")
    with pytest.raises(IngestionError) as err:
        ds.load_image_dataset(tmp_path)
    assert "b.pgm" in str(err.value)


def test_unlabeled_target_directory(tmp_path):
    write_tree(tmp_path, {"source/0/a.pgm": 0.1, "target/unlabeled/u.pgm": 0.2, "target/0/t.pgm": 0.3})
    samples = ds.load_image_dataset(tmp_path)
    bundle = ds.build_splits(samples, 0, 0.0)
    assert {s.sample_id for s in bundle.T} == {"target/unlabeled/u.pgm", "target/0/t.pgm"}


def test_manifest_and_feature_round_trip(tmp_path):
    bundle = ds.gen_two_domain_toy(small_config(), 2)
    bundle = ds.attach_virtual(bundle, ds.toy_virtual_views(bundle.S))
    everything = [*bundle.S, *bundle.S_v, *bundle.target_labeled, *bundle.test]
    ds.write_feature_samples(everything, tmp_path / "f.csv")
    ds.write_manifest(bundle, tmp_path / "m.csv")
    samples = ds.read_feature_samples(tmp_path / "f.csv")
    rebuilt = ds.bundle_from_manifest(samples, ds.read_manifest(tmp_path / "m.csv"))
    for role in ds.ROLES + ("target_labeled",):
        a, b = getattr(bundle, role), getattr(rebuilt, role)
        assert [s.sample_id for s in a] == [s.sample_id for s in b], role
        assert [s.class_label for s in a] == [s.class_label for s in b], role
        assert all(x.input.tobytes() == y.input.tobytes() for x, y in zip(a, b))


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("sample_id,role\na,elsewhere\n")
    with pytest.raises(IngestionError, match="unknown role"):
        ds.read_manifest(p)
    with pytest.raises(ValidationError, match="unknown sample"):
        ds.bundle_from_manifest([], [("a", "S")])
