"""Samples, the S / S_v / T / T_l / test split algebra, and data sources.

Two sources feed the same :class:`SplitBundle`:

* a directory of PGM images laid out as ``<root>/<domain>/<class_id>/*.pgm``
  (unlabeled target images under ``<root>/target/unlabeled/``);
* a seeded two-domain toy whose target domain is a rotated, noisy and
  smoothed copy of the source domain.

Toy model
---------
Each class owns a fixed 2-D latent centre (distinct radii, golden-angle
spacing).  A sample draws a latent point around its centre and is lifted
to ``TOY_FEATURE_DIM`` features through fixed random cosine features.
Target samples rotate the latent point about the origin by
``shift_rotation`` degrees before lifting, then get additive Gaussian noise
and a moving-average smoothing across neighbouring features.  Rotating the
latent point is the toy's "pose" axis: :func:`toy_virtual_views` renders a
source sample at the yaw angles of a pose grid the same way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import formats
from .errors import IngestionError, ValidationError
from .pose_synth import DEFAULT_POSE_GRID, PoseSpec

SOURCE, TARGET = "source", "target"
REAL, VIRTUAL = "real", "virtual"
ROLES = ("S", "S_v", "T", "T_l", "test")

TOY_FEATURE_DIM = 32
TOY_CLUSTER_STD = 0.08
TOY_FREQUENCY_SCALE = 1.0
TOY_MAP_SEED = 20170905  # fixes the latent-to-feature map independently of the data seed


@dataclass(frozen=True, eq=False)
class Sample:
    sample_id: str
    input: np.ndarray
    class_label: int | None
    domain: str
    origin: str = REAL
    parent_id: str | None = None
    latent: np.ndarray | None = None

    def __post_init__(self):
        if self.domain not in (SOURCE, TARGET):
            raise ValidationError(f"{self.sample_id}: domain must be 'source' or 'target'")
        if self.origin not in (REAL, VIRTUAL):
            raise ValidationError(f"{self.sample_id}: origin must be 'real' or 'virtual'")
        if self.domain == SOURCE and self.class_label is None:
            raise ValidationError(f"{self.sample_id}: source samples need a class label")

    def unlabeled(self) -> Sample:
        return replace(self, class_label=None)


@dataclass
class SplitBundle:
    S: list[Sample] = field(default_factory=list)
    S_v: list[Sample] = field(default_factory=list)
    T: list[Sample] = field(default_factory=list)
    T_l: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
    # T_l plus T with labels kept; only the train-on-target reference model reads it
    target_labeled: list[Sample] = field(default_factory=list)

    def validate(self) -> None:
        for s in self.S_v:
            if s.origin != VIRTUAL or s.domain != SOURCE:
                raise ValidationError(f"{s.sample_id}: S_v members must be virtual source samples")
        for s in self.T:
            if s.class_label is not None:
                raise ValidationError(f"{s.sample_id}: T must not carry labels")
        ids = [{s.sample_id for s in getattr(self, r)} for r in ("T", "T_l", "test")]
        if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
            raise ValidationError("T, T_l and test must be disjoint")

    def roles(self) -> Iterable[tuple[str, Sample]]:
        for role in ROLES:
            for s in getattr(self, role):
                yield role, s

    @property
    def num_classes(self) -> int:
        labels = [s.class_label for s in (*self.S, *self.S_v, *self.T_l, *self.test, *self.target_labeled)
                  if s.class_label is not None]
        return max(labels) + 1 if labels else 0


@dataclass(frozen=True)
class ToyShiftConfig:
    num_classes: int = 10
    samples_per_class_source: int = 1
    samples_per_class_target: int = 200
    shift_rotation: float = 35.0
    noise_sigma: float = 0.3
    blur_kernel_width: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.num_classes, self.samples_per_class_source, self.samples_per_class_target,
               self.blur_kernel_width) < 1:
            raise ValidationError("counts and blur_kernel_width must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")


def _class_centres(num_classes: int) -> np.ndarray:
    golden = math.pi * (3.0 - math.sqrt(5.0))
    k = np.arange(num_classes)
    radius = 1.0 + 0.35 * k
    return np.column_stack([radius * np.cos(golden * k), radius * np.sin(golden * k)])


def _feature_map() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(TOY_MAP_SEED)
    w = rng.normal(0.0, TOY_FREQUENCY_SCALE, size=(2, TOY_FEATURE_DIM))
    b = rng.uniform(0.0, 2.0 * math.pi, size=TOY_FEATURE_DIM)
    return w, b


def _rotate2d(z: np.ndarray, degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return z @ rot.T


def lift_latent(z: np.ndarray) -> np.ndarray:
    """Clean toy features for latent points ``z`` (rows)."""
    w, b = _feature_map()
    return np.cos(np.atleast_2d(z) @ w + b)


def corrupt_target(features: np.ndarray, config: ToyShiftConfig, rng: np.random.Generator) -> np.ndarray:
    x = features + rng.normal(0.0, 1.0, size=features.shape) * config.noise_sigma
    if config.blur_kernel_width > 1:
        x = uniform_filter1d(x, size=config.blur_kernel_width, axis=1, mode="nearest")
    return x


def gen_toy_samples(config: ToyShiftConfig) -> list[Sample]:
    """Every toy sample with its true label (source first, then target)."""
    rng = np.random.default_rng(config.seed)
    centres = _class_centres(config.num_classes)
    out: list[Sample] = []
    for c in range(config.num_classes):
        z = centres[c] + rng.normal(0.0, TOY_CLUSTER_STD, size=(config.samples_per_class_source, 2))
        for i, (zi, xi) in enumerate(zip(z, lift_latent(z))):
            out.append(Sample(f"s{c:03d}_{i:04d}", xi, c, SOURCE, latent=zi))
    for c in range(config.num_classes):
        z = centres[c] + rng.normal(0.0, TOY_CLUSTER_STD, size=(config.samples_per_class_target, 2))
        z = _rotate2d(z, config.shift_rotation)
        x = corrupt_target(lift_latent(z), config, rng)
        for i, (zi, xi) in enumerate(zip(z, x)):
            out.append(Sample(f"t{c:03d}_{i:04d}", xi, c, TARGET, latent=zi))
    return out


def gen_two_domain_toy(config: ToyShiftConfig, k_labels_per_class: int = 0,
                       test_fraction: float = 0.33) -> SplitBundle:
    return build_splits(gen_toy_samples(config), k_labels_per_class, test_fraction, config.seed)


def toy_virtual_views(samples: Sequence[Sample], poses: Sequence[PoseSpec] = DEFAULT_POSE_GRID) -> dict:
    """Toy counterpart of pose synthesis: re-lift each latent rotated by every yaw.

    Returns ``{parent_id: [(input, pose), ...]}`` ready for :func:`attach_virtual`.
    """
    views: dict[str, list] = {}
    for s in samples:
        if s.latent is None:
            raise ValidationError(f"{s.sample_id}: toy views need the latent point")
        views[s.sample_id] = [(lift_latent(_rotate2d(s.latent[None, :], p.yaw))[0], p) for p in poses]
    return views


def _pose_tag(pose: PoseSpec) -> str:
    tag = f"yaw{pose.yaw:g}_pitch{pose.pitch:g}"
    return tag + (f"_roll{pose.roll:g}" if pose.roll else "")


def attach_virtual(bundle: SplitBundle, views: Mapping[str, Iterable]) -> SplitBundle:
    """Add virtual views to ``S_v``.

    ``views`` maps an ``S`` sample id to its views; a view is either an
    ``(input, pose)`` pair or an object with ``image`` and ``pose`` attributes
    (as produced by :func:`gradrev.pose_synth.synthesize_views`).
    """
    by_id = {s.sample_id: s for s in bundle.S}
    added = []
    for parent_id, items in views.items():
        parent = by_id.get(parent_id)
        if parent is None:
            raise ValidationError(f"view parent {parent_id!r} is not a member of S")
        for item in items:
            data, pose = (item.image, item.pose) if hasattr(item, "image") else item
            added.append(Sample(f"{parent_id}@{_pose_tag(pose)}", np.asarray(data, dtype=np.float64),
                                parent.class_label, SOURCE, VIRTUAL, parent_id))
    if not added:
        return bundle
    out = replace(bundle, S_v=bundle.S_v + added)
    out.validate()
    return out


def build_splits(samples: Sequence[Sample], k_labels_per_class: int = 3, test_fraction: float = 0.33,
                 seed: int = 0) -> SplitBundle:
    """Partition samples into the experiment sets.

    Per class, ``k`` labeled target samples go to ``T_l`` (seeded shuffle);
    of the rest, ``round(test_fraction * n)`` go to ``test`` and the others to
    ``T`` with labels removed.  Unlabeled target samples always join ``T``.
    """
    if k_labels_per_class < 0:
        raise ValidationError("k_labels_per_class must be >= 0")
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError("test_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    bundle = SplitBundle()
    pools: dict[int, list[int]] = {}
    unlabeled: list[Sample] = []
    for i, s in enumerate(samples):
        if s.domain == SOURCE:
            (bundle.S_v if s.origin == VIRTUAL else bundle.S).append(s)
        elif s.class_label is None:
            unlabeled.append(s)
        else:
            pools.setdefault(s.class_label, []).append(i)
    short = {c: len(idx) for c, idx in pools.items() if len(idx) < k_labels_per_class}
    if short:
        raise ValidationError(f"fewer than {k_labels_per_class} labeled target samples for classes {short}")
    role_of: dict[int, str] = {}
    for c in sorted(pools):
        idx = np.array(pools[c])
        perm = idx[rng.permutation(len(idx))]
        rest = perm[k_labels_per_class:]
        n_test = int(round(test_fraction * len(rest)))
        role_of.update({int(i): "T_l" for i in perm[:k_labels_per_class]})
        role_of.update({int(i): "test" for i in rest[:n_test]})
        role_of.update({int(i): "T" for i in rest[n_test:]})
    labeled_t = []
    for i in sorted(role_of):
        s, role = samples[i], role_of[i]
        if role == "T":
            bundle.T.append(s.unlabeled())
            labeled_t.append(s)
        else:
            getattr(bundle, role).append(s)
    bundle.T.extend(unlabeled)
    bundle.target_labeled = labeled_t + bundle.T_l
    bundle.validate()
    return bundle


def load_image_dataset(root_dir) -> list[Sample]:
    """PGM samples under ``root/<domain>/<class_id>/`` in lexicographic path order."""
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestionError(root, "not a directory")
    samples = []
    for path in sorted(root.rglob("*.pgm"), key=lambda p: p.relative_to(root).as_posix()):
        rel = path.relative_to(root)
        if len(rel.parts) != 3:
            raise IngestionError(path, "expected <domain>/<class_id>/<name>.pgm")
        domain, cls, _ = rel.parts
        if domain not in (SOURCE, TARGET):
            raise IngestionError(path, f"unknown domain directory {domain!r}")
        if domain == TARGET and cls == "unlabeled":
            label = None
        else:
            try:
                label = int(cls)
            except ValueError:
                raise IngestionError(path, f"class directory {cls!r} is not an integer") from None
            if label < 0:
                raise IngestionError(path, "class ids must be non-negative")
        samples.append(Sample(rel.as_posix(), formats.read_pgm(path), label, domain))
    return samples


def write_manifest(bundle: SplitBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "role"])
        for role, s in bundle.roles():
            writer.writerow([s.sample_id, role])


def read_manifest(path) -> list[tuple[str, str]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestionError(path, f"unreadable: {exc}") from exc
    out = []
    for row in rows:
        if row.get("role") not in ROLES:
            raise IngestionError(path, f"unknown role {row.get('role')!r}")
        out.append((row["sample_id"], row["role"]))
    return out


def write_feature_samples(samples: Iterable[Sample], path) -> None:
    """Vector samples (true labels kept) as CSV with ``repr`` floats for exact round trips."""
    samples = list(samples)
    dim = len(samples[0].input.reshape(-1)) if samples else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "domain", "origin", "class_label", "parent_id"]
                        + [f"f{i}" for i in range(dim)])
        for s in samples:
            writer.writerow([s.sample_id, s.domain, s.origin,
                             "" if s.class_label is None else s.class_label, s.parent_id or ""]
                            + [repr(float(v)) for v in s.input.reshape(-1)])


def read_feature_samples(path) -> list[Sample]:
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                label = int(row[3]) if row[3] else None
                out.append(Sample(row[0], np.array([float(v) for v in row[5:]]), label, row[1], row[2],
                                  row[4] or None))
    except (OSError, ValueError, IndexError) as exc:
        raise IngestionError(path, f"malformed feature file: {exc}") from exc
    return out


def bundle_from_manifest(samples: Sequence[Sample], manifest: Sequence[tuple[str, str]]) -> SplitBundle:
    """Rebuild a bundle from labeled samples plus a role manifest (T labels are stripped)."""
    by_id = {s.sample_id: s for s in samples}
    bundle = SplitBundle()
    labeled_t = []
    for sid, role in manifest:
        if sid not in by_id:
            raise ValidationError(f"manifest names unknown sample {sid!r}")
        s = by_id[sid]
        if role == "T":
            bundle.T.append(s.unlabeled())
            if s.class_label is not None:
                labeled_t.append(s)
        else:
            getattr(bundle, role).append(s)
    bundle.target_labeled = labeled_t + bundle.T_l
    bundle.validate()
    return bundle
