"""Datasets and the labeled/unlabeled pool partition.

A :class:`Dataset` owns the sample arrays; a :class:`PoolState` partitions the
training ids into a labeled pool L and an unlabeled pool U and carries the
oracle's answers. Pool operations are functional: they return new states and
never mutate their inputs, which keeps replay and property testing simple.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    BudgetError,
    FormatError,
    LabelRangeError,
    PoolMembershipError,
    ShapeError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3072


@dataclass(frozen=True)
class SampleRecord:
    """One data point: features, optional label, provenance."""

    id: str
    features: np.ndarray
    true_label: int | None
    origin: str | None  # None for in-distribution, else the foreign dataset name

    @property
    def is_foreign(self) -> bool:
        return self.origin is not None


@dataclass
class Dataset:
    name: str
    num_classes: int
    feature_shape: tuple[int, ...]
    train_ids: list[str]
    train_features: np.ndarray  # [N, d] float64
    train_labels: np.ndarray  # [N] int64, -1 where unknown (foreign)
    train_origins: list[str | None]
    eval_ids: list[str]
    eval_features: np.ndarray
    eval_labels: np.ndarray
    superclass_map: dict[int, int] | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {sid: i for i, sid in enumerate(self.train_ids)}
        self.validate()

    @property
    def dim(self) -> int:
        return int(np.prod(self.feature_shape))

    @property
    def num_train(self) -> int:
        return len(self.train_ids)

    def validate(self):
        if len(self._index) != len(self.train_ids):
            raise FormatError(f"{self.name}: duplicate train ids")
        if set(self.train_ids) & set(self.eval_ids):
            raise FormatError(f"{self.name}: train/eval id overlap")
        lab = self.train_labels
        known = lab >= 0
        if known.any() and lab[known].max() >= self.num_classes:
            raise LabelRangeError(
                f"{self.name}: train label {lab[known].max()} >= C={self.num_classes}"
            )
        if len(self.eval_labels) and self.eval_labels.max() >= self.num_classes:
            raise LabelRangeError(
                f"{self.name}: eval label {self.eval_labels.max()} >= C={self.num_classes}"
            )
        for i, org in enumerate(self.train_origins):
            if org is not None and lab[i] >= 0:
                raise LabelRangeError(
                    f"{self.name}: foreign record {self.train_ids[i]} carries a label"
                )
        if self.superclass_map is not None:
            missing = set(range(self.num_classes)) - set(self.superclass_map)
            if missing:
                raise FormatError(f"{self.name}: superclass_map misses classes {sorted(missing)}")

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise PoolMembershipError(f"unknown sample id {sample_id!r}") from None

    def record(self, sample_id: str) -> SampleRecord:
        i = self.index_of(sample_id)
        lab = int(self.train_labels[i])
        return SampleRecord(
            id=sample_id,
            features=self.train_features[i],
            true_label=None if lab < 0 else lab,
            origin=self.train_origins[i],
        )

    def features_for(self, ids: list[str]) -> np.ndarray:
        idx = [self.index_of(s) for s in ids]
        return self.train_features[idx]

    def true_label_of(self, sample_id: str) -> int | None:
        lab = int(self.train_labels[self.index_of(sample_id)])
        return None if lab < 0 else lab

    def origin_of(self, sample_id: str) -> str | None:
        return self.train_origins[self.index_of(sample_id)]


@dataclass(frozen=True)
class PoolState:
    """Partition of the training ids into L (labeled) and U (unlabeled)."""

    labeled_ids: tuple[str, ...]
    unlabeled_ids: tuple[str, ...]
    oracle_labels: dict[str, int]
    stage: int = 0
    discarded_ood_count: int = 0

    def check_invariants(self):
        ls, us = set(self.labeled_ids), set(self.unlabeled_ids)
        assert len(ls) == len(self.labeled_ids), "duplicate labeled ids"
        assert len(us) == len(self.unlabeled_ids), "duplicate unlabeled ids"
        assert not (ls & us), "labeled/unlabeled pools overlap"
        assert set(self.oracle_labels) >= ls, "labeled id without an oracle label"
        assert self.stage >= 0 and self.discarded_ood_count >= 0


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def read_idx(path: Path) -> np.ndarray:
    """Read one big-endian IDX file (images or labels) into a uint8 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) != count:
        raise FormatError(f"{path}: header declares {count} bytes, file has {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx_images(path: Path, images: np.ndarray):
    """Write a uint8 [N, H, W] array as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _load_idx_dir(path: Path, name: str, num_classes: int) -> Dataset:
    files = {
        "train_images": path / "train-images-idx3-ubyte",
        "train_labels": path / "train-labels-idx1-ubyte",
        "eval_images": path / "t10k-images-idx3-ubyte",
        "eval_labels": path / "t10k-labels-idx1-ubyte",
    }
    for key in ("train_images", "train_labels"):
        if not files[key].exists():
            raise FormatError(f"{path}: missing {files[key].name}")

    def _split(img_path, lab_path, prefix):
        images = read_idx(img_path)
        labels = read_idx(lab_path).astype(np.int64)
        if images.shape[0] != labels.shape[0]:
            raise FormatError(f"{path}: image/label count mismatch in {prefix} split")
        if labels.size and labels.max() >= num_classes:
            raise LabelRangeError(f"{path}: label {labels.max()} >= C={num_classes}")
        feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
        ids = [f"{name}/{prefix}/{i:05d}" for i in range(images.shape[0])]
        return ids, feats, labels, images.shape[1:]

    tr_ids, tr_x, tr_y, hw = _split(files["train_images"], files["train_labels"], "train")
    if files["eval_images"].exists():
        ev_ids, ev_x, ev_y, _ = _split(files["eval_images"], files["eval_labels"], "eval")
    else:
        ev_ids, ev_x, ev_y = [], np.zeros((0, tr_x.shape[1])), np.zeros(0, dtype=np.int64)
    return Dataset(
        name=name,
        num_classes=num_classes,
        feature_shape=(1, *hw),
        train_ids=tr_ids,
        train_features=tr_x,
        train_labels=tr_y,
        train_origins=[None] * len(tr_ids),
        eval_ids=ev_ids,
        eval_features=ev_x,
        eval_labels=ev_y,
    )


def _read_cifar_file(path: Path, num_classes: int):
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = arr[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise LabelRangeError(f"{path}: label byte {labels.max()} >= C={num_classes}")
    feats = arr[:, 1:].astype(np.float64) / 255.0
    return feats, labels


def _load_cifar_dir(path: Path, name: str, num_classes: int) -> Dataset:
    batches = sorted(path.glob("data_batch_*.bin")) or sorted(path.glob("data_batch_*"))
    if not batches:
        raise FormatError(f"{path}: no data_batch_* files")
    xs, ys = zip(*(_read_cifar_file(p, num_classes) for p in batches))
    tr_x, tr_y = np.concatenate(xs), np.concatenate(ys)
    tr_ids = [f"{name}/train/{i:05d}" for i in range(len(tr_y))]
    test = path / "test_batch.bin"
    if not test.exists():
        test = path / "test_batch"
    if test.exists():
        ev_x, ev_y = _read_cifar_file(test, num_classes)
        ev_ids = [f"{name}/eval/{i:05d}" for i in range(len(ev_y))]
    else:
        ev_ids, ev_x, ev_y = [], np.zeros((0, 3072)), np.zeros(0, dtype=np.int64)
    return Dataset(
        name=name,
        num_classes=num_classes,
        feature_shape=(3, 32, 32),
        train_ids=tr_ids,
        train_features=tr_x,
        train_labels=tr_y,
        train_origins=[None] * len(tr_ids),
        eval_ids=ev_ids,
        eval_features=ev_x,
        eval_labels=ev_y,
    )


def default_blob_centers(classes: int, dim: int, radius: float) -> np.ndarray:
    """Evenly spaced centers on a circle embedded in the first two dimensions."""
    if dim < 1:
        raise ShapeError("blob dim must be >= 1")
    centers = np.zeros((classes, dim))
    if dim == 1:
        centers[:, 0] = radius * np.linspace(-1.0, 1.0, classes)
    else:
        ang = 2.0 * math.pi * np.arange(classes) / classes
        centers[:, 0] = radius * np.cos(ang)
        centers[:, 1] = radius * np.sin(ang)
    return centers


def generate_blobs(config: dict, name: str = "blobs") -> Dataset:
    """Deterministic Gaussian blob dataset from a generator config.

    Keys: classes, n_per_class, dim, stddev, seed; optional centers, radius,
    eval_per_class, name, superclass_map. Features stay in generator units
    (no [0,1] rescale): the geometry, including deliberate center shifts for
    foreign variants, must survive loading.
    """
    required = {"classes", "n_per_class", "dim", "stddev", "seed"}
    missing = required - set(config)
    if missing:
        raise FormatError(f"blob config missing keys {sorted(missing)}")
    classes = int(config["classes"])
    n_per = int(config["n_per_class"])
    dim = int(config["dim"])
    stddev = float(config["stddev"])
    seed = int(config["seed"])
    name = str(config.get("name", name))
    eval_per = int(config.get("eval_per_class", max(1, n_per // 4)))
    if "centers" in config and config["centers"] is not None:
        centers = np.asarray(config["centers"], dtype=np.float64)
        if centers.shape != (classes, dim):
            raise ShapeError(f"centers shape {centers.shape} != ({classes}, {dim})")
    else:
        radius = float(config.get("radius", 6.0 * stddev))
        centers = default_blob_centers(classes, dim, radius)

    rng = np.random.default_rng(seed)

    def _draw(count_per_class, prefix):
        labels = np.repeat(np.arange(classes), count_per_class)
        feats = centers[labels] + stddev * rng.normal(size=(len(labels), dim))
        ids = [f"{name}/{prefix}/{i:05d}" for i in range(len(labels))]
        return ids, feats, labels.astype(np.int64)

    tr_ids, tr_x, tr_y = _draw(n_per, "train")
    ev_ids, ev_x, ev_y = _draw(eval_per, "eval")
    sup = config.get("superclass_map")
    if sup is not None:
        sup = {int(k): int(v) for k, v in sup.items()}
    return Dataset(
        name=name,
        num_classes=classes,
        feature_shape=(dim,),
        train_ids=tr_ids,
        train_features=tr_x,
        train_labels=tr_y,
        train_origins=[None] * len(tr_ids),
        eval_ids=ev_ids,
        eval_features=ev_x,
        eval_labels=ev_y,
        superclass_map=sup,
    )


def load_dataset(path, format: str, name: str | None = None, num_classes: int | None = None) -> Dataset:
    """Load a dataset from disk.

    ``idx`` and ``cifar_binary`` expect a directory in the conventional file
    layout; ``synthetic_blobs`` expects a generator config file (YAML/JSON).
    Pixel formats scale features to [0, 1].
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: does not exist")
    if format == "idx":
        return _load_idx_dir(path, name or path.name, num_classes or 10)
    if format == "cifar_binary":
        return _load_cifar_dir(path, name or path.name, num_classes or 10)
    if format == "synthetic_blobs":
        cfg = yaml.safe_load(path.read_text())
        if not isinstance(cfg, dict):
            raise FormatError(f"{path}: blob config must be a mapping")
        return generate_blobs(cfg, name=name or path.stem)
    raise FormatError(f"unknown dataset format {format!r}")


# ---------------------------------------------------------------------------
# pool construction and mutation
# ---------------------------------------------------------------------------

def make_biased_pool(
    dataset: Dataset, excluded_classes: set[int], m: int, seed: int
) -> PoolState:
    """Initial pool whose labeled part avoids the excluded classes entirely.

    The unlabeled pool still holds every remaining training sample, excluded
    classes included.
    """
    excluded = set(int(c) for c in excluded_classes)
    if len(excluded) >= dataset.num_classes:
        raise BudgetError("cannot exclude every class from the initial pool")
    n = dataset.num_train
    if m <= 0 or m >= n:
        raise BudgetError(f"initial pool size {m} must satisfy 0 < m < N={n}")
    eligible = [
        i
        for i in range(n)
        if dataset.train_labels[i] >= 0 and int(dataset.train_labels[i]) not in excluded
    ]
    if len(eligible) < m:
        raise BudgetError(
            f"only {len(eligible)} eligible samples for an initial pool of {m}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))
    chosen = [eligible[i] for i in order[:m]]
    chosen_set = set(chosen)
    labeled = [dataset.train_ids[i] for i in chosen]
    unlabeled = [dataset.train_ids[i] for i in range(n) if i not in chosen_set]
    labels = {sid: int(dataset.train_labels[dataset.index_of(sid)]) for sid in labeled}
    pool = PoolState(
        labeled_ids=tuple(labeled),
        unlabeled_ids=tuple(unlabeled),
        oracle_labels=labels,
        stage=0,
    )
    pool.check_invariants()
    return pool


def split_initial(dataset: Dataset, m: int, seed: int) -> PoolState:
    """Uniform random initial split: |L| = m, |U| = N - m."""
    return make_biased_pool(dataset, set(), m, seed)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    from scipy.ndimage import zoom

    h, w = img.shape
    return zoom(img, (out_h / h, out_w / w), order=1, grid_mode=True, mode="nearest")


def adapt_features(features: np.ndarray, src_shape: tuple, dst_shape: tuple) -> np.ndarray:
    """Adapt foreign features to the in-distribution feature shape.

    Images are channel-replicated (1 to k) or luminance-averaged (k to 1) and
    bilinearly resized. Plain vectors must already match.
    """
    if tuple(src_shape) == tuple(dst_shape):
        return features
    if len(src_shape) == 3 and len(dst_shape) == 3:
        sc, sh, sw = src_shape
        dc, dh, dw = dst_shape
        imgs = features.reshape(-1, sc, sh, sw)
        if sc != dc:
            if sc == 1:
                imgs = np.repeat(imgs, dc, axis=1)
            elif dc == 1:
                imgs = imgs.mean(axis=1, keepdims=True)
            else:
                raise ShapeError(f"cannot adapt {sc} channels to {dc}")
        if (sh, sw) != (dh, dw):
            out = np.empty((imgs.shape[0], dc, dh, dw))
            for i in range(imgs.shape[0]):
                for c in range(dc):
                    out[i, c] = _resize_bilinear(imgs[i, c], dh, dw)
            imgs = out
        return imgs.reshape(imgs.shape[0], -1)
    raise ShapeError(f"cannot adapt feature shape {src_shape} to {dst_shape}")


def mix_ood(
    pool: PoolState, in_dataset: Dataset, foreign: Dataset, fraction: float
) -> tuple[Dataset, PoolState]:
    """Mix floor(fraction * N) foreign records into the unlabeled pool.

    Returns the extended dataset (foreign records appended, tagged with their
    origin and carrying no label) together with the extended pool. Takes the
    first records of the foreign train split, so the mix is deterministic.
    """
    if not (0.0 < fraction < 1.0):
        raise BudgetError(f"fraction must lie in (0,1), got {fraction}")
    k = int(fraction * in_dataset.num_train)
    if k == 0:
        return in_dataset, pool
    if k > foreign.num_train:
        raise BudgetError(
            f"foreign dataset has {foreign.num_train} records, need {k}"
        )
    feats = adapt_features(
        foreign.train_features[:k], foreign.feature_shape, in_dataset.feature_shape
    )
    if feats.shape[1] != in_dataset.dim:
        raise ShapeError(
            f"adapted foreign dim {feats.shape[1]} != dataset dim {in_dataset.dim}"
        )
    new_ids = list(foreign.train_ids[:k])
    clash = set(new_ids) & set(in_dataset.train_ids)
    if clash:
        raise FormatError(f"foreign ids collide with in-distribution ids: {sorted(clash)[:3]}")
    merged = Dataset(
        name=in_dataset.name,
        num_classes=in_dataset.num_classes,
        feature_shape=in_dataset.feature_shape,
        train_ids=in_dataset.train_ids + new_ids,
        train_features=np.concatenate([in_dataset.train_features, feats]),
        train_labels=np.concatenate(
            [in_dataset.train_labels, np.full(k, -1, dtype=np.int64)]
        ),
        train_origins=in_dataset.train_origins + [foreign.name] * k,
        eval_ids=in_dataset.eval_ids,
        eval_features=in_dataset.eval_features,
        eval_labels=in_dataset.eval_labels,
        superclass_map=in_dataset.superclass_map,
    )
    new_pool = replace(pool, unlabeled_ids=pool.unlabeled_ids + tuple(new_ids))
    new_pool.check_invariants()
    return merged, new_pool


def promote(pool: PoolState, annotated: dict[str, int]) -> PoolState:
    """Move annotated ids from U to L and advance the stage counter."""
    ids = list(annotated)
    if len(set(ids)) != len(ids):
        raise PoolMembershipError("duplicate ids in one promote call")
    unlabeled = set(pool.unlabeled_ids)
    labeled = set(pool.labeled_ids)
    for sid in ids:
        if sid in labeled:
            raise PoolMembershipError(f"{sid!r} is already labeled")
        if sid not in unlabeled:
            raise PoolMembershipError(f"{sid!r} is not in the unlabeled pool")
    moving = set(ids)
    new_pool = PoolState(
        labeled_ids=pool.labeled_ids + tuple(ids),
        unlabeled_ids=tuple(s for s in pool.unlabeled_ids if s not in moving),
        oracle_labels={**pool.oracle_labels, **{k: int(v) for k, v in annotated.items()}},
        stage=pool.stage + 1,
        discarded_ood_count=pool.discarded_ood_count,
    )
    new_pool.check_invariants()
    return new_pool


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_pool(pool: PoolState, path, rng_streams: dict | None = None):
    """Write the pool manifest as JSON (stage, id lists, labels, rng states)."""
    doc = {
        "stage": pool.stage,
        "labeled_ids": list(pool.labeled_ids),
        "unlabeled_ids": list(pool.unlabeled_ids),
        "oracle_labels": pool.oracle_labels,
        "discarded_ood_count": pool.discarded_ood_count,
        "rng_streams": rng_streams,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_pool(path) -> tuple[PoolState, dict | None]:
    doc = json.loads(Path(path).read_text())
    pool = PoolState(
        labeled_ids=tuple(doc["labeled_ids"]),
        unlabeled_ids=tuple(doc["unlabeled_ids"]),
        oracle_labels={k: int(v) for k, v in doc["oracle_labels"].items()},
        stage=int(doc["stage"]),
        discarded_ood_count=int(doc["discarded_ood_count"]),
    )
    pool.check_invariants()
    return pool, doc.get("rng_streams")


def save_foreign_block(dataset: Dataset, dir_path):
    """Persist the mixed-in foreign records (manifest + feature array)."""
    dir_path = Path(dir_path)
    idx = [i for i, o in enumerate(dataset.train_origins) if o is not None]
    if not idx:
        return
    manifest = {
        "ids": [dataset.train_ids[i] for i in idx],
        "origins": [dataset.train_origins[i] for i in idx],
    }
    (dir_path / "foreign.json").write_text(json.dumps(manifest, sort_keys=True))
    np.save(dir_path / "foreign.npy", dataset.train_features[idx])
