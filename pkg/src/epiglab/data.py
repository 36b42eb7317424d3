"""Embedding/label ingestion, synthetic data, tasks, splits and initial label sets.

File formats:
  EMB1: magic "EMB1", u32-LE n, u32-LE d, then n*d f32-LE row-major.
  LAB1: magic "LAB1", u32-LE n, u32-LE C, then n i32-LE (-1 = unknown).
  CSV:  comma-separated, no header, one row per example.
"""

from __future__ import annotations

import mimetypes
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

UNKNOWN = -1

EMB1_MAGIC = b"EMB1"
LAB1_MAGIC = b"LAB1"

# Incremented on every embedding-file read; lets callers assert that a loop
# run never re-reads features (encoder amortization).
_embedding_reads = 0


def embedding_read_count() -> int:
    return _embedding_reads


def reset_embedding_read_count() -> None:
    global _embedding_reads
    _embedding_reads = 0


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Fixed encoder outputs, one row per example. Immutable after construction."""

    values: np.ndarray  # (n, d) float32

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"embedding table must be 2-D and non-empty, got shape {v.shape}")
        if not np.isfinite(v).all():
            row = int(np.argwhere(~np.isfinite(v).all(axis=1))[0, 0])
            raise DataError(f"non-finite embedding value in row {row}")
        v.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Per-example class index in {0..classes-1} or UNKNOWN (-1)."""

    entries: np.ndarray  # (n,) int32
    classes: int

    def __post_init__(self):
        if self.classes < 2:
            raise DataError(f"need at least 2 classes, got {self.classes}")
        e = self.entries
        bad = np.flatnonzero((e < UNKNOWN) | (e >= self.classes))
        if bad.size:
            i = int(bad[0])
            raise DataError(f"label {int(e[i])} out of range [0, {self.classes}) at index {i}")
        e.setflags(write=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def known_mask(self) -> np.ndarray:
        return self.entries != UNKNOWN


@dataclass(frozen=True)
class TaskSpec:
    """Classes to discriminate, optionally grouping the rest as one extra class."""

    classes_of_interest: tuple[int, ...]
    group_rest_as_other: bool = False
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        coi = self.classes_of_interest
        if not coi:
            raise ConfigError("classes_of_interest must be non-empty")
        if len(set(coi)) != len(coi):
            raise ConfigError(f"duplicate classes of interest: {coi}")

    def effective_classes(self) -> int:
        m = len(self.classes_of_interest)
        return m + 1 if self.group_rest_as_other else m

    def effective_names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            names = tuple(self.class_names)
        else:
            names = tuple(f"class {c}" for c in self.classes_of_interest)
        if self.group_rest_as_other:
            names = names + ("other",)
        return names


def full_task(classes: int) -> TaskSpec:
    """Identity task over all classes."""
    return TaskSpec(classes_of_interest=tuple(range(classes)))


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint index sets into one embedding table; anything unsplit is the pool."""

    pool: np.ndarray
    target: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [self.pool, self.target, self.validation, self.test]
        total = sum(p.size for p in parts)
        if np.unique(np.concatenate(parts)).size != total:
            raise DataError("split index sets overlap")
        for p in parts:
            p.setflags(write=False)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussian clusters plus a scrambled, noisy raw view.

    Latent features are well-separated clusters (stand-in for pretrained
    embeddings); raw features are a fixed random linear image of the latents
    with additive noise (strictly harder, stand-in for no pretraining).
    """

    classes: int
    per_class: int
    latent_dim: int
    raw_dim: int
    noise_scale: float = 1.0
    separation: float = 6.0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need classes >= 2, got {self.classes}")
        if self.per_class < 1:
            raise ConfigError(f"need per_class >= 1, got {self.per_class}")
        if self.raw_dim < self.latent_dim:
            raise ConfigError(
                f"raw_dim ({self.raw_dim}) must be >= latent_dim ({self.latent_dim})"
            )


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------


def _read_binary_header(raw: bytes, magic: bytes, path: Path) -> tuple[int, int]:
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic at byte offset 0 (expected {magic!r})")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header, file ends at byte offset {len(raw)}")
    a, b = struct.unpack_from("<II", raw, 4)
    return a, b


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load an EMB1 or CSV embedding file into a float32 table."""
    global _embedding_reads
    path = Path(path)
    raw = path.read_bytes()
    _embedding_reads += 1
    if raw[:4] == EMB1_MAGIC:
        n, d = _read_binary_header(raw, EMB1_MAGIC, path)
        expected = 12 + 4 * n * d
        if len(raw) < expected:
            raise FormatError(
                f"{path}: truncated payload, file ends at byte offset {len(raw)},"
                f" expected {expected}"
            )
        values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=12)
        values = values.reshape(n, d).astype(np.float32)
    elif path.suffix.lower() == ".csv":
        values = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
    else:
        raise FormatError(f"{path}: bad magic at byte offset 0 (not EMB1, not .csv)")
    return EmbeddingTable(values=values)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write an EMB1 file; load_embeddings round-trips it byte-identically."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", table.n, table.d))
        fh.write(np.ascontiguousarray(table.values, dtype="<f4").tobytes())


def load_labels(path: str | Path, classes: int | None = None) -> LabelVector:
    """Load a LAB1 or CSV label file.

    For CSV input the class count is `classes` if given, else max entry + 1.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == LAB1_MAGIC:
        n, c = _read_binary_header(raw, LAB1_MAGIC, path)
        expected = 12 + 4 * n
        if len(raw) < expected:
            raise FormatError(
                f"{path}: truncated payload, file ends at byte offset {len(raw)},"
                f" expected {expected}"
            )
        entries = np.frombuffer(raw, dtype="<i4", count=n, offset=12).astype(np.int32)
        if classes is not None and classes != c:
            raise DataError(f"{path}: declared {classes} classes but header says {c}")
        classes = c
    elif path.suffix.lower() == ".csv":
        entries = np.loadtxt(path, delimiter=",", dtype=np.int32, ndmin=1)
        if classes is None:
            known = entries[entries != UNKNOWN]
            if known.size == 0:
                raise DataError(f"{path}: all labels unknown, cannot infer class count")
            classes = int(known.max()) + 1
    else:
        raise FormatError(f"{path}: bad magic at byte offset 0 (not LAB1, not .csv)")
    return LabelVector(entries=entries, classes=classes)


def write_labels(labels: LabelVector, path: str | Path) -> None:
    """Write a LAB1 file; load_labels round-trips it byte-identically."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(LAB1_MAGIC)
        fh.write(struct.pack("<II", labels.n, labels.classes))
        fh.write(np.ascontiguousarray(labels.entries, dtype="<i4").tobytes())


class AssetStore:
    """Directory of per-example payloads named `<index>.<ext>`."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._files: dict[int, Path] = {}
        if self.directory.is_dir():
            for p in self.directory.iterdir():
                if p.is_file() and p.stem.isdigit():
                    self._files[int(p.stem)] = p

    def has(self, index: int) -> bool:
        return index in self._files

    def get(self, index: int) -> tuple[bytes, str] | None:
        """Return (payload, media type) or None when no asset exists."""
        p = self._files.get(index)
        if p is None:
            return None
        media, _ = mimetypes.guess_type(p.name)
        return p.read_bytes(), media or "application/octet-stream"

    def max_index(self) -> int:
        return max(self._files, default=-1)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def make_synthetic(
    spec: SyntheticSpec, seed: int
) -> tuple[EmbeddingTable, EmbeddingTable, LabelVector]:
    """Generate (latent table, raw table, labels), deterministic given seed."""
    rng = np.random.default_rng(seed)
    c, per, ld, rd = spec.classes, spec.per_class, spec.latent_dim, spec.raw_dim

    centers = rng.normal(size=(c, ld))
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(-1))
    min_dist = dists[np.triu_indices(c, k=1)].min()
    if min_dist <= 0:
        centers += rng.normal(size=centers.shape) * 1e-3
        min_dist = 1e-3
    centers *= spec.separation / min_dist

    y = np.repeat(np.arange(c, dtype=np.int32), per)
    latent = centers[y] + rng.normal(size=(c * per, ld))

    mix = rng.normal(size=(rd, ld)) / np.sqrt(ld)
    raw = latent @ mix.T + spec.noise_scale * rng.normal(size=(c * per, rd))

    return (
        EmbeddingTable(values=latent.astype(np.float32)),
        EmbeddingTable(values=raw.astype(np.float32)),
        LabelVector(entries=y, classes=c),
    )


# ---------------------------------------------------------------------------
# tasks, splits, initial label sets
# ---------------------------------------------------------------------------


def apply_task(labels: LabelVector, task: TaskSpec) -> LabelVector:
    """Remap classes of interest to 0..m-1; group the rest as class m if asked.

    UNKNOWN entries stay UNKNOWN. Without grouping, the classes of interest
    must cover every class of the input vector.
    """
    coi = task.classes_of_interest
    for cls in coi:
        if not 0 <= cls < labels.classes:
            raise ConfigError(f"class of interest {cls} outside [0, {labels.classes})")
    m = len(coi)
    if not task.group_rest_as_other and set(coi) != set(range(labels.classes)):
        raise ConfigError("without grouping, classes_of_interest must cover all classes")

    mapping = np.full(labels.classes, m, dtype=np.int32)
    for new, old in enumerate(coi):
        mapping[old] = new

    out = np.full(labels.n, UNKNOWN, dtype=np.int32)
    known = labels.known_mask()
    out[known] = mapping[labels.entries[known]]
    return LabelVector(entries=out, classes=task.effective_classes())


def _stratified_draw(rng: np.random.Generator, candidates: np.ndarray,
                     labels: np.ndarray, size: int) -> np.ndarray:
    """Proportional (largest-remainder) per-class draw from candidate indices."""
    groups = labels[candidates]
    values, counts = np.unique(groups, return_counts=True)
    exact = size * counts / candidates.size
    quota = np.floor(exact).astype(int)
    remainder = size - quota.sum()
    if remainder > 0:
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[:remainder]] += 1
    picks = []
    for v, q in zip(values, quota):
        members = candidates[groups == v]
        if q > 0:
            picks.append(rng.choice(members, size=q, replace=False))
    return np.sort(np.concatenate(picks)) if picks else np.empty(0, dtype=np.int64)


def split(n: int, sizes: dict[str, int], labels: LabelVector | None, seed: int) -> SplitSpec:
    """Draw disjoint target/validation/test sets; the remainder is the pool.

    Validation and test are class-stratified where labels permit; the target
    draw is uniform. Deterministic given (n, sizes, labels, seed).
    """
    want = {k: int(sizes.get(k, 0)) for k in ("target", "validation", "test")}
    if any(v < 0 for v in want.values()):
        raise ConfigError(f"negative split size in {sizes}")
    if sum(want.values()) > n:
        raise ConfigError(f"split sizes {want} sum past n={n}")

    rng = np.random.default_rng(seed)
    remaining = np.arange(n, dtype=np.int64)

    target = np.sort(rng.choice(remaining, size=want["target"], replace=False))
    remaining = np.setdiff1d(remaining, target, assume_unique=True)

    label_arr = labels.entries if labels is not None else np.zeros(n, dtype=np.int32)
    validation = _stratified_draw(rng, remaining, label_arr, want["validation"])
    remaining = np.setdiff1d(remaining, validation, assume_unique=True)

    test = _stratified_draw(rng, remaining, label_arr, want["test"])
    pool = np.setdiff1d(remaining, test, assume_unique=True)

    return SplitSpec(pool=pool, target=target, validation=validation, test=test)


def stratified_init(labels: LabelVector, per_class: int, pool: np.ndarray,
                    seed: int) -> np.ndarray:
    """Draw per_class pool examples from each class, uniformly within class."""
    rng = np.random.default_rng(seed)
    pool = np.asarray(pool, dtype=np.int64)
    entries = labels.entries[pool]
    picks = []
    for cls in range(labels.classes):
        members = pool[entries == cls]
        if members.size < per_class:
            raise DataError(
                f"class {cls} has only {members.size} labelled pool examples,"
                f" need {per_class}"
            )
        picks.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(picks))
