"""Datasets, non-IID partitioning and batching.

Label-shift heterogeneity draws one Dirichlet(alpha) proportion vector per
class over the clients and allocates that class's samples by largest
remainder, so class totals are preserved exactly. Feature shift keeps labels
IID but gives every client its own orthogonal input mixing plus bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray          # n x d_in
    y: np.ndarray          # n int labels in [0, classes)
    classes: int
    provenance: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError("Dataset: x/y shape mismatch")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise ValueError("Dataset: label out of range")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.classes, self.provenance)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    classes: int
    input_dim: int
    per_class: int
    center_scale: float = 1.0
    noise_sigma: float = 0.5
    confusability: float = 0.0  # 0 = centers untouched, 1 = paired centers coincide

    def __post_init__(self):
        if self.classes < 1 or self.input_dim < 1 or self.per_class < 1:
            raise ValueError("SyntheticTaskSpec: counts must be >= 1")
        if self.noise_sigma <= 0:
            raise ValueError("SyntheticTaskSpec: noise_sigma must be positive")
        if not 0.0 <= self.confusability < 1.0:
            raise ValueError("SyntheticTaskSpec: confusability in [0, 1)")


@dataclass
class Partition:
    clients: int
    assignment: list[np.ndarray]          # disjoint index lists into a Dataset
    histograms: np.ndarray                # clients x classes

    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignment])


@dataclass(frozen=True)
class ShiftSpec:
    rotations: int = 8              # Givens rotations composed per client
    rotation_strength: float = 1.0  # 0 disables mixing
    bias_scale: float = 0.0
    noise_scale: float = 0.0


def class_centers(spec: SyntheticTaskSpec, rng: RngStream) -> np.ndarray:
    """Fixed random unit directions scaled to center_scale, optionally with
    consecutive pairs pulled toward their midpoint (confusability)."""
    g = rng.normal((spec.classes, spec.input_dim))
    centers = spec.center_scale * g / np.linalg.norm(g, axis=1, keepdims=True)
    if spec.confusability > 0.0:
        for a in range(0, spec.classes - 1, 2):
            mid = 0.5 * (centers[a] + centers[a + 1])
            centers[a] = mid + (1 - spec.confusability) * (centers[a] - mid)
            centers[a + 1] = mid + (1 - spec.confusability) * (centers[a + 1] - mid)
    return centers


def generate_synthetic(
    spec: SyntheticTaskSpec, rng: RngStream, centers: np.ndarray | None = None
) -> Dataset:
    """Isotropic Gaussian mixture with exact per-class counts.

    Pass `centers` to draw fresh samples from an existing task (held-out
    test sets share the training task's centers, not just its spec)."""
    if centers is None:
        centers = class_centers(spec, rng.derive(0))
    noise_rng = rng.derive(1)
    n = spec.classes * spec.per_class
    x = np.empty((n, spec.input_dim))
    y = np.empty(n, dtype=np.int64)
    pos = 0
    for cls in range(spec.classes):
        block = slice(pos, pos + spec.per_class)
        x[block] = centers[cls] + spec.noise_sigma * noise_rng.normal((spec.per_class, spec.input_dim))
        y[block] = cls
        pos += spec.per_class
    return Dataset(x, y, spec.classes, provenance=f"synthetic(D={spec.classes},d={spec.input_dim})")


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` by proportions; sums exactly to total."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        remainders = raw - counts
        order = np.lexsort((np.arange(len(raw)), -remainders))  # ties to lowest index
        counts[order[:short]] += 1
    return counts


def _histograms(ds: Dataset, assignment: list[np.ndarray]) -> np.ndarray:
    hist = np.zeros((len(assignment), ds.classes), dtype=np.int64)
    for k, idx in enumerate(assignment):
        if len(idx):
            hist[k] = np.bincount(ds.y[idx], minlength=ds.classes)
    return hist


def _repair_empty_clients(assignment: list[np.ndarray]) -> list[np.ndarray]:
    # move one sample from the currently largest client into each empty one
    assignment = [np.asarray(a, dtype=np.int64) for a in assignment]
    for k in range(len(assignment)):
        if len(assignment[k]) == 0:
            donor = int(np.argmax([len(a) for a in assignment]))
            if len(assignment[donor]) <= 1:
                raise ValueError("dirichlet_partition: not enough samples to populate all clients")
            assignment[k] = assignment[donor][-1:]
            assignment[donor] = assignment[donor][:-1]
    return assignment


def dirichlet_partition(ds: Dataset, clients: int, alpha: float, rng: RngStream) -> Partition:
    """Label-shift split: per class, Dirichlet(alpha) proportions over clients.

    Clients already holding at least n/K samples are excluded from further
    classes (their proportion is zeroed and the rest renormalized) before the
    largest-remainder allocation. This keeps client sizes near n/K and, at
    extreme skew, lets whole classes land on distinct clients instead of
    colliding. Some client is always below the cap while samples remain, so
    the renormalization is well defined.
    """
    if clients < 1:
        raise ValueError("dirichlet_partition: need at least one client")
    if alpha <= 0:
        raise ValueError("dirichlet_partition: alpha must be positive")
    capacity = len(ds) / clients
    loads = np.zeros(clients, dtype=np.int64)
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for cls in range(ds.classes):
        cls_idx = np.flatnonzero(ds.y == cls)
        if len(cls_idx) == 0:
            continue
        cls_idx = cls_idx[rng.derive(0, cls).permutation(len(cls_idx))]
        props = rng.derive(1, cls).dirichlet(np.full(clients, alpha))
        if not np.all(np.isfinite(props)):  # degenerate underflow at tiny alpha
            props = np.full(clients, 1.0 / clients)
        open_slots = loads < capacity
        if np.any(open_slots):
            props = props * open_slots
        total = props.sum()
        props = props / total if total > 0.0 else open_slots / open_slots.sum()
        counts = _largest_remainder_counts(props, len(cls_idx))
        pos = 0
        for k in range(clients):
            if counts[k]:
                buckets[k].append(cls_idx[pos:pos + counts[k]])
            pos += counts[k]
        loads += counts
    assignment = [
        np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64) for b in buckets
    ]
    assignment = _repair_empty_clients(assignment)
    return Partition(clients, assignment, _histograms(ds, assignment))


def _givens_product(dim: int, n_rot: int, strength: float, rng: RngStream) -> np.ndarray:
    """Orthogonal mixing as a product of random-plane Givens rotations whose
    angles scale with `strength` (identity at strength 0)."""
    q = np.eye(dim)
    for _ in range(n_rot):
        i, j = 0, 0
        while i == j:
            ij = rng.integers(0, dim, 2)
            i, j = int(ij[0]), int(ij[1])
        theta = strength * float(rng.uniform(-np.pi, np.pi))
        c, s = np.cos(theta), np.sin(theta)
        rot_i = c * q[i] - s * q[j]
        rot_j = s * q[i] + c * q[j]
        q[i], q[j] = rot_i, rot_j
    return q


def feature_shift_partition(
    ds: Dataset, clients: int, shift: ShiftSpec, rng: RngStream
) -> tuple[Partition, list[Dataset]]:
    """IID label split; each client sees its own fixed affine domain."""
    if clients < 1:
        raise ValueError("feature_shift_partition: need at least one client")
    n = len(ds)
    perm = rng.derive(0).permutation(n)
    assignment = [np.sort(part) for part in np.array_split(perm, clients)]
    assignment = _repair_empty_clients(assignment)
    dim = ds.x.shape[1]
    views = []
    for k in range(clients):
        client_rng = rng.derive(1, k)
        q = _givens_product(dim, shift.rotations, shift.rotation_strength, client_rng.derive(0))
        bias = shift.bias_scale * client_rng.derive(1).normal(dim)
        xk = ds.x[assignment[k]] @ q.T + bias
        if shift.noise_scale > 0.0:
            xk = xk + shift.noise_scale * client_rng.derive(2).normal(xk.shape)
        views.append(Dataset(xk, ds.y[assignment[k]], ds.classes, ds.provenance + f"|domain{k}"))
    return Partition(clients, assignment, _histograms(ds, assignment)), views


def train_val_split(ds: Dataset, fraction: float, rng: RngStream) -> tuple[Dataset, Dataset]:
    """Stratified split; `fraction` of each class goes to the first output."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("train_val_split: fraction must be in (0, 1)")
    train_idx = []
    val_idx = []
    for cls in range(ds.classes):
        cls_idx = np.flatnonzero(ds.y == cls)
        if len(cls_idx) == 0:
            continue
        if len(cls_idx) < 2:
            raise ValueError(f"train_val_split: class {cls} has fewer than two samples")
        cls_idx = cls_idx[rng.derive(cls).permutation(len(cls_idx))]
        take = int(np.floor(fraction * len(cls_idx) + 0.5))
        train_idx.append(cls_idx[:take])
        val_idx.append(cls_idx[take:])
    train = np.sort(np.concatenate(train_idx))
    val = np.sort(np.concatenate(val_idx))
    return ds.subset(train), ds.subset(val)


def batches(n: int, batch_size: int, rng: RngStream) -> list[np.ndarray]:
    """One epoch of shuffled batches; a trailing batch of size < 2 is dropped
    (it cannot be batch-standardized)."""
    if batch_size < 2:
        raise ValueError("batches: batch_size must be >= 2")
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def client_datasets(ds: Dataset, partition: Partition) -> list[Dataset]:
    return [ds.subset(idx) for idx in partition.assignment]


# --- IDX ingestion --------------------------------------------------------


def _read_be32(buf: bytes, pos: int, path: str) -> int:
    if pos + 4 > len(buf):
        raise ValueError(f"idx: truncated header in {path}")
    return struct.unpack_from(">I", buf, pos)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Big-endian IDX image/label pair; pixels scaled to [0, 1], row-major."""
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()

    magic = _read_be32(img, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"idx: wrong magic {magic:#010x} in images file {images_path}")
    n = _read_be32(img, 4, images_path)
    rows = _read_be32(img, 8, images_path)
    cols = _read_be32(img, 12, images_path)
    payload = img[16:]
    if len(payload) < n * rows * cols:
        raise ValueError(f"idx: truncated image payload in {images_path}")

    lmagic = _read_be32(lab, 0, labels_path)
    if lmagic != IDX_LABELS_MAGIC:
        raise ValueError(f"idx: wrong magic {lmagic:#010x} in labels file {labels_path}")
    ln = _read_be32(lab, 4, labels_path)
    if ln != n:
        raise ValueError(f"idx: count mismatch, {n} images vs {ln} labels")
    lpayload = lab[8:]
    if len(lpayload) < ln:
        raise ValueError(f"idx: truncated label payload in {labels_path}")

    x = np.frombuffer(payload, dtype=np.uint8, count=n * rows * cols)
    x = x.reshape(n, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lpayload, dtype=np.uint8, count=ln).astype(np.int64)
    classes = int(y.max()) + 1 if ln else 1
    return Dataset(x, y, classes, provenance=f"idx({images_path})")
