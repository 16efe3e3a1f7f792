"""
Dataset ingestion: IDX (MNIST) and CIFAR-10 binary files, seeded subsets and the
synthetic desk-scale tasks.
"""

import gzip
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from data_transformer import BinarizeSpec, transform_features
from error_handler import (
    ConfigError, DataError, IdxDimensionError, IdxMagicError, IdxTruncatedError, LabelRangeError,
)
from gate_algebra import GateId
from network import NetworkParams, hard_wire_values, network_from_arrays, predict

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "LGN_DATA_DIR"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
# refuse headers declaring more elements than this before allocating anything
IDX_MAX_ELEMENTS = 1 << 31

CIFAR_RECORD_BYTES = 3073
CIFAR_CHANNELS = 3
CIFAR_PIXELS = 1024

DATASET_NAMES = ("mnist", "mnist-binary", "cifar10-binary", "parity", "two-moons", "teacher-circuit")
SYNTHETIC_KINDS = {"parity": "parity", "two-moons": "two-moons-binarized", "teacher-circuit": "random-teacher-circuit"}


@dataclass
class Dataset:
    features: np.ndarray   # (samples, dims) in [0, 1], or bits
    labels: np.ndarray     # (samples,) int64 in [0, classes)
    classes: int
    name: str = "dataset"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"{self.name}: features must be a (samples, dims) matrix, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.name}: {self.features.shape[0]} samples but labels of shape {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise LabelRangeError(
                f"{self.name}: labels must lie in [0, {self.classes}), found {int(self.labels.min())}..{int(self.labels.max())}"
            )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dims(self) -> int:
        return int(self.features.shape[1])


@dataclass
class DatasetSpec:
    name: str = "mnist-binary"
    data_dir: Optional[str] = None
    binarize: Optional[str] = None      # none | threshold | thermometer; None picks the dataset's scheme
    threshold: float = 0.5
    subset: Optional[int] = 10000
    test_subset: Optional[int] = None
    dims: int = 16                      # synthetic tasks
    samples: int = 4096
    test_samples: int = 1024
    classes: int = 2
    seed: int = 0

    def validate(self):
        if self.name not in DATASET_NAMES:
            raise ConfigError("dataset", f"unknown dataset '{self.name}', expected one of {', '.join(DATASET_NAMES)}")
        for name in ("subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(name, f"must be a positive sample count, got {value}")
        if self.name in SYNTHETIC_KINDS:
            if self.dims < 2:
                raise ConfigError("dims", f"synthetic tasks need at least two input bits, got {self.dims}")
            if self.samples < 1 or self.test_samples < 1:
                raise ConfigError("samples", "synthetic tasks need positive train and test sample counts")
        BinarizeSpec(kind=self.binarize_kind(), threshold=self.threshold).validate()

    def binarize_kind(self) -> str:
        if self.binarize is not None:
            return self.binarize
        return {"mnist": "none", "mnist-binary": "threshold", "cifar10-binary": "thermometer"}.get(self.name, "none")


def resolve_data_dir(flag_value: Optional[str] = None, config_value: Optional[str] = None) -> Optional[Path]:
    """Flag, then config value, then the LGN_DATA_DIR environment variable."""
    for value in (flag_value, config_value, os.environ.get(DATA_DIR_ENV)):
        if value:
            return Path(value).expanduser()
    return None


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DataError(f"data file not found: {path}", {"path": str(path)})
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read()


def load_idx(path: Union[str, Path], num_classes: Optional[int] = None) -> np.ndarray:
    """
    Parse an IDX file. Image files (magic 0x803) come back as float64 scaled by /255,
    label files (magic 0x801) as int64, optionally checked against num_classes.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: header needs 4 bytes, file has {len(raw)}",
                                {"expected": 4, "actual": len(raw)})
    magic = int.from_bytes(raw[:4], "big")
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise IdxMagicError(f"{path}: bad magic number 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x} "
                            f"or 0x{IDX_LABELS_MAGIC:08x})", {"magic": magic})

    header_bytes = 4 + 4 * ndim
    if len(raw) < header_bytes:
        raise IdxTruncatedError(f"{path}: header needs {header_bytes} bytes, file has {len(raw)}",
                                {"expected": header_bytes, "actual": len(raw)})
    shape = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=ndim, offset=4))
    elements = 1
    for size in shape:
        elements *= size
    if elements > IDX_MAX_ELEMENTS:
        raise IdxDimensionError(f"{path}: declared dimensions {shape} exceed {IDX_MAX_ELEMENTS} elements",
                                {"shape": list(shape)})
    expected = header_bytes + elements
    if len(raw) < expected:
        raise IdxTruncatedError(f"{path}: expected {expected} bytes for shape {shape}, file has {len(raw)}",
                                {"expected": expected, "actual": len(raw)})
    if len(raw) > expected:
        raise IdxTruncatedError(f"{path}: expected {expected} bytes for shape {shape}, file has {len(raw)} "
                                f"({len(raw) - expected} trailing bytes)", {"expected": expected, "actual": len(raw)})

    data = np.frombuffer(raw, dtype=np.uint8, count=elements, offset=header_bytes).reshape(shape)
    if ndim == 3:
        return data.astype(np.float64) / 255.0
    labels = data.astype(np.int64)
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        raise LabelRangeError(f"{path}: label {int(labels.max())} outside [0, {num_classes})",
                              {"max_label": int(labels.max()), "classes": num_classes})
    return labels


def _find_file(data_dir: Path, names: List[str]) -> Path:
    for name in names:
        for candidate in (data_dir / name, data_dir / f"{name}.gz"):
            if candidate.exists():
                return candidate
    raise DataError(f"none of {', '.join(names)} (or .gz) found in {data_dir}", {"data_dir": str(data_dir)})


def load_mnist(data_dir: Union[str, Path], split: str = "train") -> Dataset:
    data_dir = Path(data_dir)
    prefix = {"train": "train", "test": "t10k"}.get(split)
    if prefix is None:
        raise ConfigError("split", f"expected 'train' or 'test', got '{split}'")
    images = load_idx(_find_file(data_dir, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"]))
    labels = load_idx(_find_file(data_dir, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"]),
                      num_classes=10)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"MNIST {split}: {images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(features=images.reshape(images.shape[0], -1), labels=labels, classes=10, name=f"mnist-{split}")


def load_cifar10_binary(data_dir: Union[str, Path], split: str = "train") -> Tuple[np.ndarray, np.ndarray]:
    """Raw (samples, 3, 1024) uint8 pixels and labels from the CIFAR-10 binary batches."""
    data_dir = Path(data_dir)
    if (data_dir / "cifar-10-batches-bin").is_dir():
        data_dir = data_dir / "cifar-10-batches-bin"
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ConfigError("split", f"expected 'train' or 'test', got '{split}'")

    pixels, labels = [], []
    for name in names:
        raw = _read_bytes(data_dir / name)
        if len(raw) % CIFAR_RECORD_BYTES:
            raise IdxTruncatedError(
                f"{name}: {len(raw)} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
                {"actual": len(raw), "record_bytes": CIFAR_RECORD_BYTES},
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(records[:, 0].astype(np.int64))
        pixels.append(records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_PIXELS))
    labels = np.concatenate(labels)
    if labels.size and labels.max() >= 10:
        raise LabelRangeError(f"CIFAR-10 {split}: label {int(labels.max())} outside [0, 10)")
    return np.concatenate(pixels), labels


def subset(dataset: Dataset, n: Optional[int], seed: int = 0) -> Dataset:
    """Seeded shuffle, then the first n samples."""
    if n is None or n >= len(dataset):
        return dataset
    idx = np.random.default_rng(seed).permutation(len(dataset))[:n]
    return Dataset(features=dataset.features[idx], labels=dataset.labels[idx], classes=dataset.classes,
                   name=dataset.name, metadata={**dataset.metadata, "subset": n, "subset_seed": seed})


def enumerate_inputs(dims: int) -> np.ndarray:
    """All 2**dims bit vectors, most significant bit first, in counting order."""
    if dims > 24:
        raise ValueError(f"refusing to enumerate 2**{dims} inputs")
    codes = np.arange(1 << dims, dtype=np.int64)
    shifts = np.arange(dims - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8)


@dataclass
class TeacherCircuit:
    """The hidden hard circuit that labels the teacher-circuit task."""
    network: NetworkParams
    gates: List[np.ndarray]

    def predict(self, bits: np.ndarray) -> np.ndarray:
        _, scores = hard_wire_values(self.network, bits)
        return predict(scores)


# non-constant gates only, so teacher labels depend on the inputs
_TEACHER_GATES = np.array([g for g in GateId if g not in (GateId.FALSE, GateId.TRUE)])


def random_teacher_circuit(input_width: int, classes: int, seed: int, layers: int = 2,
                           nodes_per_class: int = 4) -> TeacherCircuit:
    rng = np.random.default_rng(seed)
    width = classes * nodes_per_class
    wirings, logits, gates = [], [], []
    prev = input_width
    for _ in range(layers):
        src_a = rng.integers(0, prev, width)
        src_b = (src_a + rng.integers(1, prev, width)) % prev
        chosen = rng.choice(_TEACHER_GATES, size=width)
        z = np.zeros((width, len(GateId)))
        z[np.arange(width), chosen] = 1.0
        wirings.append((src_a, src_b))
        logits.append(z)
        gates.append(chosen)
        prev = width
    network = network_from_arrays(input_width, wirings, logits, classes)
    return TeacherCircuit(network=network, gates=gates)


def _two_moons(samples: int, rng: np.random.Generator, noise: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, 2, samples)
    angle = rng.random(samples) * np.pi
    x = np.where(labels == 0, np.cos(angle), 1.0 - np.cos(angle))
    y = np.where(labels == 0, np.sin(angle), 0.5 - np.sin(angle))
    points = np.stack([x, y], axis=1) + noise * rng.standard_normal((samples, 2))
    lo, hi = points.min(axis=0), points.max(axis=0)
    return (points - lo) / np.where(hi > lo, hi - lo, 1.0), labels.astype(np.int64)


def synthetic_task(kind: str, dims: int, samples: Optional[int], seed: int, classes: int = 2) -> Dataset:
    """
    parity                 label = XOR of the bits; samples=None enumerates all 2**dims inputs
    two-moons-binarized    two noisy half circles, each coordinate thermometer-coded into dims // 2 bits
    random-teacher-circuit labels from a hidden random hard circuit (metadata["teacher"])
    """
    if dims < 2:
        raise ValueError(f"synthetic tasks need dims >= 2, got {dims}")
    rng = np.random.default_rng(seed)
    metadata: Dict[str, Any] = {"kind": kind, "seed": seed}

    if kind == "parity":
        bits = enumerate_inputs(dims) if samples is None else rng.integers(0, 2, (samples, dims)).astype(np.uint8)
        labels = (bits.sum(axis=1) % 2).astype(np.int64)
        return Dataset(features=bits, labels=labels, classes=2, name="parity", metadata=metadata)

    if samples is None:
        raise ValueError(f"{kind} needs an explicit sample count")

    if kind == "two-moons-binarized":
        points, labels = _two_moons(samples, rng)
        per_coord = dims // 2
        spec = BinarizeSpec(kind="thermometer", count=per_coord, low=0.0, high=1.0)
        bits = transform_features(points, spec, channels=2)
        return Dataset(features=bits, labels=labels, classes=2, name="two-moons", metadata=metadata)

    if kind == "random-teacher-circuit":
        teacher = random_teacher_circuit(dims, classes, seed)
        bits = rng.integers(0, 2, (samples, dims)).astype(np.uint8)
        metadata["teacher"] = teacher
        return Dataset(features=bits, labels=teacher.predict(bits), classes=classes,
                       name="teacher-circuit", metadata=metadata)

    raise ValueError(f"Unknown synthetic task '{kind}'; expected parity, two-moons-binarized, random-teacher-circuit")


def _split(dataset: Dataset, n_train: int) -> Tuple[Dataset, Dataset]:
    def part(sl):
        return Dataset(features=dataset.features[sl], labels=dataset.labels[sl], classes=dataset.classes,
                       name=dataset.name, metadata=dataset.metadata)
    return part(slice(0, n_train)), part(slice(n_train, None))


def load_dataset(spec: DatasetSpec, data_dir: Optional[Path] = None) -> Tuple[Dataset, Dataset]:
    """Train and test sets for a dataset spec, binarized and subset."""
    spec.validate()
    if spec.name in SYNTHETIC_KINDS:
        # one pool, so both splits share the same labelling function
        pool = synthetic_task(SYNTHETIC_KINDS[spec.name], spec.dims, spec.samples + spec.test_samples,
                              spec.seed, spec.classes)
        return _split(pool, spec.samples)

    data_dir = data_dir or resolve_data_dir(config_value=spec.data_dir)
    if data_dir is None:
        raise DataError(f"{spec.name} needs a data directory (--data-dir or {DATA_DIR_ENV})")
    binarize = BinarizeSpec(kind=spec.binarize_kind(), threshold=spec.threshold)

    if spec.name == "cifar10-binary":
        splits = []
        for split in ("train", "test"):
            pixels, labels = load_cifar10_binary(data_dir, split)
            features = pixels.reshape(pixels.shape[0], -1).astype(np.float64) / 255.0
            splits.append(Dataset(features=features, labels=labels, classes=10, name=f"cifar10-{split}"))
        channels = CIFAR_CHANNELS
    else:
        splits = [load_mnist(data_dir, "train"), load_mnist(data_dir, "test")]
        channels = 1

    out = []
    for dataset, n in zip(splits, (spec.subset, spec.test_subset)):
        dataset = subset(dataset, n, spec.seed)
        logger.info("Binarizing %s (%d samples, scheme %s)", dataset.name, len(dataset), binarize.kind)
        features = transform_features(dataset.features, binarize, channels=channels)
        out.append(Dataset(features=features, labels=dataset.labels, classes=dataset.classes,
                           name=dataset.name, metadata={**dataset.metadata, "binarize": binarize.kind}))
    return out[0], out[1]
