"""Dataset ingestion, normalization, padding, patch sampling and augmentation.

Expected layout under a dataset root, matched by basename stem::

    images/<stem>.ppm   RGB fundus photograph (binary P6)
    labels/<stem>.pgm   manual vessel annotation (P5, any nonzero = vessel)
    masks/<stem>.pgm    field-of-view mask (P5, optional)
"""
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, NetpbmError
from .netpbm import read_netpbm

log = logging.getLogger(__name__)

DATASET_KINDS = ("drive", "stare", "generic")
FOV_RED_THRESHOLD = 40


@dataclass
class ImageRecord:
    id: str
    image: np.ndarray
    label: np.ndarray = None
    fov_mask: np.ndarray = None
    mask_synthesized: bool = False

    @property
    def source_dims(self):
        h, w = self.image.shape[:2]
        return w, h

    def __post_init__(self):
        hw = self.image.shape[:2]
        for what in ("label", "fov_mask"):
            arr = getattr(self, what)
            if arr is not None and arr.shape[:2] != hw:
                raise DataError(f"{self.id}: {what} shape {arr.shape[:2]} does not match image shape {hw}")


@dataclass
class DatasetEntry:
    id: str
    image: str
    label: str = None
    mask: str = None


@dataclass
class DatasetManifest:
    kind: str
    root: str
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    split: str = ""

    def to_dict(self):
        def rows(entries):
            return [{"id": e.id, "image": e.image, "label": e.label, "mask": e.mask} for e in entries]

        return {"kind": self.kind, "root": self.root, "split": self.split, "train": rows(self.train), "test": rows(self.test)}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(
            kind=d["kind"],
            root=d["root"],
            split=d.get("split", ""),
            train=[DatasetEntry(**e) for e in d["train"]],
            test=[DatasetEntry(**e) for e in d["test"]],
        )


def synthesize_fov(image):
    """Red channel above 40/255, eroded by one pixel."""
    mask = image[..., 0] > FOV_RED_THRESHOLD
    return ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool)).astype(np.uint8)


def _stems(directory, suffix):
    if not os.path.isdir(directory):
        return {}
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() == suffix:
            out[stem] = os.path.join(directory, name)
    return out


def _drive_split(stems):
    train, test = [], []
    for stem in stems:
        tag = stem.lower()
        if tag.endswith("_training"):
            train.append(stem)
        elif tag.endswith("_test"):
            test.append(stem)
        else:
            m = re.match(r"(\d+)", stem)
            if not m:
                raise DataError(f"cannot place DRIVE image {stem!r}: expected '<id>_training', '<id>_test' or a numeric id")
            (train if int(m.group(1)) > 20 else test).append(stem)
    return train, test


def load_record(entry, need_label=False):
    """Parse one manifest entry into an :class:`ImageRecord`."""
    try:
        image = read_netpbm(entry.image)
        if image.ndim != 3:
            raise DataError(f"{entry.image}: expected an RGB (P6) image")
        label = mask = None
        if entry.label:
            label = (read_netpbm(entry.label) > 0).astype(np.uint8)
        elif need_label:
            raise DataError(f"training image {entry.id!r} has no label in labels/")
        if entry.mask:
            mask = (read_netpbm(entry.mask) > 0).astype(np.uint8)
        for arr, path in ((label, entry.label), (mask, entry.mask)):
            if arr is not None and arr.ndim != 2:
                raise DataError(f"{path}: expected a grayscale (P5) image")
    except NetpbmError as exc:
        raise DataError(f"failed to load {entry.id!r}: {exc}") from None
    synthesized = mask is None
    if synthesized:
        mask = synthesize_fov(image)
    return ImageRecord(entry.id, image, label, mask, mask_synthesized=synthesized)


def load_dataset(root, kind="generic", loo_index=None, train_count=None):
    """Scan ``root`` and split it into train/test entries.

    drive: official split by id (21-40 train, 1-20 test).  stare: filename
    order, first half train, or leave-one-out at ``loo_index``.  generic:
    filename order, first ``train_count`` (default ceil(n/2)) train.
    Every listed file is parsed once to fail early on corrupt data.
    """
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}; choose from {DATASET_KINDS}")
    images = _stems(os.path.join(root, "images"), ".ppm")
    if not images:
        raise DataError(f"no images/*.ppm found under {root}")
    labels = _stems(os.path.join(root, "labels"), ".pgm")
    masks = _stems(os.path.join(root, "masks"), ".pgm")
    stems = list(images)

    if kind == "drive":
        train, test = _drive_split(stems)
        split = "drive-official"
    else:
        if loo_index is not None and loo_index >= 0:
            if loo_index >= len(stems):
                raise ConfigError(f"leave-one-out index {loo_index} out of range for {len(stems)} images")
            test = [stems[loo_index]]
            train = [s for i, s in enumerate(stems) if i != loo_index]
            split = f"leave-one-out:{loo_index}"
        else:
            k = train_count if train_count is not None else math.ceil(len(stems) / 2)
            if not 0 <= k <= len(stems):
                raise ConfigError(f"train_count {k} out of range for {len(stems)} images")
            train, test = stems[:k], stems[k:]
            split = f"ordered:{k}/{len(stems) - k}"

    def entry(stem):
        return DatasetEntry(stem, images[stem], labels.get(stem), masks.get(stem))

    manifest = DatasetManifest(kind, os.fspath(root), [entry(s) for s in train], [entry(s) for s in test], split)
    for e in manifest.train:
        if e.label is None:
            raise DataError(f"training image {e.id!r} has no label at labels/{e.id}.pgm")
    for e in manifest.train + manifest.test:
        rec = load_record(e)
        if rec.mask_synthesized:
            log.warning("no FOV mask for %s; synthesized from the red channel", e.id)
    return manifest


def normalize(image):
    """uint8 (H, W, 3) or (H, W) -> float32 (1, C, H, W) in [0, 1]."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    return (image.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)[None].copy()


def quantize(prob):
    """[0, 1] -> uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(prob, dtype=np.float64), 0, 1) * 255 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class CropInfo:
    height: int
    width: int

    def unpad(self, array):
        return array[..., :self.height, :self.width]


def _pad_amount(n, multiple):
    return -n % multiple


def pad_array(array, multiple, mode="reflect"):
    """Pad the last two axes on the bottom/right to the next multiple."""
    h, w = array.shape[-2:]
    ph, pw = _pad_amount(h, multiple), _pad_amount(w, multiple)
    if ph == 0 and pw == 0:
        return array
    widths = [(0, 0)] * (array.ndim - 2) + [(0, ph), (0, pw)]
    if mode == "constant":
        return np.pad(array, widths)
    return np.pad(array, widths, mode="reflect")


def pad_to_multiple(record, multiple):
    """Reflect-pad image and label, zero-pad the mask; returns (record, CropInfo)."""
    if multiple < 1 or multiple & (multiple - 1):
        raise ConfigError(f"pad multiple must be a power of two, got {multiple}")
    h, w = record.image.shape[:2]
    image = np.moveaxis(pad_array(np.moveaxis(record.image, -1, 0), multiple), 0, -1)
    label = pad_array(record.label, multiple) if record.label is not None else None
    mask = pad_array(record.fov_mask, multiple, mode="constant") if record.fov_mask is not None else None
    padded = ImageRecord(record.id, np.ascontiguousarray(image), label, mask, record.mask_synthesized)
    return padded, CropInfo(h, w)


def unpad(record, crop):
    image = record.image[:crop.height, :crop.width]
    label = crop.unpad(record.label) if record.label is not None else None
    mask = crop.unpad(record.fov_mask) if record.fov_mask is not None else None
    return ImageRecord(record.id, image, label, mask, record.mask_synthesized)


@dataclass
class SamplePair:
    """One training/inference sample: x (3, h, w), y (1, h, w), mask (1, h, w)."""

    x: np.ndarray
    y: np.ndarray = None
    mask: np.ndarray = None
    id: str = ""
    origin: tuple = (0, 0)


@dataclass
class PatchSpec:
    size: int = 128
    stride: int = 64
    per_image: int = 8

    def validate(self, multiple):
        if self.size < 0 or self.stride < 1:
            raise ConfigError(f"patch size {self.size} / stride {self.stride} invalid")
        if self.size and self.size % multiple:
            raise ConfigError(f"patch size {self.size} must be divisible by {multiple}")


@dataclass
class AugmentationConfig:
    enabled: bool = True
    hflip: float = 0.5
    vflip: float = 0.5
    rotate: bool = True


def tile_origins(extent, size, stride):
    """Window origins along one axis covering [0, extent) with the last window flush."""
    if size > extent:
        raise ConfigError(f"patch size {size} exceeds image extent {extent}")
    origins = list(range(0, extent - size + 1, stride))
    if origins[-1] != extent - size:
        origins.append(extent - size)
    return origins


def record_arrays(record):
    """Float arrays (x, y, mask) shaped (C, H, W) for a record."""
    x = normalize(record.image)[0]
    y = record.label[None].astype(np.float32) if record.label is not None else None
    m = record.fov_mask[None].astype(np.float32) if record.fov_mask is not None else None
    return x, y, m


def _crop(arr, i, j, ph, pw):
    return None if arr is None else np.ascontiguousarray(arr[:, i:i + ph, j:j + pw])


def extract_patches(record, spec, rng=None, mode="random", count=None):
    """Random crops (training) or a deterministic covering tiling (inference)."""
    x, y, m = record if isinstance(record, tuple) else record_arrays(record)
    rid = "" if isinstance(record, tuple) else record.id
    h, w = x.shape[-2:]
    size = spec.size or max(h, w)
    ph, pw = (h, w) if spec.size == 0 else (size, size)
    if ph > h or pw > w:
        raise ConfigError(f"patch {ph}x{pw} larger than image {h}x{w}")
    if mode == "tile":
        origins = [(i, j) for i in tile_origins(h, ph, spec.stride) for j in tile_origins(w, pw, spec.stride)]
    elif mode == "random":
        if rng is None:
            raise ConfigError("random patch extraction needs an rng")
        n = count if count is not None else spec.per_image
        origins = [(int(rng.integers(0, h - ph + 1)), int(rng.integers(0, w - pw + 1))) for _ in range(n)]
    else:
        raise ConfigError(f"unknown extraction mode {mode!r}")
    return [SamplePair(_crop(x, i, j, ph, pw), _crop(y, i, j, ph, pw), _crop(m, i, j, ph, pw), rid, (i, j)) for i, j in origins]


def _transform(arr, hflip, vflip, k):
    if arr is None:
        return None
    if hflip:
        arr = arr[..., ::-1]
    if vflip:
        arr = arr[..., ::-1, :]
    if k:
        arr = np.rot90(arr, k, axes=(-2, -1))
    return np.ascontiguousarray(arr)


def augment(sample, cfg, rng):
    """Apply one random flip/rotation jointly to image, label and mask."""
    if not cfg.enabled:
        return sample
    hflip = rng.random() < cfg.hflip
    vflip = rng.random() < cfg.vflip
    k = int(rng.integers(0, 4)) if cfg.rotate else 0
    if sample.x.shape[-1] != sample.x.shape[-2]:
        k = 2 * (k % 2)  # quarter turns would change a non-square patch's shape
    return SamplePair(
        _transform(sample.x, hflip, vflip, k),
        _transform(sample.y, hflip, vflip, k),
        _transform(sample.mask, hflip, vflip, k),
        sample.id,
        sample.origin,
    )


class PatchSampler:
    """Endless stream of augmented training batches drawn from one rng.

    Records are padded to ``multiple`` once, up front.  Each draw picks an
    image uniformly, a patch origin uniformly, then an augmentation.
    """

    def __init__(self, records, spec, aug, rng, multiple):
        if not records:
            raise DataError("no training records")
        spec.validate(multiple)
        self.spec, self.aug, self.rng = spec, aug, rng
        self.arrays = []
        for rec in records:
            if rec.label is None:
                raise DataError(f"training image {rec.id!r} has no label")
            padded, _ = pad_to_multiple(rec, multiple)
            self.arrays.append((padded.id, record_arrays(padded)))
        if spec.size:
            for rid, (x, _, _) in self.arrays:
                if spec.size > min(x.shape[-2:]):
                    raise ConfigError(f"patch size {spec.size} exceeds image {rid!r} of size {x.shape[-2:]}")
        elif len({a[1][0].shape for a in self.arrays}) > 1:
            raise ConfigError("whole-image training needs all images to share one padded size")

    def steps_per_epoch(self, batch_size):
        per_image = self.spec.per_image if self.spec.size else 1
        return max(1, math.ceil(len(self.arrays) * per_image / batch_size))

    def next_batch(self, batch_size):
        samples = []
        for _ in range(batch_size):
            idx = int(self.rng.integers(0, len(self.arrays)))
            rid, arrays = self.arrays[idx]
            (pair,) = extract_patches(arrays, self.spec, self.rng, count=1)
            pair.id = rid
            samples.append(augment(pair, self.aug, self.rng))
        x = np.stack([s.x for s in samples])
        y = np.stack([s.y for s in samples])
        return x, y, [(s.id, s.origin) for s in samples]
