"""Image datasets: IDX ingestion, grid/annotated builders, patching, label noise.

A dataset directory holds three files:

    images.idx    -- IDX container (magic 0x803), u8 pixels
    concepts.csv  -- header "image_id,c0,c1,...", 1-based values, blank = missing
    schema.json   -- {"concepts": [{"name": ..., "cardinality": ...}, ...]}
"""

import csv
import gzip
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concepts import MISSING, ConceptSchema, schema_from_cardinalities
from .errors import DataFormatError, FicblError
from .rules import Rule, eval_rule

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class PatchConfig:
    """Sliding-window geometry; stride equal to size gives a disjoint grid."""

    patch_w: int
    patch_h: int
    stride_x: int
    stride_y: int

    def __post_init__(self):
        if min(self.patch_w, self.patch_h) < 1 or min(self.stride_x, self.stride_y) < 1:
            raise FicblError("patch dimensions and strides must be positive")

    def grid(self, width: int, height: int) -> tuple[int, int]:
        """Window counts (columns, rows) for an image of the given size."""
        if self.patch_w > width or self.patch_h > height:
            raise FicblError(
                f"patch {self.patch_w}x{self.patch_h} larger than image {width}x{height}"
            )
        nx = (width - self.patch_w) // self.stride_x + 1
        ny = (height - self.patch_h) // self.stride_y + 1
        return nx, ny

    def count(self, width: int, height: int) -> int:
        nx, ny = self.grid(width, height)
        return nx * ny


@dataclass(frozen=True)
class ImageRecord:
    """Grayscale image (floats in [0, 1], shape h x w) plus its concept label."""

    pixels: np.ndarray
    label: tuple[int, ...]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    image_index: int
    patch_index: int


@dataclass(frozen=True)
class Dataset:
    schema: ConceptSchema
    records: tuple[ImageRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> list[tuple[int, ...]]:
        return [rec.label for rec in self.records]


# --------------------------------------------------------------------------
# IDX container
# --------------------------------------------------------------------------


def _open_maybe_gzip(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return io.BytesIO(raw)


def _read_exact(buf, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated IDX file while reading {what}")
    return data


def load_idx(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    """Read paired IDX image/label files into (pixels in [0,1], digit) tuples."""
    with _open_maybe_gzip(images_path) as buf:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(buf, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"bad image magic 0x{magic:08x}")
        pixels = np.frombuffer(
            _read_exact(buf, n * rows * cols, "pixels"), dtype=np.uint8
        ).reshape(n, rows, cols)
    with _open_maybe_gzip(labels_path) as buf:
        magic, n_labels = struct.unpack(">II", _read_exact(buf, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"bad label magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(buf, n_labels, "labels"), dtype=np.uint8)
    if n != n_labels:
        raise DataFormatError(f"image count {n} does not match label count {n_labels}")
    scaled = pixels.astype(np.float64) / 255.0
    return [(scaled[i], int(labels[i])) for i in range(n)]


def save_idx_images(path, images: list[np.ndarray]) -> None:
    """Write [0,1] float images as a u8 IDX container (lossless round trip)."""
    n = len(images)
    rows, cols = images[0].shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        for img in images:
            if img.shape != (rows, cols):
                raise DataFormatError("all images in one IDX file must share a shape")
            fh.write(np.rint(img * 255.0).astype(np.uint8).tobytes())


def save_idx_labels(path, labels) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(bytes(int(v) for v in labels))


# --------------------------------------------------------------------------
# Patch extraction
# --------------------------------------------------------------------------


def extract_patches(image: ImageRecord, cfg: PatchConfig, image_index: int = 0) -> list[Patch]:
    """Row-major sliding-window patches, windows fully inside the image."""
    nx, ny = cfg.grid(image.width, image.height)
    patches = []
    j = 0
    for iy in range(ny):
        y = iy * cfg.stride_y
        for ix in range(nx):
            x = ix * cfg.stride_x
            block = image.pixels[y : y + cfg.patch_h, x : x + cfg.patch_w]
            patches.append(Patch(block.copy(), image_index, j))
            j += 1
    return patches


def patch_matrix(records, cfg: PatchConfig) -> tuple[np.ndarray, list[int]]:
    """Flattened patches for many images: (total_patches, w*h) plus per-image counts."""
    blocks = []
    counts = []
    for rec in records:
        nx, ny = cfg.grid(rec.width, rec.height)
        counts.append(nx * ny)
        for iy in range(ny):
            y = iy * cfg.stride_y
            for ix in range(nx):
                x = ix * cfg.stride_x
                blocks.append(
                    rec.pixels[y : y + cfg.patch_h, x : x + cfg.patch_w].reshape(-1)
                )
    return np.asarray(blocks, dtype=np.float64), counts


# --------------------------------------------------------------------------
# Experiment dataset builders
# --------------------------------------------------------------------------

GRID_SCHEMA = schema_from_cardinalities(
    (7,) + (2,) * 10,
    ("target",) + tuple(f"has_{d}" for d in (1, 2, 3, 4, 5, 6, 7, 8, 9, 0)),
)

# Binary presence concepts: 1 = present, 2 = absent, so rule literals like
# has_9=1 read "digit nine occurs in the instance".
PRESENT, ABSENT = 1, 2


def grid_label(digits) -> tuple[int, ...]:
    """Label of a four-digit grid: 7-class max digit plus presence flags."""
    digits = set(digits)
    target = max(digits) - 2  # max of four distinct digits is 3..9 -> values 1..7
    presence = tuple(
        PRESENT if d in digits else ABSENT for d in (1, 2, 3, 4, 5, 6, 7, 8, 9, 0)
    )
    return (target,) + presence


def compose_grid_dataset(digit_pool: dict[int, list[np.ndarray]], n: int, seed: int) -> Dataset:
    """n two-by-two arrangements of four distinct digits, 56x56 each.

    digit_pool maps each digit 0..9 to a non-empty list of 28x28 images.
    """
    if n <= 0:
        raise FicblError("dataset size must be positive")
    for d in range(10):
        if not digit_pool.get(d):
            raise FicblError(f"digit pool has no images for digit {d}")
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        digits = rng.choice(10, size=4, replace=False)
        canvas = np.zeros((56, 56), dtype=np.float64)
        for slot, d in enumerate(digits):
            pool = digit_pool[int(d)]
            img = pool[int(rng.integers(len(pool)))]
            y, x = (slot // 2) * 28, (slot % 2) * 28
            canvas[y : y + 28, x : x + 28] = img
        records.append(ImageRecord(canvas, grid_label(int(d) for d in digits)))
    return Dataset(GRID_SCHEMA, tuple(records))


# Per-digit concept annotation for single-digit images, in the source
# convention where every concept value starts at 0:
#   [target, odd, less-than-five, remainder mod 3]
DIGIT_CONCEPTS_RAW = {
    0: (0, 0, 1, 0),
    1: (1, 1, 1, 1),
    2: (0, 0, 1, 2),
    3: (1, 1, 1, 0),
    4: (0, 0, 1, 1),
    5: (0, 1, 0, 2),
    6: (1, 0, 0, 0),
    7: (0, 1, 0, 1),
    8: (1, 0, 0, 2),
    9: (0, 1, 0, 0),
}

ANNOTATED_SCHEMA = schema_from_cardinalities(
    (2, 2, 2, 3), ("target", "odd", "small", "mod3")
)


def annotate_original_mnist(digit: int) -> tuple[int, ...]:
    """Four-concept annotation of a digit, 0-based source convention."""
    if digit not in DIGIT_CONCEPTS_RAW:
        raise FicblError(f"digit must be 0..9, got {digit}")
    return DIGIT_CONCEPTS_RAW[digit]


def compose_annotated_dataset(
    digit_pool: dict[int, list[np.ndarray]], n: int, seed: int
) -> Dataset:
    """n single-digit images labeled with the four derived concepts (1-based)."""
    if n <= 0:
        raise FicblError("dataset size must be positive")
    for d in range(10):
        if not digit_pool.get(d):
            raise FicblError(f"digit pool has no images for digit {d}")
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        d = int(rng.integers(10))
        pool = digit_pool[d]
        img = pool[int(rng.integers(len(pool)))]
        label = tuple(v + 1 for v in annotate_original_mnist(d))
        records.append(ImageRecord(np.array(img, dtype=np.float64), label))
    return Dataset(ANNOTATED_SCHEMA, tuple(records))


# --------------------------------------------------------------------------
# Label-noise protocol
# --------------------------------------------------------------------------


def invert_labels(dataset: Dataset, rule: Rule, beta: float, seed: int) -> Dataset:
    """Flip the binary target on a beta fraction of rule-satisfying instances.

    The flip budget is floor(beta * N) over the whole set, capped at the
    number of satisfying instances.  Sampling is nested: for a fixed seed,
    the flipped set at a smaller beta is a subset of the set at a larger one.
    """
    if not 0.0 <= beta <= 1.0:
        raise FicblError(f"inversion fraction must lie in [0, 1], got {beta}")
    if dataset.schema.cardinalities[0] != 2:
        raise FicblError("label inversion requires a binary target concept")
    satisfying = [
        i for i, rec in enumerate(dataset.records) if eval_rule(rule, rec.label) == 1
    ]
    order = np.random.default_rng(seed).permutation(len(satisfying))
    budget = min(int(beta * len(dataset)), len(satisfying))
    flip = {satisfying[int(k)] for k in order[:budget]}
    records = []
    for i, rec in enumerate(dataset.records):
        if i in flip:
            label = (3 - rec.label[0],) + rec.label[1:]
            records.append(ImageRecord(rec.pixels, label))
        else:
            records.append(rec)
    return Dataset(dataset.schema, tuple(records))


def binarize_target(dataset: Dataset, target_value: int) -> Dataset:
    """One-vs-rest view of the target: 1 = given class, 2 = any other."""
    cards = dataset.schema.cardinalities
    if not 1 <= target_value <= cards[0]:
        raise FicblError(f"target value {target_value} out of range")
    schema = schema_from_cardinalities((2,) + cards[1:], dataset.schema.names)
    records = tuple(
        ImageRecord(rec.pixels, (1 if rec.label[0] == target_value else 2,) + rec.label[1:])
        for rec in dataset.records
    )
    return Dataset(schema, records)


# --------------------------------------------------------------------------
# Dataset directory persistence
# --------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_idx_images(out / "images.idx", [rec.pixels for rec in dataset.records])
    with open(out / "concepts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id"] + [f"c{r}" for r in range(len(dataset.schema))])
        for i, rec in enumerate(dataset.records):
            writer.writerow([i] + ["" if v == MISSING else v for v in rec.label])
    with open(out / "schema.json", "w") as fh:
        json.dump(
            {
                "concepts": [
                    {"name": name, "cardinality": card}
                    for name, card in zip(dataset.schema.names, dataset.schema.cardinalities)
                ]
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    with open(src / "schema.json") as fh:
        meta = json.load(fh)
    schema = ConceptSchema(
        tuple(c["name"] for c in meta["concepts"]),
        tuple(int(c["cardinality"]) for c in meta["concepts"]),
    )
    with _open_maybe_gzip(src / "images.idx") as buf:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(buf, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"bad image magic 0x{magic:08x}")
        pixels = np.frombuffer(
            _read_exact(buf, n * rows * cols, "pixels"), dtype=np.uint8
        ).reshape(n, rows, cols).astype(np.float64) / 255.0
    labels: list[tuple[int, ...]] = []
    with open(src / "concepts.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != len(schema) + 1:
            raise DataFormatError("concepts.csv header does not match the schema")
        for lineno, row in enumerate(reader, start=2):
            try:
                values = [MISSING if cell == "" else int(cell) for cell in row[1:]]
                labels.append(schema.validate_vector(values))
            except (ValueError, FicblError) as exc:
                raise DataFormatError(f"concepts.csv line {lineno}: {exc}") from None
    if len(labels) != n:
        raise DataFormatError(f"{n} images but {len(labels)} label rows")
    records = tuple(ImageRecord(pixels[i], labels[i]) for i in range(n))
    return Dataset(schema, records)
