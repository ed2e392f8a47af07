"""On-disk dataset formats, tactile windowing, rectification and the split.

Formats:
  * sweep: UTF-8 CSV with header ``t,ax,ay,az,px,py,pz``
  * image: binary PPM (P6), 8-bit RGB
  * manifest: JSON lines with keys
    ``item_id, class_id, class_name, specimen_id, images, sweeps, seed``
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GeometryError, ParameterError, ParseError, ShapeError

N_CLASSES = 18
SWEEP_HEADER = "t,ax,ay,az,px,py,pz"
N_TACTILE_CHANNELS = 6


@dataclass
class TactileSweep:
    """T×6 time series: 3-axial accelerometer + 3-axial pressure."""

    samples: np.ndarray  # (T, 6) float64
    sample_rate: float  # Hz
    sweep_speed: float = 50.0  # mm/min
    class_id: int = -1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != N_TACTILE_CHANNELS:
            raise ShapeError(f"sweep must be T x 6, got {self.samples.shape}")


@dataclass
class TextureImage:
    """Rendered or photographed RGB patch with its physical pixel pitch."""

    pixels: np.ndarray  # (h, w, 3) uint8
    pixel_pitch: tuple = (32.44, 35.97)  # µm/px along (length, width)
    class_id: int = -1

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"image must be h x w x 3, got {self.pixels.shape}")


@dataclass
class TactileWindow:
    """W×D contiguous slice of a sweep; the unit of tactile model input."""

    values: np.ndarray  # (W, 6)
    item_id: str = ""
    start: int = 0


@dataclass
class ManifestRecord:
    item_id: str
    class_id: int
    class_name: str
    specimen_id: str
    images: list
    sweeps: list
    seed: int


@dataclass
class SplitAssignment:
    assignment: dict  # item_id -> "train" | "test"
    ratio: float
    seed: int

    def items(self, which):
        return sorted(i for i, s in self.assignment.items() if s == which)


# ---------------------------------------------------------------------------
# windowing


def window_sweep(sweep, window=50, stride=None):
    """Cut a sweep into W-row windows starting at 0, stride, 2*stride, ...

    The trailing partial window is dropped.
    """
    if stride is None:
        stride = window
    data = sweep.samples if isinstance(sweep, TactileSweep) else np.asarray(sweep)
    t = data.shape[0]
    if t < window:
        raise DataError(f"sweep has {t} samples, shorter than window {window}")
    if not 1 <= stride <= t:
        raise ParameterError(f"stride must be in [1, {t}], got {stride}")
    n = (t - window) // stride + 1
    return [TactileWindow(values=data[i * stride : i * stride + window], start=i * stride) for i in range(n)]


# ---------------------------------------------------------------------------
# perspective rectification


def homography_unit_to_quad(corners):
    """3×3 homography mapping the unit square to 4 ordered corners (TL,TR,BR,BL).

    Corner coordinates are (x, y) in edge space: pixel (row i, col j) spans
    [j, j+1] x [i, i+1].
    """
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape != (4, 2):
        raise GeometryError(f"need 4 corner points, got shape {corners.shape}")
    # degenerate quads collapse the linear system
    area = 0.0
    for i in range(4):
        x0, y0 = corners[i]
        x1, y1 = corners[(i + 1) % 4]
        area += x0 * y1 - x1 * y0
    if abs(area) < 1e-9:
        raise GeometryError("corner quad is degenerate (zero area / collinear points)")
    src = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, corners)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    try:
        p = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"degenerate corner configuration: {exc}")
    return np.append(p, 1.0).reshape(3, 3)


def apply_homography(h, points):
    """Apply a 3×3 homography to an (n, 2) array of (x, y) points."""
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    proj = np.hstack([pts, ones]) @ h.T
    return proj[:, :2] / proj[:, 2:3]


def bilinear_sample(img, x, y):
    """Sample image channels at pixel-center coordinates with edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2) if w > 1 else np.zeros_like(x, dtype=int)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2) if h > 1 else np.zeros_like(y, dtype=int)
    fx = (x - x0)[..., None] if img.ndim == 3 else (x - x0)
    fy = (y - y0)[..., None] if img.ndim == 3 else (y - y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def rectify_image(img, corners, out_size=(610, 278)):
    """Warp the quad given by ``corners`` onto an axis-aligned out_size image.

    out_size is (rows, cols).  Bilinear sampling, 8-bit output.
    """
    h = homography_unit_to_quad(corners)
    rows, cols = out_size
    cx = (np.arange(cols) + 0.5) / cols
    cy = (np.arange(rows) + 0.5) / rows
    gx, gy = np.meshgrid(cx, cy)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    uv = apply_homography(h, pts)
    # edge-space -> pixel-center coordinates
    sx = uv[:, 0].reshape(rows, cols) - 0.5
    sy = uv[:, 1].reshape(rows, cols) - 0.5
    out = bilinear_sample(img, sx, sy)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def compute_pixel_pitch(real_length_um, pixels):
    """Physical length imaged by one pixel, µm/px."""
    if pixels < 1:
        raise ParameterError(f"pixel count must be >= 1, got {pixels}")
    return real_length_um / pixels


# ---------------------------------------------------------------------------
# train/test split


def split_train_test(records, ratio=0.8, seed=0):
    """Stratified random item-level split, deterministic given seed."""
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"split ratio must lie strictly in (0, 1), got {ratio}")
    by_class = {}
    for rec in records:
        by_class.setdefault(rec.class_id, []).append(rec.item_id)
    assignment = {}
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117)))
    for class_id in sorted(by_class):
        items = sorted(by_class[class_id])
        if len(items) < 2:
            raise DataError(f"class {class_id} has {len(items)} item(s); need at least 2 to split")
        order = rng.permutation(len(items))
        n_train = int(np.clip(round(ratio * len(items)), 1, len(items) - 1))
        for rank, idx in enumerate(order):
            assignment[items[idx]] = "train" if rank < n_train else "test"
    return SplitAssignment(assignment=assignment, ratio=ratio, seed=seed)


# ---------------------------------------------------------------------------
# sweep CSV


def save_sweep_csv(path, sweep):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for i, row in enumerate(sweep.samples):
            t = i / sweep.sample_rate
            fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")


def load_sweep_csv(path, class_id=-1, sweep_speed=50.0):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SWEEP_HEADER:
        raise ParseError(f"{path}:1: expected header {SWEEP_HEADER!r}")
    times = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 1 + N_TACTILE_CHANNELS:
            raise ParseError(
                f"{path}:{lineno}: expected {N_TACTILE_CHANNELS} data columns, got {len(parts) - 1}"
            )
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}")
        times.append(vals[0])
        rows.append(vals[1:])
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 samples, got {len(rows)}")
    sample_rate = 1.0 / (times[1] - times[0])
    return TactileSweep(
        samples=np.array(rows), sample_rate=sample_rate, sweep_speed=sweep_speed, class_id=class_id
    )


# ---------------------------------------------------------------------------
# PPM / PGM images


def save_image(path, image):
    pixels = image.pixels if isinstance(image, TextureImage) else np.asarray(image, dtype=np.uint8)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_image(path, pixel_pitch=(32.44, 35.97), class_id=-1):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, w, h, maxval, pixel_data = _parse_pnm(path, raw)
    if magic != b"P6":
        raise ParseError(f"{path}: expected P6 magic, got {magic!r}")
    expected = w * h * 3
    if len(pixel_data) < expected:
        raise ParseError(f"{path}: truncated pixel data ({len(pixel_data)} < {expected} bytes)")
    pixels = np.frombuffer(pixel_data[:expected], dtype=np.uint8).reshape(h, w, 3)
    return TextureImage(pixels=pixels.copy(), pixel_pitch=tuple(pixel_pitch), class_id=class_id)


def save_pgm(path, gray):
    """8-bit grayscale PGM (P5)."""
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def _parse_pnm(path, raw):
    fields = []
    pos = 2
    magic = raw[:2]
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated header at byte {pos}")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise ParseError(f"{path}: non-integer header fields {fields}")
    return magic, w, h, maxval, raw[pos:]


# ---------------------------------------------------------------------------
# manifest


def save_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "item_id": rec.item_id,
                        "class_id": rec.class_id,
                        "class_name": rec.class_name,
                        "specimen_id": rec.specimen_id,
                        "images": list(rec.images),
                        "sweeps": list(rec.sweeps),
                        "seed": rec.seed,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_manifest(path, check_files=True):
    base = os.path.dirname(os.path.abspath(path))
    records = []
    name_by_id = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}")
            missing = {"item_id", "class_id", "class_name", "specimen_id", "images", "sweeps", "seed"} - set(obj)
            if missing:
                raise ParseError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            class_id = int(obj["class_id"])
            if not 0 <= class_id < N_CLASSES:
                raise DataError(f"{path}:{lineno}: class_id {class_id} outside [0, {N_CLASSES})")
            name = obj["class_name"]
            if name_by_id.setdefault(class_id, name) != name:
                raise DataError(
                    f"{path}:{lineno}: class_id {class_id} maps to both "
                    f"{name_by_id[class_id]!r} and {name!r}"
                )
            rec = ManifestRecord(
                item_id=obj["item_id"],
                class_id=class_id,
                class_name=name,
                specimen_id=obj["specimen_id"],
                images=list(obj["images"]),
                sweeps=list(obj["sweeps"]),
                seed=int(obj["seed"]),
            )
            if check_files:
                for rel in rec.images + rec.sweeps:
                    full = os.path.join(base, rel)
                    if not os.path.exists(full):
                        raise DataError(f"{path}:{lineno}: referenced file missing: {rel}")
            records.append(rec)
    names = set(name_by_id.values())
    if len(names) != len(name_by_id):
        raise DataError(f"{path}: class_name/class_id mapping is not a bijection")
    return records
