"""Annotation records, image handling, and the synthetic scene generator.

Annotations are JSON-lines: a schema-version header line followed by one
record per line. Images are RGB/grayscale PNG or raw CSV grids; all
coordinates are normalized to the unit square.

Synthetic scenes make the two-stage mechanism learnable at desk scale:
each scene holds a handful of indistinguishable intensity blobs plus one
high-contrast wedge at the head position whose orientation is the true
gaze direction. The gaze point is the blob center angularly closest to
the wedge orientation; by construction that blob sits exactly on the
wedge axis, and every distractor keeps a wide angular margin.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError
from .gridio import read_grid_csv, write_grid_csv

SCHEMA_NAME = "gaze-annotations"
SCHEMA_VERSION = 1

_DISTRACTOR_RETRY_CAP = 200


class DegenerateSample(DataError):
    """Sample cannot be used for training (e.g. gaze at the head center)."""


@dataclass
class GazeAnnotationRecord:
    image: str
    width: int
    height: int
    head_box: tuple[float, float, float, float]  # x, y, w, h, normalized
    head_center: tuple[float, float]
    gaze: list[tuple[float, float]]
    split: str = "train"

    def validate(self) -> None:
        x, y, w, h = self.head_box
        if w <= 0 or h <= 0:
            raise DataError(f"degenerate head box {self.head_box}")
        if x < 0 or y < 0 or x + w > 1 + 1e-9 or y + h > 1 + 1e-9:
            raise DataError(f"head box {self.head_box} outside the image")
        if not self.gaze:
            raise DataError("record has no gaze points")
        for gx, gy in self.gaze:
            if not (0.0 <= gx <= 1.0 and 0.0 <= gy <= 1.0):
                raise DataError(f"gaze point ({gx}, {gy}) outside [0,1]^2")
        hx, hy = self.head_center
        if not (0.0 <= hx <= 1.0 and 0.0 <= hy <= 1.0):
            raise DataError(f"head center ({hx}, {hy}) outside [0,1]^2")
        if self.width < 1 or self.height < 1:
            raise DataError(f"bad image extents {self.width}x{self.height}")


def save_annotations(records, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": SCHEMA_NAME, "version": SCHEMA_VERSION}) + "\n")
        for r in records:
            fh.write(json.dumps({
                "image": r.image, "width": r.width, "height": r.height,
                "head_box": list(r.head_box), "head_center": list(r.head_center),
                "gaze": [list(g) for g in r.gaze], "split": r.split,
            }) + "\n")


def load_annotations(path: str) -> list[GazeAnnotationRecord]:
    """Parse and validate a JSON-lines annotation file.

    A zero-byte file is an empty dataset. Any malformed or out-of-range
    row raises DataError naming the offending line.
    """
    if not os.path.exists(path):
        raise DataError(f"annotation file not found: {path}")
    records = []
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        return records
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: header is not valid JSON: {exc}") from exc
    if header.get("schema") != SCHEMA_NAME or header.get("version") != SCHEMA_VERSION:
        raise DataError(f"{path}:1: unrecognized schema header {header!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            rec = GazeAnnotationRecord(
                image=raw["image"], width=int(raw["width"]), height=int(raw["height"]),
                head_box=tuple(float(v) for v in raw["head_box"]),
                head_center=tuple(float(v) for v in raw["head_center"]),
                gaze=[tuple(float(v) for v in g) for g in raw["gaze"]],
                split=raw.get("split", "train"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
        try:
            rec.validate()
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def save_image(path: str, img: np.ndarray) -> None:
    """Write a (C, H, W) float image in [0,1] as PNG, or as a CSV grid."""
    if path.endswith(".csv"):
        if img.shape[0] != 1:
            raise DataError("CSV grids hold a single channel")
        write_grid_csv(path, img[0])
        return
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    elif arr.shape[0] == 3:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise DataError(f"unsupported channel count {arr.shape[0]}")


def load_image(path: str) -> np.ndarray:
    """Load PNG or CSV grid into a (C, H, W) float64 array in [0,1]."""
    if not os.path.exists(path):
        raise DataError(f"image not found: {path}")
    if path.endswith(".csv"):
        return read_grid_csv(path)[None, :, :]
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None, :, :]
    return arr.transpose(2, 0, 1)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of a (C, H, W) array."""
    c, h, w = img.shape
    if out_h == h and out_w == w:
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass
class GazeSample:
    scene: np.ndarray        # (3, S, S)
    head_crop: np.ndarray    # (3, C, C)
    head: np.ndarray         # (2,)
    gaze_points: np.ndarray  # (k, 2)
    direction: np.ndarray    # (2,), unit, head -> first gaze point
    image_id: str = ""


def make_sample(record: GazeAnnotationRecord, image: np.ndarray,
                scene_res: int, crop_res: int) -> GazeSample:
    """Resize the scene, extract and resize the head crop, derive labels."""
    record.validate()
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    _, h, w = image.shape
    bx, by, bw, bh = record.head_box
    x0, x1 = int(round(bx * w)), int(round((bx + bw) * w))
    y0, y1 = int(round(by * h)), int(round((by + bh) * h))
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise DataError(f"head box {record.head_box} degenerate at {w}x{h} pixels")
    crop = image[:, y0:y1, x0:x1]
    head = np.array([bx + bw / 2.0, by + bh / 2.0])
    gaze = np.asarray(record.gaze, dtype=np.float64)
    direction = gaze[0] - head
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise DegenerateSample("gaze point coincides with the head center")
    return GazeSample(
        scene=bilinear_resize(image, scene_res, scene_res),
        head_crop=bilinear_resize(crop, crop_res, crop_res),
        head=head,
        gaze_points=gaze,
        direction=direction / norm,
        image_id=record.image,
    )


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSceneSpec:
    resolution: int = 64
    noise_amplitude: float = 0.06
    blob_count: int = 5
    blob_radius: tuple[float, float] = (0.035, 0.06)
    wedge_size: float = 0.24            # head box side length
    angle_tolerance_deg: float = 15.0
    seed: int = 0
    head_margin: float = 0.38           # head center drawn from [m, 1-m]^2
    blob_margin: float = 0.08
    min_gaze_distance: float = 0.2

    def __post_init__(self):
        if self.blob_count < 1:
            raise ValueError("blob_count must be >= 1")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")


def _sample_rng(spec: SyntheticSceneSpec, index: int) -> np.random.Generator:
    # independent per-sample stream: parallel generation stays deterministic
    return np.random.default_rng(np.random.SeedSequence((spec.seed, index)))


def _render_blob(img: np.ndarray, center: np.ndarray, radius: float) -> None:
    r = img.shape[1]
    xs = (np.arange(r) + 0.5) / r
    d2 = (xs[None, :] - center[0]) ** 2 + (xs[:, None] - center[1]) ** 2
    bump = 0.9 * np.exp(-d2 / (2.0 * radius * radius))
    img[1] += bump
    img[2] += bump


def _render_wedge(img: np.ndarray, head: np.ndarray, direction: np.ndarray,
                  half_size: float, half_angle_deg: float = 28.0) -> None:
    r = img.shape[1]
    xs = (np.arange(r) + 0.5) / r
    vx = xs[None, :] - head[0]
    vy = xs[:, None] - head[1]
    vnorm = np.hypot(vx, vy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (vx * direction[0] + vy * direction[1]) / np.where(vnorm == 0, 1.0, vnorm)
    inside = (vnorm <= half_size) & (cos >= math.cos(math.radians(half_angle_deg)))
    img[0][inside] = 1.0
    img[1][inside] *= 0.15
    img[2][inside] *= 0.15


def generate_scene(spec: SyntheticSceneSpec, index: int) -> tuple[np.ndarray, GazeAnnotationRecord]:
    """One deterministic scene: image plus its annotation record."""
    rng = _sample_rng(spec, index)
    m = spec.head_margin
    head = rng.uniform(m, 1.0 - m, size=2)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.array([math.cos(phi), math.sin(phi)])

    # longest ray from the head that stays inside the blob margin box
    bm = spec.blob_margin
    limit = np.inf
    for d, pos in zip(direction, head):
        if d > 0:
            limit = min(limit, (1.0 - bm - pos) / d)
        elif d < 0:
            limit = min(limit, (bm - pos) / d)
    t = rng.uniform(spec.min_gaze_distance, max(spec.min_gaze_distance + 0.02, limit))
    gaze = head + t * direction

    radii = rng.uniform(*spec.blob_radius, size=spec.blob_count)
    blobs = [gaze]
    guard = math.cos(math.radians(2.0 * spec.angle_tolerance_deg))
    for _ in range(spec.blob_count - 1):
        for attempt in range(_DISTRACTOR_RETRY_CAP):
            p = rng.uniform(bm, 1.0 - bm, size=2)
            v = p - head
            vn = np.linalg.norm(v)
            if vn < spec.min_gaze_distance * 0.8:
                continue  # keep the head region clear
            if float(v @ direction) / vn > guard:
                continue  # too close in bearing: the target must stay closest
            blobs.append(p)
            break
        else:
            raise DataError(f"scene {index}: distractor placement exceeded retry cap")

    img = spec.noise_amplitude * rng.random((3, spec.resolution, spec.resolution))
    for center, radius in zip(blobs, radii):
        _render_blob(img, center, radius)
    _render_wedge(img, head, direction, spec.wedge_size / 2.0)
    np.clip(img, 0.0, 1.0, out=img)

    s = spec.wedge_size
    record = GazeAnnotationRecord(
        image=f"scene_{index:05d}.png",
        width=spec.resolution, height=spec.resolution,
        head_box=(float(head[0] - s / 2), float(head[1] - s / 2), s, s),
        head_center=(float(head[0]), float(head[1])),
        gaze=[(float(gaze[0]), float(gaze[1]))],
    )
    return img, record


def generate_synthetic(spec: SyntheticSceneSpec, n: int, scene_res: int | None = None,
                       crop_res: int = 32, start_index: int = 0,
                       split: str = "train") -> list[GazeSample]:
    """In-memory dataset of n deterministic samples."""
    scene_res = scene_res or spec.resolution
    samples = []
    for i in range(start_index, start_index + n):
        img, record = generate_scene(spec, i)
        record.split = split
        samples.append(make_sample(record, img, scene_res, crop_res))
    return samples


def write_dataset(spec: SyntheticSceneSpec, n_train: int, n_test: int, out_dir: str) -> dict:
    """Render scenes to PNG and write the annotation file. Returns counts."""
    scene_dir = os.path.join(out_dir, "scenes")
    os.makedirs(scene_dir, exist_ok=True)
    records = []
    for i in range(n_train + n_test):
        img, record = generate_scene(spec, i)
        record.split = "train" if i < n_train else "test"
        save_image(os.path.join(scene_dir, record.image), img)
        records.append(record)
    path = os.path.join(out_dir, "annotations.jsonl")
    save_annotations(records, path)
    return {"train": n_train, "test": n_test, "annotations": path}


def load_dataset(dataset_dir: str, scene_res: int, crop_res: int,
                 split: str | None = None) -> tuple[list[GazeSample], int]:
    """Load samples from a dataset directory; returns (samples, skipped)."""
    records = load_annotations(os.path.join(dataset_dir, "annotations.jsonl"))
    if split is not None:
        records = [r for r in records if r.split == split]
    samples, skipped = [], 0
    for rec in records:
        img = load_image(os.path.join(dataset_dir, "scenes", rec.image))
        try:
            samples.append(make_sample(rec, img, scene_res, crop_res))
        except DegenerateSample:
            skipped += 1
    return samples, skipped
