"""Scenes, boxes, the two-level tiling geometry and low-resolution rasters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in scene pixels, centroid form.

    Ground-truth boxes carry ``score=None``; detections carry a score in [0, 1].
    """

    cx: float
    cy: float
    w: float
    h: float
    class_id: int = 0
    score: float | None = None

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def intersects(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        return self.x0 < x1 and self.x1 > x0 and self.y0 < y1 and self.y1 > y0

    def to_dict(self) -> dict:
        d = {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "class": self.class_id}
        if self.score is not None:
            d["score"] = self.score
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "BBox":
        score = d.get("score")
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]), int(d["class"]),
                   None if score is None else float(score))


def boxes_to_xyxy(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x0, b.y0, b.x1, b.y1] for b in boxes], dtype=np.float64)


@dataclass(frozen=True)
class Scene:
    id: str
    width: int
    height: int
    ground_truth: tuple[BBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"scene {self.id!r} has non-positive size {self.width}x{self.height}")
        for b in self.ground_truth:
            if b.score is not None:
                raise ValueError(f"scene {self.id!r}: ground-truth boxes must not carry scores")
            if not b.intersects(0, 0, self.width, self.height):
                raise ValueError(f"scene {self.id!r}: box {b} lies outside the scene")

    def to_json(self) -> str:
        doc = {"id": self.id, "width": self.width, "height": self.height,
               "objects": [b.to_dict() for b in self.ground_truth]}
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        doc = json.loads(text)
        return cls(str(doc["id"]), int(doc["width"]), int(doc["height"]),
                   tuple(BBox.from_dict(o) for o in doc.get("objects", [])))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


Rect = tuple[float, float, float, float]


@dataclass(frozen=True)
class GridLayout:
    """Square scene split into non-overlapping patches, each into overlapping subpatches."""

    scene_side: int
    patch_size: int
    patches_per_side: int
    subpatch_size: int
    subpatch_overlap: int
    n_patches: int
    n_subpatches: int

    @property
    def stride(self) -> int:
        return self.subpatch_size - self.subpatch_overlap

    @property
    def subpatches_per_side(self) -> int:
        return math.isqrt(self.n_subpatches)

    def patch_rect(self, i: int) -> Rect:
        r, c = divmod(i, self.patches_per_side)
        p = self.patch_size
        return (c * p, r * p, (c + 1) * p, (r + 1) * p)

    def subpatch_rect(self, i: int, j: int) -> Rect:
        """Scene-frame rectangle of subpatch ``j`` of patch ``i``."""
        px, py, _, _ = self.patch_rect(i)
        r, c = divmod(j, self.subpatches_per_side)
        x0 = px + c * self.stride
        y0 = py + r * self.stride
        return (x0, y0, x0 + self.subpatch_size, y0 + self.subpatch_size)

    def to_dict(self) -> dict:
        return {"scene_side": self.scene_side, "patch_size": self.patch_size,
                "subpatch_size": self.subpatch_size, "subpatch_overlap": self.subpatch_overlap}


def build_grid(scene_side: int, patch_size: int, subpatch_size: int, subpatch_overlap: int) -> GridLayout:
    if patch_size <= 0 or scene_side % patch_size:
        raise ConfigError(f"scene_side={scene_side} is not divisible by patch_size={patch_size}")
    stride = subpatch_size - subpatch_overlap
    if not (0 < subpatch_size <= patch_size) or stride <= 0:
        raise ConfigError(f"subpatch_size={subpatch_size} / subpatch_overlap={subpatch_overlap} "
                          f"do not fit patch_size={patch_size}")
    if (patch_size - subpatch_size) % stride:
        raise ConfigError(f"patch_size - subpatch_size = {patch_size - subpatch_size} is not divisible by "
                          f"stride subpatch_size - subpatch_overlap = {stride}")
    pps = scene_side // patch_size
    sps = (patch_size - subpatch_size) // stride + 1
    return GridLayout(scene_side, patch_size, pps, subpatch_size, subpatch_overlap, pps * pps, sps * sps)


@dataclass
class Assignment:
    """Ground truth split by tile. ``per_subpatch[i][j]`` may repeat boxes across overlap bands."""

    per_patch: list[list[BBox]]
    per_subpatch: list[list[list[BBox]]]
    counts: np.ndarray = field(repr=False)
    subpatch_counts: np.ndarray = field(repr=False)


def _cell(v: float, size: float, n: int) -> int:
    # boundary points belong to the lower cell
    return min(max(math.ceil(v / size) - 1, 0), n - 1)


def assign_boxes(scene: Scene, grid: GridLayout) -> Assignment:
    per_patch: list[list[BBox]] = [[] for _ in range(grid.n_patches)]
    for b in scene.ground_truth:
        col = _cell(b.cx, grid.patch_size, grid.patches_per_side)
        row = _cell(b.cy, grid.patch_size, grid.patches_per_side)
        per_patch[row * grid.patches_per_side + col].append(b)
    per_sub: list[list[list[BBox]]] = []
    for i, boxes in enumerate(per_patch):
        tiles = []
        for j in range(grid.n_subpatches):
            x0, y0, x1, y1 = grid.subpatch_rect(i, j)
            px0, py0, px1, py1 = grid.patch_rect(i)
            # centroids outside the scene were clamped into the patch above
            tiles.append([b for b in boxes
                          if x0 <= min(max(b.cx, px0), px1) <= x1 and y0 <= min(max(b.cy, py0), py1) <= y1])
        per_sub.append(tiles)
    counts = np.array([len(p) for p in per_patch], dtype=np.int64)
    sub_counts = np.array([[len(t) for t in tiles] for tiles in per_sub], dtype=np.int64)
    return Assignment(per_patch, per_sub, counts, sub_counts)


@dataclass(frozen=True)
class RasterObservation:
    """Grayscale raster, ``pixels`` shaped ``(height, width)`` with values in [0, 1]."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (self.height, self.width):
            raise ValueError(f"pixel array shape {px.shape} does not match {self.height}x{self.width}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("raster intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + np.rint(self.pixels * 255.0).astype(np.uint8).tobytes()

    def save_pgm(self, path) -> None:
        Path(path).write_bytes(self.to_pgm())


def read_pgm(data: bytes) -> RasterObservation:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PGM (P5) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return RasterObservation(w, h, body.reshape(h, w) / 255.0)


def rasterize(scene: Scene, out_width: int, out_height: int,
              class_intensities: Mapping[int, float]) -> RasterObservation:
    if out_width < 1 or out_height < 1:
        raise ValueError("output raster must be at least 1x1")
    gt = scene.ground_truth
    try:
        values = np.array([class_intensities[b.class_id] for b in gt], dtype=np.float64)
    except KeyError as exc:
        raise ConfigError(f"no raster intensity configured for class {exc.args[0]}") from None
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ConfigError("class intensities must lie in [0, 1]")
    xyxy = boxes_to_xyxy(gt)
    # multiply before dividing so exact grid-aligned edges stay exact
    x0 = xyxy[:, 0] * out_width / scene.width
    x1 = xyxy[:, 2] * out_width / scene.width
    y0 = xyxy[:, 1] * out_height / scene.height
    y1 = xyxy[:, 3] * out_height / scene.height
    canvas = kernels.paint_boxes(out_height, out_width, x0, y0, x1, y1, values)
    return RasterObservation(out_width, out_height, np.clip(canvas, 0.0, 1.0))


def crop_observation(obs: RasterObservation, grid: GridLayout, patch_index: int) -> RasterObservation:
    if not 0 <= patch_index < grid.n_patches:
        raise IndexError(f"patch_index {patch_index} outside [0, {grid.n_patches})")
    n = grid.patches_per_side
    if obs.width % n or obs.height % n:
        raise ValueError(f"raster {obs.width}x{obs.height} is not divisible into {n}x{n} patches")
    cw, ch = obs.width // n, obs.height // n
    r, c = divmod(patch_index, n)
    return RasterObservation(cw, ch, obs.pixels[r * ch:(r + 1) * ch, c * cw:(c + 1) * cw].copy())


@dataclass(frozen=True)
class ObservationConfig:
    """How policies see a scene: a square raster of the whole scene, cropped per patch for FPNet."""

    raster_side: int = 64
    class_intensities: Mapping[int, float] = field(default_factory=lambda: {0: 1.0, 1: 0.5})

    def scene_raster(self, scene: Scene) -> RasterObservation:
        return rasterize(scene, self.raster_side, self.raster_side, self.class_intensities)

    def patch_side(self, grid: GridLayout) -> int:
        return self.raster_side // grid.patches_per_side
