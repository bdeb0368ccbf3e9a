"""On-disk formats: palette rasters, point clouds, pose CSV, camera file."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .bev_projection import BEVMap, CameraModel, Pose, SemanticFrame
from .semantics import NUM_CLASSES, flat_palette

CLOUD_MAGIC = b"LCPC0001"
GEOREF_KEY = "lanecarto-georef"


def _palette_image(codes: np.ndarray) -> Image.Image:
    arr = np.ascontiguousarray(codes, dtype=np.uint8)
    img = Image.fromarray(arr, mode="P")
    img.putpalette(flat_palette())
    return img


def _read_codes(path) -> tuple[np.ndarray, Image.Image]:
    img = Image.open(path)
    if img.mode != "P":
        raise ValueError(f"{path}: expected an indexed-palette image, got mode {img.mode}")
    codes = np.asarray(img, dtype=np.uint8)
    if codes.size and int(codes.max()) >= NUM_CLASSES:
        raise ValueError(f"{path}: palette index >= {NUM_CLASSES}")
    return codes, img


def write_frame(path, frame: SemanticFrame) -> None:
    info = PngImagePlugin.PngInfo()
    info.add_text("timestamp", repr(float(frame.timestamp)))
    _palette_image(frame.codes).save(path, pnginfo=info)


def read_frame(path, timestamp: float | None = None) -> SemanticFrame:
    codes, img = _read_codes(path)
    ts = timestamp
    if ts is None:
        ts = float(img.info.get("timestamp", "nan"))
    return SemanticFrame(ts, codes)


def write_bev_png(path, labels: np.ndarray, ix0: int, iy0: int, cell_size: float) -> None:
    """Store a label raster north-up; the PNG text chunk carries the georeference."""
    info = PngImagePlugin.PngInfo()
    info.add_text(GEOREF_KEY, json.dumps({"ix0": int(ix0), "iy0": int(iy0), "cell_size": cell_size}))
    _palette_image(np.flipud(labels)).save(path, pnginfo=info)


def read_bev_png(path) -> tuple[np.ndarray, int, int, float]:
    codes, img = _read_codes(path)
    meta = img.info.get(GEOREF_KEY)
    if meta is None:
        raise ValueError(f"{path}: missing {GEOREF_KEY} text chunk")
    g = json.loads(meta)
    return np.flipud(codes).copy(), int(g["ix0"]), int(g["iy0"]), float(g["cell_size"])


def load_bev(path) -> BEVMap:
    labels, ix0, iy0, cs = read_bev_png(path)
    return BEVMap.from_labels(labels, ix0, iy0, cs)


def write_cloud(path, points) -> None:
    P = np.asarray(points, dtype="<f4").reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(P.tobytes())


def read_cloud(path) -> np.ndarray:
    p = Path(path)
    raw = p.read_bytes()
    if raw[:8] == CLOUD_MAGIC:
        body = raw[8:]
        if len(body) % 12:
            raise ValueError(f"{p}: truncated point record")
        return np.frombuffer(body, dtype="<f4").reshape(-1, 3).astype(float)
    rows = []
    for line in raw.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line[0].isalpha() or line.startswith("#"):
            continue
        rows.append([float(v) for v in line.replace(";", ",").split(",")[:3]])
    return np.asarray(rows, dtype=float).reshape(-1, 3)


POSE_FIELDS = ("timestamp", "x", "y", "z", "yaw", "pitch", "roll")


def write_poses(path, poses) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_FIELDS)
        for p in poses:
            w.writerow([repr(float(getattr(p, f))) for f in POSE_FIELDS])


def read_poses(path) -> list[Pose]:
    poses: list[Pose] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row[:7]]
            except ValueError:
                continue  # header
            poses.append(Pose(*vals))
    for a, b in zip(poses, poses[1:]):
        if not b.timestamp > a.timestamp:
            raise ValueError(f"{path}: pose timestamps must be strictly increasing")
    return poses


def write_camera(path, cam: CameraModel, width: int | None = None, height: int | None = None) -> None:
    lines = [f"fx={cam.fx!r}", f"fy={cam.fy!r}", f"cx={cam.cx!r}", f"cy={cam.cy!r}"]
    if width is not None:
        lines += [f"width={int(width)}", f"height={int(height)}"]
    lines.append("extrinsic=" + " ".join(repr(v) for v in cam.extrinsic_rows()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_camera(path) -> CameraModel:
    kv: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, _, v = line.partition("=")
        kv[k.strip()] = v.strip()
    missing = [k for k in ("fx", "fy", "cx", "cy") if k not in kv]
    if missing:
        raise ValueError(f"{path}: missing camera keys {missing}")
    kwargs = {}
    if "extrinsic" in kv:
        vals = [float(v) for v in kv["extrinsic"].replace(",", " ").split()]
        if len(vals) != 12:
            raise ValueError(f"{path}: extrinsic needs 12 values, got {len(vals)}")
        M = np.array(vals).reshape(3, 4)
        kwargs = {"rotation": M[:, :3], "translation": M[:, 3]}
    return CameraModel(float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]), **kwargs)
