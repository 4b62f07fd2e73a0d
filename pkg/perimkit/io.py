"""File formats: ASCII PLY clouds, perimeter text, PGM images, DPTH depth rasters, frame directories."""

import glob
import logging
import os
import tempfile
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import parse_config_text
from .errors import ConfigError, FormatError
from .models import CameraFrame, Intrinsics, Perimeter, PointCloud, RigidPose

logger = logging.getLogger(__name__)

DEPTH_MAGIC = b"DPTH"


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write to a temporary sibling file, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise FormatError(f"cannot read '{path}': {e.strerror}") from e


def format_ply(cloud: PointCloud) -> str:
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    columns = [cloud.points]
    if cloud.normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
        columns.append(cloud.normals)
    if cloud.labels is not None:
        header.append("property int label")
    header.append("end_header")
    lines = header
    for i, row in enumerate(np.hstack(columns)):
        fields = [f"{v:.17g}" for v in row]
        if cloud.labels is not None:
            fields.append(str(int(cloud.labels[i])))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def write_ply(path: str, cloud: PointCloud) -> None:
    atomic_write_text(path, format_ply(cloud))


def read_ply(path: str) -> PointCloud:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"'{path}' is not a PLY file")
    count, names, body = None, [], None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format" and tokens[1:] != ["ascii", "1.0"]:
            raise FormatError(f"'{path}': only ascii 1.0 PLY is supported")
        elif tokens[0] == "element" and tokens[1] == "vertex":
            count = int(tokens[2])
        elif tokens[0] == "property" and count is not None:
            names.append(tokens[-1])
        elif tokens[0] == "end_header":
            body = lines[i + 1:]
            break
    if count is None or body is None or names[:3] != ["x", "y", "z"]:
        raise FormatError(f"'{path}': missing vertex element or x/y/z properties")
    rows = [l.split() for l in body if l.strip()][:count]
    if len(rows) != count or any(len(r) != len(names) for r in rows):
        raise FormatError(f"'{path}': expected {count} rows of {len(names)} values")
    try:
        table = np.array(rows, dtype=float).reshape(count, len(names))
    except ValueError as e:
        raise FormatError(f"'{path}': non-numeric vertex data") from e
    column = {name: table[:, i] for i, name in enumerate(names)}
    normals = None
    if all(n in column for n in ("nx", "ny", "nz")):
        normals = np.column_stack([column["nx"], column["ny"], column["nz"]])
    labels = column["label"].astype(np.int64) if "label" in column else None
    return PointCloud(points=table[:, :3], normals=normals, labels=labels)


def format_perimeter(perimeter: Perimeter) -> str:
    return "".join(f"{x:.17g} {y:.17g}\n" for x, y in perimeter.corners)


def write_perimeter(path: str, perimeter: Perimeter) -> None:
    atomic_write_text(path, format_perimeter(perimeter))


def read_perimeter(path: str) -> Perimeter:
    rows = [l.split() for l in _read_bytes(path).decode("utf-8").splitlines() if l.strip()]
    try:
        corners = np.array(rows, dtype=float)
    except ValueError as e:
        raise FormatError(f"'{path}': corner lines must be 'x y'") from e
    if corners.ndim != 2 or corners.shape[1] != 2 or len(corners) < 3:
        raise FormatError(f"'{path}': need at least 3 'x y' corner lines")
    return Perimeter(corners=corners)


def encode_pgm(image: np.ndarray) -> bytes:
    """8-bit binary PGM of an image with values in [0, 1]."""
    pixels = np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(data: bytes, name: str = "<pgm>") -> np.ndarray:
    tokens, pos = [], 2
    if data[:2] != b"P5":
        raise FormatError(f"'{name}' is not a binary PGM")
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    w, h, maxval = tokens
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = w * h * dtype.itemsize
    if len(data) - pos < expected:
        raise FormatError(f"'{name}': truncated pixel data")
    pixels = np.frombuffer(data[pos:pos + expected], dtype=dtype).reshape(h, w)
    return pixels.astype(float) / maxval


def read_pgm(path: str) -> np.ndarray:
    return decode_pgm(_read_bytes(path), path)


def encode_depth(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    return DEPTH_MAGIC + np.array([w, h], dtype="<u4").tobytes() + depth.tobytes()


def decode_depth(data: bytes, name: str = "<depth>") -> np.ndarray:
    if data[:4] != DEPTH_MAGIC or len(data) < 12:
        raise FormatError(f"'{name}' is not a DPTH raster")
    w, h = (int(v) for v in np.frombuffer(data[4:12], dtype="<u4"))
    if len(data) != 12 + 4 * w * h:
        raise FormatError(f"'{name}': expected {w}x{h} float32 values")
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w).astype(float)


def read_depth(path: str) -> np.ndarray:
    return decode_depth(_read_bytes(path), path)


def _floats(values: dict, key: str, count: int, source: str) -> np.ndarray:
    try:
        out = np.array(values[key].replace(",", " ").split(), dtype=float)
    except (KeyError, ValueError) as e:
        raise FormatError(f"'{source}': missing or malformed '{key}'") from e
    if out.size != count:
        raise FormatError(f"'{source}': '{key}' needs {count} values")
    return out


def _read_cfg(path: str) -> dict:
    try:
        return parse_config_text(_read_bytes(path).decode("utf-8"))
    except ConfigError as e:
        raise FormatError(f"'{path}': {e}") from e


def write_frames(directory: str, frames: List[CameraFrame], gt: Optional[Perimeter] = None) -> None:
    intr = frames[0].intrinsics
    atomic_write_text(os.path.join(directory, "intrinsics.cfg"),
                      "".join(f"{k} = {getattr(intr, k)!r}\n" for k in ("fx", "fy", "cx", "cy", "width", "height")))
    for i, frame in enumerate(frames):
        stem = os.path.join(directory, f"frame_{i:04d}")
        rotation = " ".join(f"{v:.17g}" for v in frame.pose.rotation.ravel())
        translation = " ".join(f"{v:.17g}" for v in frame.pose.translation)
        atomic_write_text(stem + ".cfg", f"rotation = {rotation}\ntranslation = {translation}\n")
        atomic_write_bytes(stem + ".pgm", encode_pgm(frame.image))
        if frame.depth is not None:
            atomic_write_bytes(stem + ".dpth", encode_depth(frame.depth))
        if frame.wall_mask is not None:
            atomic_write_bytes(stem + ".mask.pgm", encode_pgm(frame.wall_mask.astype(float)))
    if gt is not None:
        write_perimeter(os.path.join(directory, "gt.txt"), gt)


def read_frames(directory: str) -> Tuple[List[CameraFrame], Optional[Perimeter]]:
    """Load a frame directory; the ground-truth perimeter is None when gt.txt is absent."""
    source = os.path.join(directory, "intrinsics.cfg")
    values = _read_cfg(source)
    try:
        intr = Intrinsics(fx=float(values["fx"]), fy=float(values["fy"]), cx=float(values["cx"]),
                          cy=float(values["cy"]), width=int(values["width"]), height=int(values["height"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"'{source}': missing or malformed intrinsics") from e
    frames = []
    for cfg in sorted(glob.glob(os.path.join(directory, "frame_*.cfg"))):
        stem = cfg[:-len(".cfg")]
        pose_values = _read_cfg(cfg)
        pose = RigidPose(rotation=_floats(pose_values, "rotation", 9, cfg).reshape(3, 3),
                         translation=_floats(pose_values, "translation", 3, cfg))
        depth = read_depth(stem + ".dpth") if os.path.exists(stem + ".dpth") else None
        mask = read_pgm(stem + ".mask.pgm") > 0 if os.path.exists(stem + ".mask.pgm") else None
        frames.append(CameraFrame(intrinsics=intr, pose=pose, image=read_pgm(stem + ".pgm"),
                                  depth=depth, wall_mask=mask))
    if not frames:
        raise FormatError(f"'{directory}' contains no frame_*.cfg files")
    gt_path = os.path.join(directory, "gt.txt")
    gt = read_perimeter(gt_path) if os.path.exists(gt_path) else None
    logger.info("loaded %d frames from %s", len(frames), directory)
    return frames, gt


def write_table(path: str, table: pd.DataFrame) -> None:
    atomic_write_text(path, table.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
