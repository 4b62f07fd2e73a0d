import re
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import softmax
from shapely.geometry import LinearRing, Polygon

# Label value for points that belong to no wall instance.
NOISE = -1

SHAPE_CLASSES = ("Rectangle", "L", "T", "U")


def _array(value, dtype=float, ndim: Optional[int] = None, width: Optional[int] = None) -> np.ndarray:
    """Coerce to a read-only numpy array, checking rank and trailing width."""
    arr = np.array(value, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        if ndim == 2 and arr.size == 0 and width is not None:
            arr = arr.reshape(0, width)
        else:
            raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if width is not None and arr.shape[-1] != width:
        raise ValueError(f"expected trailing dimension {width}, got shape {arr.shape}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    arr.flags.writeable = False
    return arr


class GeometryModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class RigidPose(GeometryModel):
    """World-to-camera rigid motion: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @field_validator("rotation", mode="before")
    @classmethod
    def check_rotation(cls, v):
        r = _array(v, ndim=2, width=3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        return r

    @field_validator("translation", mode="before")
    @classmethod
    def check_translation(cls, v):
        t = _array(v, ndim=1, width=3)
        return t

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rotation=rt, translation=-rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose applying ``other`` first, then ``self``."""
        return RigidPose(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


class Intrinsics(GeometryModel):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @model_validator(mode="after")
    def check_principal_point(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


class Line2D(GeometryModel):
    """The line {p : normal . p = offset}."""

    normal: np.ndarray
    offset: float

    @field_validator("normal", mode="before")
    @classmethod
    def check_normal(cls, v):
        n = _array(v, ndim=1, width=2)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("line normal must be unit length")
        return n

    @classmethod
    def from_normal(cls, normal: Sequence[float], offset: float) -> "Line2D":
        """Build a line from a non-unit normal, rescaling the offset to match."""
        n = np.asarray(normal, dtype=float)
        length = float(np.linalg.norm(n))
        if length == 0.0:
            raise ValueError("line normal must be non-zero")
        return cls(normal=n / length, offset=float(offset) / length)

    @classmethod
    def through(cls, point: Sequence[float], normal: Sequence[float]) -> "Line2D":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(normal=n, offset=float(n @ np.asarray(point, dtype=float)))

    @property
    def direction(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])

    @property
    def angle(self) -> float:
        """Angle of the normal in radians."""
        return float(np.arctan2(self.normal[1], self.normal[0]))

    def residuals(self, points: np.ndarray) -> np.ndarray:
        """Signed perpendicular distances of (N, 2) points."""
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def canonical(self) -> "Line2D":
        """Representative of (n, d) ~ (-n, -d) with the lexicographically larger normal."""
        n = self.normal
        if (n[0], n[1]) < (-n[0], -n[1]):
            return Line2D(normal=-n, offset=-self.offset)
        return self

    def same_as(self, other: "Line2D", tol: float = 1e-9) -> bool:
        a, b = self.canonical(), other.canonical()
        return bool(np.allclose(a.normal, b.normal, atol=tol) and abs(a.offset - b.offset) <= tol)


class PointCloud(GeometryModel):
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    @field_validator("points", mode="before")
    @classmethod
    def check_points(cls, v):
        return _array(v, ndim=2, width=3)

    @field_validator("normals", mode="before")
    @classmethod
    def check_normals(cls, v):
        if v is None:
            return None
        n = _array(v, ndim=2, width=3)
        if len(n) and not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6):
            raise ValueError("normals must be unit length")
        return n

    @field_validator("labels", mode="before")
    @classmethod
    def check_labels(cls, v):
        if v is None:
            return None
        return _array(v, dtype=np.int64, ndim=1)

    @model_validator(mode="after")
    def check_parallel(self):
        n = len(self.points)
        if self.normals is not None and len(self.normals) != n:
            raise ValueError("normals and points differ in length")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels and points differ in length")
        return self

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(points=np.zeros((0, 3)))

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return cls.empty()
        normals = None
        labels = None
        if all(c.normals is not None for c in clouds):
            normals = np.vstack([c.normals for c in clouds])
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return cls(points=np.vstack([c.points for c in clouds]), normals=normals, labels=labels)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or index array, keeping the arrays parallel."""
        return PointCloud(
            points=self.points[index],
            normals=None if self.normals is None else self.normals[index],
            labels=None if self.labels is None else self.labels[index],
        )

    def with_normals(self, normals: Optional[np.ndarray]) -> "PointCloud":
        return PointCloud(points=self.points, normals=normals, labels=self.labels)

    def with_labels(self, labels: Optional[np.ndarray]) -> "PointCloud":
        return PointCloud(points=self.points, normals=self.normals, labels=labels)


class RoomSkeleton(GeometryModel):
    """Closed CCW floor polygon extruded to ``height``."""

    shape_class: Literal["Rectangle", "L", "T", "U"]
    corners: np.ndarray
    height: float

    @field_validator("corners", mode="before")
    @classmethod
    def check_corners(cls, v):
        c = _array(v, ndim=2, width=2)
        if len(c) < 3:
            raise ValueError("a skeleton needs at least 3 corners")
        edges = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)
        if np.any(edges <= 0.5):
            raise ValueError("skeleton edges must be longer than 0.5 m")
        ring = LinearRing(c)
        if not ring.is_simple:
            raise ValueError("skeleton polygon self-intersects")
        if not ring.is_ccw:
            raise ValueError("skeleton corners must be counter-clockwise")
        return c

    @field_validator("height")
    @classmethod
    def check_height(cls, v):
        if v <= 0:
            raise ValueError("height must be positive")
        return v

    @property
    def walls(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        c = self.corners
        return [(c[i], c[(i + 1) % len(c)]) for i in range(len(c))]

    def wall_lines(self) -> List[Line2D]:
        """Wall lines with inward-pointing normals (interior lies to the left of a CCW edge)."""
        lines = []
        for a, b in self.walls:
            d = b - a
            lines.append(Line2D.through(a, [-d[1], d[0]]))
        return lines

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.corners)


class SynthScene(GeometryModel):
    cloud: PointCloud
    skeleton: RoomSkeleton


class CameraFrame(GeometryModel):
    intrinsics: Intrinsics
    pose: RigidPose
    image: np.ndarray
    depth: Optional[np.ndarray] = None
    wall_mask: Optional[np.ndarray] = None

    @field_validator("image", "depth", mode="before")
    @classmethod
    def check_raster(cls, v):
        if v is None:
            return None
        return _array(v, ndim=2)

    @field_validator("wall_mask", mode="before")
    @classmethod
    def check_mask(cls, v):
        if v is None:
            return None
        return _array(v, dtype=bool, ndim=2)

    @model_validator(mode="after")
    def check_buffers(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        for name in ("image", "depth", "wall_mask"):
            buf = getattr(self, name)
            if buf is not None and buf.shape != shape:
                raise ValueError(f"{name} has shape {buf.shape}, expected {shape}")
        if self.depth is not None and np.any(self.depth < 0):
            raise ValueError("depth values must be non-negative")
        return self


class CostVolume(GeometryModel):
    values: np.ndarray
    depth_samples: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, v):
        return _array(v, ndim=3)

    @field_validator("depth_samples", mode="before")
    @classmethod
    def check_samples(cls, v):
        d = _array(v, ndim=1)
        if np.any(np.diff(d) <= 0):
            raise ValueError("depth samples must be strictly increasing")
        return d

    @model_validator(mode="after")
    def check_depth_count(self):
        if self.values.shape[0] != len(self.depth_samples):
            raise ValueError("cost volume depth axis does not match sample count")
        return self


class Triangulation(GeometryModel):
    vertices: np.ndarray
    triangles: np.ndarray

    @field_validator("vertices", mode="before")
    @classmethod
    def check_vertices(cls, v):
        return _array(v, ndim=2, width=2)

    @field_validator("triangles", mode="before")
    @classmethod
    def check_triangles(cls, v):
        return _array(v, dtype=np.int64, ndim=2, width=3)


class Contour(GeometryModel):
    polylines: List[np.ndarray]
    densified: np.ndarray

    @field_validator("polylines", mode="before")
    @classmethod
    def check_polylines(cls, v):
        return [_array(p, ndim=2, width=2) for p in v]

    @field_validator("densified", mode="before")
    @classmethod
    def check_densified(cls, v):
        return _array(v, ndim=2, width=2)


class SoftAssignment(GeometryModel):
    """Per-point logits over k plane instances plus a trailing reject class."""

    logits: np.ndarray

    @field_validator("logits", mode="before")
    @classmethod
    def check_logits(cls, v):
        z = _array(v, ndim=2)
        if z.shape[1] < 2:
            raise ValueError("need at least one cluster column plus the reject column")
        return z

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    @property
    def k(self) -> int:
        return self.logits.shape[1] - 1


class WallCluster(GeometryModel):
    points2d: np.ndarray
    line: Line2D
    median: np.ndarray

    @field_validator("points2d", mode="before")
    @classmethod
    def check_points(cls, v):
        p = _array(v, ndim=2, width=2)
        if len(p) < 2:
            raise ValueError("a wall cluster needs at least 2 points")
        return p

    @field_validator("median", mode="before")
    @classmethod
    def check_median(cls, v):
        return _array(v, ndim=1, width=2)

    @property
    def size(self) -> int:
        return len(self.points2d)


class Perimeter(GeometryModel):
    corners: np.ndarray

    @field_validator("corners", mode="before")
    @classmethod
    def check_corners(cls, v):
        c = _array(v, ndim=2, width=2)
        if len(c) < 3:
            raise ValueError("a perimeter needs at least 3 corners")
        return c

    @property
    def walls(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        c = self.corners
        return [(c[i], c[(i + 1) % len(c)]) for i in range(len(c))]

    @property
    def area(self) -> float:
        x, y = self.corners[:, 0], self.corners[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def is_simple(self) -> bool:
        return bool(LinearRing(self.corners).is_simple)


class EvalReport(BaseModel):
    iou2d: float
    corner_error: float
    spurious_fraction: float
    matched_corners: int

    @field_validator("iou2d")
    @classmethod
    def check_iou(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("iou2d must lie in [0, 1]")
        return v

    @field_validator("corner_error", "spurious_fraction")
    @classmethod
    def check_finite(cls, v):
        if not np.isfinite(v) or v < 0:
            raise ValueError("metric must be finite and non-negative")
        return v


_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class SceneRecord(BaseModel):
    """Inputs and output locations of one pipeline scene."""

    scene_id: str
    input_path: str
    gt_path: Optional[str] = None
    output_dir: str

    @field_validator("scene_id")
    @classmethod
    def check_scene_id(cls, v):
        if not _SAFE_ID.match(v):
            raise ValueError(f"scene_id '{v}' is empty or not filesystem-safe")
        return v

    def output(self, suffix: str) -> str:
        return f"{self.output_dir}/{self.scene_id}{suffix}"

    @property
    def culled_path(self) -> str:
        return self.output("_culled.ply")

    @property
    def labels_path(self) -> str:
        return self.output("_labels.ply")

    @property
    def perimeter_path(self) -> str:
        return self.output("_perimeter.txt")

    @property
    def svg_path(self) -> str:
        return self.output(".svg")

    @property
    def csv_path(self) -> str:
        return self.output(".csv")
