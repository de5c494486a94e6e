"""절차적 LiDAR 스캐너 - 기본 도형 해석적 교차로 객체 스캔, 합성 데이터셋 생성"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DEFAULT_CLASSES, ScannerSpec, SynthConfig
from ..dataset import write_dataset
from ..errors import EmptyScanError, InvalidDataError, LabelError, ScanRejectedError
from ..models import BoxAnnotation, LidarObject, ObjectSample, PointSet, wrap
from ..objects import canonicalize, extract_object, points_in_box, rotation_z
from ..utils.log import progress

logger = logging.getLogger(__name__)

GROUND_LABEL = "ground"
MAX_POSE_ATTEMPTS = 200


@dataclass(frozen=True)
class Primitive:
    """
    객체 박스 기준 정규 좌표 (박스 = [-0.5, 0.5]^3)로 정의한 기본 도형

    kind:
        box      - center, size (각 축 비율)
        cylinder - center, axis ("x" | "y" | "z"), radius (축에 수직인 두 치수 중 작은 쪽 대비), size (축 방향 길이 비율)
        sphere   - center, radius (l, w, h 중 최솟값 대비)
    """

    kind: str
    center: Tuple[float, float, float]
    material: str
    size: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    axis: str = "z"
    radius: float = 0.5


@dataclass(frozen=True)
class ShapeTemplate:
    """클래스별 도형 조합과 크기/거리 분포"""

    cls: str
    parts: Tuple[Primitive, ...]
    length: Tuple[float, float]
    width: Tuple[float, float]
    height: Tuple[float, float]
    distance: Tuple[float, float]

    def sample_extent(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(*self.length), rng.uniform(*self.width), rng.uniform(*self.height)])


@dataclass(frozen=True)
class ScanPose:
    """센서 좌표계 배치: 수평 거리 d, 방위각, 박스 중심 고도 z, yaw"""

    d: float
    azimuth: float
    z: float
    yaw: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.d * math.cos(self.azimuth), self.d * math.sin(self.azimuth), self.z])


def _wheel(x: float, y: float, radius: float) -> Primitive:
    return Primitive("cylinder", (x, y, -0.5 + radius), "rubber", size=(1.0, 0.18, 1.0), axis="y", radius=radius)


TEMPLATES: Dict[str, ShapeTemplate] = {
    "vehicle": ShapeTemplate(
        cls="vehicle",
        parts=(
            Primitive("box", (0.0, 0.0, -0.12), "paint", size=(1.0, 1.0, 0.55)),
            Primitive("box", (-0.06, 0.0, 0.22), "glass", size=(0.55, 0.9, 0.44)),
            _wheel(0.32, 0.41, 0.2),
            _wheel(0.32, -0.41, 0.2),
            _wheel(-0.32, 0.41, 0.2),
            _wheel(-0.32, -0.41, 0.2),
        ),
        length=(3.8, 4.8),
        width=(1.7, 2.0),
        height=(1.4, 1.7),
        distance=(18.0, 40.0),
    ),
    "post": ShapeTemplate(
        cls="post",
        parts=(
            Primitive("cylinder", (0.0, 0.0, -0.05), "metal", size=(1.0, 1.0, 0.9), axis="z", radius=0.5),
            Primitive("box", (0.0, 0.0, 0.45), "retroreflector", size=(1.0, 1.0, 0.1)),
        ),
        length=(0.15, 0.35),
        width=(0.15, 0.35),
        height=(1.0, 3.0),
        distance=(6.0, 13.0),
    ),
    "bike": ShapeTemplate(
        cls="bike",
        parts=(
            Primitive("cylinder", (0.25, 0.0, -0.15), "rubber", size=(1.0, 0.15, 1.0), axis="y", radius=0.35),
            Primitive("cylinder", (-0.25, 0.0, -0.15), "rubber", size=(1.0, 0.15, 1.0), axis="y", radius=0.35),
            Primitive("box", (0.0, 0.0, 0.0), "metal", size=(0.6, 0.12, 0.08)),
            Primitive("box", (-0.12, 0.0, 0.3), "plastic", size=(0.3, 0.5, 0.4)),
            Primitive("sphere", (-0.1, 0.0, 0.4), "plastic", radius=0.1),
        ),
        length=(1.5, 1.9),
        width=(0.5, 0.7),
        height=(1.0, 1.3),
        distance=(6.0, 18.0),
    ),
    "barrier": ShapeTemplate(
        cls="barrier",
        parts=(
            Primitive("box", (0.0, 0.0, -0.1), "concrete", size=(1.0, 0.6, 0.8)),
            Primitive("box", (0.0, 0.0, 0.4), "retroreflector", size=(1.0, 0.35, 0.2)),
        ),
        length=(1.5, 3.0),
        width=(0.3, 0.6),
        height=(0.8, 1.2),
        distance=(12.0, 28.0),
    ),
}


def get_template(cls: str) -> ShapeTemplate:
    try:
        return TEMPLATES[cls]
    except KeyError:
        raise LabelError(f"알 수 없는 합성 클래스: {cls} (가능: {', '.join(TEMPLATES)})") from None


# ---------------------------------------------------------------- 광선 교차


_AXES = {"x": 0, "y": 1, "z": 2}


def _intersect_box(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    t_near = np.nanmax(near, axis=1)
    t_far = np.nanmin(far, axis=1)
    hit = (t_far >= t_near) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    axis = np.nanargmax(near, axis=1)
    normal = np.zeros_like(d)
    rows = np.arange(d.shape[0])
    normal[rows, axis] = -np.sign(d[rows, axis])
    return t, normal


def _intersect_sphere(o: np.ndarray, d: np.ndarray, c: np.ndarray, r: float):
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - cc
    root = np.sqrt(np.clip(disc, 0.0, None))
    t = -b - root
    hit = (disc >= 0) & (t > 0)
    t = np.where(hit, t, np.inf)
    p = o + np.where(hit, t, 0.0)[:, None] * d
    return t, (p - c) / r


def _intersect_cylinder(o: np.ndarray, d: np.ndarray, c: np.ndarray, axis: np.ndarray, r: float, half: float):
    oc = o - c
    d_ax = d @ axis
    oc_ax = oc @ axis
    d_perp = d - d_ax[:, None] * axis
    oc_perp = oc - oc_ax[:, None] * axis

    a = np.einsum("ij,ij->i", d_perp, d_perp)
    b = 2.0 * np.einsum("ij,ij->i", d_perp, oc_perp)
    cc = np.einsum("ij,ij->i", oc_perp, oc_perp) - r * r
    disc = b * b - 4.0 * a * cc
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.clip(disc, 0.0, None))) / (2.0 * a)
    side_ok = (a > 0) & (disc >= 0) & (t_side > 0) & (np.abs(oc_ax + t_side * d_ax) <= half)
    t_side = np.where(side_ok, t_side, np.inf)

    best = t_side
    normal = oc_perp + np.where(side_ok, t_side, 0.0)[:, None] * d_perp
    normal = normal / r
    for sign in (1.0, -1.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (sign * half - oc_ax) / d_ax
        radial = oc_perp + np.where(np.isfinite(t_cap), t_cap, 0.0)[:, None] * d_perp
        cap_ok = np.isfinite(t_cap) & (t_cap > 0) & (np.einsum("ij,ij->i", radial, radial) <= r * r)
        closer = cap_ok & (t_cap < best)
        best = np.where(closer, t_cap, best)
        normal = np.where(closer[:, None], sign * axis, normal)
    return best, normal


def _resolve(part: Primitive, extent: np.ndarray):
    """정규 좌표 도형을 미터 단위로"""
    center = np.asarray(part.center) * extent
    if part.kind == "box":
        half = np.asarray(part.size) * extent / 2.0
        return center - half, center + half
    if part.kind == "sphere":
        return center, part.radius * float(extent.min())
    if part.kind == "cylinder":
        k = _AXES[part.axis]
        others = [extent[i] for i in range(3) if i != k]
        axis = np.zeros(3)
        axis[k] = 1.0
        return center, axis, part.radius * float(min(others)), part.size[k] * extent[k] / 2.0
    raise InvalidDataError(f"알 수 없는 도형 종류: {part.kind}")


class LidarScanner:
    """회전식 멀티빔 LiDAR (센서 원점, 지면 z = -sensor_height)"""

    def __init__(self, spec: Optional[ScannerSpec] = None, i_max: float = 255.0):
        self.spec = spec or ScannerSpec()
        self.i_max = i_max
        self.elevations = self.spec.beam_elevations
        self.azimuth_step = math.radians(self.spec.azimuth_resolution)

    @property
    def ground_z(self) -> float:
        return -self.spec.sensor_height

    def _azimuth_grid(self, box: BoxAnnotation) -> np.ndarray:
        """박스 바닥 꼭짓점이 덮는 방위각 범위 안의 전역 격자 각도"""
        l, w, _ = box.extent
        corners = np.array([[sx * l / 2, sy * w / 2, 0.0] for sx in (-1, 1) for sy in (-1, 1)])
        world = corners @ rotation_z(box.yaw).T + box.center
        center_az = math.atan2(box.center[1], box.center[0])
        rel = wrap(np.arctan2(world[:, 1], world[:, 0]) - center_az)
        lo = math.ceil((center_az + rel.min()) / self.azimuth_step)
        hi = math.floor((center_az + rel.max()) / self.azimuth_step)
        return np.arange(lo, hi + 1) * self.azimuth_step

    def rays(self, box: BoxAnnotation) -> np.ndarray:
        """객체 각도 창 안의 (빔, 방위각) 광선 방향 (R, 3)"""
        az = self._azimuth_grid(box)
        el, az = np.meshgrid(self.elevations, az, indexing="ij")
        el, az = el.reshape(-1), az.reshape(-1)
        return np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])

    def cast(self, template: ShapeTemplate, box: BoxAnnotation, dirs: np.ndarray):
        """
        광선마다 첫 충돌 (객체 도형 또는 지면)

        Returns:
            (points (M, 4) 원시 intensity, labels (M,))
        """
        to_local = rotation_z(-box.yaw)
        o = np.broadcast_to(-(to_local @ box.center), dirs.shape)
        d = dirs @ to_local.T

        t_obj = np.full(dirs.shape[0], np.inf)
        normal = np.zeros_like(d)
        material = np.full(dirs.shape[0], -1)
        for idx, part in enumerate(template.parts):
            geom = _resolve(part, box.extent)
            if part.kind == "box":
                t, n = _intersect_box(o, d, *geom)
            elif part.kind == "sphere":
                t, n = _intersect_sphere(o, d, *geom)
            else:
                t, n = _intersect_cylinder(o, d, *geom)
            closer = t < t_obj
            t_obj = np.where(closer, t, t_obj)
            normal = np.where(closer[:, None], n, normal)
            material = np.where(closer, idx, material)

        with np.errstate(divide="ignore"):
            t_ground = np.where(dirs[:, 2] < 0, self.ground_z / dirs[:, 2], np.inf)

        obj_hit = np.isfinite(t_obj) & (t_obj < t_ground)
        ground_hit = ~obj_hit & np.isfinite(t_ground)

        points: List[np.ndarray] = []
        labels: List[np.ndarray] = []
        if np.any(obj_hit):
            t = t_obj[obj_hit]
            xyz = dirs[obj_hit] * t[:, None]
            cos_inc = np.abs(np.einsum("ij,ij->i", normal[obj_hit], d[obj_hit]))
            base = np.array([self.spec.reflectance[template.parts[m].material] for m in material[obj_hit]])
            points.append(np.column_stack([xyz, self.intensity(base, cos_inc, t)]))
            labels.append(np.full(t.size, template.cls, dtype=object))
        if np.any(ground_hit):
            t = t_ground[ground_hit]
            xyz = dirs[ground_hit] * t[:, None]
            cos_inc = np.abs(dirs[ground_hit, 2])
            base = np.full(t.size, self.spec.reflectance.get("concrete", 0.25))
            points.append(np.column_stack([xyz, self.intensity(base, cos_inc, t)]))
            labels.append(np.full(t.size, GROUND_LABEL, dtype=object))
        if not points:
            return np.zeros((0, 4)), np.zeros(0, dtype=object)
        return np.concatenate(points), np.concatenate(labels)

    def intensity(self, base: np.ndarray, cos_incidence: np.ndarray, distance: np.ndarray) -> np.ndarray:
        """원시 intensity = i_max * base * cos^k / (1 + c d^2)"""
        raw = self.i_max * base * cos_incidence**self.spec.incidence_exponent
        raw = raw / (1.0 + self.spec.range_attenuation * distance**2)
        return np.clip(raw, 0.0, self.i_max)

    def scan(self, template: ShapeTemplate, extent: np.ndarray, pose: ScanPose) -> LidarObject:
        """
        객체 하나 스캔

        Args:
            template: 클래스 도형 템플릿
            extent: (l, w, h) [m]
            pose: 배치

        Returns:
            LidarObject (센서 좌표계, 원시 intensity)

        Raises:
            EmptyScanError: 객체에 맞은 광선이 없음
            ScanRejectedError: 포인트 수가 [min_points, max_points] 밖
        """
        if pose.d <= 0:
            raise InvalidDataError(f"거리는 양수여야 합니다: {pose.d}")
        box = BoxAnnotation(center=pose.center, extent=np.asarray(extent, dtype=np.float64), yaw=pose.yaw)
        if points_in_box(np.zeros((1, 3)), box, margin=0.0)[0]:
            raise InvalidDataError("센서가 객체 박스 안에 있습니다")

        dirs = self.rays(box)
        if dirs.shape[0] == 0:
            raise EmptyScanError(f"{template.cls}: 각도 창 안에 광선이 없습니다 (d={pose.d:.1f})")
        points, labels = self.cast(template, box, dirs)
        if points.shape[0] == 0:
            raise EmptyScanError(f"{template.cls}: 광선이 아무것도 맞히지 못했습니다")
        hits = int(np.count_nonzero(points_in_box(points[:, :3], box) & (labels == template.cls)))
        if hits == 0:
            raise EmptyScanError(f"{template.cls}: 광선이 객체에 맞지 않았습니다 (d={pose.d:.1f})")
        if hits < self.spec.min_points:
            raise ScanRejectedError(f"{template.cls}: 포인트 {hits}개 < {self.spec.min_points}", hits)
        if hits > self.spec.max_points:
            raise ScanRejectedError(f"{template.cls}: 포인트 {hits}개 > {self.spec.max_points}", hits)
        return extract_object(points, labels, box, template.cls)

    def sample_pose(self, template: ShapeTemplate, extent: np.ndarray, rng: np.random.Generator) -> ScanPose:
        return ScanPose(
            d=float(rng.uniform(*template.distance)),
            azimuth=float(rng.uniform(-math.pi, math.pi)),
            z=self.ground_z + float(extent[2]) / 2.0,
            yaw=float(rng.uniform(-math.pi, math.pi)),
        )

    def scan_random(self, template: ShapeTemplate, rng: np.random.Generator) -> Tuple[LidarObject, ScanPose]:
        """받아들여질 때까지 크기와 포즈를 다시 뽑아 스캔"""
        last: Optional[ScanRejectedError] = None
        for _ in range(MAX_POSE_ATTEMPTS):
            extent = template.sample_extent(rng)
            pose = self.sample_pose(template, extent, rng)
            try:
                return self.scan(template, extent, pose), pose
            except ScanRejectedError as e:
                last = e
        raise ScanRejectedError(f"{template.cls}: {MAX_POSE_ATTEMPTS}번 시도 모두 기각 ({last})", getattr(last, "hits", 0))


def scan_object(template: ShapeTemplate, pose: ScanPose, spec: Optional[ScannerSpec] = None, extent=None) -> LidarObject:
    """템플릿 하나를 주어진 포즈에서 스캔 (extent 생략 시 크기 범위 중앙값)"""
    if extent is None:
        extent = np.array([np.mean(template.length), np.mean(template.width), np.mean(template.height)])
    return LidarScanner(spec).scan(template, np.asarray(extent, dtype=np.float64), pose)


def make_samples(
    counts: Dict[str, int],
    spec: ScannerSpec,
    seed: int,
    i_max: float = 255.0,
) -> List[ObjectSample]:
    """클래스별 객체를 스캔해 정규 좌표계 ObjectSample 목록 생성 (객체마다 독립 RNG)"""
    scanner = LidarScanner(spec, i_max=i_max)
    samples: List[ObjectSample] = []
    for class_idx, cls in enumerate(counts):
        template = get_template(cls)
        for i in progress(range(counts[cls]), desc=f"scan[{cls}]"):
            rng = np.random.default_rng([seed, class_idx, i])
            obj, _ = scanner.scan_random(template, rng)
            points, condition = canonicalize(obj, i_max)
            samples.append(ObjectSample(cls=cls, points=points, condition=condition, name=f"{cls}_{i:05d}"))
    return samples


def split_names(samples: Sequence[ObjectSample], val_fraction: float, seed: int) -> Dict[str, List[str]]:
    """클래스마다 결정적으로 섞어 train/val 분할"""
    rng = np.random.default_rng([seed, 99])
    splits: Dict[str, List[str]] = {"train": [], "val": []}
    classes = list(dict.fromkeys(s.cls for s in samples))
    for cls in classes:
        names = [s.name for s in samples if s.cls == cls]
        order = rng.permutation(len(names))
        n_val = int(round(len(names) * val_fraction))
        val = set(order[:n_val].tolist())
        splits["val"].extend(names[i] for i in sorted(val))
        splits["train"].extend(names[i] for i in range(len(names)) if i not in val)
    return splits


def make_dataset(
    classes: Sequence[str],
    counts: Dict[str, int],
    spec: ScannerSpec,
    seed: int,
    output_dir: Path,
    name: str = "synthetic",
    i_max: float = 255.0,
    val_fraction: float = 0.2,
    finalize: Optional[Callable[[Path], None]] = None,
) -> Path:
    """
    합성 데이터셋 디렉토리 생성 (같은 시드면 바이트 단위로 같은 출력)

    Args:
        classes: 매니페스트 클래스 목록
        counts: 클래스별 객체 수
        spec: 스캐너 사양
        seed: 마스터 시드
        output_dir: 출력 디렉토리
        finalize: write_dataset에 그대로 전달
    """
    unknown = [c for c in counts if c not in classes]
    if unknown:
        raise LabelError(f"classes에 없는 클래스의 개수가 지정되었습니다: {unknown}")
    ordered = {c: counts[c] for c in classes if c in counts}
    samples = make_samples(ordered, spec, seed, i_max)
    splits = split_names(samples, val_fraction, seed)
    return write_dataset(output_dir, samples, list(classes), splits, name=name, i_max=i_max, finalize=finalize)


def make_dataset_from_config(
    config: SynthConfig, output_dir: Path, finalize: Optional[Callable[[Path], None]] = None
) -> Path:
    classes = [c for c in DEFAULT_CLASSES if c in config.counts] + [c for c in config.counts if c not in DEFAULT_CLASSES]
    return make_dataset(
        classes,
        config.counts,
        config.scanner,
        config.seed,
        output_dir,
        name=config.name,
        i_max=config.i_max,
        val_fraction=config.val_fraction,
        finalize=finalize,
    )
