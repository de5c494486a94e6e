"""데이터 모델 정의"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import InvalidAnnotationError, InvalidDataError


def wrap(angle):
    """각도를 [-pi, pi) 로 정규화 (모듈러 연산은 여기서만 한다)"""
    a = np.asarray(angle, dtype=np.float64)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    # mod 결과가 반올림으로 2pi가 되는 경우
    out = np.where(out >= np.pi, out - 2.0 * np.pi, out)
    if np.ndim(angle) == 0:
        return float(out)
    return out


def _frozen_array(values, shape_tail=None, name="array") -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if shape_tail is not None and arr.shape[1:] != shape_tail:
        raise InvalidDataError(f"{name} shape 오류: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{name}에 유한하지 않은 값이 있습니다")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """포인트 집합 (x, y, z [m], intensity)"""
    points: np.ndarray  # (N, 4)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise InvalidDataError(f"포인트 배열은 (N, 4) 이어야 합니다: {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidDataError("포인트 집합이 비어 있습니다")
        object.__setattr__(self, "points", _frozen_array(pts, (4,), "points"))

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def channels(self, count: int) -> np.ndarray:
        """앞에서부터 count개 채널 (3=좌표만, 4=intensity 포함)"""
        if count not in (3, 4):
            raise InvalidDataError(f"채널 수는 3 또는 4: {count}")
        return self.points[:, :count]


@dataclass(frozen=True, eq=False)
class BoxAnnotation:
    """센서 좌표계의 방향 있는 3D 박스"""
    center: np.ndarray  # (x, y, z) [m]
    extent: np.ndarray  # (l, w, h) [m]
    yaw: float  # 라디안, [-pi, pi)

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        extent = np.array(self.extent, dtype=np.float64).reshape(-1)
        if center.shape != (3,) or extent.shape != (3,):
            raise InvalidAnnotationError("center와 extent는 길이 3이어야 합니다")
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(extent)) and math.isfinite(self.yaw)):
            raise InvalidAnnotationError("박스 값이 유한하지 않습니다")
        if np.any(extent <= 0):
            raise InvalidAnnotationError(f"박스 크기는 양수여야 합니다: {extent.tolist()}")
        center.setflags(write=False)
        extent.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "yaw", wrap(float(self.yaw)))

    @property
    def horizontal_range(self) -> float:
        return float(math.hypot(self.center[0], self.center[1]))


@dataclass(frozen=True, eq=False)
class LidarObject:
    """클래스, 센서 좌표계 포인트, 박스로 이루어진 LiDAR 객체"""
    cls: str
    raw: PointSet
    box: BoxAnnotation

    def __post_init__(self):
        from .objects import points_in_box

        inside = points_in_box(self.raw.xyz, self.box)
        if not np.all(inside):
            outside = int(np.count_nonzero(~inside))
            raise InvalidAnnotationError(f"{self.cls}: 박스 밖의 포인트 {outside}개")


@dataclass(frozen=True)
class Condition:
    """생성 조건 kappa = (phi, d, z, l, w, h) 와 CFG null 플래그"""
    phi: float  # 관측 각도 [rad]
    d: float  # 수평 거리 [m]
    z: float  # 박스 중심 고도 [m]
    l: float
    w: float
    h: float
    is_null: bool = False

    def __post_init__(self):
        values = (self.phi, self.d, self.z, self.l, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise InvalidDataError("조건 값이 유한하지 않습니다")
        if not self.is_null:
            if self.d < 0:
                raise InvalidDataError(f"거리는 0 이상이어야 합니다: {self.d}")
            if min(self.l, self.w, self.h) <= 0:
                raise InvalidAnnotationError("조건의 l, w, h는 양수여야 합니다")
        object.__setattr__(self, "phi", wrap(float(self.phi)))

    @classmethod
    def null(cls) -> "Condition":
        """CFG용 null 조건 (수치 필드는 무시됨)"""
        return cls(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, is_null=True)

    @classmethod
    def from_vector(cls, values) -> "Condition":
        phi, d, z, l, w, h = (float(v) for v in values)
        return cls(phi, d, z, l, w, h)

    def as_vector(self) -> np.ndarray:
        return np.array([self.phi, self.d, self.z, self.l, self.w, self.h], dtype=np.float64)

    def replace(self, **changes) -> "Condition":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ObjectSample:
    """데이터셋에 저장되는 정규화된 객체 (정규 좌표계 포인트 + 조건)"""
    cls: str
    points: PointSet
    condition: Condition
    name: str = ""


@dataclass
class PaddedBatch:
    """패딩된 학습 배치"""
    points: np.ndarray  # (B, N_max, 4)
    mask: np.ndarray  # (B, N_max) bool, 실제 포인트 표시
    conditions: List[Condition] = field(default_factory=list)
    names: Optional[List[str]] = None

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)
