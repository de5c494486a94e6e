"""객체 파라미터화 - 센서 기준 정규화, intensity 스케일링, 배치 패딩"""

import math
from typing import List, Sequence, Tuple

import numpy as np

from .config import BOX_MARGIN, I_MAX_DEFAULT
from .errors import ContractError, InvalidAnnotationError, InvalidDataError, UndefinedAngleError
from .models import BoxAnnotation, Condition, LidarObject, PointSet, wrap

__all__ = [
    "wrap",
    "rotation_z",
    "observation_angle",
    "canonicalize",
    "uncanonicalize",
    "scale_intensity",
    "unscale_intensity",
    "pad_batch",
    "unpad_batch",
    "points_in_box",
    "extract_object",
    "place_condition",
]


def rotation_z(angle: float) -> np.ndarray:
    """z축 회전 행렬 R_z(angle)"""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def observation_angle(box: BoxAnnotation) -> float:
    """
    관측 각도 phi: 객체 heading과 박스 중심에서 센서로 향하는 레이 사이의 각도

    phi=0 이면 객체가 센서를 정면으로 바라본다.
    """
    cx, cy = float(box.center[0]), float(box.center[1])
    if math.hypot(cx, cy) == 0.0:
        raise UndefinedAngleError("박스 중심이 센서 위치와 같아 관측 각도가 정의되지 않습니다")
    return wrap(math.atan2(-cy, -cx) - box.yaw)


def scale_intensity(i_raw, i_max: float = I_MAX_DEFAULT):
    """log-max 스케일링: log(1 + i) / log(1 + i_max), 원시 값은 [0, i_max]"""
    if i_max <= 0:
        raise InvalidDataError(f"i_max는 양수여야 합니다: {i_max}")
    values = np.asarray(i_raw, dtype=np.float64)
    if np.any(values < 0):
        raise InvalidDataError("원시 intensity가 음수입니다")
    if np.any(values > i_max):
        raise InvalidDataError(f"원시 intensity가 i_max ({i_max})를 넘습니다: 최대 {float(values.max())}")
    scaled = np.log1p(values) / math.log1p(i_max)
    return float(scaled) if np.ndim(i_raw) == 0 else scaled


def unscale_intensity(i_scaled, i_max: float = I_MAX_DEFAULT):
    """scale_intensity의 역함수"""
    values = np.asarray(i_scaled, dtype=np.float64)
    raw = np.expm1(values * math.log1p(i_max))
    return float(raw) if np.ndim(i_scaled) == 0 else raw


def canonicalize(obj: LidarObject, i_max: float = I_MAX_DEFAULT) -> Tuple[PointSet, Condition]:
    """
    센서 좌표계 객체를 박스 기준 정규 좌표계로 변환

    Args:
        obj: LidarObject (센서 좌표계)
        i_max: 데이터셋 intensity 최댓값

    Returns:
        (정규 좌표계 PointSet, Condition)
    """
    box = obj.box
    if np.any(box.extent <= 0):
        raise InvalidAnnotationError(f"{obj.cls}: 퇴화된 박스 {box.extent.tolist()}")

    # 좌표는 단위 스케일로 정규화하지 않는다
    local = (obj.raw.xyz - box.center) @ rotation_z(-box.yaw).T
    intensity = scale_intensity(obj.raw.intensity, i_max)
    points = PointSet(np.column_stack([local, intensity]))

    l, w, h = (float(v) for v in box.extent)
    condition = Condition(
        phi=observation_angle(box),
        d=box.horizontal_range,
        z=float(box.center[2]),
        l=l,
        w=w,
        h=h,
    )
    return points, condition


def uncanonicalize(points, box: BoxAnnotation, i_max=None) -> np.ndarray:
    """canonicalize의 역변환 (회전 복원 후 평행이동). i_max가 주어지면 intensity도 복원"""
    arr = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    xyz = arr[:, :3] @ rotation_z(box.yaw).T + box.center
    intensity = arr[:, 3] if i_max is None else unscale_intensity(arr[:, 3], i_max)
    return np.column_stack([xyz, intensity])


def pad_batch(objs: Sequence[PointSet]) -> Tuple[np.ndarray, np.ndarray]:
    """
    배치 내 최대 길이로 0-패딩

    Returns:
        (batch [B, N_max, 4], mask [B, N_max]) - mask는 실제 포인트 위치에서 True
    """
    if len(objs) == 0:
        raise ContractError("빈 배치는 패딩할 수 없습니다")
    n_max = max(o.n for o in objs)
    batch = np.zeros((len(objs), n_max, 4), dtype=np.float64)
    mask = np.zeros((len(objs), n_max), dtype=bool)
    for b, obj in enumerate(objs):
        batch[b, : obj.n] = obj.points
        mask[b, : obj.n] = True
    return batch, mask


def unpad_batch(batch: np.ndarray, mask: np.ndarray) -> List[PointSet]:
    """mask로 실제 포인트만 뽑아 PointSet 목록 복원"""
    return [PointSet(batch[b][mask[b]]) for b in range(batch.shape[0])]


def points_in_box(xyz: np.ndarray, box: BoxAnnotation, margin: float = BOX_MARGIN) -> np.ndarray:
    """면마다 margin만큼 팽창한 박스 안에 있는 포인트 마스크"""
    local = (np.asarray(xyz, dtype=np.float64) - box.center) @ rotation_z(-box.yaw).T
    half = box.extent / 2.0 + margin
    return np.all(np.abs(local) <= half, axis=1)


def extract_object(
    points: np.ndarray,
    labels: Sequence[str],
    box: BoxAnnotation,
    cls: str,
    margin: float = BOX_MARGIN,
) -> LidarObject:
    """
    박스 안 포인트 중 같은 클래스 라벨만 남겨 LidarObject 생성

    Args:
        points: 센서 좌표계 (M, 4) 포인트 (원시 intensity)
        labels: 포인트별 의미 클래스
        box: 객체 박스
        cls: 객체 클래스
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    keep = points_in_box(points[:, :3], box, margin) & (labels == cls)
    if not np.any(keep):
        raise InvalidDataError(f"{cls}: 박스 안에 해당 클래스 포인트가 없습니다")
    return LidarObject(cls=cls, raw=PointSet(points[keep]), box=box)


def place_condition(condition: Condition, azimuth: float) -> BoxAnnotation:
    """조건과 방위각으로 센서 좌표계 박스를 복원 (observation_angle의 역)"""
    if condition.is_null:
        raise ContractError("null 조건은 배치할 수 없습니다")
    if condition.d <= 0:
        raise UndefinedAngleError("거리 0인 조건은 방향을 정할 수 없습니다")
    cx = condition.d * math.cos(azimuth)
    cy = condition.d * math.sin(azimuth)
    yaw = wrap(math.atan2(-cy, -cx) - condition.phi)
    return BoxAnnotation(
        center=np.array([cx, cy, condition.z]),
        extent=np.array([condition.l, condition.w, condition.h]),
        yaw=yaw,
    )
