"""데이터셋 디렉토리 입출력 (manifest.json + 객체별 바이너리)

객체 파일 레이아웃 (little-endian):
    [n:uint32][n x 4 float32 정규 좌표계 포인트][6 float32 kappa][class-id:uint32]
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import I_MAX_DEFAULT
from .errors import InvalidDataError, LabelError
from .models import Condition, ObjectSample, PointSet
from .utils.io import atomic_directory

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
OBJECT_DIR = "objects"
OBJECT_SUFFIX = ".bin"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<I")
_FOOTER = struct.Struct("<6fI")


def encode_object(sample: ObjectSample, class_id: int) -> bytes:
    """ObjectSample을 바이너리로 직렬화"""
    if sample.condition.is_null:
        raise InvalidDataError(f"{sample.name}: null 조건은 저장할 수 없습니다")
    points = np.ascontiguousarray(sample.points.points, dtype="<f4")
    kappa = sample.condition.as_vector().astype(np.float32)
    return _HEADER.pack(sample.points.n) + points.tobytes() + _FOOTER.pack(*kappa.tolist(), class_id)


def decode_object(data: bytes, classes: Sequence[str], name: str = "") -> ObjectSample:
    """바이너리를 ObjectSample로 역직렬화"""
    if len(data) < _HEADER.size:
        raise InvalidDataError(f"{name}: 객체 파일이 너무 짧습니다")
    (n,) = _HEADER.unpack_from(data, 0)
    expected = _HEADER.size + n * 16 + _FOOTER.size
    if len(data) != expected:
        raise InvalidDataError(f"{name}: 파일 크기 {len(data)} != 예상 {expected} (n={n})")
    points = np.frombuffer(data, dtype="<f4", count=n * 4, offset=_HEADER.size).reshape(n, 4)
    *kappa, class_id = _FOOTER.unpack_from(data, _HEADER.size + n * 16)
    if class_id >= len(classes):
        raise LabelError(f"{name}: 클래스 id {class_id}가 매니페스트에 없습니다")
    return ObjectSample(
        cls=classes[class_id],
        points=PointSet(points.astype(np.float64)),
        condition=Condition.from_vector(kappa),
        name=name,
    )


@dataclass
class Dataset:
    """로드된 데이터셋 (매니페스트 순서 유지)"""

    root: Path
    name: str
    i_max: float
    classes: List[str]
    splits: Dict[str, List[str]]
    samples: Dict[str, ObjectSample] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def objects(self, split: Optional[str] = None, cls: Optional[str] = None) -> List[ObjectSample]:
        """
        split과 클래스로 필터링한 객체 목록

        Args:
            split: "train", "val" 등. None이면 전체 (매니페스트 순서)
            cls: 클래스 필터
        """
        if split is None:
            names = list(self.samples)
        elif split in self.splits:
            names = self.splits[split]
        else:
            raise InvalidDataError(f"{self.name}: split '{split}'이 없습니다 (가능: {', '.join(self.splits)})")
        if cls is not None and cls not in self.classes:
            raise LabelError(f"{self.name}: 클래스 '{cls}'가 없습니다 (가능: {', '.join(self.classes)})")
        out = [self.samples[n] for n in names]
        return out if cls is None else [s for s in out if s.cls == cls]


def write_dataset(
    path: Path,
    samples: Sequence[ObjectSample],
    classes: Sequence[str],
    splits: Optional[Dict[str, List[str]]] = None,
    name: str = "dataset",
    i_max: float = I_MAX_DEFAULT,
    finalize: Optional[Callable[[Path], None]] = None,
) -> Path:
    """
    데이터셋 디렉토리를 원자적으로 기록 (같은 입력이면 바이트 단위로 같은 출력)

    Args:
        path: 출력 디렉토리
        samples: 저장할 객체 (이름이 고유해야 함)
        classes: 클래스 목록 (class-id = 인덱스)
        splits: split 이름 -> 객체 이름 목록. None이면 전체를 "all"로
        name: 데이터셋 이름
        i_max: intensity 스케일 상수
        finalize: rename 직전에 임시 디렉토리를 받아 추가 파일 (실행 매니페스트 등)을 쓰는 함수

    Returns:
        출력 디렉토리 경로
    """
    classes = list(classes)
    names = [s.name for s in samples]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise InvalidDataError("객체 이름은 비어 있지 않고 고유해야 합니다")
    if splits is None:
        splits = {"all": list(names)}
    known = set(names)
    for split_name, members in splits.items():
        missing = [m for m in members if m not in known]
        if missing:
            raise InvalidDataError(f"split '{split_name}'에 없는 객체: {missing[:3]}")

    class_ids = {c: i for i, c in enumerate(classes)}
    manifest = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "i_max": float(i_max),
        "classes": classes,
        "objects": names,
        "splits": {k: list(v) for k, v in splits.items()},
    }

    path = Path(path)
    with atomic_directory(path) as tmp:
        (tmp / OBJECT_DIR).mkdir()
        for sample in samples:
            if sample.cls not in class_ids:
                raise LabelError(f"{sample.name}: 클래스 '{sample.cls}'가 목록에 없습니다")
            data = encode_object(sample, class_ids[sample.cls])
            (tmp / OBJECT_DIR / f"{sample.name}{OBJECT_SUFFIX}").write_bytes(data)
        text = json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True)
        (tmp / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")
        if finalize is not None:
            finalize(tmp)

    logger.info("데이터셋 저장: %s (%d개 객체, 클래스 %s)", path, len(samples), ", ".join(classes))
    return path


def load_dataset(path: Path) -> Dataset:
    """데이터셋 디렉토리 로드"""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise InvalidDataError(f"데이터셋 매니페스트가 없습니다: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidDataError(f"매니페스트 JSON 오류 ({manifest_path}): {e}") from e

    for key in ("name", "i_max", "classes", "objects", "splits"):
        if key not in manifest:
            raise InvalidDataError(f"매니페스트에 '{key}' 항목이 없습니다")

    classes = list(manifest["classes"])
    samples: Dict[str, ObjectSample] = {}
    for obj_name in manifest["objects"]:
        obj_path = path / OBJECT_DIR / f"{obj_name}{OBJECT_SUFFIX}"
        if not obj_path.exists():
            raise InvalidDataError(f"객체 파일이 없습니다: {obj_path}")
        samples[obj_name] = decode_object(obj_path.read_bytes(), classes, obj_name)

    logger.debug("데이터셋 로드: %s (%d개)", path, len(samples))
    return Dataset(
        root=path,
        name=manifest["name"],
        i_max=float(manifest["i_max"]),
        classes=classes,
        splits={k: list(v) for k, v in manifest["splits"].items()},
        samples=samples,
    )
