"""조건 파일 기반 객체 생성 - 조건 I/O, 회전/거리 변형, 생성 데이터셋 기록"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..config import SamplerConfig
from ..dataset import Dataset, write_dataset
from ..denoiser import Denoiser, DenoiserWeights
from ..diffusion import DiffusionSchedule, sample
from ..errors import ContractError, InvalidDataError
from ..models import Condition, ObjectSample
from ..utils.io import atomic_write_bytes
from ..utils.log import progress

logger = logging.getLogger(__name__)

ROTATION_COUNT = 5
DISTANCE_FACTORS = (2.0, 0.5)
_FIELDS = ("phi", "d", "z", "l", "w", "h")


@dataclass(frozen=True)
class ConditionRecord:
    """조건 파일 한 줄: 클래스, kappa, 생성 포인트 수, 시드"""

    cls: str
    condition: Condition
    n_points: int
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidDataError(f"{self.name or self.cls}: n_points는 1 이상이어야 합니다 ({self.n_points})")
        if self.condition.is_null:
            raise InvalidDataError("조건 파일에는 null 조건을 쓸 수 없습니다")

    def to_dict(self) -> dict:
        out = {"class": self.cls, "name": self.name, "n_points": self.n_points, "seed": self.seed}
        out.update({k: float(v) for k, v in zip(_FIELDS, self.condition.as_vector())})
        return out

    @classmethod
    def from_dict(cls, data: dict, line: int = 0) -> "ConditionRecord":
        missing = [k for k in ("class", "n_points", *_FIELDS) if k not in data]
        if missing:
            raise InvalidDataError(f"조건 파일 {line}번째 줄에 {missing} 항목이 없습니다")
        unknown = sorted(set(data) - {"class", "name", "n_points", "seed", *_FIELDS})
        if unknown:
            raise InvalidDataError(f"조건 파일 {line}번째 줄에 모르는 항목: {unknown}")
        return cls(
            cls=str(data["class"]),
            condition=Condition.from_vector([data[k] for k in _FIELDS]),
            n_points=int(data["n_points"]),
            seed=int(data.get("seed", line)),
            name=str(data.get("name") or f"cond_{line:05d}"),
        )


def read_conditions(path: Path) -> List[ConditionRecord]:
    """JSON lines 조건 파일 읽기 (빈 줄 무시, 빈 파일이면 빈 목록)"""
    path = Path(path)
    if not path.exists():
        raise InvalidDataError(f"조건 파일이 없습니다: {path}")
    records: List[ConditionRecord] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise InvalidDataError(f"조건 파일 {i}번째 줄 JSON 오류: {e}") from e
        records.append(ConditionRecord.from_dict(data, line=i))
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise InvalidDataError(f"조건 이름이 중복됩니다: {path}")
    return records


def write_conditions(path: Path, records: Sequence[ConditionRecord]) -> Path:
    """조건 파일 원자적 기록 (float은 repr 정밀도 그대로)"""
    lines = [json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) for r in records]
    text = "\n".join(lines) + ("\n" if lines else "")
    atomic_write_bytes(Path(path), text.encode("utf-8"))
    return Path(path)


def conditions_from_dataset(dataset: Dataset, cls: str, split: str = "val") -> List[ConditionRecord]:
    """데이터셋 split의 객체마다 같은 조건과 포인트 수를 가진 레코드"""
    return [
        ConditionRecord(cls=s.cls, condition=s.condition, n_points=s.points.n, seed=i, name=s.name)
        for i, s in enumerate(dataset.objects(split=split, cls=cls))
    ]


def rotated_conditions(records: Sequence[ConditionRecord], count: int = ROTATION_COUNT) -> List[ConditionRecord]:
    """
    관측 각도 변형: phi + i/count * 2pi (i = 0..count-1)

    포인트 수와 시드는 원본 조건을 따른다.
    """
    if count < 1:
        raise ContractError(f"회전 개수는 1 이상이어야 합니다: {count}")
    out: List[ConditionRecord] = []
    for r in records:
        for i in range(count):
            phi = r.condition.phi + i / count * 2.0 * math.pi
            out.append(
                ConditionRecord(
                    cls=r.cls,
                    condition=r.condition.replace(phi=phi),
                    n_points=r.n_points,
                    seed=r.seed,
                    name=f"{r.name}_rot{i}",
                )
            )
    return out


def fit_point_power_law(samples: Sequence[ObjectSample]) -> float:
    """
    포인트 수와 거리의 거듭제곱 관계 n ~ d^(-gamma)의 gamma

    log n 을 log d 에 최소제곱 직선으로 맞춘 기울기의 부호를 뒤집는다.
    """
    d = np.array([s.condition.d for s in samples], dtype=np.float64)
    n = np.array([s.points.n for s in samples], dtype=np.float64)
    valid = d > 0
    if np.count_nonzero(valid) < 2 or np.ptp(d[valid]) == 0:
        raise ContractError("거듭제곱 지수를 맞추려면 서로 다른 거리의 객체가 2개 이상 필요합니다")
    slope, _ = np.polyfit(np.log(d[valid]), np.log(n[valid]), 1)
    return float(-slope)


def distance_conditions(
    records: Sequence[ConditionRecord],
    gamma: float,
    factors: Sequence[float] = DISTANCE_FACTORS,
    max_points: Optional[int] = None,
) -> List[ConditionRecord]:
    """
    거리 변형: d' = d * f, n' = n * f^(-gamma)

    Args:
        records: 원본 조건
        gamma: fit_point_power_law 지수
        factors: 거리 배율
        max_points: 모델 용량. 주어지면 n'을 이 값으로 자른다
    """
    out: List[ConditionRecord] = []
    for r in records:
        for f in factors:
            if f <= 0:
                raise ContractError(f"거리 배율은 양수여야 합니다: {f}")
            n_new = max(1, int(round(r.n_points * f ** (-gamma))))
            if max_points is not None:
                n_new = min(n_new, max_points)
            out.append(
                ConditionRecord(
                    cls=r.cls,
                    condition=r.condition.replace(d=r.condition.d * f),
                    n_points=n_new,
                    seed=r.seed,
                    name=f"{r.name}_dx{f:g}",
                )
            )
    return out


def sample_objects(
    records: Sequence[ConditionRecord],
    weights: DenoiserWeights,
    schedule: DiffusionSchedule,
    cfg: SamplerConfig,
    class_name: str,
    threads: int = 1,
) -> List[ObjectSample]:
    """
    조건마다 객체 하나 생성 (입력 순서와 인덱스 정렬)

    객체별 RNG는 (cfg.seed, record.seed) 로 만들어 스레드 수와 무관하게 같은 결과를 낸다.

    Raises:
        ContractError: 조건 클래스가 체크포인트 클래스와 다름
    """
    wrong = [r.name for r in records if r.cls != class_name]
    if wrong:
        raise ContractError(f"체크포인트 클래스 '{class_name}'와 다른 조건: {wrong[:5]}")

    def generate(record: ConditionRecord) -> ObjectSample:
        rng = np.random.default_rng([cfg.seed, record.seed])
        points = sample(record.condition, record.n_points, Denoiser(weights), schedule, cfg, rng=rng)
        return ObjectSample(cls=record.cls, points=points, condition=record.condition, name=record.name)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(progress(pool.map(generate, records), total=len(records), desc=f"sample[{class_name}]"))
    return [generate(r) for r in progress(records, desc=f"sample[{class_name}]")]


def write_generated(
    output_dir: Path,
    samples: Sequence[ObjectSample],
    class_name: str,
    i_max: float,
    name: str = "generated",
    finalize: Optional[Callable[[Path], None]] = None,
) -> Path:
    """생성 객체를 데이터셋 형식으로 저장 (split "all" = 조건 순서)"""
    return write_dataset(
        output_dir, samples, [class_name], {"all": [s.name for s in samples]}, name=name, i_max=i_max, finalize=finalize
    )
