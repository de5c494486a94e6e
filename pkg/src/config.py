"""LiDAR 오브젝트 디퓨전 설정"""

import json
import os
from pathlib import Path
from typing import Dict, Literal

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

# .env 파일 로드
load_dotenv()

# 프로젝트 경로
PROJECT_ROOT = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.getenv("LOGEN_OUTPUT_DIR", str(PROJECT_ROOT / "output")))

# 실행 환경
DEFAULT_THREADS = int(os.getenv("LOGEN_THREADS", "1"))
LOG_LEVEL = os.getenv("LOGEN_LOG_LEVEL", "INFO")
SHOW_PROGRESS = os.getenv("LOGEN_PROGRESS", "1") != "0"

# 데이터 설정
I_MAX_DEFAULT = 255.0  # 원시 intensity 최댓값 (데이터셋 단위 상수)
MIN_OBJECT_POINTS = 20  # 이보다 적은 포인트의 객체는 버림
BOX_MARGIN = 0.01  # 박스 포함 판정 시 면마다 1cm 팽창
DEFAULT_CLASSES = ("vehicle", "post", "bike", "barrier")

# 확산 설정 (DDPM)
DEFAULT_STEPS = 1000
DEFAULT_BETA_MIN = 3.5e-5
DEFAULT_BETA_MAX = 0.007
DEFAULT_INFERENCE_STEPS = 500
DEFAULT_GUIDANCE = 1.0
DEFAULT_COND_DROPOUT = 0.1

VARIANTS = ("dit3d_adaln_zero", "pixart_adaln_single", "logen")

_STRICT = ConfigDict(extra="forbid", frozen=True)


class DenoiserConfig(BaseModel):
    """노이즈 예측 네트워크 구조"""

    model_config = _STRICT

    variant: str = "logen"
    depth: int = Field(2, ge=1)
    heads: int = Field(2, ge=1)
    width: int = Field(32, ge=1)
    max_points: int = Field(128, ge=1)
    num_frequencies: int = Field(8, ge=2)
    frequency_base: float = Field(10000.0, gt=1.0)
    mlp_ratio: int = Field(4, ge=1)

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, value: str) -> str:
        if value not in VARIANTS:
            raise ValueError(f"알 수 없는 블록 종류: {value} (가능: {', '.join(VARIANTS)})")
        return value

    @model_validator(mode="after")
    def _divisible(self) -> "DenoiserConfig":
        if self.width % self.heads != 0:
            raise ValueError(f"width({self.width})는 heads({self.heads})로 나누어떨어져야 합니다")
        if self.num_frequencies % 2 != 0:
            raise ValueError("num_frequencies는 짝수여야 합니다 (각도 인코딩이 반씩 사용)")
        return self

    @property
    def embed_dim(self) -> int:
        return 2 * self.num_frequencies

    @property
    def cond_dim(self) -> int:
        return 6 * self.embed_dim


class ScheduleConfig(BaseModel):
    model_config = _STRICT

    steps: int = Field(DEFAULT_STEPS, ge=1)
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX


class SamplerConfig(BaseModel):
    """역확산 샘플링 설정"""

    model_config = _STRICT

    inference_steps: int = Field(DEFAULT_INFERENCE_STEPS, ge=1)
    guidance: float = Field(DEFAULT_GUIDANCE, ge=0.0)  # CFG 람다
    seed: int = 0
    skip_unconditional: bool = True  # 람다=1이면 무조건부 패스 생략


class OptimizerConfig(BaseModel):
    model_config = _STRICT

    learning_rate: float = Field(1e-4, ge=0.0)
    iterations: int = Field(5000, ge=0)
    batch_size: int = Field(16, ge=1)
    cond_dropout: float = Field(DEFAULT_COND_DROPOUT, ge=0.0, le=1.0)
    checkpoint_every: int = Field(1000, ge=1)
    log_every: int = Field(50, ge=1)


class RunConfig(BaseModel):
    """train/sample 실행 설정 (JSON 파일 하나)"""

    model_config = _STRICT

    version: Literal[1] = 1
    subcommand: Literal["train", "sample", "eval", "synth", "render"] = "train"
    dataset: Path
    class_name: str
    output_dir: Path
    seed: int = 0
    model: DenoiserConfig = DenoiserConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    sampler: SamplerConfig = SamplerConfig()
    optimizer: OptimizerConfig = OptimizerConfig()


class ScannerSpec(BaseModel):
    """절차적 LiDAR 스캐너 사양"""

    model_config = _STRICT

    num_beams: int = Field(32, ge=1)
    fov_up: float = 10.0  # 도
    fov_down: float = -30.0  # 도
    azimuth_resolution: float = Field(0.4, gt=0.0)  # 도
    sensor_height: float = Field(1.84, gt=0.0)  # 미터
    incidence_exponent: float = Field(1.0, ge=0.0)
    range_attenuation: float = Field(1e-3, ge=0.0)
    reflectance: Dict[str, float] = Field(
        default_factory=lambda: {
            "paint": 0.35,
            "glass": 0.12,
            "rubber": 0.08,
            "metal": 0.55,
            "plastic": 0.3,
            "concrete": 0.25,
            "retroreflector": 0.95,
        }
    )
    min_points: int = Field(MIN_OBJECT_POINTS, ge=1)
    max_points: int = Field(128, ge=1)

    @model_validator(mode="after")
    def _fov(self) -> "ScannerSpec":
        if self.fov_up <= self.fov_down:
            raise ValueError("수직 FOV가 퇴화되었습니다 (fov_up <= fov_down)")
        if self.min_points > self.max_points:
            raise ValueError("min_points가 max_points보다 큽니다")
        return self

    @property
    def beam_elevations(self):
        """빔별 고도각 (라디안, 오름차순)"""
        if self.num_beams == 1:
            return np.radians(np.array([(self.fov_up + self.fov_down) / 2.0]))
        return np.radians(np.linspace(self.fov_down, self.fov_up, self.num_beams))


class SynthConfig(BaseModel):
    """synth 서브커맨드 설정"""

    model_config = _STRICT

    version: Literal[1] = 1
    name: str = "synthetic"
    seed: int = 0
    i_max: float = Field(I_MAX_DEFAULT, gt=0.0)
    counts: Dict[str, int]
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    scanner: ScannerSpec = ScannerSpec()

    @field_validator("counts")
    @classmethod
    def _positive_counts(cls, value: Dict[str, int]) -> Dict[str, int]:
        if not value:
            raise ValueError("counts가 비어 있습니다")
        for name, n in value.items():
            if n < 1:
                raise ValueError(f"클래스 {name}의 개수는 1 이상이어야 합니다")
        return value


# 모델 프리셋
MODEL_PRESETS = {
    "xs-tiny": DenoiserConfig(depth=2, heads=2, width=32, max_points=128),
    "xs": DenoiserConfig(depth=12, heads=3, width=192, max_points=1024),
}

# 전체 규모 학습 설정 (50만 스텝, 문서용이며 테스트에서 실행하지 않음)
RUN_PRESETS = {
    "full-xs": {
        "model": MODEL_PRESETS["xs"].model_dump(),
        "schedule": ScheduleConfig().model_dump(),
        "sampler": SamplerConfig().model_dump(),
        "optimizer": OptimizerConfig(iterations=500_000, batch_size=16).model_dump(),
    },
    "desk": {
        "model": MODEL_PRESETS["xs-tiny"].model_dump(),
        "schedule": ScheduleConfig().model_dump(),
        "sampler": SamplerConfig().model_dump(),
        "optimizer": OptimizerConfig().model_dump(),
    },
}


def _load_json(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"설정 파일이 없습니다: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 파일 JSON 파싱 실패 ({path}): {e}") from e


def load_run_config(path: Path) -> RunConfig:
    """JSON 실행 설정 로드 (모르는 키는 오류)"""
    try:
        return RunConfig.model_validate(_load_json(path))
    except ValidationError as e:
        raise ConfigError(f"실행 설정 검증 실패 ({path}):\n{e}") from e


def load_synth_config(path: Path) -> SynthConfig:
    """JSON synth 설정 로드"""
    try:
        return SynthConfig.model_validate(_load_json(path))
    except ValidationError as e:
        raise ConfigError(f"synth 설정 검증 실패 ({path}):\n{e}") from e
