"""조건/타임스텝 인코딩 - Fourier 특징과 각도용 순환 인코딩"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .models import Condition, wrap

# 각도 인코딩 전 반올림 자릿수 (phi와 phi + 2pi k 가 비트 단위로 같도록)
_ANGLE_DECIMALS = 12


@dataclass(frozen=True)
class EncoderConfig:
    """인코딩 하이퍼파라미터 (embed_dim = 2F, cond_dim = 6 * embed_dim)"""

    num_frequencies: int = 8
    base: float = 10000.0

    def __post_init__(self):
        if self.num_frequencies < 2 or self.num_frequencies % 2 != 0:
            raise ConfigError(f"num_frequencies는 2 이상의 짝수여야 합니다: {self.num_frequencies}")
        if self.base <= 1.0:
            raise ConfigError(f"주파수 base는 1보다 커야 합니다: {self.base}")

    @property
    def embed_dim(self) -> int:
        return 2 * self.num_frequencies

    @property
    def cond_dim(self) -> int:
        return 6 * self.embed_dim

    @classmethod
    def from_model(cls, model_config) -> "EncoderConfig":
        return cls(num_frequencies=model_config.num_frequencies, base=model_config.frequency_base)


def frequencies(num_frequencies: int, base: float) -> np.ndarray:
    """기하 주파수 omega_k = base^(-k/F), k = 0..F-1"""
    k = np.arange(num_frequencies, dtype=np.float64)
    return base ** (-k / num_frequencies)


def _interleave(value, omegas: np.ndarray) -> np.ndarray:
    angles = np.multiply.outer(np.asarray(value, dtype=np.float64), omegas)
    out = np.empty(angles.shape[:-1] + (2 * omegas.size,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def fourier_encode(value, cfg: EncoderConfig) -> np.ndarray:
    """
    스칼라 Fourier 특징: out[2k] = sin(v w_k), out[2k+1] = cos(v w_k)

    value가 배열이면 마지막 축에 embed_dim이 붙는다.
    """
    return _interleave(value, frequencies(cfg.num_frequencies, cfg.base))


def cyclical_encode(phi, cfg: EncoderConfig) -> np.ndarray:
    """
    각도 순환 인코딩: (sin phi, cos phi)로 먼저 올린 뒤 각각 절반 폭 Fourier 특징

    구성상 2pi 주기이며 phi와 phi + 2pi k 는 같은 벡터를 준다.
    """
    phi = np.round(np.asarray(wrap(phi), dtype=np.float64), _ANGLE_DECIMALS)
    omegas = frequencies(cfg.num_frequencies // 2, cfg.base)
    return np.concatenate([_interleave(np.sin(phi), omegas), _interleave(np.cos(phi), omegas)], axis=-1)


def encode_time(t, cfg: EncoderConfig) -> np.ndarray:
    return fourier_encode(float(t), cfg)


def encode_kappa(kappa: Condition, cfg: EncoderConfig) -> np.ndarray:
    """null 여부와 관계없이 kappa 수치값의 인코딩 [phi, d, z, l, w, h]"""
    parts = [cyclical_encode(kappa.phi, cfg)]
    parts.extend(fourier_encode(v, cfg) for v in (kappa.d, kappa.z, kappa.l, kappa.w, kappa.h))
    return np.concatenate(parts)


def encode_condition(
    kappa: Condition, t, cfg: EncoderConfig, null_embedding: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    조건 벡터와 시간 벡터

    Args:
        kappa: 조건 (is_null이면 학습된 null 임베딩을 그대로 사용)
        t: 타임스텝 [0, T]
        cfg: 인코더 설정
        null_embedding: 학습된 null 임베딩 (cond_dim,)

    Returns:
        (cond_vector [cond_dim], time_vector [embed_dim])
    """
    null_embedding = np.asarray(null_embedding)
    if null_embedding.reshape(-1).shape != (cfg.cond_dim,):
        raise DimensionError(f"null 임베딩 shape {null_embedding.shape} != ({cfg.cond_dim},)")
    time_vector = encode_time(t, cfg)
    if kappa.is_null:
        return null_embedding.reshape(-1), time_vector
    return encode_kappa(kappa, cfg), time_vector
