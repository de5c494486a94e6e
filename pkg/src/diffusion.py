"""DDPM 확산 엔진 - 전방 노이즈, 학습 목적 함수, 역방향 샘플링, classifier-free guidance"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .config import SamplerConfig
from .errors import ConfigError, ContractError, DimensionError
from .models import Condition, PaddedBatch, PointSet
from .tensor import Tensor, add, mul, scale, sub, sum_all

logger = logging.getLogger(__name__)

# (x_t, t, kappa) -> 노이즈 추정 배열
Predictor = Callable[[np.ndarray, int, Condition], np.ndarray]


@dataclass(frozen=True)
class DiffusionSchedule:
    """
    DDPM 스케줄 테이블. 배열 인덱스 t-1 이 타임스텝 t (1..T)

    alpha_bar(0) = 1 로 약속한다.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def alpha_bar_at(self, t: int) -> float:
        self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def check_t(self, t: int, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        if not low <= int(t) <= self.T:
            raise ContractError(f"타임스텝 {t}가 범위 [{low}, {self.T}]를 벗어났습니다")


def make_schedule(T: int, beta_min: float, beta_max: float) -> DiffusionSchedule:
    """
    선형 beta 스케줄

    Args:
        T: 확산 스텝 수
        beta_min, beta_max: 양 끝 포함 선형 범위 (0 < beta_min < beta_max < 1)
    """
    if T < 1:
        raise ConfigError(f"스텝 수는 1 이상이어야 합니다: {T}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ConfigError(f"beta 범위 오류: 0 < {beta_min} < {beta_max} < 1 이어야 합니다")
    beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma = np.sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def schedule_from_config(config) -> DiffusionSchedule:
    return make_schedule(config.steps, config.beta_min, config.beta_max)


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """닫힌 형태 q(x_t | x_0): sqrt(ab_t) x0 + sqrt(1 - ab_t) eps"""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} 와 eps {eps.shape} shape이 다릅니다")
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_step(x_prev: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """마르코프 커널 한 스텝 q(x_t | x_{t-1})"""
    sched.check_t(t)
    beta = sched.beta[t - 1]
    return np.sqrt(1.0 - beta) * np.asarray(x_prev, dtype=np.float64) + np.sqrt(beta) * np.asarray(eps)


def inference_timesteps(T: int, steps: int) -> np.ndarray:
    """
    T개 학습 스텝에서 고르게 뽑은 추론 타임스텝 (오름차순, 마지막은 항상 T)

    steps == T 이면 1..T 전체.
    """
    if not 1 <= steps <= T:
        raise ConfigError(f"추론 스텝 수 {steps}는 1..{T} 범위여야 합니다")
    return np.unique(np.round(np.linspace(T, 1, steps)).astype(np.int64))


def guided_noise(
    x_t: np.ndarray,
    t: int,
    kappa: Condition,
    predictor: Predictor,
    lam: float,
    skip_unconditional: bool = True,
) -> np.ndarray:
    """
    CFG 노이즈: lam * cond + (1 - lam) * uncond

    lam = 1 이면 조건부 예측과 비트 단위로 같고, skip_unconditional이면 한 번만 호출한다.
    """
    if lam < 0:
        raise ContractError(f"guidance 람다는 0 이상이어야 합니다: {lam}")
    if lam == 1.0 and skip_unconditional:
        return predictor(x_t, t, kappa)
    cond = predictor(x_t, t, kappa)
    uncond = predictor(x_t, t, Condition.null())
    return lam * cond + (1.0 - lam) * uncond


def reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: DiffusionSchedule,
    noise: Optional[np.ndarray],
) -> np.ndarray:
    """
    t -> t_prev 역방향 한 스텝 (부분 수열에서 beta와 사후 분산을 다시 계산)

    noise가 None 이면 노이즈를 더하지 않는다.
    """
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    beta_eff = 1.0 - ab_t / ab_prev
    mean = (x_t - beta_eff / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - beta_eff)
    if noise is None:
        return mean
    sigma = np.sqrt(beta_eff * (1.0 - ab_prev) / (1.0 - ab_t))
    return mean + sigma * noise


def _as_predictor(model) -> Predictor:
    from .denoiser import Denoiser, DenoiserWeights

    if isinstance(model, DenoiserWeights):
        return Denoiser(model)
    if callable(model):
        return model
    raise ContractError(f"노이즈 예측기로 쓸 수 없는 객체: {type(model).__name__}")


def sample(
    kappa: Condition,
    n_points: int,
    model: Union[Predictor, "object"],
    sched: DiffusionSchedule,
    cfg: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
) -> PointSet:
    """
    역확산으로 객체 하나 생성 (정규 좌표계)

    Args:
        kappa: 조건
        n_points: 생성할 포인트 수 (학습하지 않는 입력)
        model: DenoiserWeights 또는 (x_t, t, kappa) -> eps 호출 가능 객체
        sched: 학습 스케줄
        cfg: 추론 스텝 수, guidance 람다, 시드
        rng: 생략하면 cfg.seed 로 생성

    Returns:
        intensity를 [0, 1]로 자른 PointSet
    """
    if n_points < 1:
        raise ContractError(f"포인트 수는 1 이상이어야 합니다: {n_points}")
    predictor = _as_predictor(model)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    steps = inference_timesteps(sched.T, cfg.inference_steps)

    x = rng.standard_normal((n_points, 4))
    for i in range(len(steps) - 1, -1, -1):
        t = int(steps[i])
        t_prev = int(steps[i - 1]) if i > 0 else 0
        eps_hat = guided_noise(x, t, kappa, predictor, cfg.guidance, cfg.skip_unconditional)
        noise = rng.standard_normal(x.shape) if t_prev > 0 else None
        x = reverse_step(x, eps_hat, t, t_prev, sched, noise)

    x[:, 3] = np.clip(x[:, 3], 0.0, 1.0)
    if not np.all(np.isfinite(x)):
        raise ContractError("샘플링 결과에 유한하지 않은 값이 있습니다")
    return PointSet(x)


def training_loss(
    batch: PaddedBatch,
    weights,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    cond_dropout_p: float,
    predictor: Optional[Callable] = None,
) -> Tensor:
    """
    마스크된 노이즈 예측 MSE

    샘플마다 t ~ U{1..T}, eps ~ N(0, I)를 뽑고 확률 cond_dropout_p로 조건을 null로 바꾼다.
    손실 = (실제 슬롯의 제곱 오차 합) / (실제 포인트 수 * 4)

    Args:
        batch: 정규화 + 패딩된 배치
        weights: DenoiserWeights
        sched: 스케줄
        rng: 학습 RNG (소비 순서: 샘플마다 t, eps, dropout)
        cond_dropout_p: null 조건 확률
        predictor: (x_t Tensor, t, kappa, mask) -> Tensor. 생략하면 predict_noise
    """
    if not 0.0 <= cond_dropout_p <= 1.0:
        raise ContractError(f"dropout 확률 범위 오류: {cond_dropout_p}")
    if predictor is None:
        from .denoiser import predict_noise

        def predictor(x, t, kappa, mask):
            return predict_noise(x, t, kappa, weights, mask)

    dtype = weights.dtype if weights is not None else np.float64
    counts = batch.counts()
    total_values = float(counts.sum()) * 4.0
    if total_values == 0:
        raise ContractError("배치에 실제 포인트가 없습니다")

    total: Optional[Tensor] = None
    for b in range(batch.size):
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(batch.points[b].shape)
        drop = bool(rng.random() < cond_dropout_p)
        kappa = Condition.null() if drop else batch.conditions[b]

        x_t = forward_noise(batch.points[b], t, eps, sched)
        mask = batch.mask[b]
        pred = predictor(Tensor(x_t, dtype=dtype), t, kappa, mask)
        diff = sub(pred, Tensor(eps, dtype=dtype))
        weight = Tensor(np.repeat(mask[:, None], 4, axis=1), dtype=dtype)
        sq = sum_all(mul(mul(diff, diff), weight))
        total = sq if total is None else add(total, sq)

    return scale(total, 1.0 / total_values)
