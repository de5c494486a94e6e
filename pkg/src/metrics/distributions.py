"""분포 수준 지표 - FPD (Frechet), KPD (MMD^2), JSD (BEV 점유 히스토그램)"""

import logging
import math
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from ..errors import ContractError, DimensionError, NumericError
from ..models import PointSet

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-6
JSD_GRID = 64
JSD_SMOOTHING = 1e-10


def _sqrt_psd(sigma: np.ndarray) -> np.ndarray:
    w, v = eigh(sigma)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _is_singular(sigma: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(sigma)
    top = max(float(np.abs(w).max()), np.finfo(np.float64).tiny)
    return bool(w.min() <= 1e-12 * top)


def frechet_distance(
    mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray, ridge: bool = True
) -> Tuple[float, bool]:
    """
    두 가우시안 사이 Frechet 거리

    |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), 행렬 제곱근은 S1^(1/2) S2 S1^(1/2)의
    대칭 고유분해로 구한다.

    Returns:
        (거리, ridge 적용 여부)
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape or sigma1.shape != (mu1.size, mu1.size):
        raise DimensionError("평균/공분산 shape이 맞지 않습니다")

    ridged = False
    if _is_singular(sigma1) or _is_singular(sigma2):
        if not ridge:
            raise NumericError("공분산이 특이 행렬입니다 (ridge 비활성)")
        eps1 = RIDGE_SCALE * max(float(np.mean(np.diag(sigma1))), 1e-12)
        eps2 = RIDGE_SCALE * max(float(np.mean(np.diag(sigma2))), 1e-12)
        sigma1 = sigma1 + eps1 * np.eye(mu1.size)
        sigma2 = sigma2 + eps2 * np.eye(mu1.size)
        ridged = True
        logger.warning("FPD: 특이 공분산에 ridge 적용")

    root1 = _sqrt_psd(sigma1)
    middle = root1 @ sigma2 @ root1
    w = eigh((middle + middle.T) / 2.0, eigvals_only=True)
    trace_sqrt = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))

    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * trace_sqrt)
    return max(value, 0.0), ridged


def fpd_from_features(feat_r: np.ndarray, feat_g: np.ndarray, ridge: bool = True) -> Tuple[float, bool]:
    """특징 행렬 (K, dim) 두 개의 FPD와 ridge 여부"""
    if feat_r.shape[1] != feat_g.shape[1]:
        raise DimensionError("특징 폭이 다릅니다")
    if feat_r.shape[0] < 2 or feat_g.shape[0] < 2:
        raise ContractError("FPD는 집합마다 2개 이상이 필요합니다")
    return frechet_distance(
        feat_r.mean(axis=0),
        np.cov(feat_r, rowvar=False),
        feat_g.mean(axis=0),
        np.cov(feat_g, rowvar=False),
        ridge=ridge,
    )


def fpd(
    real: Sequence[PointSet], generated: Sequence[PointSet], extractor, channels: int = 4
) -> Tuple[float, bool]:
    """
    Frechet PointNet Distance

    Returns:
        (FPD, ridge 적용 여부)
    """
    return fpd_from_features(extractor.features(real, channels), extractor.features(generated, channels))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """k(x, y) = (x^T y / dim + 1)^3"""
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """다항 커널 MMD^2 비편향 U-통계량"""
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ContractError("KPD는 집합마다 2개 이상이 필요합니다")
    k_xx = polynomial_kernel(x, x)
    k_yy = polynomial_kernel(y, y)
    k_xy = polynomial_kernel(x, y)
    return float(
        (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
        + (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
        - 2.0 * k_xy.mean()
    )


def _blocks(n: int, count: int) -> np.ndarray:
    sizes = np.full(count, n // count)
    sizes[count - n % count :] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def kpd_from_features(
    feat_r: np.ndarray, feat_g: np.ndarray, max_block_size: int = 1000, stderr_blocks: int = 5
) -> Tuple[float, float]:
    """
    KPD (MMD^2)와 표준 오차

    max_block_size보다 큰 집합은 서로 겹치지 않는 블록으로 나눠 블록 추정값을 평균한다.
    블록이 하나뿐이면 값은 전체로 계산하고 표준 오차는 stderr_blocks개 블록에서 추정한다.

    Returns:
        (kpd, stderr) - 블록을 2개 이상 만들 수 없으면 stderr는 nan
    """
    if feat_r.shape[1] != feat_g.shape[1]:
        raise DimensionError("특징 폭이 다릅니다")
    n_r, n_g = feat_r.shape[0], feat_g.shape[0]
    n_blocks = max(1, math.ceil(max(n_r, n_g) / max_block_size))

    def block_estimates(count: int) -> np.ndarray:
        br, bg = _blocks(n_r, count), _blocks(n_g, count)
        return np.array(
            [mmd2_unbiased(feat_r[br[i] : br[i + 1]], feat_g[bg[i] : bg[i + 1]]) for i in range(count)]
        )

    if n_blocks > 1:
        ests = block_estimates(n_blocks)
        return float(ests.mean()), float(np.sqrt(ests.var(ddof=1) / n_blocks))

    value = mmd2_unbiased(feat_r, feat_g)
    count = min(stderr_blocks, n_r // 2, n_g // 2)
    if count < 2:
        return value, float("nan")
    ests = block_estimates(count)
    return value, float(np.sqrt(ests.var(ddof=1) / count))


def kpd(
    real: Sequence[PointSet], generated: Sequence[PointSet], extractor, channels: int = 4
) -> Tuple[float, float]:
    """
    Kernel PointNet Distance

    Returns:
        (KPD, 블록 표준 오차)
    """
    return kpd_from_features(extractor.features(real, channels), extractor.features(generated, channels))


def js_divergence(p: np.ndarray, q: np.ndarray, smoothing: float = JSD_SMOOTHING) -> float:
    """
    밑이 2인 Jensen-Shannon divergence (범위 [0, 1])

    두 분포에 smoothing을 더하고 다시 L1 정규화한다.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1) + smoothing
    q = np.asarray(q, dtype=np.float64).reshape(-1) + smoothing
    if p.shape != q.shape:
        raise DimensionError("두 분포의 bin 수가 다릅니다")
    p /= p.sum()
    q /= q.sum()
    m = 0.5 * (p + q)
    kl_pm = float(np.sum(p * np.log2(p / m)))
    kl_qm = float(np.sum(q * np.log2(q / m)))
    return max(0.0, 0.5 * (kl_pm + kl_qm))


def bev_histograms(
    real: Sequence[PointSet], generated: Sequence[PointSet], grid: int = JSD_GRID
) -> Tuple[np.ndarray, np.ndarray]:
    """두 집합의 모든 포인트를 모은 (grid x grid) 조감도 점유 히스토그램 (공통 범위)"""
    if not real or not generated:
        raise ContractError("JSD는 비어 있지 않은 두 집합이 필요합니다")
    xy_r = np.concatenate([o.xyz[:, :2] for o in real])
    xy_g = np.concatenate([o.xyz[:, :2] for o in generated])
    both = np.concatenate([xy_r, xy_g])
    lo, hi = both.min(axis=0), both.max(axis=0)
    flat = hi - lo == 0
    lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
    bounds = [[lo[0], hi[0]], [lo[1], hi[1]]]
    h_r, _, _ = np.histogram2d(xy_r[:, 0], xy_r[:, 1], bins=grid, range=bounds)
    h_g, _, _ = np.histogram2d(xy_g[:, 0], xy_g[:, 1], bins=grid, range=bounds)
    return h_r / h_r.sum(), h_g / h_g.sum()


def jsd(real: Sequence[PointSet], generated: Sequence[PointSet], grid: int = JSD_GRID) -> float:
    """조감도 점유 분포 사이 JSD"""
    h_r, h_g = bev_histograms(real, generated, grid)
    return js_divergence(h_r, h_g)
