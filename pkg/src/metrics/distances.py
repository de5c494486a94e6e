"""포인트 집합 간 거리 - Chamfer (KD-tree), EMD (최적 할당)"""

import logging
from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import KDTree

from ..errors import ContractError, DimensionError, InvalidDataError
from ..models import PointSet

logger = logging.getLogger(__name__)

# 이보다 큰 집합의 EMD는 근사 (auction) 모드
EXACT_EMD_LIMIT = 1024
# KD-tree 후보 수 (부동소수 동률일 때 순서대로 재검사)
_CANDIDATES = 4


def _channels(X, channels: int) -> np.ndarray:
    if channels not in (3, 4):
        raise DimensionError(f"채널 수는 3 또는 4: {channels}")
    arr = X.points if isinstance(X, PointSet) else np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidDataError("빈 포인트 집합입니다")
    if arr.shape[1] < channels:
        raise DimensionError(f"포인트 채널 {arr.shape[1]} < {channels}")
    return np.ascontiguousarray(arr[:, :channels], dtype=np.float64)


def squared_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """마지막 축 제곱 거리 (채널 순서대로 더함)"""
    d = a - b
    out = d[..., 0] * d[..., 0]
    for c in range(1, d.shape[-1]):
        out = out + d[..., c] * d[..., c]
    return out


def ordered_sum(values: np.ndarray) -> float:
    """앞에서부터 차례로 더한 합"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def _nearest_sq(query: np.ndarray, ref: np.ndarray, tree: KDTree) -> np.ndarray:
    k = min(_CANDIDATES, ref.shape[0])
    _, idx = tree.query(query, k=k)
    idx = np.asarray(idx).reshape(query.shape[0], k)
    sq = squared_distance(query[:, None, :], ref[idx])
    return sq.min(axis=1)


def chamfer_terms(X, Y, channels: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """(X의 각 점에서 Y까지 최근접 제곱 거리, Y의 각 점에서 X까지)"""
    x = _channels(X, channels)
    y = _channels(Y, channels)
    return _nearest_sq(x, y, KDTree(y)), _nearest_sq(y, x, KDTree(x))


def chamfer(X, Y, channels: int = 3, per_point: bool = False) -> float:
    """
    Chamfer 거리 (제곱 거리 합): sum_x min_y |x-y|^2 + sum_y min_x |x-y|^2

    Args:
        X, Y: PointSet 또는 (N, >=channels) 배열
        channels: 3 (좌표) 또는 4 (intensity 포함)
        per_point: True면 각 방향 합 대신 평균
    """
    fwd, bwd = chamfer_terms(X, Y, channels)
    if per_point:
        return ordered_sum(fwd) / fwd.size + ordered_sum(bwd) / bwd.size
    return ordered_sum(fwd) + ordered_sum(bwd)


def pairwise_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """유클리드 거리 행렬 (N, M)"""
    return np.sqrt(squared_distance(x[:, None, :], y[None, :, :]))


def auction_assignment(cost: np.ndarray, tolerance: float = 1e-4, factor: float = 4.0) -> np.ndarray:
    """
    epsilon-scaling Jacobi auction으로 정방 할당 근사

    최종 epsilon에서 총비용은 최적해보다 최대 n * epsilon 크다.

    Returns:
        cols: 행 i가 열 cols[i]에 할당됨
    """
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise DimensionError(f"auction은 정방 비용 행렬만 지원: {cost.shape}")
    benefit = -np.asarray(cost, dtype=np.float64)
    span = float(benefit.max() - benefit.min())
    if span == 0.0:
        return np.arange(n)
    eps = span / 2.0
    eps_final = max(span * tolerance / n, 1e-12)
    prices = np.zeros(n)
    rows = np.arange(n)

    while True:
        owner = np.full(n, -1)
        assigned = np.full(n, -1)
        while True:
            bidders = np.flatnonzero(assigned < 0)
            if bidders.size == 0:
                break
            values = benefit[bidders] - prices
            best = np.argmax(values, axis=1)
            best_value = values[np.arange(bidders.size), best]
            values[np.arange(bidders.size), best] = -np.inf
            second = values.max(axis=1) if n > 1 else best_value
            bids = best_value - second + eps

            # 같은 대상에 입찰한 경우 가장 큰 입찰만 채택
            order = np.lexsort((-bids, best))
            targets = best[order]
            first = np.r_[True, targets[1:] != targets[:-1]]
            win = order[first]
            objects = best[win]
            winners = bidders[win]

            previous = owner[objects]
            assigned[previous[previous >= 0]] = -1
            owner[objects] = winners
            assigned[winners] = objects
            prices[objects] += bids[win]
        if eps <= eps_final:
            break
        eps = max(eps / factor, eps_final)

    cols = np.empty(n, dtype=np.int64)
    cols[rows] = assigned
    return cols


def emd_with_info(X, Y, channels: int = 3, per_point: bool = False, exact_limit: int = EXACT_EMD_LIMIT) -> Tuple[float, bool]:
    """
    EMD와 근사 여부

    Returns:
        (값, approximate) - n > exact_limit 이면 auction 근사
    """
    x = _channels(X, channels)
    y = _channels(Y, channels)
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"EMD는 같은 크기 집합만 비교합니다: {x.shape[0]} != {y.shape[0]}")
    cost = pairwise_distance(x, y)
    approximate = x.shape[0] > exact_limit
    if approximate:
        cols = auction_assignment(cost)
        rows = np.arange(x.shape[0])
    else:
        rows, cols = linear_sum_assignment(cost)
    total = ordered_sum(cost[rows, cols])
    if per_point:
        total /= x.shape[0]
    return total, approximate


def emd(X, Y, channels: int = 3, per_point: bool = False, exact_limit: int = EXACT_EMD_LIMIT) -> float:
    """
    Earth Mover's Distance: 전단사 gamma에 대한 min sum |x - gamma(x)| (제곱하지 않은 거리의 합)

    Args:
        X, Y: 같은 크기의 포인트 집합
        channels: 3 또는 4
        per_point: True면 합 대신 평균
        exact_limit: 이 크기까지는 헝가리안 계열 정확해
    """
    value, approximate = emd_with_info(X, Y, channels, per_point, exact_limit)
    if approximate:
        logger.warning("EMD 근사 모드 사용 (n > %d)", exact_limit)
    return value


def rectangular_emd(X, Y, channels: int = 3, per_point: bool = True) -> float:
    """
    크기가 다른 두 집합의 매칭 비용

    작은 쪽 점이 모두 서로 다른 점에 매칭되도록 직사각 할당을 푼다.
    단위는 emd와 같다: per_point면 매칭 쌍 평균, 아니면 매칭 비용 합.
    """
    x = _channels(X, channels)
    y = _channels(Y, channels)
    cost = pairwise_distance(x, y)
    rows, cols = linear_sum_assignment(cost)
    total = ordered_sum(cost[rows, cols])
    return total / rows.size if per_point else total
