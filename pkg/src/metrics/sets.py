"""집합 수준 지표 - 거리 행렬, COV, 1-NNA"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from ..models import PointSet
from ..utils.log import progress
from .distances import chamfer, emd_with_info, rectangular_emd
from .features import intensity_features

logger = logging.getLogger(__name__)

METRICS = ("cd", "emd", "int")


@dataclass
class SampleSets:
    """실제 집합과 생성 집합 (S_g[j]는 S_r[j]의 조건으로 생성)"""

    real: List[PointSet]
    generated: List[PointSet]
    flags: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.real) != len(self.generated):
            raise ContractError(f"|S_g| ({len(self.generated)}) != |S_r| ({len(self.real)})")

    def flag(self, name: str, count: int = 1) -> None:
        self.flags[name] = self.flags.get(name, 0) + count


def _pair_function(metric: str, channels: int, per_point: bool) -> Callable[[PointSet, PointSet], Tuple[float, Optional[str]]]:
    """(a, b) -> (거리, 플래그 이름 또는 None)"""
    if metric == "cd":
        return lambda a, b: (chamfer(a, b, channels, per_point=per_point), None)
    if metric == "emd":

        def pair(a: PointSet, b: PointSet) -> Tuple[float, Optional[str]]:
            if a.n != b.n:
                return rectangular_emd(a, b, channels, per_point=per_point), "emd_rectangular"
            value, approximate = emd_with_info(a, b, channels, per_point=per_point)
            return value, ("emd_approximate" if approximate else None)

        return pair
    raise ContractError(f"알 수 없는 거리 지표: {metric} (가능: {', '.join(METRICS)})")


def distance_matrix(
    A: Sequence[PointSet],
    B: Sequence[PointSet],
    metric: str = "cd",
    channels: int = 3,
    per_point: bool = True,
    threads: int = 1,
    flags: Dict[str, int] = None,
) -> np.ndarray:
    """
    집합 간 거리 행렬 D[i, j] = D(A[i], B[j])

    metric "int"는 256-bin intensity 히스토그램 사이 유클리드 거리.
    행 단위로 병렬 계산해도 결과는 직렬 계산과 비트 단위로 같다.
    """
    flags = {} if flags is None else flags
    if metric == "int":
        fa = np.stack([intensity_features(a) for a in A]) if len(A) else np.zeros((0, 256))
        fb = np.stack([intensity_features(b) for b in B]) if len(B) else np.zeros((0, 256))
        diff = fa[:, None, :] - fb[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    pair = _pair_function(metric, channels, per_point)
    D = np.empty((len(A), len(B)), dtype=np.float64)

    # 플래그는 행마다 따로 세고 모든 행이 끝난 뒤 합친다
    def fill_row(i: int) -> Counter:
        counts: Counter = Counter()
        for j, b in enumerate(B):
            D[i, j], flag = pair(A[i], b)
            if flag is not None:
                counts[flag] += 1
        return counts

    rows = range(len(A))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            row_counts = list(progress(pool.map(fill_row, rows), total=len(A), desc=f"{metric} 행렬"))
    else:
        row_counts = [fill_row(i) for i in progress(rows, total=len(A), desc=f"{metric} 행렬")]
    for counts in row_counts:
        for name, count in counts.items():
            flags[name] = flags.get(name, 0) + count
    return D


def coverage_from_matrix(D_gr: np.ndarray) -> float:
    """D_gr (|S_g|, |S_r|) 에서 COV: 생성 집합마다 가장 가까운 실제 집합 (동률은 낮은 인덱스)"""
    if D_gr.shape[0] == 0 or D_gr.shape[1] == 0:
        raise ContractError("COV는 비어 있지 않은 두 집합이 필요합니다")
    matched = np.argmin(D_gr, axis=1)
    return len(np.unique(matched)) / D_gr.shape[1]


def one_nna_from_matrices(D_gg: np.ndarray, D_gr: np.ndarray, D_rr: np.ndarray) -> Tuple[float, int]:
    """
    leave-one-out 1-NN 분류 정확도

    최근접 거리가 같은 이웃이 여러 개면 다른 출처 이웃을 택한다.
    출처가 섞인 동률이거나 거리 0인 중복이면 동률로 센다.

    Returns:
        (1-NNA, 동률 개수)
    """
    n_g, n_r = D_gr.shape
    if n_g + n_r < 2:
        raise ContractError("1-NNA는 두 집합 합쳐 2개 이상이 필요합니다")
    full = np.empty((n_g + n_r, n_g + n_r), dtype=np.float64)
    full[:n_g, :n_g] = D_gg
    full[:n_g, n_g:] = D_gr
    full[n_g:, :n_g] = D_gr.T
    full[n_g:, n_g:] = D_rr
    np.fill_diagonal(full, np.inf)
    source = np.r_[np.zeros(n_g, dtype=bool), np.ones(n_r, dtype=bool)]

    same_source = 0
    ties = 0
    for i in range(full.shape[0]):
        row = full[i]
        nearest = row.min()
        candidates = np.flatnonzero(row == nearest)
        same = source[candidates] == source[i]
        if np.all(same):
            same_source += 1
        if (np.any(same) and not np.all(same)) or nearest == 0.0:
            ties += 1
    return same_source / full.shape[0], ties


def coverage(
    sets: SampleSets, metric: str = "cd", channels: int = 3, per_point: bool = True, threads: int = 1
) -> float:
    """
    COV(S_g, S_r): 적어도 한 생성 집합의 최근접 매치가 된 실제 집합 비율
    """
    D_gr = distance_matrix(sets.generated, sets.real, metric, channels, per_point, threads, sets.flags)
    return coverage_from_matrix(D_gr)


def one_nna(
    sets: SampleSets, metric: str = "cd", channels: int = 3, per_point: bool = True, threads: int = 1
) -> float:
    """
    1-NNA(S_g, S_r): 0.5면 구분 불가, 1.0이면 완전히 분리됨
    """
    g, r = sets.generated, sets.real
    D_gg = distance_matrix(g, g, metric, channels, per_point, threads, sets.flags)
    D_gr = distance_matrix(g, r, metric, channels, per_point, threads, sets.flags)
    D_rr = distance_matrix(r, r, metric, channels, per_point, threads, sets.flags)
    value, ties = one_nna_from_matrices(D_gg, D_gr, D_rr)
    if ties:
        sets.flag(f"nna_{metric}_ties", ties)
        logger.warning("1-NNA(%s): 최근접 동률 %d건 (다른 출처 이웃 우선)", metric, ties)
    return value
