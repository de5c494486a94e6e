"""평가 리포트 - 클래스별 지표 계산, JSON 저장, 표 출력"""

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from ..errors import ContractError
from ..models import PointSet
from ..utils.io import write_json
from .distances import chamfer, emd_with_info, rectangular_emd
from .distributions import fpd, jsd, kpd
from .features import FeatureExtractor
from .sets import SampleSets, coverage_from_matrix, distance_matrix, one_nna_from_matrices

logger = logging.getLogger(__name__)

METRIC_FIELDS = (
    "cd",
    "emd",
    "cov_cd",
    "cov_emd",
    "cov_int",
    "nna_cd",
    "nna_emd",
    "nna_int",
    "fpd_3ch",
    "fpd_4ch",
    "kpd_3ch",
    "kpd_4ch",
    "apc",
    "jsd",
)


@dataclass
class MetricsReport:
    """클래스별 지표와 출처 메타데이터"""

    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean(self) -> Dict[str, float]:
        out = {}
        for name in METRIC_FIELDS:
            values = [v[name] for v in self.per_class.values() if v.get(name) is not None and np.isfinite(v[name])]
            out[name] = float(np.mean(values)) if values else float("nan")
        return out

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "mean": self.mean, "metadata": self.metadata}

    def save(self, path: Path) -> Path:
        write_json(Path(path), self.to_dict())
        return Path(path)

    @classmethod
    def load(cls, path: Path) -> "MetricsReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(per_class=data["per_class"], metadata=data.get("metadata", {}))

    def to_table(self) -> Table:
        table = Table(title="생성 품질 지표", show_lines=False)
        table.add_column("class", style="bold")
        for name in METRIC_FIELDS:
            table.add_column(name, justify="right")
        rows = list(self.per_class.items()) + [("mean", self.mean)]
        for cls, values in rows:
            table.add_row(cls, *[_fmt(values.get(name)) for name in METRIC_FIELDS])
        return table

    def render_text(self, width: int = 200) -> str:
        console = Console(file=io.StringIO(), width=width, record=True)
        console.print(self.to_table())
        return console.export_text()


def _fmt(value: Optional[float]) -> str:
    if value is None or not np.isfinite(value):
        return "-"
    return f"{value:.4f}"


def evaluate_class(
    real: Sequence[PointSet],
    generated: Sequence[PointSet],
    label: str,
    extractor: Optional[FeatureExtractor],
    channels: int = 3,
    per_point: bool = True,
    threads: int = 1,
) -> Dict[str, Any]:
    """
    클래스 하나의 전체 지표

    Args:
        real: S_r
        generated: S_g (S_r과 인덱스 정렬). 거리 변형 조건으로 만든 객체는 출처와 포인트 수가 다를 수 있다
        label: 조건 클래스 (APC 라벨)
        extractor: FPD/KPD/APC용 분류기. None이면 해당 지표 생략
        channels: CD/EMD/COV/1-NNA 거리 채널
        per_point: CD/EMD 평균 모드
    """
    sets = SampleSets(list(real), list(generated))
    if not sets.real:
        raise ContractError(f"{label}: 평가할 객체가 없습니다")

    values: Dict[str, Any] = {}
    values["cd"] = float(np.mean([chamfer(r, g, channels, per_point) for r, g in zip(sets.real, sets.generated)]))
    emds = []
    for r, g in zip(sets.real, sets.generated):
        if r.n == g.n:
            value, approximate = emd_with_info(r, g, channels, per_point)
            if approximate:
                sets.flag("emd_approximate")
        else:
            value = rectangular_emd(r, g, channels, per_point)
            sets.flag("emd_rectangular_pairs")
        emds.append(value)
    values["emd"] = float(np.mean(emds))
    if sets.flags.get("emd_approximate"):
        logger.warning("%s: EMD 근사 모드 %d건", label, sets.flags["emd_approximate"])
    if sets.flags.get("emd_rectangular_pairs"):
        logger.warning("%s: 포인트 수가 다른 쌍 %d건은 직사각 할당 EMD", label, sets.flags["emd_rectangular_pairs"])

    for metric in ("cd", "emd", "int"):
        D_gr = distance_matrix(sets.generated, sets.real, metric, channels, per_point, threads, sets.flags)
        D_gg = distance_matrix(sets.generated, sets.generated, metric, channels, per_point, threads, sets.flags)
        D_rr = distance_matrix(sets.real, sets.real, metric, channels, per_point, threads, sets.flags)
        values[f"cov_{metric}"] = coverage_from_matrix(D_gr)
        nna, ties = one_nna_from_matrices(D_gg, D_gr, D_rr)
        values[f"nna_{metric}"] = nna
        if ties:
            sets.flag(f"nna_{metric}_ties", ties)
            logger.warning("%s: 1-NNA(%s) 최근접 동률 %d건", label, metric, ties)

    extras: Dict[str, Any] = {}
    if extractor is not None:
        for ch in (3, 4):
            if len(sets.real) >= 2:
                value, ridged = fpd(sets.real, sets.generated, extractor, ch)
                values[f"fpd_{ch}ch"] = value
                if ridged:
                    sets.flag(f"fpd_{ch}ch_ridge")
                kpd_value, stderr = kpd(sets.real, sets.generated, extractor, ch)
                values[f"kpd_{ch}ch"] = kpd_value
                extras[f"kpd_{ch}ch_stderr"] = stderr
            else:
                values[f"fpd_{ch}ch"] = values[f"kpd_{ch}ch"] = None
        values["apc"] = extractor.accuracy(sets.generated, [label] * len(sets.generated), 4)
    else:
        for name in ("fpd_3ch", "fpd_4ch", "kpd_3ch", "kpd_4ch", "apc"):
            values[name] = None

    values["jsd"] = jsd(sets.real, sets.generated)
    return {"values": values, "flags": dict(sets.flags), "extras": extras, "count": len(sets.real)}


def evaluate(
    real: Dict[str, List[PointSet]],
    generated: Dict[str, List[PointSet]],
    extractor: Optional[FeatureExtractor],
    channels: int = 3,
    per_point: bool = True,
    threads: int = 1,
    metadata: Optional[Dict[str, Any]] = None,
) -> MetricsReport:
    """클래스마다 evaluate_class를 돌려 MetricsReport 생성"""
    missing = sorted(set(real) ^ set(generated))
    if missing:
        raise ContractError(f"실제/생성 데이터의 클래스가 다릅니다: {missing}")

    report = MetricsReport(
        metadata={
            "channels": channels,
            "per_point": per_point,
            "feature_checkpoint": extractor.checkpoint_id if extractor is not None else None,
            "counts": {},
            "flags": {},
            "extras": {},
        }
    )
    if metadata:
        report.metadata.update(metadata)

    for cls in sorted(real):
        logger.info("평가: %s (%d개)", cls, len(real[cls]))
        result = evaluate_class(real[cls], generated[cls], cls, extractor, channels, per_point, threads)
        report.per_class[cls] = result["values"]
        report.metadata["counts"][cls] = result["count"]
        if result["flags"]:
            report.metadata["flags"][cls] = result["flags"]
        if result["extras"]:
            report.metadata["extras"][cls] = result["extras"]
    return report
