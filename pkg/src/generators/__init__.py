"""생성기 모듈 - 합성 스캐너, 조건부 샘플러, 렌더러"""

from .renderer import Renderer, read_ply
from .sampler import ConditionRecord, read_conditions, sample_objects, write_conditions
from .scanner import LidarScanner, TEMPLATES, make_dataset, scan_object

__all__ = [
    "Renderer",
    "read_ply",
    "ConditionRecord",
    "read_conditions",
    "sample_objects",
    "write_conditions",
    "LidarScanner",
    "TEMPLATES",
    "make_dataset",
    "scan_object",
]
