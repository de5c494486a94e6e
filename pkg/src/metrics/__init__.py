"""생성 품질 평가 지표"""

from .distances import auction_assignment, chamfer, emd, emd_with_info, rectangular_emd
from .distributions import fpd, fpd_from_features, frechet_distance, jsd, js_divergence, kpd, kpd_from_features
from .features import FeatureExtractor, apc, intensity_features, train_feature_extractor
from .report import METRIC_FIELDS, MetricsReport, evaluate, evaluate_class
from .sets import SampleSets, coverage, distance_matrix, one_nna

__all__ = [
    "auction_assignment",
    "chamfer",
    "emd",
    "emd_with_info",
    "rectangular_emd",
    "fpd",
    "fpd_from_features",
    "frechet_distance",
    "jsd",
    "js_divergence",
    "kpd",
    "kpd_from_features",
    "FeatureExtractor",
    "apc",
    "intensity_features",
    "train_feature_extractor",
    "METRIC_FIELDS",
    "MetricsReport",
    "evaluate",
    "evaluate_class",
    "SampleSets",
    "coverage",
    "distance_matrix",
    "one_nna",
]
