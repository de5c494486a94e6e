"""특징 추출 - intensity 히스토그램, 작은 PointNet 분류기 (FPD/KPD/APC용)"""

import hashlib
import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from ..errors import InvalidDataError, LabelError
from ..models import ObjectSample, PointSet
from ..optim import Adam
from ..tensor import (
    Tensor,
    Tape,
    concat,
    conv1x1,
    cross_entropy,
    linear,
    load_checkpoint,
    max_rows,
    no_grad,
    parameter,
    relu,
    save_checkpoint,
)
from ..utils.log import progress

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 256
FEATURE_DIM = 64
CHECKPOINT_KIND = "feature_extractor"
_LAYERS = (("conv1", None, 32), ("conv2", 32, 64), ("fc", 64, FEATURE_DIM))


def intensity_features(X: PointSet) -> np.ndarray:
    """[0, 1]을 256개 구간으로 나눈 L1 정규화 intensity 히스토그램"""
    intensity = X.intensity if isinstance(X, PointSet) else np.asarray(X, dtype=np.float64)[:, 3]
    if np.any(intensity < 0) or np.any(intensity > 1):
        raise InvalidDataError("intensity가 [0, 1] 범위를 벗어났습니다")
    counts, _ = np.histogram(intensity, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return counts / float(intensity.size)


def _init_classifier(channels: int, num_classes: int, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, fan_in, fan_out in _LAYERS:
        fan_in = channels if fan_in is None else fan_in
        std = math.sqrt(2.0 / fan_in)
        params[f"c{channels}.{name}.w"] = parameter(rng.normal(0.0, std, (fan_in, fan_out)), name=f"c{channels}.{name}.w")
        params[f"c{channels}.{name}.b"] = parameter(np.zeros(fan_out), name=f"c{channels}.{name}.b")
    limit = math.sqrt(6.0 / (FEATURE_DIM + num_classes))
    params[f"c{channels}.logits.w"] = parameter(
        rng.uniform(-limit, limit, (FEATURE_DIM, num_classes)), name=f"c{channels}.logits.w"
    )
    params[f"c{channels}.logits.b"] = parameter(np.zeros(num_classes), name=f"c{channels}.logits.b")
    return params


class FeatureExtractor:
    """
    PointNet 형태의 작은 분류기 (포인트별 공유 conv1x1 -> max-pool -> dense)

    3채널(좌표)과 4채널(좌표 + intensity) 모델을 함께 가진다.
    """

    def __init__(self, classes: Sequence[str], params: Dict[str, Tensor]):
        self.classes = list(classes)
        self.params = params

    @classmethod
    def initialize(cls, classes: Sequence[str], seed: int = 0) -> "FeatureExtractor":
        rng = np.random.default_rng(seed)
        params: "OrderedDict[str, Tensor]" = OrderedDict()
        for channels in (3, 4):
            params.update(_init_classifier(channels, len(classes), rng))
        return cls(classes, params)

    def _p(self, channels: int, name: str) -> Tensor:
        return self.params[f"c{channels}.{name}"]

    def _forward(self, X: PointSet, channels: int):
        x = Tensor(X.channels(channels))
        h = relu(conv1x1(x, self._p(channels, "conv1.w"), self._p(channels, "conv1.b")))
        h = relu(conv1x1(h, self._p(channels, "conv2.w"), self._p(channels, "conv2.b")))
        pooled = max_rows(h)
        feat = relu(linear(pooled, self._p(channels, "fc.w"), self._p(channels, "fc.b")))
        logits = linear(feat, self._p(channels, "logits.w"), self._p(channels, "logits.b"))
        return feat, logits

    def features(self, objs: Sequence[PointSet], channels: int = 4) -> np.ndarray:
        """penultimate 층 특징 (K, 64)"""
        if not objs:
            return np.zeros((0, FEATURE_DIM))
        with no_grad():
            return np.concatenate([self._forward(o, channels)[0].data for o in objs]).astype(np.float64)

    def logits(self, objs: Sequence[PointSet], channels: int = 4) -> np.ndarray:
        with no_grad():
            return np.concatenate([self._forward(o, channels)[1].data for o in objs]).astype(np.float64)

    def predict(self, objs: Sequence[PointSet], channels: int = 4) -> np.ndarray:
        return np.argmax(self.logits(objs, channels), axis=1)

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise LabelError(f"특징 추출기가 모르는 클래스: {label} (가능: {', '.join(self.classes)})") from None

    def accuracy(self, objs: Sequence[PointSet], labels: Sequence[str], channels: int = 4) -> float:
        if len(objs) != len(labels):
            raise InvalidDataError("객체 수와 라벨 수가 다릅니다")
        if not objs:
            raise InvalidDataError("정확도를 계산할 객체가 없습니다")
        target = np.array([self.class_index(c) for c in labels])
        return float(np.mean(self.predict(objs, channels) == target))

    @property
    def checkpoint_id(self) -> str:
        digest = hashlib.sha256()
        for name, p in self.params.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return digest.hexdigest()[:16]

    def save(self, path: Path) -> Path:
        header = {"kind": CHECKPOINT_KIND, "classes": self.classes, "feature_dim": FEATURE_DIM}
        save_checkpoint(path, {k: p.data for k, p in self.params.items()}, header)
        return Path(path)

    @classmethod
    def load(cls, path: Path) -> "FeatureExtractor":
        tensors, header = load_checkpoint(path)
        if header.get("kind") != CHECKPOINT_KIND:
            raise InvalidDataError(f"특징 추출기 체크포인트가 아닙니다: {path}")
        reference = cls.initialize(header["classes"])
        params: "OrderedDict[str, Tensor]" = OrderedDict()
        for name in reference.params:
            if name not in tensors:
                raise InvalidDataError(f"특징 추출기 가중치 '{name}' 누락")
            params[name] = parameter(tensors[name], name=name)
        return cls(header["classes"], params)


def train_feature_extractor(
    samples: Sequence[ObjectSample],
    classes: Sequence[str],
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """
    실제 객체로 3채널/4채널 분류기 학습

    Args:
        samples: 학습 객체 (실제 데이터만)
        classes: 클래스 목록 (logit 순서)
    """
    if not samples:
        raise InvalidDataError("특징 추출기 학습 데이터가 없습니다")
    extractor = FeatureExtractor.initialize(classes, seed=seed)
    labels = np.array([extractor.class_index(s.cls) for s in samples])
    rng = np.random.default_rng([seed, 2])

    for channels in (3, 4):
        group = OrderedDict((k, p) for k, p in extractor.params.items() if k.startswith(f"c{channels}."))
        opt = Adam(group, lr=lr)
        for epoch in progress(range(epochs), desc=f"extractor {channels}ch"):
            order = rng.permutation(len(samples))
            losses: List[float] = []
            for start in range(0, len(order), batch_size):
                idx = order[start : start + batch_size]
                with Tape() as tape:
                    logits = concat([extractor._forward(samples[i].points, channels)[1] for i in idx], axis=0)
                    loss = cross_entropy(logits, labels[idx])
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(float(loss.data))
            logger.debug("extractor %dch epoch %d loss %.4f", channels, epoch + 1, float(np.mean(losses)))
        acc = extractor.accuracy([s.points for s in samples], [s.cls for s in samples], channels)
        logger.info("특징 추출기 %d채널 학습 정확도 %.3f", channels, acc)
    return extractor


def apc(generated: Sequence[PointSet], extractor: FeatureExtractor, labels: Sequence[str], channels: int = 4) -> float:
    """생성 객체가 조건 클래스로 분류되는 비율"""
    return extractor.accuracy(generated, labels, channels)
