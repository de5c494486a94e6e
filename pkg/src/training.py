"""노이즈 예측기 학습 루프 - Adam, 주기적 체크포인트, 손실 로그, 비트 단위 재개"""

import csv
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import DenoiserConfig, OptimizerConfig, ScheduleConfig
from .denoiser import DenoiserWeights, init_weights
from .diffusion import schedule_from_config, training_loss
from .errors import CapacityError, ContractError, InvalidDataError, TrainingDivergedError
from .models import ObjectSample, PaddedBatch
from .objects import pad_batch
from .optim import Adam
from .tensor import Tape, load_checkpoint, save_checkpoint
from .utils.io import promote_directory, staging_dir
from .utils.log import progress

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "denoiser"
FINAL_CHECKPOINT = "model.ckpt"
LOSS_LOG = "loss.csv"


@dataclass
class TrainResult:
    """학습 결과"""

    checkpoint: Path
    loss_log: Path
    losses: List[float] = field(default_factory=list)
    start_step: int = 0

    def smoothed(self, window: int = 50) -> Tuple[float, float]:
        """(처음 window 스텝 평균, 마지막 window 스텝 평균)"""
        if not self.losses:
            return float("nan"), float("nan")
        w = max(1, min(window, len(self.losses)))
        return float(np.mean(self.losses[:w])), float(np.mean(self.losses[-w:]))


def save_denoiser(
    path: Path,
    weights: DenoiserWeights,
    schedule: ScheduleConfig,
    class_name: str,
    step: int = 0,
    optimizer: Optional[Adam] = None,
    rng: Optional[np.random.Generator] = None,
    extra: Optional[dict] = None,
) -> None:
    """가중치 (+ 옵티마이저 상태와 RNG 상태) 체크포인트 저장"""
    tensors = dict(weights.state_dict())
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
    header = {
        "kind": CHECKPOINT_KIND,
        "model": weights.config.model_dump(),
        "schedule": schedule.model_dump(),
        "class_name": class_name,
        "step": int(step),
        "num_parameters": weights.num_parameters(),
    }
    if optimizer is not None:
        header["optimizer_step"] = optimizer.step_count
    if rng is not None:
        header["rng_state"] = rng.bit_generator.state
    if extra:
        header.update(extra)
    save_checkpoint(path, tensors, header)


def load_denoiser(path: Path) -> Tuple[DenoiserWeights, dict, dict]:
    """
    체크포인트에서 가중치 복원

    Returns:
        (weights, header, 전체 텐서 dict)
    """
    tensors, header = load_checkpoint(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise InvalidDataError(f"노이즈 예측기 체크포인트가 아닙니다: {path} (kind={header.get('kind')})")
    config = DenoiserConfig.model_validate(header["model"])
    weights = DenoiserWeights.from_state_dict(config, tensors)
    return weights, header, tensors


def make_batch(samples: Sequence[ObjectSample]) -> PaddedBatch:
    batch, mask = pad_batch([s.points for s in samples])
    return PaddedBatch(
        points=batch,
        mask=mask,
        conditions=[s.condition for s in samples],
        names=[s.name for s in samples],
    )


class Trainer:
    """
    클래스 하나에 대한 노이즈 예측기 학습

    스텝마다 학습 RNG에서 배치 인덱스, 타임스텝, 노이즈, dropout 순으로 뽑는다.
    체크포인트와 손실 로그는 output_dir 옆의 작업 디렉토리 (.name.partial)에 쓰고
    run이 끝나야 output_dir로 옮긴다. 중단된 학습은 작업 디렉토리의 step 체크포인트로 재개한다.
    """

    def __init__(
        self,
        samples: Sequence[ObjectSample],
        class_name: str,
        output_dir: Path,
        model: DenoiserConfig,
        schedule: ScheduleConfig,
        optimizer: OptimizerConfig,
        seed: int = 0,
    ):
        if not samples:
            raise InvalidDataError(f"클래스 '{class_name}' 학습 데이터가 없습니다")
        others = sorted({s.cls for s in samples if s.cls != class_name})
        if others:
            raise ContractError(f"한 번에 한 클래스만 학습합니다: {class_name} 외 {others}")
        too_big = max(s.points.n for s in samples)
        if too_big > model.max_points:
            raise CapacityError(f"포인트 {too_big}개 객체가 max_points {model.max_points}를 넘습니다")

        self.samples = list(samples)
        self.class_name = class_name
        self.output_dir = Path(output_dir)
        self.work_dir = staging_dir(self.output_dir)
        self.model_config = model
        self.schedule_config = schedule
        self.opt_config = optimizer
        self.seed = seed

        self.schedule = schedule_from_config(schedule)
        self.weights = init_weights(model, seed=seed)
        self.optimizer = Adam(self.weights.params, lr=optimizer.learning_rate)
        self.rng = np.random.default_rng([seed, 1])
        self.step = 0
        self.losses: List[float] = []
        self._resumed = False

    # ------------------------------------------------------------ 상태

    def resume(self, checkpoint: Path) -> None:
        """체크포인트의 가중치, 옵티마이저 moment, RNG 상태, 손실 기록 복원"""
        weights, header, tensors = load_denoiser(checkpoint)
        if weights.config != self.model_config:
            raise ContractError("체크포인트 모델 설정이 실행 설정과 다릅니다")
        if header.get("class_name") != self.class_name:
            raise ContractError(f"체크포인트 클래스 {header.get('class_name')} != {self.class_name}")
        if "rng_state" not in header:
            raise InvalidDataError("재개용 RNG 상태가 없는 체크포인트입니다")

        self.weights = weights
        self.optimizer = Adam(self.weights.params, lr=self.opt_config.learning_rate)
        self.optimizer.load_state_dict(tensors, header.get("optimizer_step", header["step"]))
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = header["rng_state"]
        self.step = int(header["step"])
        self.losses = _read_loss_log(Path(checkpoint).parent / LOSS_LOG, self.step)
        self._stage_from(Path(checkpoint))
        self._resumed = True
        logger.info("체크포인트에서 재개: %s (step %d)", checkpoint, self.step)

    def _stage_from(self, checkpoint: Path) -> None:
        """작업 디렉토리 밖의 체크포인트로 재개하면 기존 출력을 작업 디렉토리로 복사"""
        if checkpoint.resolve().parent == self.work_dir.resolve():
            return
        shutil.rmtree(self.work_dir, ignore_errors=True)
        if self.output_dir.exists():
            shutil.copytree(self.output_dir, self.work_dir)

    def checkpoint(self, path: Optional[Path] = None) -> Path:
        path = path or self.work_dir / f"step_{self.step:07d}.ckpt"
        save_denoiser(
            path,
            self.weights,
            self.schedule_config,
            self.class_name,
            step=self.step,
            optimizer=self.optimizer,
            rng=self.rng,
        )
        self._write_loss_log()
        return path

    def _write_loss_log(self) -> None:
        self.work_dir.mkdir(parents=True, exist_ok=True)
        with open(self.work_dir / LOSS_LOG, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses, start=1):
                writer.writerow([i, repr(loss)])

    # ------------------------------------------------------------ 학습

    def _draw_batch(self) -> PaddedBatch:
        n = len(self.samples)
        size = self.opt_config.batch_size
        idx = self.rng.choice(n, size=size, replace=n < size)
        return make_batch([self.samples[i] for i in idx])

    def train_step(self) -> float:
        batch = self._draw_batch()
        with Tape() as tape:
            loss = training_loss(batch, self.weights, self.schedule, self.rng, self.opt_config.cond_dropout)
        value = float(loss.data)
        if not np.isfinite(value):
            dump = self._dump_batch(batch)
            raise TrainingDivergedError(f"step {self.step + 1}: 손실이 {value} 입니다. 배치 덤프: {dump}", dump)
        tape.backward(loss)
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step += 1
        self.losses.append(value)
        return value

    def _dump_batch(self, batch: PaddedBatch) -> Path:
        self.work_dir.mkdir(parents=True, exist_ok=True)
        path = self.work_dir / f"diverged_step_{self.step + 1:07d}.npz"
        np.savez(
            path,
            points=batch.points,
            mask=batch.mask,
            conditions=np.stack([c.as_vector() for c in batch.conditions]),
            names=np.array(batch.names or []),
        )
        return path

    def run(self, iterations: Optional[int] = None, finalize: Optional[Callable[[Path], None]] = None) -> TrainResult:
        """
        목표 스텝까지 학습

        Args:
            iterations: 총 스텝 수 (생략하면 설정값). 재개한 경우 남은 스텝만 돈다.
            finalize: output_dir로 옮기기 직전에 작업 디렉토리를 받아 추가 파일을 쓰는 함수

        Returns:
            TrainResult (최종 체크포인트, 손실 로그)
        """
        total = self.opt_config.iterations if iterations is None else iterations
        start = self.step
        if start == 0 and not self._resumed:
            shutil.rmtree(self.work_dir, ignore_errors=True)
        every = self.opt_config.checkpoint_every
        log_every = self.opt_config.log_every

        bar = progress(range(start, total), total=total, initial=start, desc=f"train[{self.class_name}]")
        for _ in bar:
            value = self.train_step()
            if self.step % log_every == 0:
                bar.set_postfix(loss=f"{value:.4f}")
                logger.info("step %d/%d  loss %.5f", self.step, total, value)
            if self.step % every == 0 and self.step < total:
                self.checkpoint()

        self.checkpoint(self.work_dir / FINAL_CHECKPOINT)
        if finalize is not None:
            finalize(self.work_dir)
        promote_directory(self.work_dir, self.output_dir)
        final = self.output_dir / FINAL_CHECKPOINT
        logger.info("학습 완료: %s (%d 스텝)", final, self.step)
        return TrainResult(checkpoint=final, loss_log=self.output_dir / LOSS_LOG, losses=list(self.losses), start_step=start)


def _read_loss_log(path: Path, upto: int) -> List[float]:
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [float(r["loss"]) for r in rows if int(r["step"]) <= upto]
