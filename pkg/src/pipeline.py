"""메인 파이프라인 - 합성, 학습, 조건 생성, 샘플링, 평가, 렌더링을 연결"""

import re
from pathlib import Path
from typing import Dict, List, Optional

from .config import DEFAULT_THREADS, RunConfig, ScheduleConfig, SynthConfig
from .dataset import Dataset, load_dataset
from .diffusion import schedule_from_config
from .errors import ContractError, InvalidDataError
from .generators.renderer import Renderer
from .generators.sampler import (
    conditions_from_dataset,
    distance_conditions,
    fit_point_power_law,
    read_conditions,
    rotated_conditions,
    sample_objects,
    write_conditions,
    write_generated,
)
from .generators.scanner import make_dataset_from_config
from .metrics import FeatureExtractor, MetricsReport, evaluate, train_feature_extractor
from .models import PointSet
from .training import FINAL_CHECKPOINT, TrainResult, Trainer, load_denoiser
from .utils.io import atomic_directory, write_run_manifest
from .utils.log import log

_VARIANT_SUFFIX = re.compile(r"^(.*?)(_rot\d+|_dx[0-9.e+-]+)$")


def _require(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise InvalidDataError(f"{what}이(가) 없습니다: {path}")
    return path


class ObjectDiffusionPipeline:
    """LiDAR 객체 확산 파이프라인"""

    def __init__(self, threads: int = DEFAULT_THREADS):
        """
        Args:
            threads: 샘플링/평가 스레드 수 (1이면 비트 단위 재현)
        """
        if threads < 1:
            raise ContractError(f"스레드 수는 1 이상이어야 합니다: {threads}")
        self.threads = threads

    # ------------------------------------------------------------ synth

    def synth(self, config: SynthConfig, output_dir: Path) -> Path:
        """절차적 스캐너로 합성 데이터셋 생성"""
        log("[1/2] 합성 객체 스캔 중...")

        def manifest(tmp: Path) -> None:
            write_run_manifest(tmp, "synth", config.model_dump(mode="json"), [], seeds={"synth": config.seed})

        path = make_dataset_from_config(config, Path(output_dir), finalize=manifest)
        dataset = load_dataset(path)
        log(f"  -> {len(dataset)}개 객체, 클래스 {', '.join(dataset.classes)}")
        for split, names in dataset.splits.items():
            log(f"  -> {split}: {len(names)}개")

        log("[2/2] 저장 완료")
        log(f"  -> 저장 위치: {path}")
        return path

    # ------------------------------------------------------------ train

    def train(self, config: RunConfig, resume: Optional[Path] = None, iterations: Optional[int] = None) -> TrainResult:
        """
        클래스 하나의 노이즈 예측기 학습

        Args:
            config: 실행 설정 (dataset, class_name, 모델/스케줄/옵티마이저)
            resume: 이어서 학습할 체크포인트
            iterations: 설정의 반복 수를 덮어쓸 값
        """
        log("[1/3] 데이터셋 로드 중...")
        dataset = load_dataset(_require(config.dataset, "데이터셋"))
        samples = dataset.objects(split="train" if "train" in dataset.splits else None, cls=config.class_name)
        log(f"  -> {config.class_name}: 학습 객체 {len(samples)}개")

        log("[2/3] 학습 중...")
        trainer = Trainer(
            samples,
            config.class_name,
            config.output_dir,
            config.model,
            config.schedule,
            config.optimizer,
            seed=config.seed,
        )
        if resume is not None:
            trainer.resume(_require(resume, "체크포인트"))
            log(f"  -> step {trainer.step}에서 재개")
        inputs = [config.dataset] + ([resume] if resume is not None else [])

        def manifest(work_dir: Path) -> None:
            write_run_manifest(
                work_dir,
                "train",
                config.model_dump(mode="json"),
                inputs,
                seeds={"train": config.seed},
                extra={"checkpoint": str(Path(config.output_dir) / FINAL_CHECKPOINT), "steps": trainer.step},
            )

        result = trainer.run(iterations, finalize=manifest)
        first, last = result.smoothed()
        log(f"  -> 손실 {first:.4f} -> {last:.4f} ({trainer.step} 스텝)")

        log("[3/3] 실행 매니페스트와 함께 저장 완료")
        log(f"  -> 체크포인트: {result.checkpoint}")
        return result

    # ------------------------------------------------------------ conditions

    def conditions(
        self,
        dataset_path: Path,
        class_name: str,
        output_path: Path,
        split: str = "val",
        rotations: int = 0,
        distance: bool = False,
        max_points: Optional[int] = None,
    ) -> Path:
        """
        데이터셋 split에서 조건 파일 생성 (선택적으로 회전/거리 변형)

        Args:
            rotations: 0이면 원본 조건, K면 phi + i/K 회전 변형
            distance: True면 거리 x2, x1/2 변형 (포인트 수는 거듭제곱 법칙)
        """
        log("[1/2] 조건 추출 중...")
        dataset = load_dataset(_require(dataset_path, "데이터셋"))
        records = conditions_from_dataset(dataset, class_name, split)
        log(f"  -> {class_name} / {split}: {len(records)}개 조건")
        if rotations:
            records = rotated_conditions(records, rotations)
            log(f"  -> 회전 변형 {rotations}개: {len(records)}개 조건")
        if distance:
            fit_split = "train" if "train" in dataset.splits else None
            gamma = fit_point_power_law(dataset.objects(split=fit_split, cls=class_name))
            records = distance_conditions(records, gamma, max_points=max_points)
            log(f"  -> 거리 변형 (gamma={gamma:.3f}): {len(records)}개 조건")

        log("[2/2] 조건 파일 기록 중...")
        output_path = write_conditions(Path(output_path), records)
        write_run_manifest(
            output_path.parent,
            "conditions",
            {"class_name": class_name, "split": split, "rotations": rotations, "distance": distance},
            [dataset_path],
            filename=f"{output_path.name}.run_manifest.json",
        )
        log(f"  -> 저장 위치: {output_path}")
        return output_path

    # ------------------------------------------------------------ sample

    def sample(self, config: RunConfig, checkpoint: Path, conditions_path: Path, output_dir: Optional[Path] = None) -> Path:
        """조건 파일의 줄마다 객체 하나를 생성해 데이터셋으로 저장"""
        log("[1/3] 체크포인트 로드 중...")
        weights, header, _ = load_denoiser(_require(checkpoint, "체크포인트"))
        class_name = header["class_name"]
        if class_name != config.class_name:
            raise ContractError(f"체크포인트 클래스 '{class_name}' != 실행 설정 클래스 '{config.class_name}'")
        schedule = schedule_from_config(ScheduleConfig.model_validate(header["schedule"]))
        records = read_conditions(_require(conditions_path, "조건 파일"))
        i_max = load_dataset(_require(config.dataset, "데이터셋")).i_max
        log(f"  -> {class_name}: {weights.config.variant}, 파라미터 {weights.num_parameters():,}개, 조건 {len(records)}개")

        log("[2/3] 역확산 샘플링 중...")
        samples = sample_objects(records, weights, schedule, config.sampler, class_name, threads=self.threads)

        log("[3/3] 생성 데이터셋 기록 중...")
        output_dir = Path(output_dir or config.output_dir)
        write_generated(
            output_dir,
            samples,
            class_name,
            i_max,
            finalize=lambda tmp: write_run_manifest(
                tmp,
                "sample",
                config.model_dump(mode="json"),
                [checkpoint, conditions_path, config.dataset],
                seeds={"sampler": config.sampler.seed},
                extra={"threads": self.threads},
            ),
        )
        log(f"  -> {len(samples)}개 객체 저장: {output_dir}")
        return output_dir

    # ------------------------------------------------------------ fit-extractor

    def fit_extractor(self, dataset_path: Path, output_path: Path, epochs: int = 30, seed: int = 0) -> Path:
        """실제 학습 split으로 FPD/KPD/APC용 분류기 학습"""
        log("[1/2] 특징 추출기 학습 중...")
        dataset = load_dataset(_require(dataset_path, "데이터셋"))
        samples = dataset.objects(split="train" if "train" in dataset.splits else None)
        extractor = train_feature_extractor(samples, dataset.classes, epochs=epochs, seed=seed)
        acc = extractor.accuracy([s.points for s in samples], [s.cls for s in samples], 4)
        log(f"  -> 학습 정확도 (4채널): {acc:.3f}")

        log("[2/2] 체크포인트 기록 중...")
        output_path = extractor.save(Path(output_path))
        write_run_manifest(
            output_path.parent,
            "fit-extractor",
            {"epochs": epochs, "classes": dataset.classes},
            [dataset_path],
            seeds={"extractor": seed},
            filename=f"{output_path.name}.run_manifest.json",
        )
        log(f"  -> 저장 위치: {output_path} (id {extractor.checkpoint_id})")
        return output_path

    # ------------------------------------------------------------ eval

    def evaluate(
        self,
        real_path: Path,
        generated_path: Path,
        output_dir: Path,
        extractor_path: Optional[Path] = None,
        channels: int = 3,
        per_point: bool = True,
    ) -> MetricsReport:
        """
        생성 데이터셋을 조건 출처인 실제 객체와 짝지어 평가

        생성 객체 이름에서 회전/거리 변형 접미사를 떼어 실제 객체를 찾는다.
        """
        log("[1/3] 데이터셋 로드 중...")
        real = load_dataset(_require(real_path, "실제 데이터셋"))
        generated = load_dataset(_require(generated_path, "생성 데이터셋"))
        real_by_cls, gen_by_cls = pair_sets(real, generated)
        extractor = FeatureExtractor.load(_require(extractor_path, "특징 추출기")) if extractor_path else None
        for cls in gen_by_cls:
            log(f"  -> {cls}: {len(gen_by_cls[cls])}쌍")

        log("[2/3] 지표 계산 중...")
        report = evaluate(
            real_by_cls,
            gen_by_cls,
            extractor,
            channels=channels,
            per_point=per_point,
            threads=self.threads,
            metadata={"real": str(real_path), "generated": str(generated_path)},
        )

        log("[3/3] 리포트 기록 중...")
        output_dir = Path(output_dir)
        inputs = [real_path, generated_path] + ([extractor_path] if extractor_path else [])
        with atomic_directory(output_dir) as tmp:
            report.save(tmp / "metrics.json")
            (tmp / "metrics.txt").write_text(report.render_text(), encoding="utf-8")
            write_run_manifest(
                tmp,
                "eval",
                {"channels": channels, "per_point": per_point},
                inputs,
                extra={"threads": self.threads},
            )
        log(report.render_text())
        return report

    # ------------------------------------------------------------ render

    def render(
        self,
        dataset_path: Path,
        output_dir: Path,
        style: str = "all",
        frame: str = "canonical",
        split: Optional[str] = None,
        class_name: Optional[str] = None,
    ) -> List[Path]:
        """객체마다 SVG/PNG/PLY 파일 생성"""
        log("[1/2] 데이터셋 로드 중...")
        dataset = load_dataset(_require(dataset_path, "데이터셋"))
        renderer = Renderer(style=style, frame=frame)
        samples = dataset.objects(split=split, cls=class_name)
        log(f"  -> {len(samples)}개 객체")

        log("[2/2] 렌더링 중...")
        output_dir = Path(output_dir)
        with atomic_directory(output_dir) as tmp:
            paths = renderer.render_all(samples, tmp)
            write_run_manifest(tmp, "render", {"style": style, "frame": frame, "split": split}, [dataset_path])
        paths = [output_dir / p.name for p in paths]
        log(f"  -> {len(paths)}개 파일: {output_dir}")
        return paths


def base_name(name: str) -> str:
    """변형 조건 이름의 원본 객체 이름 ("car_00001_rot3" -> "car_00001")"""
    match = _VARIANT_SUFFIX.match(name)
    return match.group(1) if match else name


def pair_sets(real: Dataset, generated: Dataset):
    """
    생성 객체마다 같은 이름(또는 변형 전 이름)의 실제 객체를 짝지어 클래스별 목록 두 개를 만든다

    Returns:
        (real_by_cls, gen_by_cls) - 같은 인덱스끼리 짝
    """
    real_by_cls: Dict[str, List[PointSet]] = {}
    gen_by_cls: Dict[str, List[PointSet]] = {}
    for g in generated.objects():
        source = real.samples.get(g.name) or real.samples.get(base_name(g.name))
        if source is None:
            raise InvalidDataError(f"생성 객체 '{g.name}'에 대응하는 실제 객체가 없습니다")
        if source.cls != g.cls:
            raise ContractError(f"'{g.name}': 클래스 불일치 ({source.cls} != {g.cls})")
        real_by_cls.setdefault(g.cls, []).append(source.points)
        gen_by_cls.setdefault(g.cls, []).append(g.points)
    if not gen_by_cls:
        raise InvalidDataError("평가할 생성 객체가 없습니다")
    return real_by_cls, gen_by_cls
