"""LOGen - LiDAR 객체 조건부 확산 생성

사용법:
    python main.py synth --config synth.json --output data/synth
    python main.py train --config run.json
    python main.py conditions --dataset data/synth --class vehicle --output cond.jsonl --rotations 5
    python main.py sample --config run.json --checkpoint runs/vehicle/model.ckpt --conditions cond.jsonl
    python main.py fit-extractor --dataset data/synth --output extractor.ckpt
    python main.py eval --real data/synth --generated runs/vehicle/generated --extractor extractor.ckpt --output runs/eval
    python main.py render --dataset runs/vehicle/generated --output runs/render
"""

import argparse
import os
import sys

# --threads는 numpy를 불러오기 전에 BLAS 스레드 수에 반영해야 한다
_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_INTERNAL = 2


def configure_threads(argv) -> int:
    """argv의 --threads (없으면 LOGEN_THREADS) 값을 BLAS 환경 변수로 설정"""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=None)
    known, _ = pre.parse_known_args(argv)
    threads = known.threads if known.threads is not None else int(os.getenv("LOGEN_THREADS", "1"))
    for var in _BLAS_VARS:
        os.environ[var] = str(max(1, threads))
    return threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="LOGen - LiDAR 객체 조건부 확산 생성")
    parser.add_argument("--threads", type=int, default=None, help="스레드 수 (1이면 비트 단위 재현, 기본: LOGEN_THREADS)")
    parser.add_argument("--log-level", default=None, help="로그 레벨 (기본: LOGEN_LOG_LEVEL 또는 INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="절차적 스캐너로 합성 데이터셋 생성")
    p.add_argument("--config", "-c", required=True, help="synth 설정 JSON")
    p.add_argument("--output", "-o", required=True, help="출력 데이터셋 디렉토리")

    p = sub.add_parser("train", help="클래스 하나의 노이즈 예측기 학습")
    p.add_argument("--config", "-c", required=True, help="실행 설정 JSON")
    p.add_argument("--resume", help="이어서 학습할 체크포인트")
    p.add_argument("--iterations", type=int, help="총 반복 수 (설정값 덮어쓰기)")

    p = sub.add_parser("conditions", help="데이터셋 split에서 조건 파일 생성")
    p.add_argument("--dataset", "-d", required=True, help="데이터셋 디렉토리")
    p.add_argument("--class", dest="class_name", required=True, help="객체 클래스")
    p.add_argument("--output", "-o", required=True, help="출력 조건 파일 (JSON lines)")
    p.add_argument("--split", default="val", help="조건을 가져올 split (기본: val)")
    p.add_argument("--rotations", type=int, default=0, help="관측 각도 회전 변형 개수 (기본: 0 = 변형 없음)")
    p.add_argument("--distance", action="store_true", help="거리 x2, x1/2 변형 추가")
    p.add_argument("--max-points", type=int, help="거리 변형 포인트 수 상한")

    p = sub.add_parser("sample", help="조건 파일로 객체 생성")
    p.add_argument("--config", "-c", required=True, help="실행 설정 JSON")
    p.add_argument("--checkpoint", required=True, help="노이즈 예측기 체크포인트")
    p.add_argument("--conditions", required=True, help="조건 파일 (JSON lines)")
    p.add_argument("--output", "-o", help="출력 디렉토리 (기본: 설정의 output_dir)")

    p = sub.add_parser("fit-extractor", help="FPD/KPD/APC용 특징 추출기 학습")
    p.add_argument("--dataset", "-d", required=True, help="실제 데이터셋 디렉토리")
    p.add_argument("--output", "-o", required=True, help="출력 체크포인트")
    p.add_argument("--epochs", type=int, default=30, help="학습 epoch 수 (기본: 30)")
    p.add_argument("--seed", type=int, default=0, help="시드 (기본: 0)")

    p = sub.add_parser("eval", help="생성 품질 지표 계산")
    p.add_argument("--real", required=True, help="실제 데이터셋 디렉토리")
    p.add_argument("--generated", required=True, help="생성 데이터셋 디렉토리")
    p.add_argument("--output", "-o", required=True, help="리포트 출력 디렉토리")
    p.add_argument("--extractor", help="특징 추출기 체크포인트 (없으면 FPD/KPD/APC 생략)")
    p.add_argument("--channels", type=int, choices=[3, 4], default=3, help="CD/EMD 거리 채널 (기본: 3)")
    p.add_argument("--sum", action="store_true", help="CD/EMD를 포인트 평균 대신 합으로")

    p = sub.add_parser("render", help="SVG/PNG/PLY 내보내기")
    p.add_argument("--dataset", "-d", required=True, help="데이터셋 디렉토리")
    p.add_argument("--output", "-o", required=True, help="출력 디렉토리")
    p.add_argument("--style", choices=["svg", "png", "ply", "all"], default="all", help="출력 형식 (기본: all)")
    p.add_argument("--frame", choices=["canonical", "sensor"], default="canonical", help="좌표계 (기본: canonical)")
    p.add_argument("--split", help="split 필터")
    p.add_argument("--class", dest="class_name", help="클래스 필터")
    return parser


def run(args, threads: int) -> None:
    from pathlib import Path

    from src.config import load_run_config, load_synth_config
    from src.pipeline import ObjectDiffusionPipeline

    pipeline = ObjectDiffusionPipeline(threads=threads)
    if args.command == "synth":
        pipeline.synth(load_synth_config(Path(args.config)), Path(args.output))
    elif args.command == "train":
        pipeline.train(
            load_run_config(Path(args.config)),
            resume=Path(args.resume) if args.resume else None,
            iterations=args.iterations,
        )
    elif args.command == "conditions":
        pipeline.conditions(
            Path(args.dataset),
            args.class_name,
            Path(args.output),
            split=args.split,
            rotations=args.rotations,
            distance=args.distance,
            max_points=args.max_points,
        )
    elif args.command == "sample":
        pipeline.sample(
            load_run_config(Path(args.config)),
            Path(args.checkpoint),
            Path(args.conditions),
            Path(args.output) if args.output else None,
        )
    elif args.command == "fit-extractor":
        pipeline.fit_extractor(Path(args.dataset), Path(args.output), epochs=args.epochs, seed=args.seed)
    elif args.command == "eval":
        pipeline.evaluate(
            Path(args.real),
            Path(args.generated),
            Path(args.output),
            extractor_path=Path(args.extractor) if args.extractor else None,
            channels=args.channels,
            per_point=not args.sum,
        )
    elif args.command == "render":
        pipeline.render(
            Path(args.dataset),
            Path(args.output),
            style=args.style,
            frame=args.frame,
            split=args.split,
            class_name=args.class_name,
        )


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    threads = configure_threads(argv)
    args = build_parser().parse_args(argv)

    from rich.markup import escape

    from src.config import LOG_LEVEL
    from src.errors import ContractError, TrainingDivergedError
    from src.utils.log import console, setup_logging

    setup_logging(args.log_level or LOG_LEVEL)

    try:
        run(args, threads)
    except KeyboardInterrupt:
        console.print("\n취소됨")
        return EXIT_INTERNAL
    except (ContractError, TrainingDivergedError) as e:
        console.print(f"\n[red]오류:[/red] {escape(str(e))}", highlight=False)
        return EXIT_CONTRACT
    except Exception:
        console.print("\n[red]내부 오류 발생[/red]")
        console.print_exception()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
