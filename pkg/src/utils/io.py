"""파일 입출력 유틸리티 - 원자적 출력 디렉토리, 콘텐츠 해시, 실행 매니페스트"""

import hashlib
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Iterator, Optional

from .. import __version__

_CHUNK = 1 << 20
RUN_MANIFEST = "run_manifest.json"


@contextmanager
def atomic_directory(target: Path, overwrite: bool = True) -> Iterator[Path]:
    """
    임시 디렉토리에 쓰고 성공하면 target으로 rename

    예외가 나면 임시 디렉토리를 지우므로 부분 출력이 남지 않는다.

    Args:
        target: 최종 출력 디렉토리
        overwrite: 기존 target 교체 허용 여부
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.exists() and not overwrite:
        raise FileExistsError(f"출력 디렉토리가 이미 있습니다: {target}")

    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    promote_directory(tmp, target)


def staging_dir(target: Path) -> Path:
    """target 옆의 숨은 작업 디렉토리 (.name.partial). 중단되면 이어서 쓸 수 있도록 남는다"""
    target = Path(target)
    return target.parent / f".{target.name}.partial"


def promote_directory(tmp: Path, target: Path) -> None:
    """완성된 임시 디렉토리를 target 자리로 rename (기존 target은 교체)"""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.exists():
        backup = target.parent / f".{target.name}.old"
        shutil.rmtree(backup, ignore_errors=True)
        os.replace(target, backup)
        os.replace(tmp, target)
        shutil.rmtree(backup, ignore_errors=True)
    else:
        os.replace(tmp, target)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """같은 디렉토리의 임시 파일에 쓴 뒤 os.replace"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path: Path, payload: dict) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True, default=str)
    atomic_write_bytes(path, (text + "\n").encode("utf-8"))


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def content_hash(path: Path) -> str:
    """
    파일 또는 디렉토리 내용의 SHA-256

    디렉토리는 상대 경로 정렬 순서로 (경로, 파일 해시)를 이어서 해시한다.
    실행 매니페스트는 생성 시각이 들어 있으므로 제외한다.
    """
    path = Path(path)
    if path.is_file():
        return file_sha256(path)
    digest = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file() and not p.name.endswith(RUN_MANIFEST)):
        rel = child.relative_to(path).as_posix()
        digest.update(rel.encode("utf-8"))
        digest.update(b"\0")
        digest.update(file_sha256(child).encode("ascii"))
        digest.update(b"\n")
    return digest.hexdigest()


def write_run_manifest(
    output_dir: Path,
    subcommand: str,
    config: dict,
    inputs: Iterable[Path],
    seeds: Optional[Dict[str, int]] = None,
    extra: Optional[dict] = None,
    filename: str = RUN_MANIFEST,
) -> Path:
    """
    실행 재현에 필요한 정보를 output_dir/filename 으로 저장

    Returns:
        매니페스트 파일 경로
    """
    manifest = {
        "tool": "logen",
        "version": __version__,
        "subcommand": subcommand,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config,
        "seeds": seeds or {},
        "inputs": {str(p): content_hash(p) for p in inputs if Path(p).exists()},
    }
    if extra:
        manifest.update(extra)
    path = Path(output_dir) / filename
    write_json(path, manifest)
    return path
