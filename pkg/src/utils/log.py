"""로깅 설정 - rich 콘솔 하나를 공유"""

import logging

from rich.console import Console
from rich.logging import RichHandler
from tqdm import tqdm

from ..config import LOG_LEVEL, SHOW_PROGRESS

console = Console(stderr=True)

_configured = False


def setup_logging(level: str = LOG_LEVEL) -> None:
    """루트 로거에 RichHandler 연결 (여러 번 호출해도 한 번만 적용)"""
    global _configured
    if _configured:
        logging.getLogger().setLevel(level.upper())
        return
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
    )
    _configured = True


def log(msg: str) -> None:
    """단계 진행 메시지 출력"""
    console.print(msg, highlight=False)


def progress(iterable=None, **kwargs):
    """LOGEN_PROGRESS=0 이면 꺼지는 tqdm 진행 표시줄"""
    kwargs.setdefault("disable", not SHOW_PROGRESS)
    kwargs.setdefault("leave", False)
    kwargs.setdefault("dynamic_ncols", True)
    return tqdm(iterable, **kwargs)
