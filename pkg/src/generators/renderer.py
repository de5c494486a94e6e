"""객체 렌더러 - SVG 정사영 (위/옆), PNG 미리보기, ASCII PLY 내보내기"""

import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from ..dataset import Dataset
from ..errors import ContractError, InvalidDataError
from ..models import ObjectSample, PointSet
from ..objects import place_condition, uncanonicalize
from ..utils.io import atomic_write_bytes
from ..utils.log import progress

logger = logging.getLogger(__name__)

STYLES = ("svg", "png", "ply", "all")
FRAMES = ("canonical", "sensor")

PANEL = 240  # 뷰 하나의 한 변 (px)
PADDING = 16

# intensity 0 -> 1 컬러맵 앵커 (어두운 보라 -> 청록 -> 노랑)
_COLORMAP = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=np.float64,
)

PointsLike = Union[PointSet, np.ndarray]


def _as_array(points: PointsLike) -> np.ndarray:
    arr = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise InvalidDataError(f"렌더링할 포인트는 (N, 4) 이어야 합니다: {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidDataError("빈 포인트 집합은 렌더링할 수 없습니다")
    return arr


def intensity_colors(intensity: np.ndarray) -> np.ndarray:
    """[0, 1] intensity를 RGB (0-255 정수)로"""
    v = np.clip(np.asarray(intensity, dtype=np.float64), 0.0, 1.0)
    anchors = np.linspace(0.0, 1.0, len(_COLORMAP))
    rgb = np.column_stack([np.interp(v, anchors, _COLORMAP[:, c]) for c in range(3)])
    return np.rint(rgb).astype(np.int64)


def _project(arr: np.ndarray):
    """위(x-y)와 옆(x-z) 뷰의 픽셀 좌표. 두 뷰가 같은 축척을 쓴다"""
    xyz = arr[:, :3]
    lo, hi = xyz.min(axis=0), xyz.max(axis=0)
    span = float(max((hi - lo).max(), 1e-6))
    scale = (PANEL - 2 * PADDING) / span
    mid = (lo + hi) / 2.0

    u = PANEL / 2.0 + (xyz[:, 0] - mid[0]) * scale
    top = (u, PANEL / 2.0 - (xyz[:, 1] - mid[1]) * scale)
    side = (u + PANEL, PANEL / 2.0 - (xyz[:, 2] - mid[2]) * scale)
    return top, side


class RendererBase(ABC):
    """렌더러 추상 클래스"""

    suffix = ""

    @abstractmethod
    def render(self, points: PointsLike, output_path: Path, title: str = "") -> Path:
        """포인트 집합 하나를 파일로"""
        pass


class SvgRenderer(RendererBase):
    """위/옆 정사영을 나란히 놓은 SVG (점 색 = intensity)"""

    suffix = ".svg"

    def render(self, points: PointsLike, output_path: Path, title: str = "") -> Path:
        arr = _as_array(points)
        (tx, ty), (sx, sy) = _project(arr)
        colors = intensity_colors(arr[:, 3])
        width, height = 2 * PANEL, PANEL + 20

        parts: List[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#111111"/>',
            f'<line x1="{PANEL}" y1="0" x2="{PANEL}" y2="{PANEL}" stroke="#444444"/>',
            f'<text x="6" y="{PANEL + 14}" fill="#cccccc" font-size="11" font-family="monospace">'
            f"top (x-y) | side (x-z) | n={arr.shape[0]} {_escape(title)}</text>",
        ]
        for xs, ys in ((tx, ty), (sx, sy)):
            for x, y, (r, g, b) in zip(xs, ys, colors):
                parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.6" fill="rgb({r},{g},{b})"/>')
        parts.append("</svg>")
        atomic_write_bytes(Path(output_path), ("\n".join(parts) + "\n").encode("utf-8"))
        return Path(output_path)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class PngRenderer(RendererBase):
    """SVG와 같은 배치의 PNG 미리보기 (Pillow)"""

    suffix = ".png"

    def render(self, points: PointsLike, output_path: Path, title: str = "") -> Path:
        from PIL import Image, ImageDraw

        arr = _as_array(points)
        (tx, ty), (sx, sy) = _project(arr)
        colors = intensity_colors(arr[:, 3])

        img = Image.new("RGB", (2 * PANEL, PANEL + 20), color=(17, 17, 17))
        draw = ImageDraw.Draw(img)
        draw.line([(PANEL, 0), (PANEL, PANEL)], fill=(68, 68, 68))
        for xs, ys in ((tx, ty), (sx, sy)):
            for x, y, c in zip(xs, ys, colors):
                draw.ellipse([x - 1.6, y - 1.6, x + 1.6, y + 1.6], fill=tuple(int(v) for v in c))
        draw.text((6, PANEL + 4), f"n={arr.shape[0]} {title}", fill=(204, 204, 204))

        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        img.save(output_path, "PNG")
        return output_path


class PlyExporter(RendererBase):
    """x, y, z, intensity 속성을 가진 ASCII PLY"""

    suffix = ".ply"

    def render(self, points: PointsLike, output_path: Path, title: str = "") -> Path:
        arr = _as_array(points)
        header = [
            "ply",
            "format ascii 1.0",
            f"comment {title}" if title else "comment logen",
            f"element vertex {arr.shape[0]}",
            "property float x",
            "property float y",
            "property float z",
            "property float intensity",
            "end_header",
        ]
        body = ["%.9g %.9g %.9g %.9g" % tuple(row) for row in arr]
        atomic_write_bytes(Path(output_path), ("\n".join(header + body) + "\n").encode("ascii"))
        return Path(output_path)


def read_ply(path: Path) -> np.ndarray:
    """PlyExporter가 쓴 ASCII PLY 읽기 -> (N, 4)"""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise InvalidDataError(f"PLY 파일이 아닙니다: {path}")
    count = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        if line == "end_header":
            body = lines[i + 1 : i + 1 + (count or 0)]
            break
    else:
        raise InvalidDataError(f"PLY 헤더가 끝나지 않았습니다: {path}")
    if count is None or len(body) != count:
        raise InvalidDataError(f"PLY 정점 수가 맞지 않습니다: {path}")
    if count == 0:
        return np.zeros((0, 4))
    return np.array([[float(v) for v in row.split()] for row in body], dtype=np.float64)


class Renderer:
    """렌더러 팩토리 및 래퍼"""

    def __init__(self, style: str = "all", frame: str = "canonical"):
        """
        Args:
            style: "svg", "png", "ply", 또는 "all"
            frame: "canonical" (저장된 그대로) 또는 "sensor" (방위각 0에 배치)
        """
        if style not in STYLES:
            raise ContractError(f"알 수 없는 렌더 스타일: {style} (가능: {', '.join(STYLES)})")
        if frame not in FRAMES:
            raise ContractError(f"알 수 없는 좌표계: {frame} (가능: {', '.join(FRAMES)})")
        self.style = style
        self.frame = frame
        if style == "svg":
            self.renderers: List[RendererBase] = [SvgRenderer()]
        elif style == "png":
            self.renderers = [PngRenderer()]
        elif style == "ply":
            self.renderers = [PlyExporter()]
        else:
            self.renderers = [SvgRenderer(), PngRenderer(), PlyExporter()]

    def _points(self, sample: ObjectSample) -> np.ndarray:
        if self.frame == "sensor":
            return uncanonicalize(sample.points, place_condition(sample.condition, 0.0))
        return sample.points.points

    def render(self, sample: ObjectSample, output_dir: Path) -> List[Path]:
        """
        객체 하나 렌더링

        Returns:
            생성된 파일 경로 목록
        """
        points = self._points(sample)
        title = f"{sample.cls} {sample.name}"
        return [r.render(points, Path(output_dir) / f"{sample.name}{r.suffix}", title) for r in self.renderers]

    def render_all(self, samples: Sequence[ObjectSample], output_dir: Path) -> List[Path]:
        if not samples:
            raise InvalidDataError("렌더링할 객체가 없습니다")
        paths: List[Path] = []
        for sample in progress(samples, desc="render"):
            paths.extend(self.render(sample, output_dir))
        logger.info("렌더링 완료: %d개 객체, %d개 파일", len(samples), len(paths))
        return paths

    def render_dataset(self, dataset: Dataset, output_dir: Path, split=None, cls=None) -> List[Path]:
        return self.render_all(dataset.objects(split=split, cls=cls), output_dir)
