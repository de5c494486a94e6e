import numpy as np
import pytest
from PIL import Image

from src.errors import ContractError, InvalidDataError
from src.generators.renderer import (
    PANEL,
    PlyExporter,
    PngRenderer,
    Renderer,
    SvgRenderer,
    intensity_colors,
    read_ply,
)

from .conftest import random_samples


class TestFormats:
    def test_svg_has_point_per_view(self, tmp_path, rng):
        (sample,) = random_samples(rng, 1, n_range=(12, 13))
        path = SvgRenderer().render(sample.points, tmp_path / "a.svg", title="a <b>")
        text = path.read_text(encoding="utf-8")
        assert text.startswith("<svg")
        assert text.count("<circle") == 2 * 12
        assert "a &lt;b&gt;" in text

    def test_png_size(self, tmp_path, rng):
        (sample,) = random_samples(rng, 1)
        path = PngRenderer().render(sample.points, tmp_path / "sub" / "a.png")
        with Image.open(path) as img:
            assert img.size == (2 * PANEL, PANEL + 20)

    def test_ply_round_trip(self, tmp_path, rng):
        (sample,) = random_samples(rng, 1)
        path = PlyExporter().render(sample.points, tmp_path / "a.ply", title="vehicle")
        np.testing.assert_allclose(read_ply(path), sample.points.points, rtol=1e-7, atol=1e-9)

    def test_not_a_ply(self, tmp_path):
        (tmp_path / "x.ply").write_text("hello\n", encoding="ascii")
        with pytest.raises(InvalidDataError):
            read_ply(tmp_path / "x.ply")

    def test_empty_points(self, tmp_path):
        with pytest.raises(InvalidDataError):
            SvgRenderer().render(np.zeros((0, 4)), tmp_path / "a.svg")

    def test_colormap_ends(self):
        colors = intensity_colors(np.array([0.0, 1.0, 2.0]))
        np.testing.assert_array_equal(colors[0], [68, 1, 84])
        np.testing.assert_array_equal(colors[1], [253, 231, 37])
        np.testing.assert_array_equal(colors[2], colors[1])


class TestRenderer:
    def test_all_styles(self, tmp_path, rng):
        (sample,) = random_samples(rng, 1)
        paths = Renderer("all").render(sample, tmp_path)
        assert sorted(p.name for p in paths) == [f"{sample.name}.{ext}" for ext in ("ply", "png", "svg")]
        assert all(p.exists() for p in paths)

    def test_sensor_frame(self, tmp_path, rng):
        (sample,) = random_samples(rng, 1)
        (path,) = Renderer("ply", frame="sensor").render(sample, tmp_path)
        points = read_ply(path)
        c = sample.condition
        # 방위각 0에 배치: 박스 중심 (d, 0, z) 기준 z축 회전
        offset = points[:, :3] - np.array([c.d, 0.0, c.z])
        np.testing.assert_allclose(
            np.linalg.norm(offset, axis=1), np.linalg.norm(sample.points.xyz, axis=1), rtol=1e-6, atol=1e-6
        )
        np.testing.assert_allclose(offset[:, 2], sample.points.xyz[:, 2], atol=1e-6)
        np.testing.assert_allclose(points[:, 3], sample.points.intensity, rtol=1e-7, atol=1e-9)

    def test_render_all(self, tmp_path, rng):
        paths = Renderer("svg").render_all(random_samples(rng, 3), tmp_path)
        assert len(paths) == 3

    def test_render_dataset(self, tmp_path, synthetic_dataset):
        paths = Renderer("ply").render_dataset(synthetic_dataset, tmp_path, split="val", cls="post")
        assert len(paths) == 2

    @pytest.mark.parametrize("kwargs", [{"style": "gif"}, {"frame": "world"}])
    def test_bad_options(self, kwargs):
        with pytest.raises(ContractError):
            Renderer(**kwargs)

    def test_nothing_to_render(self, tmp_path):
        with pytest.raises(InvalidDataError):
            Renderer().render_all([], tmp_path)
