import numpy as np
import pytest
from PIL import Image

from egostereo.errors import ConfigurationError
from egostereo.plotting import load_series, plot_curves, save_series


def series(label, n=20, seed=0):
    values = np.random.default_rng(seed).uniform(10, 60, n)
    return {"label": label, "frame_mpjpe_mm": values.tolist(), "sequence_ids": ["s0"] * n}


class TestSeries:
    def test_round_trip(self, tmp_path):
        s = series("full")
        assert load_series(save_series(tmp_path / "a.json", s)) == s

    def test_label_defaults_to_stem(self, tmp_path):
        p = tmp_path / "nodepth.json"
        p.write_text('{"frame_mpjpe_mm": [1.0]}')
        assert load_series(p)["label"] == "nodepth"

    @pytest.mark.parametrize("content", ["not json", '{"values": [1]}'])
    def test_bad_file(self, tmp_path, content):
        p = tmp_path / "x.json"
        p.write_text(content)
        with pytest.raises(ConfigurationError):
            load_series(p)


class TestPlot:
    def test_writes_png(self, tmp_path):
        out = plot_curves([series("a"), series("b", seed=1)], tmp_path / "plot.png", title="curves")
        with Image.open(out) as im:
            assert im.format == "PNG" and im.size == (800, 350)

    def test_accepts_paths_and_is_byte_stable(self, tmp_path):
        paths = [save_series(tmp_path / f"{k}.json", series(k, seed=i)) for i, k in enumerate("ab")]
        a = plot_curves(paths, tmp_path / "1.png").read_bytes()
        b = plot_curves(paths, tmp_path / "2.png").read_bytes()
        assert a == b

    def test_empty(self, tmp_path):
        with pytest.raises(ConfigurationError):
            plot_curves([], tmp_path / "x.png")
        with pytest.raises(ConfigurationError):
            plot_curves([{"label": "e", "frame_mpjpe_mm": []}], tmp_path / "x.png")
