import math

import numpy as np
import pytest
from PIL import Image

from dynmap.descriptors import DescriptorMaps
from dynmap.grid import GridSpec
from dynmap.render import layer_rgb, render

SPEC = GridSpec(0, 0, 1.0, 3, 2)


def test_direction_hue_and_saturation():
    m = DescriptorMaps.empty(SPEC)
    for col, ang in enumerate([0.0, 2 * math.pi / 3]):
        m.dir_cos[0, col], m.dir_sin[0, col] = math.cos(ang), math.sin(ang)
        m.dir_valid[0, col] = m.flow_valid[0, col] = True
    rgb = layer_rgb(m, "direction")
    assert rgb[0, 0].tolist() == [255, 0, 0]  # hue 0
    assert rgb[0, 1].tolist() == [0, 255, 0]  # hue 1/3
    assert rgb[0, 2].tolist() == [255, 255, 255]  # invalid: no saturation
    assert (rgb[1] == 255).all()


def test_flow_colormap_and_orientation(tmp_path):
    m = DescriptorMaps.empty(SPEC)
    m.flow[0, 0] = 4.0  # southwest cell
    render(m, "flow", tmp_path / "f.png")
    px = np.asarray(Image.open(tmp_path / "f.png"))
    assert px.shape == (2, 3, 3)
    assert (px[1, 0] != px[0, 0]).any()  # larger y is drawn on top
    assert (px[0] == px[0, 0]).all() and (px[1, 1:] == px[0, 0]).all()


def test_render_bad_args(tmp_path):
    m = DescriptorMaps.empty(SPEC)
    with pytest.raises(ValueError):
        layer_rgb(m, "speed")
    with pytest.raises(ValueError):
        render(m, "flow", tmp_path / "x.png", scale=0)
