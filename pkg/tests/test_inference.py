import numpy as np
import pytest
import torch
from PIL import Image

from conftest import small_config
from dsmap.inference import (
    example_guided,
    frame_name,
    grid,
    interpolate_content,
    interpolate_content_cross_domain,
    interpolate_style,
    lerp_codes,
    load_checkpoint_model,
    multimodal,
    write_sequence,
)
from dsmap.checkpoint import CheckpointError
from dsmap.model import ContentCode, TagError
from dsmap.training import TrainConfig, TrainState


def test_example_guided_is_translate(small_model, images):
    x, s = images(2, seed=1), images(2, seed=2)
    x_copy = x.clone()
    with torch.no_grad():
        want = small_model.translate(x, s, "B", "A")
    assert torch.equal(example_guided(x, s, "B", "A", small_model), want)
    assert torch.equal(x, x_copy)


def test_multimodal(small_model, images):
    x = images(2)
    outs = multimodal(x, "A", "B", 3, seed=10, model=small_model)
    assert len(outs) == 3 and all(o.shape == x.shape for o in outs)
    with torch.no_grad():
        h = small_model.map_content(small_model.encode_content(x, "A")[1], "B")
        want = small_model.generate(h, small_model.sample_style(2, 11), "B")
    assert torch.equal(outs[1], want)
    assert not torch.equal(outs[0], outs[1])
    again = multimodal(x, "A", "B", 3, seed=10, model=small_model)
    assert all(torch.equal(a, b) for a, b in zip(outs, again))
    with pytest.raises(ValueError):
        multimodal(x, "A", "B", 0, seed=0, model=small_model)


def test_lerp_codes():
    a, b = torch.randn(2, 8), torch.randn(2, 8)
    start, end = lerp_codes(a, b, 0.0), lerp_codes(a, b, 1.0)
    assert torch.equal(start, a) and torch.equal(end, b)
    start.add_(1.0)  # endpoints are copies, not views
    assert not torch.equal(start, a)
    assert torch.allclose(lerp_codes(a, b, 0.25), 0.75 * a + 0.25 * b)
    for bad in (-0.1, 1.5):
        with pytest.raises(ValueError):
            lerp_codes(a, b, bad)
    with pytest.raises(ValueError):
        lerp_codes(a, torch.zeros(3, 8), 0.5)


def test_lerp_codes_respects_tags():
    h_a = ContentCode.specific(torch.randn(1, 4, 2, 2), "A")
    h_b = ContentCode.specific(torch.randn(1, 4, 2, 2), "B")
    c = ContentCode.shared(torch.randn(1, 4, 2, 2))
    mid = lerp_codes(h_a, ContentCode.specific(h_b.data, "A"), 0.5)
    assert mid.tag == h_a.tag
    with pytest.raises(TagError):
        lerp_codes(h_a, h_b, 0.5)
    with pytest.raises(TagError):
        lerp_codes(h_a, c, 0.5)
    with pytest.raises(TagError):
        lerp_codes(c, torch.randn(1, 4, 2, 2), 0.5)


def test_grid():
    assert grid(2) == [0.0, 1.0]
    assert grid(5) == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        grid(1)


def test_interpolation_modes_hit_endpoints(small_model, images):
    m = small_model
    xa, xb = images(3, seed=4), images(3, seed=5)
    s1, s2 = m.sample_style(1, 0), m.sample_style(1, 1)
    frames = interpolate_style(xa[:1], s1, s2, 4, "B", m)
    assert len(frames) == 4
    with torch.no_grad():
        h = m.map_content(m.encode_content(xa[:1], "A")[1], "B")
        assert torch.equal(frames[-1], m.generate(h, s2, "B"))

        frames = interpolate_content(xb[:1], xb[1:2], xb[2:3], "B", 3, m)
        s = m.encode_style(xb[2:3], "B")
        assert torch.equal(frames[0], m.generate(m.map_content(m.encode_content(xb[:1], "B")[1], "B"), s, "B"))

        frames = interpolate_content_cross_domain(xa[:1], xb[:1], xa[2:3], "A", 3, m)
        s = m.encode_style(xa[2:3], "A")
        assert torch.equal(frames[-1], m.generate(m.map_content(m.encode_content(xb[:1], "B")[1], "A"), s, "A"))
    with pytest.raises(ValueError):
        interpolate_style(xa[:1], s1, s2, 1, "B", m)


def test_write_sequence(small_model, images, tmp_path):
    frames = interpolate_style(images(2), small_model.sample_style(2, 0), small_model.sample_style(2, 1), 3,
                               "B", small_model)
    grid_path = write_sequence(frames, tmp_path / "a", "style_B", seed=4)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert frame_name("style_B_b0", 0, 4) in names and frame_name("style_B_b1", 2, 4) in names
    assert len(names) == 2 * 3 + 1
    img = np.asarray(Image.open(grid_path))
    assert img.shape == (2 * 34 + 2, 3 * 34 + 2, 3)
    write_sequence(frames, tmp_path / "b", "style_B", seed=4)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_checkpoint_model(tmp_path, images):
    state = TrainState.create(small_config(seed=12), TrainConfig())
    state.save(tmp_path / "m.ckpt")
    model = load_checkpoint_model(tmp_path / "m.ckpt")
    x = images(1)
    assert torch.equal(example_guided(x, x, "A", "B", model), example_guided(x, x, "A", "B", state.model))
    with pytest.raises(CheckpointError):
        load_checkpoint_model(tmp_path / "nope.ckpt")
