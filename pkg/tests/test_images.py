"""PNG round trips and tensor quantization."""

import numpy as np
import pytest

from stylebank import Tensor
from stylebank.images import (
    ImageBuffer,
    label_map_from_png_bytes,
    label_map_to_png_bytes,
    load_image,
    png_size,
    save_image,
)


def test_load_save_bit_exact_for_8bit_data(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
    ImageBuffer(pixels).save(p1)
    ImageBuffer.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_tensor_round_trip_preserves_8bit_values(tmp_path):
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    buf = ImageBuffer(pixels)
    back = ImageBuffer.from_tensor(buf.to_tensor())
    assert np.array_equal(back.pixels, pixels)


def test_export_clamps_out_of_range(tmp_path):
    data = np.zeros((1, 3, 2, 2), dtype=np.float32)
    data[0, 0] = 2.0   # above range
    data[0, 1] = -1.0  # below range
    data[0, 2] = 0.5
    buf = ImageBuffer.from_tensor(Tensor(data))
    assert np.all(buf.pixels[:, :, 0] == 255)
    assert np.all(buf.pixels[:, :, 1] == 0)
    assert np.all(buf.pixels[:, :, 2] == 128)


def test_file_helpers(tmp_path):
    rng = np.random.default_rng(2)
    tensor = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float32))
    path = tmp_path / "img.png"
    save_image(tensor, path)
    loaded = load_image(path)
    assert loaded.dims == (1, 3, 8, 8)
    assert np.max(np.abs(loaded.data - np.clip(tensor.data, 0, 1))) <= (0.5 / 255) + 1e-6


def test_png_size_without_decode():
    blob = ImageBuffer(np.zeros((12, 34, 3), dtype=np.uint8)).to_png_bytes()
    assert png_size(blob) == (12, 34)


def test_label_map_round_trip():
    labels = np.asarray([[0, 1, 2], [3, 4, 255]], dtype=np.uint8)
    blob = label_map_to_png_bytes(labels)
    assert np.array_equal(label_map_from_png_bytes(blob), labels)


def test_label_map_rejects_wide_values():
    with pytest.raises(ValueError):
        label_map_to_png_bytes(np.asarray([[300]]))


def test_buffer_validates_shape_and_dtype():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((4, 4, 3), dtype=np.float32))
