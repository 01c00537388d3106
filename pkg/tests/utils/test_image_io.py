import numpy as np
import pytest

from app.core.errors import ConfigParseError, InvalidArgumentError
from app.models.raster import RasterImage
from app.utils.image_io import (
    decode_netpbm,
    encode_image,
    encode_netpbm,
    read_image,
    to_uint8,
    write_files_atomic,
    write_image,
)


@pytest.fixture
def color_image() -> RasterImage:
    rng = np.random.default_rng(0)
    return RasterImage(data=rng.integers(0, 256, size=(6, 8, 3)) / 255.0)


def test_to_uint8_rounds_to_nearest():
    img = RasterImage(data=np.array([[0.0, 0.4 / 255, 0.6 / 255, 1.0]]))
    assert to_uint8(img).tolist() == [[0, 0, 1, 255]]


def test_ppm_header_and_payload(color_image):
    payload = encode_netpbm(color_image)
    assert payload.startswith(b"P6\n8 6\n255\n")
    assert len(payload) == len(b"P6\n8 6\n255\n") + 8 * 6 * 3


def test_netpbm_bytes_survive_decode(color_image):
    payload = encode_netpbm(color_image)
    assert encode_netpbm(decode_netpbm(payload)) == payload


def test_pgm_with_comment():
    payload = b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255])
    img = decode_netpbm(payload)
    assert img.is_gray
    assert img.data.tolist() == [[0.0, 1.0]]


@pytest.mark.parametrize(
    "payload",
    [b"P3\n1 1\n255\n0 0 0", b"P6\n1 x\n255\n", b"P6\n1 1\n65535\n\x00", b"P6\n2 2\n255\n\x00\x00"],
)
def test_malformed_netpbm(payload):
    with pytest.raises(ConfigParseError):
        decode_netpbm(payload)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_write_then_read(tmp_path, color_image, suffix):
    path = write_image(tmp_path / f"pano{suffix}", color_image)
    back = read_image(path)
    assert np.array_equal(to_uint8(back), to_uint8(color_image))


def test_gray_png(tmp_path):
    img = RasterImage(data=np.linspace(0, 1, 20).reshape(4, 5))
    back = read_image(write_image(tmp_path / "gray.png", img))
    assert back.is_gray
    assert np.array_equal(to_uint8(back), to_uint8(img))


def test_write_leaves_no_temporary_files(tmp_path, color_image):
    write_image(tmp_path / "out" / "pano.ppm", color_image)
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["pano.ppm"]


def test_unsupported_suffix(tmp_path, color_image):
    with pytest.raises(InvalidArgumentError):
        write_image(tmp_path / "pano.jpg", color_image)
    assert not (tmp_path / "pano.jpg").exists()


def test_missing_image(tmp_path):
    with pytest.raises(InvalidArgumentError):
        read_image(tmp_path / "absent.png")


def test_files_are_written_together(tmp_path, color_image):
    image, truth = tmp_path / "pano.ppm", tmp_path / "truth.json"
    write_files_atomic({image: encode_image(image, color_image), truth: b"{}\n"})
    assert read_image(image).width == 8
    assert truth.read_bytes() == b"{}\n"


def test_failed_set_leaves_nothing_behind(tmp_path, color_image):
    image = tmp_path / "pano.ppm"
    # A directory cannot be replaced by a file
    blocked = tmp_path / "truth.json"
    blocked.mkdir()
    with pytest.raises(InvalidArgumentError):
        write_files_atomic({image: encode_image(image, color_image), blocked: b"{}\n"})
    assert not image.exists()
    assert blocked.is_dir()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["truth.json"]
