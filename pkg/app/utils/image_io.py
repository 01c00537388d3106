import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Tuple, Union

import cv2
import numpy as np

from app.core.errors import ConfigParseError, InvalidArgumentError
from app.models.raster import RasterImage

# Configure logging
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MAXVAL = 255


def to_uint8(img: RasterImage) -> np.ndarray:
    return np.floor(img.data.astype(np.float64) * MAXVAL + 0.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> RasterImage:
    return RasterImage(data=arr.astype(np.float32) / MAXVAL)


def encode_netpbm(img: RasterImage) -> bytes:
    """Binary P6 (color) or P5 (gray) with maxval 255."""
    magic = b"P5" if img.is_gray else b"P6"
    header = magic + f"\n{img.width} {img.height}\n{MAXVAL}\n".encode("ascii")
    return header + to_uint8(img).tobytes()


def _next_token(buf: bytes, pos: int):
    # Skip whitespace and comments between header tokens
    while pos < len(buf):
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def decode_netpbm(buf: bytes) -> RasterImage:
    magic, pos = _next_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ConfigParseError(f"unsupported netpbm magic {magic!r}")
    fields = []
    for _ in range(3):
        token, pos = _next_token(buf, pos)
        if not token.isdigit():
            raise ConfigParseError("malformed netpbm header")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != MAXVAL:
        raise ConfigParseError(f"only maxval {MAXVAL} is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    # Exactly one whitespace byte separates the header from the raster
    pos += 1
    expected = width * height * channels
    if len(buf) - pos < expected:
        raise ConfigParseError("netpbm raster is truncated")
    raster = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return from_uint8(raster.reshape(shape))


def read_image(path: PathLike) -> RasterImage:
    """
    Read a PNG or binary PPM/PGM image.

    Args:
        path: Image file path

    Returns:
        Image normalized to [0, 1]
    """
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"image {path} not found")
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        return decode_netpbm(path.read_bytes())

    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ConfigParseError(f"could not decode image {path}")
    if arr.dtype != np.uint8:
        raise ConfigParseError(f"only 8-bit images are supported, got {arr.dtype}")
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr[:, :, :3], cv2.COLOR_BGR2RGB)
    return from_uint8(arr)


def encode_image(path: PathLike, img: RasterImage) -> bytes:
    """Encode an image in the format named by the path suffix (.png, .ppm or .pgm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        if suffix == ".pgm" and not img.is_gray:
            raise InvalidArgumentError("PGM output needs a gray image")
        if suffix == ".ppm" and img.is_gray:
            raise InvalidArgumentError("PPM output needs a color image")
        return encode_netpbm(img)
    if suffix == ".png":
        arr = to_uint8(img)
        if arr.ndim == 3:
            arr = cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)
        ok, encoded = cv2.imencode(".png", arr)
        if not ok:
            raise InvalidArgumentError(f"PNG encoding failed for {path}")
        return encoded.tobytes()
    raise InvalidArgumentError(f"unsupported image format {suffix!r}")


def write_image(path: PathLike, img: RasterImage) -> Path:
    """
    Write an image atomically; the format follows the suffix.

    Args:
        path: Destination (.png, .ppm or .pgm)
        img: Image to write

    Returns:
        The written path
    """
    path = Path(path)
    write_bytes_atomic(path, encode_image(path, img))
    return path


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    """Write to a temporary sibling, then rename over the target."""
    write_files_atomic({Path(path): payload})


def write_files_atomic(payloads: Dict[Path, bytes]) -> None:
    """
    Write several files as one output set.

    Every payload is first staged in a temporary sibling of its target and the
    renames only start once all payloads are on disk. On failure, targets
    already renamed are removed again and no staged file is left behind.

    Args:
        payloads: Bytes to write per destination path

    Raises:
        InvalidArgumentError: A destination cannot be written
    """
    staged: List[Tuple[str, Path]] = []
    replaced: List[Path] = []
    try:
        for path, payload in payloads.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
        for tmp, path in staged:
            os.replace(tmp, path)
            replaced.append(path)
    except OSError as e:
        logger.error(f"Error writing {', '.join(str(p) for p in payloads)}: {str(e)}")
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)
        for path in replaced:
            path.unlink(missing_ok=True)
        raise InvalidArgumentError(f"cannot write output: {str(e)}") from e
