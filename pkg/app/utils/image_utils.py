import logging
import math
from typing import Union

import cv2
import numpy as np

from app.core.errors import InvalidArgumentError
from app.models.models import ChannelSelector
from app.models.raster import RasterImage

# Configure logging
logger = logging.getLogger(__name__)

LUMINANCE_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

# Largest gradient magnitude a 3x3 Sobel pair can produce on [0, 1] data:
# gx = 4 with gy = 2 (a step with one extra corner), |g| = 2*sqrt(5).
SOBEL_MAX_MAGNITUDE = 2.0 * math.sqrt(5.0)

ArrayLike = Union[float, np.ndarray]


def extract_channel(img: RasterImage, selector: ChannelSelector) -> RasterImage:
    """
    Reduce a color image to one gray channel.

    Args:
        img: Color image
        selector: R, G, B or luminance (0.299R + 0.587G + 0.114B)

    Returns:
        Gray image of the same dimensions
    """
    if img.is_gray:
        raise InvalidArgumentError("extract_channel needs a 3-channel image")
    selector = ChannelSelector(selector)
    if selector is ChannelSelector.LUMINANCE:
        gray = img.data.astype(np.float64) @ LUMINANCE_WEIGHTS
    else:
        index = {ChannelSelector.R: 0, ChannelSelector.G: 1, ChannelSelector.B: 2}[selector]
        gray = img.data[:, :, index]
    return RasterImage(data=gray)


def sample_bilinear(img: RasterImage, x: ArrayLike, y: ArrayLike, wrap: bool = False) -> np.ndarray:
    """
    Bilinear blend of the four nearest pixel centers.

    Pixel centers sit at integer coordinates. Rows always clamp to the border;
    columns clamp too unless ``wrap`` is set, in which case they are taken
    modulo the width (the longitude seam of an equirectangular image).

    Args:
        img: Source image
        x: Sub-pixel column(s)
        y: Sub-pixel row(s)
        wrap: Wrap columns instead of clamping

    Returns:
        float64 array shaped like ``x`` (with a trailing channel axis for color)
    """
    data = img.data
    h, w = img.height, img.width
    x = np.asarray(x, dtype=np.float64)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)

    if wrap:
        x = np.mod(x, w)
        x0 = np.floor(x)
        fx = x - x0
        x0 = x0.astype(np.intp) % w
        x1 = (x0 + 1) % w
    else:
        x = np.clip(x, 0.0, w - 1)
        x0 = np.floor(x)
        fx = x - x0
        x0 = x0.astype(np.intp)
        x1 = np.minimum(x0 + 1, w - 1)

    y0 = np.floor(y)
    fy = y - y0
    y0 = y0.astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)

    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def sobel_magnitude(img: RasterImage) -> RasterImage:
    """
    Normalized Sobel gradient magnitude.

    The largest magnitude a [0, 1] image can produce maps to 1.0 and the
    one-pixel border is set to zero.

    Args:
        img: Gray image, at least 3x3

    Returns:
        Gray gradient-magnitude image
    """
    if not img.is_gray:
        raise InvalidArgumentError("sobel_magnitude needs a gray image")
    if img.width < 3 or img.height < 3:
        raise InvalidArgumentError(f"image {img.width}x{img.height} is smaller than 3x3")

    src = img.data.astype(np.float64)
    gx = cv2.Sobel(src, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.Sobel(src, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REPLICATE)
    magnitude = np.sqrt(gx * gx + gy * gy) / SOBEL_MAX_MAGNITUDE
    magnitude[0, :] = 0.0
    magnitude[-1, :] = 0.0
    magnitude[:, 0] = 0.0
    magnitude[:, -1] = 0.0
    return RasterImage(data=np.clip(magnitude, 0.0, 1.0))


def mirror_horizontal(img: RasterImage) -> RasterImage:
    return RasterImage(data=img.data[:, ::-1])


def to_color(img: RasterImage) -> np.ndarray:
    """Return an (h, w, 3) float copy, replicating gray images."""
    if img.is_gray:
        return np.repeat(img.data[:, :, None], 3, axis=2).astype(np.float64)
    return img.data.astype(np.float64)
