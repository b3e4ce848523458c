"""Minimal image utilities: dimension probing and segment cropping.

Decoding goes through Pillow and stays limited to what the pipeline
needs — header probing at ingest and region crops for segmentation.
"""

from __future__ import annotations

import io

from PIL import Image

from .errors import EmbeddingInputError, ValidationError

_KNOWN_FORMATS = {"JPEG": "JPEG", "PNG": "PNG", "WEBP": "WEBP"}


def probe_image(data: bytes) -> tuple[str, int, int]:
    """Return (format, width, height) from the image header."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            fmt = _KNOWN_FORMATS.get(img.format or "", "other")
            width, height = img.size
    except Exception as exc:
        raise ValidationError(f"undecodable image: {exc}") from exc
    return fmt, width, height


def decode_pixels(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except Exception as exc:
        raise EmbeddingInputError(f"undecodable image: {exc}") from exc


def clip_box(box: tuple[int, int, int, int], width: int, height: int) -> tuple[tuple[int, int, int, int], bool]:
    """Clip an (x, y, w, h) box to image bounds; flags whether clipping occurred."""
    x, y, w, h = box
    cx, cy = max(0, x), max(0, y)
    cw = min(x + w, width) - cx
    ch = min(y + h, height) - cy
    clipped = (cx, cy, cw, ch) != (x, y, w, h)
    if cw <= 0 or ch <= 0:
        raise ValidationError(f"box {box} lies entirely outside a {width}x{height} image")
    return (cx, cy, cw, ch), clipped


def crop_to_png(data: bytes, box: tuple[int, int, int, int]) -> bytes:
    """Crop (x, y, w, h) out of an image and re-encode as PNG bytes."""
    img = decode_pixels(data)
    x, y, w, h = box
    region = img.convert("RGB").crop((x, y, x + w, y + h))
    buf = io.BytesIO()
    region.save(buf, format="PNG", optimize=False)
    return buf.getvalue()
