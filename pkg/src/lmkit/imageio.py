"""Minimal raster image IO.

Native decoders cover binary PPM (P6) and uncompressed 24/32-bit BMP, both
8-bit RGB; Pillow, when installed, handles everything else. Images are
exchanged as float32 [3,H,W] arrays in [0,1].
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def load_image(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"P6":
        return _read_ppm(path)
    if head == b"BM":
        return _read_bmp(path)
    try:
        from PIL import Image
    except ImportError:
        raise ImageFormatError(
            f"{path}: unsupported format (native decoders cover PPM P6 and BMP; "
            "install the 'images' extra for compressed formats)") from None
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, image: np.ndarray) -> None:
    """Write a [3,H,W] float image in [0,1] as PPM (P6) or BMP by extension."""
    path = Path(path)
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"expected [3,H,W] image, got shape {arr.shape}")
    u8 = (arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)  # HWC
    suffix = path.suffix.lower()
    if suffix in (".ppm", ""):
        _write_ppm(path, u8)
    elif suffix == ".bmp":
        _write_bmp(path, u8)
    else:
        raise ImageFormatError(f"{path}: can only write .ppm or .bmp natively")


def _read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos] in b" \t\r\n":
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos] not in b" \t\r\n":
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    need = w * h * 3
    data = blob[pos:pos + need]
    if len(data) < need:
        raise ImageFormatError(f"{path}: PPM pixel data truncated ({len(data)} of {need} bytes)")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / 255.0


def _write_ppm(path, u8_hwc: np.ndarray) -> None:
    h, w = u8_hwc.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8_hwc.tobytes())


def _read_bmp(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 54:
        raise ImageFormatError(f"{path}: BMP header truncated")
    data_offset = struct.unpack_from("<I", blob, 10)[0]
    header_size = struct.unpack_from("<I", blob, 14)[0]
    if header_size < 40:
        raise ImageFormatError(f"{path}: unsupported BMP header size {header_size}")
    w, h = struct.unpack_from("<ii", blob, 18)
    planes, bpp = struct.unpack_from("<HH", blob, 26)
    compression = struct.unpack_from("<I", blob, 30)[0]
    if compression != 0 or bpp not in (24, 32):
        raise ImageFormatError(f"{path}: only uncompressed 24/32-bit BMP supported "
                               f"(bpp={bpp}, compression={compression})")
    bottom_up = h > 0
    h = abs(h)
    bytes_pp = bpp // 8
    row_stride = (w * bytes_pp + 3) & ~3
    need = row_stride * h
    if len(blob) < data_offset + need:
        raise ImageFormatError(f"{path}: BMP pixel data truncated")
    rows = np.frombuffer(blob, dtype=np.uint8, count=need, offset=data_offset)
    rows = rows.reshape(h, row_stride)[:, :w * bytes_pp].reshape(h, w, bytes_pp)
    if bottom_up:
        rows = rows[::-1]
    rgb = rows[:, :, 2::-1]  # BGR(A) -> RGB
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)).astype(np.float32) / 255.0


def _write_bmp(path, u8_hwc: np.ndarray) -> None:
    h, w = u8_hwc.shape[:2]
    row_stride = (w * 3 + 3) & ~3
    img_size = row_stride * h
    bgr = u8_hwc[:, :, ::-1]
    padded = np.zeros((h, row_stride), dtype=np.uint8)
    padded[:, :w * 3] = bgr.reshape(h, w * 3)
    padded = padded[::-1]  # bottom-up
    with open(path, "wb") as f:
        f.write(b"BM")
        f.write(struct.pack("<IHHI", 54 + img_size, 0, 0, 54))
        f.write(struct.pack("<IiiHHIIiiII", 40, w, h, 1, 24, 0, img_size, 2835, 2835, 0, 0))
        f.write(padded.tobytes())
