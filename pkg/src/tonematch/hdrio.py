"""Radiance RGBE and PFM codecs for HDR rasters, and an 8-bit PNG writer."""

from __future__ import annotations

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from .image import HdrImage, LdrImage

log = logging.getLogger(__name__)


class HdrFormatError(ValueError):
    """Base class for unreadable HDR files."""


class BadMagicError(HdrFormatError):
    pass


class MalformedHeaderError(HdrFormatError):
    pass


class TruncatedDataError(HdrFormatError):
    pass


# --------------------------------------------------------------------------
# RGBE pixel codec


def float_to_rgbe(rgb) -> np.ndarray:
    """Encode (..., 3) floats to (..., 4) uint8 shared-exponent pixels."""
    c = np.asarray(rgb, dtype=np.float64)
    v = c.max(axis=-1)
    mant, exp = np.frexp(v)
    zero = (v < 2.0 ** -127) | (exp + 128 < 1)
    exp = np.clip(exp, -127, 127)
    scale = np.ldexp(1.0, 8 - exp)[..., None]
    out = np.empty(c.shape[:-1] + (4,), dtype=np.uint8)
    out[..., :3] = np.clip(np.floor(c * scale), 0, 255).astype(np.uint8)
    out[..., 3] = (exp + 128).astype(np.uint8)
    out[zero] = 0
    return out


def rgbe_to_float(rgbe) -> np.ndarray:
    """Decode (..., 4) uint8 pixels: component = mantissa / 256 * 2**(e - 128)."""
    b = np.asarray(rgbe, dtype=np.uint8)
    e = b[..., 3].astype(np.int32)
    f = np.where(e == 0, 0.0, np.ldexp(1.0, e - 136))
    return (b[..., :3].astype(np.float64) * f[..., None]).astype(np.float32)


# --------------------------------------------------------------------------
# Radiance file format


def _read_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise MalformedHeaderError("header is not terminated by a blank line")
    return buf[pos:end], end + 1


def _decode_rle_scanline(buf: bytes, pos: int, width: int) -> tuple[np.ndarray, int]:
    line = np.empty((4, width), dtype=np.uint8)
    for ch in range(4):
        x = 0
        while x < width:
            if pos >= len(buf):
                raise TruncatedDataError("truncated run-length scanline")
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if pos >= len(buf):
                    raise TruncatedDataError("truncated run-length scanline")
                if x + count > width:
                    raise HdrFormatError("run overflows scanline")
                line[ch, x:x + count] = buf[pos]
                pos += 1
            else:
                if count == 0 or x + count > width:
                    raise HdrFormatError("bad literal run length in scanline")
                if pos + count > len(buf):
                    raise TruncatedDataError("truncated run-length scanline")
                line[ch, x:x + count] = np.frombuffer(buf, np.uint8, count, pos)
                pos += count
            x += count
    return line.T, pos


def _decode_flat_scanline(buf: bytes, pos: int, width: int) -> tuple[np.ndarray, int]:
    # flat pixels, possibly with old-style (1, 1, 1, n) repeat markers
    line = np.empty((width, 4), dtype=np.uint8)
    x = 0
    shift = 0
    while x < width:
        if pos + 4 > len(buf):
            raise TruncatedDataError("truncated flat scanline")
        px = buf[pos:pos + 4]
        pos += 4
        if px[0] == 1 and px[1] == 1 and px[2] == 1:
            if x == 0:
                raise HdrFormatError("repeat marker at start of scanline")
            n = px[3] << shift
            if x + n > width:
                raise HdrFormatError("old-style run overflows scanline")
            line[x:x + n] = line[x - 1]
            x += n
            shift += 8
        else:
            line[x] = np.frombuffer(px, np.uint8)
            x += 1
            shift = 0
    return line, pos


def decode_radiance(buf: bytes) -> np.ndarray:
    """Decode Radiance bytes to a float32 (H, W, 3) array."""
    if not (buf.startswith(b"#?RADIANCE") or buf.startswith(b"#?RGBE")):
        raise BadMagicError("missing #?RADIANCE / #?RGBE magic")
    pos = 0
    fmt = None
    while True:
        line, pos = _read_line(buf, pos)
        if not line.strip():
            break
        if line.startswith(b"FORMAT="):
            fmt = line[7:].strip()
    if fmt is not None and fmt != b"32-bit_rle_rgbe":
        raise MalformedHeaderError(f"unsupported pixel format {fmt.decode(errors='replace')}")
    res, pos = _read_line(buf, pos)
    parts = res.split()
    if len(parts) != 4 or parts[0] not in (b"-Y", b"+Y") or parts[2] != b"+X":
        raise MalformedHeaderError(f"malformed resolution line {res!r}")
    try:
        height, width = int(parts[1]), int(parts[3])
    except ValueError:
        raise MalformedHeaderError(f"malformed resolution line {res!r}") from None
    if height <= 0 or width <= 0:
        raise MalformedHeaderError(f"non-positive dimensions in {res!r}")

    pixels = np.empty((height, width, 4), dtype=np.uint8)
    for y in range(height):
        if pos + 4 > len(buf):
            raise TruncatedDataError(f"file ends at scanline {y} of {height}")
        head = buf[pos:pos + 4]
        new_rle = 8 <= width <= 0x7FFF and head[0] == 2 and head[1] == 2 and not head[2] & 0x80
        if new_rle:
            if (head[2] << 8 | head[3]) != width:
                raise HdrFormatError(f"scanline {y} length does not match image width")
            pixels[y], pos = _decode_rle_scanline(buf, pos + 4, width)
        else:
            pixels[y], pos = _decode_flat_scanline(buf, pos, width)
    if parts[0] == b"+Y":
        pixels = pixels[::-1]
    return rgbe_to_float(pixels)


def _encode_rle_plane(plane: np.ndarray) -> bytes:
    out = bytearray()
    n = len(plane)
    data = plane.tobytes()
    x = 0
    while x < n:
        # find next run of at least 4 identical bytes
        run_start = x
        run_len = 0
        while run_start < n:
            run_len = 1
            while run_start + run_len < n and run_len < 127 and data[run_start + run_len] == data[run_start]:
                run_len += 1
            if run_len >= 4:
                break
            run_start += run_len
        while x < run_start:
            k = min(128, run_start - x)
            out.append(k)
            out += data[x:x + k]
            x += k
        if run_start < n and run_len >= 4:
            out.append(128 + run_len)
            out.append(data[run_start])
            x = run_start + run_len
    return bytes(out)


def encode_radiance(rgb: np.ndarray) -> bytes:
    h, w = rgb.shape[:2]
    header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n" + f"-Y {h} +X {w}\n".encode()
    pixels = float_to_rgbe(rgb)
    body = bytearray()
    rle = 8 <= w <= 0x7FFF
    for y in range(h):
        if not rle:
            body += pixels[y].tobytes()
            continue
        body += bytes((2, 2, w >> 8, w & 0xFF))
        for ch in range(4):
            body += _encode_rle_plane(pixels[y, :, ch])
    return header + bytes(body)


# --------------------------------------------------------------------------
# PFM


def decode_pfm(buf: bytes) -> np.ndarray:
    if buf[:2] == b"PF":
        channels = 3
    elif buf[:2] == b"Pf":
        channels = 1
    else:
        raise BadMagicError("missing PF / Pf magic")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("PFM header ends early")
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before raster
    try:
        width, height, scale = int(tokens[0]), int(tokens[1]), float(tokens[2])
    except ValueError:
        raise MalformedHeaderError(f"malformed PFM header {tokens!r}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise MalformedHeaderError(f"malformed PFM header {tokens!r}")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(buf) - pos < 4 * count:
        raise TruncatedDataError(f"PFM raster needs {4 * count} bytes, found {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype, count, pos).astype(np.float32)
    arr = arr.reshape(height, width, channels)[::-1]
    if abs(scale) != 1.0:
        arr = arr * np.float32(abs(scale))
    return np.ascontiguousarray(arr)


def encode_pfm(data: np.ndarray) -> bytes:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    magic = b"PF" if c == 3 else b"Pf"
    header = magic + f"\n{w} {h}\n-1.0\n".encode()
    return header + np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()


# --------------------------------------------------------------------------
# public API


def _sanitize(arr: np.ndarray, path) -> np.ndarray:
    bad = ~np.isfinite(arr) | (arr < 0)
    n = int(bad.sum())
    if n:
        log.warning("%s: clamped %d non-finite or negative samples to 0", path, n)
        arr = np.where(bad, 0.0, arr).astype(np.float32)
    return arr


def decode_hdr_bytes(buf: bytes, name="<bytes>") -> HdrImage:
    if buf.startswith(b"#?"):
        arr = decode_radiance(buf)
    elif buf[:2] in (b"PF", b"Pf"):
        arr = decode_pfm(buf)
    else:
        raise BadMagicError(f"{name}: not a Radiance or PFM file")
    return HdrImage(_sanitize(arr, name))


def read_hdr(path) -> HdrImage:
    """Read a Radiance .hdr or PFM file; the format comes from the magic bytes."""
    path = Path(path)
    buf = path.read_bytes()
    try:
        return decode_hdr_bytes(buf, path)
    except HdrFormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_hdr(img: HdrImage, path, format: str | None = None) -> None:
    path = Path(path)
    if not isinstance(img, HdrImage):
        img = HdrImage(img)
    fmt = format or {".hdr": "radiance", ".pic": "radiance", ".rgbe": "radiance", ".pfm": "pfm"}.get(
        path.suffix.lower())
    if fmt == "radiance":
        data = img.data if img.channels == 3 else np.repeat(img.data, 3, axis=2)
        payload = encode_radiance(data)
    elif fmt == "pfm":
        payload = encode_pfm(img.data)
    else:
        raise ValueError(f"{path}: cannot infer HDR format from extension")
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def quantize8(data) -> np.ndarray:
    """Round-half-up quantization of [0, 1] samples to bytes."""
    return np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", zlib.crc32(tag + payload))


def encode_png8(data: np.ndarray) -> bytes:
    q = quantize8(data)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    h, w = q.shape[:2]
    color_type = 0 if q.ndim == 2 else 2
    rows = q.reshape(h, -1)
    raw = b"".join(b"\x00" + rows[y].tobytes() for y in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(raw, 9)) + _png_chunk(b"IEND", b""))


def write_png8(img: LdrImage, path) -> None:
    if not isinstance(img, LdrImage):
        img = LdrImage(img)
    path = Path(path)
    try:
        path.write_bytes(encode_png8(img.data))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_ldr(path) -> LdrImage:
    """Read an 8-bit image (PNG or anything Pillow handles) into [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("L") if im.mode in ("1", "L", "LA") else im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return LdrImage(arr)
