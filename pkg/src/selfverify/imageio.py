"""Binary PGM/PPM (P5/P6) reading and writing, plus bilinear resizing."""

import numpy as np

from .errors import IngestError


def _read_token(data, pos):
    # skip whitespace and comments
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise IngestError("unexpected end of PNM header")
    return data[start:pos], pos


def read_pnm(path):
    """Read a P5 (gray) or P6 (RGB) file into a (C, H, W) float64 array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise IngestError(f"{path}: unsupported image format {magic[:2]!r}")
    try:
        w, pos = _read_token(data, pos)
        h, pos = _read_token(data, pos)
        maxval, pos = _read_token(data, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise IngestError(f"{path}: malformed header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise IngestError(f"{path}: bad dimensions or maxval")
    pos += 1  # single whitespace after maxval
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    raw = data[pos:pos + count * dtype.itemsize]
    if len(raw) < count * dtype.itemsize:
        raise IngestError(f"{path}: truncated pixel data")
    pix = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(h, w, channels)
    return pix.transpose(2, 0, 1) / maxval


def write_pnm(path, img, maxval=255):
    """Write a (C, H, W) or (H, W) array in [0, 1] as PGM (1 channel) or PPM (3 channels)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.shape[0] not in (1, 3):
        raise ValueError(f"need 1 or 3 channels, got {a.shape[0]}")
    q = np.rint(np.clip(a, 0.0, 1.0) * maxval).transpose(1, 2, 0)
    q = q.astype(">u2" if maxval > 255 else "u1")
    magic = b"P5" if a.shape[0] == 1 else b"P6"
    header = b"%s\n%d %d\n%d\n" % (magic, a.shape[2], a.shape[1], maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes())


def _axis_weights(n_in, n_out):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img, out_hw):
    """Bilinear resize of the last two axes to ``out_hw``."""
    a = np.asarray(img, dtype=np.float64)
    oh, ow = out_hw
    h, w = a.shape[-2:]
    if (h, w) == (oh, ow):
        return a.copy()
    y0, y1, fy = _axis_weights(h, oh)
    x0, x1, fx = _axis_weights(w, ow)
    rows = a[..., y0, :] * (1 - fy)[:, None] + a[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def to_grayscale(img):
    """Channel mean of a (C, H, W) array; (H, W) input is returned as is."""
    a = np.asarray(img, dtype=np.float64)
    return a.mean(axis=0) if a.ndim == 3 else a
