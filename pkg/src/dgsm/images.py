"""Float image IO: PFM (lossless float32) and 16-bit PNG (quantized [0, 1])."""

import numpy as np
from PIL import Image


def write_pfm(path, image):
    """Write an (H, W) or (H, W, 3) float image; rows are stored bottom-up."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        header = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_png16(path, image):
    """Grayscale [0, 1] image -> 16-bit PNG."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("16-bit PNG export expects a single-channel image")
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)


def read_png16(path):
    return np.asarray(Image.open(path), dtype=np.float64) / 65535.0
