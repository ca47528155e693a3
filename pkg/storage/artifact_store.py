"""
Image, depth and report artifacts.

PNG for 8-bit rgb and masks (Pillow), PFM for float depth, JSON for reports.
Reports are written with sorted keys and Python's shortest float repr so a
rerun with the same seed produces identical bytes.
"""
import json
import logging
import math
import os
from typing import Any

import numpy as np
from PIL import Image

PSNR_CAP_DB = 99.0


def _ensure_parent(path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def save_png_rgb(rgb: np.ndarray, path: str):
    """[0, 1] float image to 8-bit PNG."""
    _ensure_parent(path)
    data = np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)
    logging.debug(f"Saved image {path}")


def load_png_rgb(path: str) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert('RGB'), dtype=np.float64) / 255.0


def save_png_mask(mask: np.ndarray, path: str):
    _ensure_parent(path)
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)
    logging.debug(f"Saved mask {path}")


def save_pfm(depth: np.ndarray, path: str):
    """Single-channel little-endian PFM; invalid depth stays NaN."""
    _ensure_parent(path)
    data = np.asarray(depth, dtype='<f4')
    height, width = data.shape
    with open(path, 'wb') as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode('ascii'))
        # PFM rows run bottom to top
        f.write(np.ascontiguousarray(data[::-1]).tobytes())
    logging.debug(f"Saved depth {path}")


def load_pfm(path: str) -> np.ndarray:
    with open(path, 'rb') as f:
        header = f.readline().decode('ascii').strip()
        if header not in ('Pf', 'PF'):
            raise ValueError(f"{path} is not a PFM file (header {header!r})")
        width, height = (int(v) for v in f.readline().decode('ascii').split())
        scale = float(f.readline().decode('ascii').strip())
        channels = 3 if header == 'PF' else 1
        dtype = '<f4' if scale < 0 else '>f4'
        data = np.frombuffer(f.read(), dtype=dtype, count=width * height * channels)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].astype(np.float64)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return PSNR_CAP_DB if value > 0 else -PSNR_CAP_DB
        return value
    return value


def write_json_report(obj: Any, path: str):
    """Sorted keys, NaN as null, infinities capped at +-99."""
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True, allow_nan=False)
        f.write('\n')
    logging.info(f"Wrote report {path}")
