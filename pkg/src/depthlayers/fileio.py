"""File formats: PFM, 8/16-bit PNG, instance-ID PNG, ASCII PLY, the training
sample directory layout, and atomic writes."""
from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DEPTH_MAX, DepthMap

MAX_PIXELS = 1 << 28
PNG16_MAX = 65535


class DataError(Exception):
    """Input data could not be read or is inconsistent."""


class FormatError(DataError):
    MALFORMED_HEADER = "malformed-header"
    DIMENSION_OVERFLOW = "dimension-overflow"
    UNSUPPORTED_BIT_DEPTH = "unsupported-bit-depth"
    TRUNCATED_DATA = "truncated-data"
    UNSUPPORTED_FORMAT = "unsupported-format"

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


# -- atomic writes --------------------------------------------------------------

_UMASK = os.umask(0)
os.umask(_UMASK)

def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        # mkstemp creates 0600; give the final file the usual umask-derived mode
        os.fchmod(fd, 0o666 & ~_UMASK)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _png_bytes(img: Image.Image) -> bytes:
    import io
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# -- PFM ------------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a PFM as float64, top row first. Colour PFMs come back (H, W, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: tag, dims, scale; each token ends at a single whitespace byte.
    m = re.match(rb"(P[Ff])\s+(\S+)\s+(\S+)\s+(\S+)\s", data)
    if not m:
        raise FormatError(FormatError.MALFORMED_HEADER, f"{path}: not a PFM header")
    tag = m.group(1)
    try:
        width, height = int(m.group(2)), int(m.group(3))
        scale = float(m.group(4))
    except ValueError as exc:
        raise FormatError(FormatError.MALFORMED_HEADER, f"{path}: bad PFM header field") from exc
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(FormatError.MALFORMED_HEADER, f"{path}: PFM scale must be finite and non-zero")
    if width <= 0 or height <= 0 or width * height > MAX_PIXELS:
        raise FormatError(FormatError.DIMENSION_OVERFLOW, f"{path}: PFM dimensions {width}x{height}")
    channels = 3 if tag == b"PF" else 1
    count = width * height * channels
    body = data[m.end():]
    if len(body) < 4 * count:
        raise FormatError(FormatError.TRUNCATED_DATA, f"{path}: expected {4 * count} bytes, got {len(body)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(body[:4 * count], dtype=dtype).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(arr.reshape(shape)).copy()


def pfm_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    elif arr.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"cannot store shape {arr.shape} as PFM")
    h, w = arr.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()


def write_pfm(path, arr):
    """Little-endian PFM (negative scale), rows stored bottom-up."""
    atomic_write_bytes(path, pfm_bytes(arr))


# -- PNG ------------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.array(img)
    except (OSError, SyntaxError) as exc:
        raise FormatError(FormatError.MALFORMED_HEADER, f"{path}: {exc}") from exc
    if mode in ("I;16", "I;16B", "I;16L"):
        return arr.astype(np.uint16)
    if mode == "I":
        if arr.min() < 0 or arr.max() > PNG16_MAX:
            raise FormatError(FormatError.UNSUPPORTED_BIT_DEPTH, f"{path}: 32-bit PNG")
        return arr.astype(np.uint16)
    if mode in ("L", "RGB"):
        return arr.astype(np.uint8)
    if mode == "RGBA":
        return arr[..., :3].astype(np.uint8)
    if mode == "P":
        with Image.open(path) as img:
            return np.array(img.convert("RGB"))
    raise FormatError(FormatError.UNSUPPORTED_BIT_DEPTH, f"{path}: PNG mode {mode}")


def png16_bytes(arr_u16) -> bytes:
    arr = np.ascontiguousarray(arr_u16, dtype=np.uint16)
    return _png_bytes(Image.fromarray(arr))


def png8_bytes(arr_u8) -> bytes:
    return _png_bytes(Image.fromarray(np.ascontiguousarray(arr_u8, dtype=np.uint8)))


def write_png8(path, arr_u8):
    atomic_write_bytes(path, png8_bytes(arr_u8))


def write_png16(path, arr_u16):
    atomic_write_bytes(path, png16_bytes(arr_u16))


# -- typed loaders ----------------------------------------------------------------

def load_depth(path) -> DepthMap:
    """PFM keeps raw float values; 16-bit PNG maps 0..65535 onto [0, 10]."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pfm":
        values = read_pfm(path)
        if values.ndim != 2:
            raise FormatError(FormatError.UNSUPPORTED_FORMAT, f"{path}: colour PFM is not a depth map")
    elif ext == ".png":
        raw = read_png(path)
        if raw.dtype != np.uint16 or raw.ndim != 2:
            raise FormatError(FormatError.UNSUPPORTED_BIT_DEPTH, f"{path}: depth PNG must be 16-bit grayscale")
        values = raw.astype(np.float64) * (DEPTH_MAX / PNG16_MAX)
    else:
        raise FormatError(FormatError.UNSUPPORTED_FORMAT, f"{path}: unknown depth extension {ext!r}")
    return DepthMap(values, np.isfinite(values))


def save_depth(d, path):
    values = d.values if isinstance(d, DepthMap) else np.asarray(d, dtype=np.float64)
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pfm":
        write_pfm(path, values)
    elif ext == ".png":
        q = np.rint(np.clip(values, 0.0, DEPTH_MAX) * (PNG16_MAX / DEPTH_MAX))
        write_png16(path, q.astype(np.uint16))
    else:
        raise FormatError(FormatError.UNSUPPORTED_FORMAT, f"{path}: unknown depth extension {ext!r}")


def load_rgb(path) -> np.ndarray:
    raw = read_png(path)
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    scale = PNG16_MAX if raw.dtype == np.uint16 else 255
    return raw.astype(np.float64) / scale


def save_rgb(path, rgb):
    write_png8(path, np.rint(np.clip(rgb, 0, 1) * 255).astype(np.uint8))


def load_mask(path, soft: bool = False) -> np.ndarray:
    raw = read_png(path)
    if raw.ndim == 3:
        raw = raw[..., 0]
    full = PNG16_MAX if raw.dtype == np.uint16 else 255
    alpha = raw.astype(np.float64) / full
    return alpha if soft else (alpha >= 0.5).astype(np.float64)


def save_mask(path, m):
    write_png8(path, np.rint(np.clip(m, 0, 1) * 255).astype(np.uint8))


def load_instances(path) -> np.ndarray:
    raw = read_png(path)
    if raw.ndim != 2:
        raise FormatError(FormatError.UNSUPPORTED_FORMAT, f"{path}: instance map must be single-channel")
    return raw.astype(np.int64)


def save_instances(path, inst):
    inst = np.asarray(inst)
    if inst.min() < 0 or inst.max() > PNG16_MAX:
        raise ValueError("instance ids must fit in 16 bits")
    write_png16(path, inst.astype(np.uint16))


# -- PLY ------------------------------------------------------------------------

PLY_VFOV_DEG = 60.0


def backproject(depth, valid=None, vfov_deg: float = PLY_VFOV_DEG) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole back-projection of an inverse-depth map.

    Focal length follows from the vertical field of view; the principal point
    is the image centre; ``z = 1 / inverse_depth``. Pixels with non-positive
    inverse depth are dropped. Returns ``(points (K, 3), pixel mask)``; ``y``
    points up.
    """
    d = np.asarray(depth, dtype=np.float64)
    h, w = d.shape
    ok = np.isfinite(d) & (d > 0)
    if valid is not None:
        ok &= np.asarray(valid, bool)
    f = 0.5 * h / np.tan(np.deg2rad(vfov_deg) / 2)
    v, u = np.nonzero(ok)
    z = 1.0 / d[ok]
    x = (u - (w - 1) / 2) * z / f
    y = -(v - (h - 1) / 2) * z / f
    return np.stack([x, y, z], axis=1), ok


def ply_text(points, colors=None) -> str:
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property float x", "property float y", "property float z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if colors is None:
        body = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in points]
    else:
        c8 = np.rint(np.clip(colors, 0, 1) * 255).astype(int)
        body = [f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(points, c8)]
    return "\n".join(lines + body) + "\n"


def write_ply(path, depth, rgb=None, valid=None):
    pts, ok = backproject(depth, valid)
    colors = None if rgb is None else np.asarray(rgb)[ok]
    atomic_write_text(path, ply_text(pts, colors))
    return len(pts)


# -- training sample layout -------------------------------------------------------

SAMPLE_FILES = ("rgb.png", "depth.pfm", "perturbed.pfm", "mask.png", "layer1.pfm", "layer2.pfm", "meta.json")


def sample_dir(root, idx: int) -> Path:
    return Path(root) / "samples" / f"{idx:06d}"


def write_sample(root, idx: int, sample, extra_meta: dict | None = None):
    out = sample_dir(root, idx)
    save_rgb(out / "rgb.png", sample.rgb)
    write_pfm(out / "depth.pfm", sample.depth)
    write_pfm(out / "perturbed.pfm", sample.perturbed)
    save_mask(out / "mask.png", sample.mask)
    write_pfm(out / "layer1.pfm", sample.layer1)
    write_pfm(out / "layer2.pfm", sample.layer2)
    meta = {"index": idx, "seed": int(sample.seed), "kind": sample.kind}
    meta.update(extra_meta or {})
    write_json(out / "meta.json", meta)


def read_sample(path):
    from .datagen.sample import TrainingSample

    path = Path(path)
    missing = [f for f in SAMPLE_FILES if not (path / f).exists()]
    if missing:
        raise DataError(f"{path}: missing {', '.join(missing)}")
    meta = json.loads((path / "meta.json").read_text())
    return TrainingSample(
        rgb=load_rgb(path / "rgb.png"),
        depth=read_pfm(path / "depth.pfm"),
        perturbed=read_pfm(path / "perturbed.pfm"),
        mask=load_mask(path / "mask.png"),
        layer1=read_pfm(path / "layer1.pfm"),
        layer2=read_pfm(path / "layer2.pfm"),
        seed=int(meta["seed"]),
        kind=meta.get("kind"),
    )


def list_samples(root) -> list[Path]:
    base = Path(root) / "samples"
    if not base.is_dir():
        return []
    return sorted(p for p in base.iterdir() if p.is_dir())


def read_dataset(root) -> list:
    return [read_sample(p) for p in list_samples(root)]
