"""Rotation/scale/translation transforms, attack simulation and the grid-point loss.

Convention (shared by attacks, the matcher and recovery): a point ``p`` of the
content moves to

    F(p) = c + Rot(R) @ diag(Sx, Sy) @ (p - c) - (Tx * W, Ty * H)

with ``c`` the canvas centre, so scaling happens first, then rotation, then
translation. ``R`` is in degrees, counterclockwise as seen on screen (image y
axis points down). A positive ``Tx`` moves content to the left.
"""

import io
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels

CANVAS = 512


@dataclass(frozen=True)
class RstParams:
    R: float = 0.0
    Sx: float = 1.0
    Sy: float = 1.0
    Tx: float = 0.0
    Ty: float = 0.0

    def __post_init__(self):
        if not (self.Sx > 0 and self.Sy > 0):
            raise ValueError(f"scales must be positive, got Sx={self.Sx}, Sy={self.Sy}")

    @classmethod
    def identity(cls) -> "RstParams":
        return cls()

    def as_array(self) -> np.ndarray:
        return np.array([self.R, self.Sx, self.Sy, self.Tx, self.Ty], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "RstParams":
        R, Sx, Sy, Tx, Ty = (float(v) for v in values)
        return cls(R, Sx, Sy, Tx, Ty)

    def is_identity(self) -> bool:
        return self == RstParams()


def _cos_sin(deg: float):
    # exact values on the axes so that quarter turns are pure permutations
    r = float(deg) % 360.0
    table = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if r in table:
        return table[r]
    rad = math.radians(deg)
    return math.cos(rad), math.sin(rad)


def _linear(p: RstParams) -> np.ndarray:
    c, s = _cos_sin(p.R)
    rot = np.array([[c, s], [-s, c]])
    return rot @ np.diag([p.Sx, p.Sy])


def rst_matrix(p: RstParams, width: int = CANVAS, height: int = CANVAS) -> np.ndarray:
    """Forward 3x3 map in pixel coordinates (pixel centres at integers)."""
    centre = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    A = _linear(p)
    m = np.eye(3)
    m[:2, :2] = A
    m[:2, 2] = centre - A @ centre - np.array([p.Tx * width, p.Ty * height])
    return m


def unit_matrix(p: RstParams) -> np.ndarray:
    """Forward 3x3 map in unit-square coordinates (centre at 0.5)."""
    A = _linear(p)
    m = np.eye(3)
    m[:2, :2] = A
    m[:2, 2] = 0.5 - A @ np.array([0.5, 0.5]) - np.array([p.Tx, p.Ty])
    return m


def warp(image, forward: np.ndarray, out_shape=None, pad: float = 0.0, mode=kernels.CONSTANT):
    """Move content by the 3x3 pixel map ``forward`` with bilinear sampling."""
    image = np.asarray(image, dtype=np.float64)
    out_shape = image.shape if out_shape is None else out_shape
    inv = np.linalg.inv(forward)
    return kernels.warp_affine(image, inv[:2], out_shape, mode=mode, cval=pad)


def apply_rst(image, p: RstParams, pad: float = 0.0) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("apply_rst expects a 2-D grid")
    if p.is_identity():
        return image.copy()
    h, w = image.shape
    return warp(image, rst_matrix(p, w, h), pad=pad)


def unapply_rst(image, p: RstParams, pad: float = 0.0) -> np.ndarray:
    """Undo ``apply_rst(., p)`` by exact matrix inversion (works for every RstParams)."""
    image = np.asarray(image, dtype=np.float64)
    if p.is_identity():
        return image.copy()
    h, w = image.shape
    return warp(image, np.linalg.inv(rst_matrix(p, w, h)), pad=pad)


def invert_rst(p: RstParams, width: int = CANVAS, height: int = CANVAS) -> RstParams:
    """Parameters of the inverse transform.

    The inverse of scale-then-rotate is rotate-then-scale, which has the same
    scale-then-rotate form only when the scale is isotropic or there is no
    rotation. Other cases raise; use ``unapply_rst`` for them.
    """
    if not (p.Sx > 0 and p.Sy > 0):
        raise ValueError("degenerate scale")
    if p.Sx != p.Sy and float(p.R) % 360.0 != 0.0:
        raise ValueError("inverse of anisotropic scale with rotation is not an RstParams")
    c, s = _cos_sin(p.R)
    rot_inv = np.array([[c, -s], [s, c]])
    t_pix = np.array([p.Tx * width, p.Ty * height])
    t_new = -np.diag([1.0 / p.Sx, 1.0 / p.Sy]) @ rot_inv @ t_pix
    return RstParams(-p.R if p.R else 0.0, 1.0 / p.Sx, 1.0 / p.Sy,
                     t_new[0] / width + 0.0, t_new[1] / height + 0.0)


def grid_points(S: int = 10) -> np.ndarray:
    """Corner-inclusive S x S grid on the unit square, as (S*S, 2) x/y rows."""
    if S < 2:
        raise ValueError("grid needs S >= 2")
    g = np.arange(S) / (S - 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def grid_point_error(est: RstParams, gt: RstParams, S: int = 10) -> float:
    """Mean squared displacement between the grids mapped by ``est`` and ``gt``."""
    pts = np.concatenate([grid_points(S), np.ones((S * S, 1))], axis=1)
    d = pts @ (unit_matrix(est) - unit_matrix(gt))[:2].T
    return float(np.mean(np.sum(d * d, axis=1)))


def resize(image, shape, mode=kernels.EDGE) -> np.ndarray:
    """Bilinear resize with half-pixel centres; same size is an exact copy."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    oh, ow = (int(v) for v in shape)
    if (oh, ow) == (h, w):
        return image.copy()
    sx, sy = w / ow, h / oh
    m = np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5]])
    return kernels.warp_affine(image, m, (oh, ow), mode=mode)


SCALE_MODES = ("resize", "canvas")


@dataclass(frozen=True)
class AttackSpec:
    """One attack. ``scale_mode='resize'`` changes the image dimensions by
    (Sx, Sy) after rotating and translating on the canvas; ``'canvas'`` keeps
    the dimensions and scales content about the centre."""

    rst: RstParams = RstParams()
    noise_var: float = 0.0
    jpeg_q: Optional[int] = None
    scale_mode: str = "resize"

    def __post_init__(self):
        if not 0.0 <= self.noise_var <= 200.0:
            raise ValueError("noise variance must lie in [0, 200]")
        if self.jpeg_q is not None and not 30 <= int(self.jpeg_q) <= 100:
            raise ValueError("JPEG quality must lie in [30, 100]")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")

    def to_record(self) -> dict:
        rec = {k: float(v) for k, v in asdict(self.rst).items()}
        rec.update(noise_var=float(self.noise_var),
                   jpeg_q="none" if self.jpeg_q is None else int(self.jpeg_q),
                   scale_mode=self.scale_mode)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "AttackSpec":
        q = rec.get("jpeg_q", "none")
        q = None if q in (None, "none", "") else int(q)
        rst = RstParams(*(float(rec.get(k, d)) for k, d in
                          (("R", 0), ("Sx", 1), ("Sy", 1), ("Tx", 0), ("Ty", 0))))
        return cls(rst, float(rec.get("noise_var", 0.0)), q, rec.get("scale_mode", "resize"))


def effective_rst(a: AttackSpec) -> RstParams:
    """Transform seen on the 512 canvas after the decoder resizes back."""
    if a.scale_mode == "canvas":
        return a.rst
    return RstParams(a.rst.R, 1.0, 1.0, a.rst.Tx, a.rst.Ty)


def sample_attack(seed, scale_mode: str = "resize") -> AttackSpec:
    rng = np.random.default_rng(seed)
    R = rng.uniform(0.0, 90.0)
    Sx, Sy = rng.uniform(0.7, 1.5, size=2)
    Tx, Ty = rng.uniform(-0.3, 0.3, size=2)
    noise = rng.uniform(0.0, 200.0)
    q = int(rng.integers(30, 101))
    return AttackSpec(RstParams(R, Sx, Sy, Tx, Ty), noise, q, scale_mode)


def jpeg_roundtrip(image, quality: int) -> np.ndarray:
    arr = np.clip(round_pixels(image), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf), dtype=np.float64)


def round_pixels(image) -> np.ndarray:
    return np.floor(np.asarray(image, dtype=np.float64) + 0.5)


def apply_attack(image, a: AttackSpec, seed=0) -> np.ndarray:
    """RST, then Gaussian noise, then JPEG; the result is clipped to [0, 255]."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if a.scale_mode == "canvas":
        out = apply_rst(image, a.rst)
    else:
        r = a.rst
        out = apply_rst(image, RstParams(r.R, 1.0, 1.0, r.Tx, r.Ty))
        if (r.Sx, r.Sy) != (1.0, 1.0):
            out = resize(out, (max(1, round(h * r.Sy)), max(1, round(w * r.Sx))))
    if a.noise_var > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, math.sqrt(a.noise_var), out.shape)
    if a.jpeg_q is not None:
        out = jpeg_roundtrip(out, a.jpeg_q)
    return np.clip(out, 0.0, 255.0)
