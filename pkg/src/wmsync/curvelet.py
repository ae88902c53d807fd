"""Discrete curvelet transform by frequency wrapping, for single image blocks.

The frequency plane of a block is cut into dyadic concentric squares (scales)
and, on the directional scales, into angular wedges of equal pseudo-polar
slope. Every frequency sample belongs to exactly one band. A band's samples
are periodically wrapped onto the smallest rectangle that holds them without
collision, and an inverse FFT of that rectangle gives the band's coefficient
grid. The forward map is an isometry, so the inverse is its adjoint and
reconstruction is exact up to rounding.

Scale 1 is the isotropic low-pass, the finest scale is an isotropic high-pass,
and the scales in between are directional. Angle counts follow the usual
doubling rule: with 8 coarse angles and 5 scales the counts are
``[1, 8, 16, 16, 1]``. Directions are numbered counterclockwise (y up)
starting at the first wedge of the east cone; direction ``l`` and
``l + n/2`` are mirror images, and for real input their coefficients are
complex conjugates of each other.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np

DEFAULT_SCALES = 5
DEFAULT_COARSE_ANGLES = 8


@dataclass(frozen=True)
class Band:
    scale: int
    direction: int
    support: np.ndarray  # flat indices into the block's FFT grid
    wrapped: np.ndarray  # flat indices into the coefficient rectangle
    shape: Tuple[int, int]


@dataclass(frozen=True)
class BandStat:
    A: float
    s: int
    l: int


@dataclass
class CurveletPyramid:
    coeffs: List[List[np.ndarray]]
    source_size: Tuple[int, int]
    scales: int = DEFAULT_SCALES
    coarse_angles: int = DEFAULT_COARSE_ANGLES

    def band(self, s: int, l: int) -> np.ndarray:
        _check_band(self.coeffs, s, l)
        return self.coeffs[s - 1][l]

    def set_band(self, s: int, l: int, values: np.ndarray) -> None:
        _check_band(self.coeffs, s, l)
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != self.coeffs[s - 1][l].shape:
            raise ValueError(f"band ({s}, {l}) expects shape {self.coeffs[s - 1][l].shape}")
        self.coeffs[s - 1][l] = values

    def copy(self) -> "CurveletPyramid":
        return CurveletPyramid(
            [[c.copy() for c in row] for row in self.coeffs],
            self.source_size,
            self.scales,
            self.coarse_angles,
        )

    @property
    def angles(self) -> List[int]:
        return [len(row) for row in self.coeffs]


def angle_counts(scales: int, coarse_angles: int) -> List[int]:
    counts = [1]
    for j in range(2, scales):
        counts.append(coarse_angles * 2 ** int(np.ceil((j - 2) / 2)))
    counts.append(1)
    return counts


def _pseudo_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Continuous pseudo-polar angle in [-1, 7); east cone spans [-1, 1]."""
    u = np.full(a.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        east = (a > 0) & (np.abs(b) <= a)
        north = (b > 0) & (np.abs(a) <= b) & ~east
        west = (a < 0) & (np.abs(b) <= -a) & ~north
        south = ~(east | north | west) & ((a != 0) | (b != 0))
        u[east] = b[east] / a[east]
        u[north] = 2.0 - a[north] / b[north]
        u[west] = 4.0 + b[west] / a[west]
        u[south] = 6.0 - a[south] / b[south]
    u[u >= 7.0] -= 8.0
    return u


@lru_cache(maxsize=16)
def _plan(
    n1: int, n2: int, scales: int, coarse_angles: int
) -> Tuple[Tuple[Band, ...], ...]:
    if scales < 3:
        raise ValueError("need at least 3 scales")
    if min(n1, n2) < 2**scales:
        raise ValueError(f"block {n1}x{n2} too small for {scales} scales (min side {2**scales})")
    if coarse_angles % 4:
        raise ValueError("coarse angle count must be a multiple of 4")

    ky = np.rint(np.fft.fftfreq(n1) * n1).astype(np.int64)
    kx = np.rint(np.fft.fftfreq(n2) * n2).astype(np.int64)
    KY, KX = np.meshgrid(ky, kx, indexing="ij")
    fy, fx = KY / n1, KX / n2
    radius = np.maximum(np.abs(fy), np.abs(fx))
    bounds = [2.0 ** (j - scales - 1) for j in range(1, scales)]
    scale_of = 1 + sum((radius >= b).astype(np.int64) for b in bounds)

    # y axis flipped so that "counterclockwise" reads as on screen
    u = _pseudo_angle(fx, -fy)
    upper = (u >= -1.0) & (u < 3.0)
    neg_flat = ((-KY) % n1) * n2 + ((-KX) % n2)

    counts = angle_counts(scales, coarse_angles)
    plan = []
    for s in range(1, scales + 1):
        in_scale = scale_of == s
        nb = counts[s - 1]
        if nb == 1:
            labels = np.where(in_scale, 0, -1)
        else:
            width = 8.0 / nb
            lab_upper = np.floor(np.nan_to_num(u + 1.0) / width).astype(np.int64)
            # mirror wedges are defined through the upper half so that the
            # partition is exactly symmetric under negation
            labels = np.where(upper, lab_upper, lab_upper.ravel()[neg_flat] + nb // 2)
            labels = np.where(in_scale, labels, -1)
        bands = []
        for l in range(nb):
            sel = np.flatnonzero(labels.ravel() == l)
            if sel.size == 0:
                raise ValueError(f"band ({s}, {l}) is empty for a {n1}x{n2} block")
            bands.append(_wrap_band(s, l, sel, KY.ravel()[sel], KX.ravel()[sel]))
        plan.append(tuple(bands))
    return tuple(plan)


def _spans(major: np.ndarray, minor: np.ndarray) -> Tuple[int, int]:
    order = np.lexsort((minor, major))
    major, minor = major[order], minor[order]
    keys, starts = np.unique(major, return_index=True)
    lo = np.minimum.reduceat(minor, starts)
    hi = np.maximum.reduceat(minor, starts)
    return int(keys.max() - keys.min() + 1), int((hi - lo).max() + 1)


def _wrap_band(s: int, l: int, sel: np.ndarray, ky: np.ndarray, kx: np.ndarray) -> Band:
    # Any set whose row span is <= L1 and whose per-row span is <= L2 maps
    # injectively onto an L1 x L2 torus; try both orientations, keep the smaller.
    r_rows, r_cols = _spans(ky, kx)
    c_cols, c_rows = _spans(kx, ky)
    if c_rows * c_cols < r_rows * r_cols:
        L1, L2 = c_rows, c_cols
    else:
        L1, L2 = r_rows, r_cols
    wrapped = (ky % L1) * L2 + (kx % L2)
    if np.unique(wrapped).size != wrapped.size:
        raise AssertionError("wrapping collision")
    sel.setflags(write=False)
    wrapped.setflags(write=False)
    return Band(s, l, sel, wrapped, (L1, L2))


def plan_for(shape, scales: int = DEFAULT_SCALES, coarse_angles: int = DEFAULT_COARSE_ANGLES):
    n1, n2 = (int(v) for v in shape)
    return _plan(n1, n2, scales, coarse_angles)


def forward(
    block: np.ndarray, scales: int = DEFAULT_SCALES, coarse_angles: int = DEFAULT_COARSE_ANGLES
) -> CurveletPyramid:
    block = np.asarray(block)
    if block.ndim != 2:
        raise ValueError("expected a 2-D block")
    if np.iscomplexobj(block):
        raise ValueError("expected a real-valued block")
    plan = plan_for(block.shape, scales, coarse_angles)
    spectrum = np.fft.fft2(block.astype(np.float64), norm="ortho").ravel()
    coeffs = []
    for bands in plan:
        row = []
        for band in bands:
            rect = np.zeros(band.shape[0] * band.shape[1], dtype=np.complex128)
            rect[band.wrapped] = spectrum[band.support]
            row.append(np.fft.ifft2(rect.reshape(band.shape), norm="ortho"))
        coeffs.append(row)
    return CurveletPyramid(coeffs, tuple(block.shape), scales, coarse_angles)


def inverse(pyr: CurveletPyramid) -> np.ndarray:
    n1, n2 = pyr.source_size
    plan = plan_for((n1, n2), pyr.scales, pyr.coarse_angles)
    if [len(b) for b in plan] != pyr.angles:
        raise ValueError("pyramid layout does not match its source size")
    spectrum = np.zeros(n1 * n2, dtype=np.complex128)
    for bands, row in zip(plan, pyr.coeffs):
        for band, coef in zip(bands, row):
            if coef.shape != band.shape:
                raise ValueError(
                    f"band ({band.scale}, {band.direction}) has shape {coef.shape}, "
                    f"expected {band.shape}"
                )
            spectrum[band.support] = np.fft.fft2(coef, norm="ortho").ravel()[band.wrapped]
    return np.fft.ifft2(spectrum.reshape(n1, n2), norm="ortho").real


def band_mean_abs(pyr: CurveletPyramid, s: int, l: int) -> BandStat:
    return BandStat(float(np.mean(np.abs(pyr.band(s, l)))), s, l)


def _check_band(coeffs, s, l):
    if not (1 <= s <= len(coeffs)) or not (0 <= l < len(coeffs[s - 1])):
        raise KeyError(f"no band (s={s}, l={l})")
