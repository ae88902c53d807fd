"""Quantization index modulation on curvelet band means.

Each watermark block carries one bit per direction pair ``(l, l + n/2)`` at
the embedding scale. The statistic is the mean absolute coefficient of a band;
embedding snaps it to an even (bit 0) or odd (bit 1) multiple of ``q`` by
scaling every coefficient of both bands of the pair.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import curvelet as cv
from . import kernels
from .layout import BlockLayout, block_slices

# band means below this are treated as blank, where scaling cannot help
ZERO_BAND = 1e-9


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Payload:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8).ravel()
        if b.size and b.max() > 1:
            raise ValueError("payload bits must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self):
        return int(self.bits.size)

    def __eq__(self, other):
        return isinstance(other, Payload) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    @classmethod
    def random(cls, n_bits: int, seed=None) -> "Payload":
        return cls(np.random.default_rng(seed).integers(0, 2, n_bits, dtype=np.uint8))

    # hex: most significant bit first, bit count padded to whole nibbles
    def to_hex(self) -> str:
        n = len(self)
        pad = (-n) % 4
        bits = np.concatenate([self.bits, np.zeros(pad, np.uint8)])
        nibbles = bits.reshape(-1, 4) @ np.array([8, 4, 2, 1])
        return "".join(f"{v:x}" for v in nibbles)

    @classmethod
    def from_hex(cls, text: str, n_bits: Optional[int] = None) -> "Payload":
        text = text.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        try:
            values = [int(ch, 16) for ch in text]
        except ValueError:
            raise ValueError(f"not a hex string: {text!r}") from None
        bits = np.array([(v >> s) & 1 for v in values for s in (3, 2, 1, 0)], dtype=np.uint8)
        if n_bits is not None:
            if n_bits > bits.size:
                raise ValueError(f"hex string holds {bits.size} bits, {n_bits} requested")
            bits = bits[:n_bits]
        return cls(bits)

    def to_bitfile(self) -> bytes:
        """ASCII '0'/'1' characters, one line."""
        return ("".join(str(int(b)) for b in self.bits) + "\n").encode("ascii")

    @classmethod
    def from_bitfile(cls, data: bytes) -> "Payload":
        text = data.decode("ascii").strip()
        if set(text) - {"0", "1"}:
            raise ValueError("bit file may contain only '0' and '1'")
        return cls(np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"))


@dataclass(frozen=True)
class QimConfig:
    q: float = 3.0
    embed_scale: int = 3
    scales: int = cv.DEFAULT_SCALES
    coarse_angles: int = cv.DEFAULT_COARSE_ANGLES
    pairs: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("q must be positive")
        counts = cv.angle_counts(self.scales, self.coarse_angles)
        if not 1 <= self.embed_scale <= self.scales:
            raise ValueError("embed_scale out of range")
        n = counts[self.embed_scale - 1]
        if n < 2:
            raise ValueError("embedding scale has no direction pairs")
        pairs = self.pairs
        if pairs is None:
            pairs = tuple((l, l + n // 2) for l in range(n // 2))
        pairs = tuple((int(a), int(b)) for a, b in pairs)
        flat = sorted(v for p in pairs for v in p)
        if flat != list(range(n)):
            raise ValueError(f"pairs must be disjoint and cover all {n} directions")
        object.__setattr__(self, "pairs", pairs)

    @property
    def bits_per_block(self) -> int:
        return len(self.pairs)


def quantize_band(A, q, b, backend=None):
    """Target band mean carrying bit ``b``; vectorised over ``A`` and ``b``."""
    A = np.asarray(A, dtype=np.float64)
    if np.any(A < 0):
        raise ValueError("band means are nonnegative")
    shape = np.broadcast(A, np.asarray(b)).shape
    A_b, b_b = np.broadcast_arrays(A, np.asarray(b))
    out = kernels.qim_quantize(A_b.ravel(), q, b_b.ravel(), backend=backend)
    return out.reshape(shape) if shape else float(out[0])


def decode_mean(A, q):
    return (round_half_away(np.asarray(A, dtype=np.float64) / q) % 2).astype(np.uint8)


def _pair_means(pyr: cv.CurveletPyramid, cfg: QimConfig) -> np.ndarray:
    s = cfg.embed_scale
    return np.array([np.mean(np.abs(pyr.band(s, a))) for a, _ in cfg.pairs])


def _blank_band(shape, s, l, cfg):
    # Unit spectrum on the band support, wrapped like forward() does.
    band = cv.plan_for(shape, cfg.scales, cfg.coarse_angles)[s - 1][l]
    rect = np.zeros(band.shape[0] * band.shape[1], dtype=np.complex128)
    rect[band.wrapped] = 1.0
    return np.fft.ifft2(rect.reshape(band.shape), norm="ortho")


def embed_block(block, bits8, cfg: QimConfig = QimConfig(), backend=None) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    bits = np.asarray(bits8, dtype=np.uint8).ravel()
    if bits.size != cfg.bits_per_block:
        raise ValueError(f"expected {cfg.bits_per_block} bits, got {bits.size}")
    pyr = cv.forward(block, cfg.scales, cfg.coarse_angles)
    A = _pair_means(pyr, cfg)
    targets = quantize_band(A, cfg.q, bits, backend=backend)
    s = cfg.embed_scale
    for (a, b), A_p, Q in zip(cfg.pairs, A, targets):
        if A_p < ZERO_BAND:
            # scaling leaves a blank band blank, so add a pattern instead
            if Q == 0:
                continue
            for l in (a, b):
                pattern = _blank_band(block.shape, s, l, cfg)
                pattern *= Q / np.mean(np.abs(pattern))
                pyr.set_band(s, l, pyr.band(s, l) + pattern)
            continue
        ratio = Q / A_p
        pyr.set_band(s, a, pyr.band(s, a) * ratio)
        pyr.set_band(s, b, pyr.band(s, b) * ratio)
    return cv.inverse(pyr)


def block_means(block, cfg: QimConfig = QimConfig()) -> np.ndarray:
    pyr = cv.forward(np.asarray(block, dtype=np.float64), cfg.scales, cfg.coarse_angles)
    return _pair_means(pyr, cfg)


def decode_block(block, cfg: QimConfig = QimConfig()) -> np.ndarray:
    return decode_mean(block_means(block, cfg), cfg.q)


def confidence(means, q) -> np.ndarray:
    """Distance of each band mean to its nearest quantization level, in [0, q/2]."""
    x = np.asarray(means, dtype=np.float64)
    return np.abs(x - round_half_away(x / q) * q)


def _check_canvas(image, layout):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a grayscale image")
    expect = (round(layout.block_h * layout.N), round(layout.block_w * layout.M))
    if image.shape != expect:
        raise ValueError(f"image is {image.shape}, layout expects {expect}")
    return image


def capacity(layout: BlockLayout, cfg: QimConfig = QimConfig()) -> int:
    return layout.watermark_count * cfg.bits_per_block


def embed_payload(image, layout: BlockLayout, payload: Payload, cfg: QimConfig = QimConfig(),
                  backend=None) -> np.ndarray:
    image = _check_canvas(image, layout)
    need = capacity(layout, cfg)
    if len(payload) != need:
        raise ValueError(f"payload has {len(payload)} bits, layout holds {need}")
    out = image.copy()
    k = cfg.bits_per_block
    for i, (x, y) in enumerate(layout.watermark_blocks()):
        rows, cols = block_slices(layout, x, y)
        out[rows, cols] = embed_block(image[rows, cols], payload.bits[i * k:(i + 1) * k], cfg,
                                      backend=backend)
    return out


def payload_means(image, layout: BlockLayout, cfg: QimConfig = QimConfig()) -> np.ndarray:
    """Band means per watermark block, shape (blocks, pairs)."""
    image = _check_canvas(image, layout)
    rows = []
    for x, y in layout.watermark_blocks():
        r, c = block_slices(layout, x, y)
        rows.append(block_means(image[r, c], cfg))
    return np.array(rows).reshape(-1, cfg.bits_per_block)


def decode_payload(image, layout: BlockLayout, cfg: QimConfig = QimConfig()) -> Payload:
    return Payload(decode_mean(payload_means(image, layout, cfg), cfg.q).ravel())
