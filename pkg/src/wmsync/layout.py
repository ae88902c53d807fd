"""Keyed block partition into template and watermark blocks.

``K`` is stored in image orientation: ``K[y, x]`` is the role of the block in
block-row ``y`` and block-column ``x`` (shape ``(N, M)``). A one marks a
template block, a zero a watermark block.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

CANONICAL_SIZE = 512


class Role(str, Enum):
    TEMPLATE = "template"
    WATERMARK = "watermark"


@dataclass(frozen=True)
class BlockLayout:
    key: int
    M: int
    N: int
    K: np.ndarray
    block_w: float
    block_h: float

    @property
    def template_count(self) -> int:
        return int(self.K.sum())

    @property
    def watermark_count(self) -> int:
        return self.M * self.N - self.template_count

    def watermark_blocks(self):
        """(x, y) of every watermark block, row-major."""
        return [(x, y) for y in range(self.N) for x in range(self.M) if self.K[y, x] == 0]


@dataclass(frozen=True)
class ResizedLayout:
    r: int
    K_r: np.ndarray


def _philox(key: int) -> np.random.Generator:
    # Philox-4x64 is counter based, so the stream is fixed by the key alone.
    return np.random.Generator(np.random.Philox(key=int(key) & 0xFFFFFFFFFFFFFFFF))


def generate_layout(key: int, M: int = 8, N: int = 8, size: int = CANONICAL_SIZE) -> BlockLayout:
    """Derive the balanced binary role matrix for ``key``.

    ``ceil(M*N/2)`` entries are ones; their positions are a keyed random
    permutation of a half-ones vector.
    """
    if M < 2 or N < 2:
        raise ValueError(f"need at least 2x2 blocks, got M={M}, N={N}")
    if not 0 <= int(key) < 2**64:
        raise ValueError("key must be an unsigned 64-bit integer")
    total = M * N
    ones = -(-total // 2)
    flat = np.zeros(total, dtype=np.uint8)
    flat[:ones] = 1
    flat = _philox(key).permutation(flat)
    K = flat.reshape(N, M)
    K.setflags(write=False)
    return BlockLayout(int(key), M, N, K, size / M, size / N)


def resize_layout(layout: BlockLayout, r: int) -> ResizedLayout:
    """Nearest-neighbour upsampling of ``K`` to an ``r x r`` grid."""
    if r % layout.M or r % layout.N:
        raise ValueError(f"r={r} is not divisible by M={layout.M} and N={layout.N}")
    K_r = np.kron(layout.K, np.ones((r // layout.N, r // layout.M), dtype=np.uint8))
    K_r.setflags(write=False)
    return ResizedLayout(r, K_r)


def downsample_majority(K_r: np.ndarray, M: int, N: int) -> np.ndarray:
    """Collapse each tile of ``K_r`` to its majority value (ties go to one)."""
    rows, cols = K_r.shape
    if rows % N or cols % M:
        raise ValueError("grid is not tile-aligned")
    tiles = K_r.reshape(N, rows // N, M, cols // M).astype(np.int64)
    area = (rows // N) * (cols // M)
    return (2 * tiles.sum(axis=(1, 3)) >= area).astype(np.uint8)


def block_role(layout: BlockLayout, x: int, y: int) -> Role:
    if not (0 <= x < layout.M and 0 <= y < layout.N):
        raise IndexError(f"block ({x}, {y}) outside {layout.M}x{layout.N} grid")
    return Role.TEMPLATE if layout.K[y, x] == 1 else Role.WATERMARK


def block_slices(layout: BlockLayout, x: int, y: int):
    """Pixel slices of block (x, y) on the canonical canvas."""
    bw, bh = layout.block_w, layout.block_h
    if bw != int(bw) or bh != int(bh):
        raise ValueError("canvas is not divisible into whole-pixel blocks")
    bw, bh = int(bw), int(bh)
    return slice(y * bh, (y + 1) * bh), slice(x * bw, (x + 1) * bw)


def pixel_mask(layout: BlockLayout, size: int = CANONICAL_SIZE) -> np.ndarray:
    """K resized to the pixel canvas (``K_size``)."""
    return resize_layout(layout, size).K_r
