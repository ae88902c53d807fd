"""Embed and decode flows on images of any size.

Embedding works on the 512 canvas and transfers only the additive stego
signal back to the original resolution. Decoding resizes to the canvas,
estimates the geometric distortion (from the template, from a supplied
ground truth, or not at all), undoes it and reads the QIM payload.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry as geo
from . import qim
from .datasets import LUMA
from .layout import CANONICAL_SIZE, BlockLayout, generate_layout, resize_layout
from .metrics import psnr, ssim

RECOVERY_MODES = ("template", "gt", "none")
_GRID = 2.0**32


@dataclass(frozen=True)
class PipelineConfig:
    key: int = 7
    M: int = 8
    N: int = 8
    codec: qim.QimConfig = qim.QimConfig()
    # extra template passes on the partly recovered image
    refine_steps: int = 0
    # divide band means by the attenuation the estimated resampling chain causes
    compensate: bool = True

    def layout(self) -> BlockLayout:
        return generate_layout(self.key, self.M, self.N, CANONICAL_SIZE)

    @property
    def capacity(self) -> int:
        return qim.capacity(self.layout(), self.codec)


@dataclass
class StegoResult:
    stego_image: np.ndarray
    payload: qim.Payload
    layout_key: int
    psnr: float
    ssim: float
    # additive signal at original resolution, and the unclipped stego image
    signal: np.ndarray = field(repr=False, default=None)
    stego_unclipped: np.ndarray = field(repr=False, default=None)


@dataclass
class DecodeReport:
    est_rst: geo.RstParams
    recovered_image: np.ndarray = field(repr=False)
    payload: qim.Payload
    per_block_confidence: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False, default=None)
    mode: str = "template"


def _split_color(image):
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        return a, None
    if a.ndim == 3 and a.shape[2] in (3, 4):
        return a[..., :3] @ LUMA, a
    raise ValueError(f"unsupported image shape {a.shape}")


def embed_image(image, payload: qim.Payload, model=None, cfg: PipelineConfig = PipelineConfig(),
                backend=None) -> StegoResult:
    """Embed ``payload`` (and the template when ``model`` is given) into ``image``.

    Colour images are embedded in luma; the luma change is added to every
    colour channel.
    """
    gray, color = _split_color(image)
    layout = cfg.layout()
    if len(payload) != qim.capacity(layout, cfg.codec):
        raise ValueError(f"payload has {len(payload)} bits, capacity is {qim.capacity(layout, cfg.codec)}")
    if model is not None and model.layout_key != cfg.key:
        raise ValueError(f"model was trained for key {model.layout_key}, not {cfg.key}")
    h, w = gray.shape
    base = geo.resize(gray, (CANONICAL_SIZE, CANONICAL_SIZE))
    stego = qim.embed_payload(base, layout, payload, cfg.codec, backend=backend)
    if model is not None:
        stego = stego + model.generate_noise(layout)
    if (h, w) == (CANONICAL_SIZE, CANONICAL_SIZE):
        # no resizing involved: keep the canvas result bit-exact
        signal = stego - gray
        unclipped_gray = stego
    else:
        # Snap the signal to a 2**-32 grid: adding it to 8-bit pixel values is
        # then exact in float64, so stego - original == signal bit for bit.
        signal = np.round(geo.resize(stego - base, (h, w)) * _GRID) / _GRID
        unclipped_gray = gray + signal
    if color is None:
        unclipped = unclipped_gray
        out = np.clip(unclipped, 0.0, 255.0)
        p, s = psnr(out, gray), ssim(out, gray)
    else:
        unclipped = color.copy()
        unclipped[..., :3] += signal[..., None]
        out = np.clip(unclipped, 0.0, 255.0)
        p, s = psnr(out[..., :3] @ LUMA, gray), ssim(out[..., :3] @ LUMA, gray)
    return StegoResult(out, payload, cfg.key, p, s, signal, unclipped)


# ------------------------------------------------------------------ decoding


def matrix_to_rst(m: np.ndarray, size: int = CANONICAL_SIZE) -> geo.RstParams:
    """Closest RstParams to a pixel-coordinate affine map (shear is dropped)."""
    A = m[:2, :2]
    Sx = float(np.hypot(A[0, 0], A[1, 0]))
    Sy = float(np.hypot(A[0, 1], A[1, 1]))
    R = math.degrees(math.atan2(-A[1, 0], A[0, 0]))
    c = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    t = (c - A @ c - m[:2, 2]) / size
    return geo.RstParams(R, max(Sx, 1e-9), max(Sy, 1e-9), float(t[0]), float(t[1]))


def estimate_matrix(image512, model, layout: BlockLayout, refine_steps: int = 1) -> np.ndarray:
    """Forward pixel map of the distortion, estimated from the template.

    Each refinement pass undoes the current estimate, matches again and
    composes the residual onto the estimate.
    """
    k_orig = resize_layout(layout, model.cfg.template).K_r
    total = np.eye(3)
    for _ in range(1 + max(0, refine_steps)):
        view = image512 if _ == 0 else geo.warp(image512, np.linalg.inv(total))
        est = model.match_templates(model.extract_template(view), k_orig)
        total = total @ geo.rst_matrix(est)
    return total


def _chain(y, forward: np.ndarray, shape):
    """Re-apply the distortion seen by the decoder (warp, resize, resize back, unwarp)."""
    z = geo.warp(y, forward)
    if tuple(shape) != y.shape:
        z = geo.resize(geo.resize(z, shape), y.shape)
    return geo.warp(z, np.linalg.inv(forward))


def decode_canvas(recovered, layout, qcfg: qim.QimConfig, forward=None, received_shape=None,
                  compensate=True):
    """Payload and band means from a recovered canvas image.

    With ``compensate`` the band means are divided by the attenuation that
    the same warp/resample chain causes on the recovered image itself.
    """
    means = qim.payload_means(recovered, layout, qcfg)
    if compensate and forward is not None:
        shape = recovered.shape if received_shape is None else received_shape
        if not (np.allclose(forward, np.eye(3)) and tuple(shape) == recovered.shape):
            again = qim.payload_means(_chain(recovered, forward, shape), layout, qcfg)
            ratio = np.where(means > qim.ZERO_BAND, again / np.maximum(means, qim.ZERO_BAND), 1.0)
            ratio = np.clip(ratio, 0.5, 1.5)
            # A non-canvas original embedded by size adaptation has only its
            # signal resampled, so the content-wide ratio over-corrects. Keep
            # whichever reading lies closer to the quantization lattice.
            fixed = means / ratio
            if qim.confidence(fixed, qcfg.q).mean() <= qim.confidence(means, qcfg.q).mean():
                means = fixed
    bits = qim.decode_mean(means, qcfg.q).ravel()
    return qim.Payload(bits), means


def decode_image(image, model=None, key: Optional[int] = None, cfg: PipelineConfig = PipelineConfig(),
                 mode: str = "template", gt: Optional[geo.RstParams] = None) -> DecodeReport:
    """Blind decode: only the image, the key and the model are used.

    ``mode='gt'`` replaces the template estimate with ``gt`` (expressed on the
    512 canvas, see :func:`geometry.effective_rst`); ``mode='none'`` skips
    recovery.
    """
    if mode not in RECOVERY_MODES:
        raise ValueError(f"mode must be one of {RECOVERY_MODES}")
    if key is not None and key != cfg.key:
        cfg = replace(cfg, key=key)
    gray, _ = _split_color(image)
    layout = cfg.layout()
    canvas = geo.resize(gray, (CANONICAL_SIZE, CANONICAL_SIZE))
    if mode == "template":
        if model is None:
            raise ValueError("template recovery needs a model")
        if model.layout_key != cfg.key:
            raise ValueError(f"model was trained for key {model.layout_key}, not {cfg.key}")
        forward = estimate_matrix(canvas, model, layout, cfg.refine_steps)
    elif mode == "gt":
        if gt is None:
            raise ValueError("ground-truth recovery needs gt parameters")
        forward = geo.rst_matrix(gt)
    else:
        forward = np.eye(3)
    recovered = canvas if mode == "none" else geo.warp(canvas, np.linalg.inv(forward))
    payload, means = decode_canvas(recovered, layout, cfg.codec, forward, gray.shape, cfg.compensate)
    conf = qim.confidence(means, cfg.codec.q)
    return DecodeReport(matrix_to_rst(forward), recovered, payload, conf, forward, mode)


def recover_image(image512, est: geo.RstParams) -> np.ndarray:
    """Undo ``est`` on a canvas image."""
    image512 = np.asarray(image512, dtype=np.float64)
    try:
        inv = geo.invert_rst(est, image512.shape[1], image512.shape[0])
    except ValueError:
        return geo.unapply_rst(image512, est)
    return geo.apply_rst(image512, inv)
