"""Template generator, template extractor and siamese RST matcher (torch).

Sizes are configurable through :class:`NetConfig` so that a tiny instance
can be built for gradient checks; the defaults give the 64 -> 512 -> 64
layout used by the pipeline.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.fft
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import RstParams, grid_points
from .layout import BlockLayout, resize_layout

# bounded output ranges of the matcher: (low, high) per parameter
PARAM_RANGES = ((-5.0, 95.0), (0.6, 1.6), (0.6, 1.6), (-0.35, 0.35), (-0.35, 0.35))


@dataclass(frozen=True)
class NetConfig:
    template: int = 64
    gen_channels: Tuple[int, ...] = (128, 64, 32)
    code_channels: int = 16
    ext_channels: Tuple[int, ...] = (32, 64, 128)
    features: int = 256
    head_channels: Tuple[int, int] = (32, 32)
    activation: str = "silu"
    # fixed front end of the extractor: subtract the 3x3 local mean, then amplify
    ext_highpass: bool = True
    ext_gain: float = 32.0

    def __post_init__(self):
        side = math.isqrt(self.features)
        if side * side != self.features:
            raise ValueError("feature count must be a perfect square")
        if side < 5:
            raise ValueError("feature map must be at least 5x5 for the two unpadded 3x3 stages")
        if len(self.gen_channels) != 3 or len(self.ext_channels) != 3:
            raise ValueError("generator and extractor have three stride-2 stages")

    @property
    def canvas(self) -> int:
        return self.template * 8

    @property
    def feature_side(self) -> int:
        return math.isqrt(self.features)


def _act(name):
    return {"silu": nn.SiLU, "tanh": nn.Tanh, "softplus": nn.Softplus}[name]()


class TemplateGenerator(nn.Module):
    """K_64 -> raw template noise on the full canvas.

    A learned positional code is stacked onto the binary input. Without it a
    block-constant input gives every block the same noise, which cannot
    approximate a non-repeating target.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.code = nn.Parameter(torch.randn(cfg.code_channels, cfg.template, cfg.template))
        c0, c1, c2 = cfg.gen_channels
        up = dict(kernel_size=3, stride=2, padding=1, output_padding=1)
        self.body = nn.Sequential(
            nn.ConvTranspose2d(1 + cfg.code_channels, c0, **up), _act(cfg.activation),
            nn.ConvTranspose2d(c0, c1, **up), _act(cfg.activation),
            nn.ConvTranspose2d(c1, c2, **up), _act(cfg.activation),
            nn.ConvTranspose2d(c2, 1, kernel_size=3, stride=1, padding=1),
        )

    def forward(self, k):
        code = self.code.unsqueeze(0).expand(k.shape[0], -1, -1, -1)
        return self.body(torch.cat([k, code], dim=1))


class TemplateExtractor(nn.Module):
    """Canvas image in [0, 1] -> template map in [0, 1]."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.highpass = cfg.ext_highpass
        self.gain = cfg.ext_gain
        c0, c1, c2 = cfg.ext_channels
        down = dict(kernel_size=3, stride=2, padding=1)
        self.body = nn.Sequential(
            nn.Conv2d(1, c0, **down), _act(cfg.activation),
            nn.Conv2d(c0, c1, **down), _act(cfg.activation),
            nn.Conv2d(c1, c2, **down), _act(cfg.activation),
            nn.Conv2d(c2, 1, kernel_size=3, stride=1, padding=1),
        )

    def forward(self, x):
        if self.highpass:
            # the template is weak, high-frequency noise; remove the smooth content
            x = x - F.avg_pool2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), 3, stride=1)
        else:
            x = x - 0.5
        return torch.sigmoid(self.body(self.gain * x))


class TemplateMatcher(nn.Module):
    """Siamese global features, concatenation, two 3x3 stages and a dense head."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.side = cfg.feature_side
        # one kernel the size of the whole template: a learned global transform
        self.feature = nn.Conv2d(1, cfg.features, kernel_size=cfg.template)
        h0, h1 = cfg.head_channels
        self.head = nn.Sequential(
            nn.Conv2d(2, h0, kernel_size=3), _act(cfg.activation),
            nn.Conv2d(h0, h1, kernel_size=3), _act(cfg.activation),
        )
        self.out = nn.Linear(h1 * (self.side - 4) ** 2, 5)
        lo = torch.tensor([r[0] for r in PARAM_RANGES])
        hi = torch.tensor([r[1] for r in PARAM_RANGES])
        self.register_buffer("lo", lo)
        self.register_buffer("span", hi - lo)

    def features(self, k):
        return self.feature(k).view(k.shape[0], 1, self.side, self.side)

    def forward(self, k_ext, k_orig):
        if k_orig.shape[0] != k_ext.shape[0]:
            k_orig = k_orig.expand(k_ext.shape[0], -1, -1, -1)
        f = torch.cat([self.features(k_ext), self.features(k_orig)], dim=1)
        z = self.out(self.head(f).flatten(1))
        return self.lo + self.span * torch.sigmoid(z)


def xavier_init(module: nn.Module, generator: Optional[torch.Generator] = None):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


# ---------------------------------------------------------------- geometry in torch


def unit_matrices(params: torch.Tensor) -> torch.Tensor:
    """(B, 5) RST rows -> (B, 3, 3) forward maps in unit-square coordinates."""
    R, Sx, Sy, Tx, Ty = params.unbind(-1)
    rad = torch.deg2rad(R)
    c, s = torch.cos(rad), torch.sin(rad)
    a00, a01 = c * Sx, s * Sy
    a10, a11 = -s * Sx, c * Sy
    t0 = 0.5 - 0.5 * (a00 + a01) - Tx
    t1 = 0.5 - 0.5 * (a10 + a11) - Ty
    zero, one = torch.zeros_like(R), torch.ones_like(R)
    rows = [torch.stack([a00, a01, t0], -1), torch.stack([a10, a11, t1], -1),
            torch.stack([zero, zero, one], -1)]
    return torch.stack(rows, dim=-2)


def warp_tensor(x: torch.Tensor, forward: torch.Tensor, pad_mode: str = "zeros") -> torch.Tensor:
    """Move content of ``x`` (B, C, H, W) by unit-square maps ``forward`` (B, 3, 3)."""
    inv = torch.linalg.inv(forward)
    # grid_sample works in [-1, 1]; u = (g + 1) / 2
    to_unit = torch.tensor([[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]], dtype=x.dtype)
    from_unit = torch.tensor([[2.0, 0.0, -1.0], [0.0, 2.0, -1.0], [0.0, 0.0, 1.0]], dtype=x.dtype)
    theta = (from_unit @ inv @ to_unit)[:, :2]
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode=pad_mode, align_corners=False)


_GRID_CACHE = {}


def loss_d(est: torch.Tensor, gt: torch.Tensor, S: int = 10) -> torch.Tensor:
    """Mean grid-point displacement (squared, unit-square units) over a batch."""
    key = (S, est.dtype)
    if key not in _GRID_CACHE:
        pts = grid_points(S)
        _GRID_CACHE[key] = torch.tensor(np.concatenate([pts, np.ones((S * S, 1))], 1), dtype=est.dtype)
    pts = _GRID_CACHE[key]
    diff = (unit_matrices(est) - unit_matrices(gt))[:, :2]  # (B, 2, 3)
    d = pts @ diff.transpose(1, 2)  # (B, S*S, 2)
    return (d * d).sum(-1).mean()


def loss_g(t_raw: torch.Tensor) -> torch.Tensor:
    """Average energy of the raw template (mean of squares over the canvas)."""
    return (t_raw * t_raw).mean()


def loss_e(k_ext: torch.Tensor, k_true: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if k_true.shape[0] != gt.shape[0]:
        k_true = k_true.expand(gt.shape[0], -1, -1, -1)
    target = warp_tensor(k_true, unit_matrices(gt))
    return ((k_ext - target) ** 2).mean()


# ---------------------------------------------------------------- pre-training target


def zigzag_order(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the JPEG-style zigzag scan of an n x n grid."""
    r, c = np.indices((n, n))
    r, c = r.ravel(), c.ravel()
    s = r + c
    # odd diagonals run downwards (row ascending), even ones upwards
    order = np.lexsort((np.where(s % 2 == 1, r, -r), s))
    return r[order], c[order]


def pretrain_target(size: int = 512, seed: int = 0) -> np.ndarray:
    """Mid-frequency noise: N(0, 1) values on zigzag positions [L/4, 3L/4), inverse DCT."""
    L = size * size
    r, c = zigzag_order(size)
    lo, hi = L // 4, (3 * L) // 4
    coef = np.zeros((size, size))
    coef[r[lo:hi], c[lo:hi]] = np.random.default_rng(seed).standard_normal(hi - lo)
    return scipy.fft.idctn(coef, norm="ortho")


# ---------------------------------------------------------------- model container


@dataclass
class TemplateModel:
    cfg: NetConfig
    generator: TemplateGenerator
    extractor: TemplateExtractor
    matcher: TemplateMatcher
    layout_key: int
    lam: float = 0.2
    train_meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, layout_key: int, cfg: NetConfig = NetConfig(), seed: int = 0, lam: float = 0.2,
               dtype=torch.float32):
        g = torch.Generator().manual_seed(int(seed))
        with torch.random.fork_rng():
            torch.manual_seed(int(seed))
            gen, ext, mat = TemplateGenerator(cfg), TemplateExtractor(cfg), TemplateMatcher(cfg)
        for net in (gen, ext, mat):
            xavier_init(net, g)
        for net in (gen, ext, mat):
            net.to(dtype)
        return cls(cfg, gen, ext, mat, int(layout_key), lam, {"epochs": 0, "pretrain_steps": 0})

    @property
    def dtype(self):
        return self.generator.code.dtype

    def parameters(self):
        for net in (self.generator, self.extractor, self.matcher):
            yield from net.parameters()

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def k_tensor(self, layout: BlockLayout) -> torch.Tensor:
        K = resize_layout(layout, self.cfg.template).K_r
        return torch.tensor(K, dtype=self.dtype).view(1, 1, *K.shape)

    def mask_tensor(self, layout: BlockLayout) -> torch.Tensor:
        K = resize_layout(layout, self.cfg.canvas).K_r
        return torch.tensor(K, dtype=self.dtype).view(1, 1, *K.shape)

    def raw_noise(self, layout: BlockLayout) -> torch.Tensor:
        return self.generator(self.k_tensor(layout))

    @torch.no_grad()
    def generate_noise(self, layout: BlockLayout) -> np.ndarray:
        """Masked template noise T_n in pixel units; exactly zero on watermark blocks."""
        t = self.raw_noise(layout) * self.mask_tensor(layout)
        return t[0, 0].double().numpy().copy()

    @torch.no_grad()
    def extract_template(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.cfg.canvas, self.cfg.canvas):
            raise ValueError(f"extractor expects a {self.cfg.canvas}x{self.cfg.canvas} image")
        x = torch.tensor(image / 255.0, dtype=self.dtype).view(1, 1, *image.shape)
        return self.extractor(x)[0, 0].double().numpy().copy()

    @torch.no_grad()
    def match_templates(self, k_ext, k_orig) -> RstParams:
        t = self.cfg.template
        a = torch.tensor(np.asarray(k_ext), dtype=self.dtype).view(1, 1, t, t)
        b = torch.tensor(np.asarray(k_orig), dtype=self.dtype).view(1, 1, t, t)
        return RstParams.from_array(self.matcher(a, b)[0].double().numpy())

    def config_record(self) -> dict:
        rec = asdict(self.cfg)
        rec.update(layout_key=self.layout_key, lam=self.lam)
        return rec
