"""Pre-training and end-to-end training loops for :class:`TemplateModel`."""

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from . import nets
from .layout import generate_layout

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class PretrainReport:
    steps: int
    final_mse: float
    converged: bool
    history: List[float] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "ok" if self.converged else "budget_exhausted"


def pretrain_generator(model: nets.TemplateModel, target: np.ndarray, budget: int = 3000,
                       threshold: float = 0.1, lr: float = 1e-3, seed: int = 0,
                       log_every: int = 100) -> PretrainReport:
    """Fit the raw generator output to ``target`` until MSE < ``threshold``.

    Running out of ``budget`` steps returns a report with ``converged=False``
    and emits a warning instead of pretending success.
    """
    torch.manual_seed(seed)
    layout = generate_layout(model.layout_key, size=model.cfg.canvas)
    k = model.k_tensor(layout)
    tgt = torch.tensor(np.asarray(target), dtype=model.dtype).view_as(model.raw_noise(layout))
    opt = torch.optim.Adam(model.generator.parameters(), lr=lr, eps=1e-8)
    history = []
    mse = math.inf
    step = 0
    while step < budget:
        opt.zero_grad()
        loss = ((model.generator(k) - tgt) ** 2).mean()
        mse = loss.item()
        history.append(mse)
        if not math.isfinite(mse):
            raise TrainingDiverged(f"pre-training loss became {mse} at step {step}")
        if mse < threshold:
            break
        loss.backward()
        opt.step()
        step += 1
        if log_every and step % log_every == 0:
            log.info("pretrain step %d mse %.4f", step, mse)
    model.train_meta["pretrain_steps"] = model.train_meta.get("pretrain_steps", 0) + step
    model.train_meta["pretrain_mse"] = mse
    report = PretrainReport(step, mse, mse < threshold, history)
    if not report.converged:
        warnings.warn(f"generator pre-training stopped at MSE {mse:.4f} after {step} steps "
                      f"(threshold {threshold})", RuntimeWarning)
    return report


# ---------------------------------------------------------------- attacks inside the graph


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    eps: float = 1e-8
    batch: int = 32
    lam: float = 0.2
    # L_g is divided by this before weighting; 1.0 keeps pixel units
    energy_norm: float = 1.0
    le_warmup_epochs: int = 0
    le_weight: float = 1.0
    freeze_generator: bool = False
    rot_range: tuple = (0.0, 90.0)
    scale_range: tuple = (0.7, 1.5)
    trans_max: float = 0.3
    noise_max: float = 200.0
    jpeg_range: tuple = (30, 100)
    p_noise: float = 0.5
    p_jpeg: float = 0.5
    # probability that a scale is applied inside the canvas rather than as a resize
    p_canvas_scale: float = 0.5
    # probability that a sample keeps its geometry (no resampling at all)
    p_identity: float = 0.1


@dataclass
class BatchAttack:
    params: np.ndarray  # (B, 5) effective canvas transform
    resample: np.ndarray  # (B, 2) resize factors undone by the decoder, 1 for none
    noise_var: np.ndarray
    jpeg_q: np.ndarray  # 0 for no JPEG


def sample_batch_attack(rng: np.random.Generator, n: int, cfg: TrainConfig) -> BatchAttack:
    R = rng.uniform(*cfg.rot_range, n)
    S = rng.uniform(*cfg.scale_range, (n, 2))
    T = rng.uniform(-cfg.trans_max, cfg.trans_max, (n, 2))
    canvas = rng.random(n) < cfg.p_canvas_scale
    eff_S = np.where(canvas[:, None], S, 1.0)
    resample = np.where(canvas[:, None], 1.0, S)
    noise = np.where(rng.random(n) < cfg.p_noise, rng.uniform(0, cfg.noise_max, n), 0.0)
    jpeg = np.where(rng.random(n) < cfg.p_jpeg, rng.integers(cfg.jpeg_range[0], cfg.jpeg_range[1] + 1, n), 0)
    keep = rng.random(n) < cfg.p_identity
    params = np.column_stack([R, eff_S, T])
    params[keep] = (0.0, 1.0, 1.0, 0.0, 0.0)
    resample[keep] = 1.0
    return BatchAttack(params, resample, noise, jpeg)


def _jpeg_array(arr: np.ndarray, quality: int) -> np.ndarray:
    arr = np.nan_to_num(arr, nan=0.0)
    img = Image.fromarray(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf), dtype=np.float64)


def attack_tensor(x: torch.Tensor, atk: BatchAttack, gen: torch.Generator) -> torch.Tensor:
    """Differentiable attack of a (B, 1, H, W) batch in pixel units.

    JPEG is not differentiable; its effect is added as a constant
    (straight-through), so gradients pass as if it were the identity.
    """
    params = torch.tensor(atk.params, dtype=x.dtype)
    y = nets.warp_tensor(x, nets.unit_matrices(params))
    h, w = x.shape[-2:]
    rows = []
    for i in range(x.shape[0]):
        yi = y[i:i + 1]
        sx, sy = atk.resample[i]
        if (sx, sy) != (1.0, 1.0):
            size = (max(1, round(h * sy)), max(1, round(w * sx)))
            yi = torch.nn.functional.interpolate(yi, size=size, mode="bilinear", align_corners=False)
            yi = torch.nn.functional.interpolate(yi, size=(h, w), mode="bilinear", align_corners=False)
        if atk.noise_var[i] > 0:
            noise = torch.randn(yi.shape, generator=gen, dtype=x.dtype)
            yi = yi + math.sqrt(atk.noise_var[i]) * noise
        if atk.jpeg_q[i] > 0:
            jp = _jpeg_array(yi.detach()[0, 0].double().numpy(), int(atk.jpeg_q[i]))
            yi = yi + (torch.tensor(jp, dtype=x.dtype).view_as(yi) - yi).detach()
        rows.append(yi)
    return torch.cat(rows, 0)


# ---------------------------------------------------------------- end-to-end training


@dataclass
class TrainReport:
    curve: List[dict]
    epochs: int

    def write_csv(self, path):
        write_curve_csv(self.curve, path)


def write_curve_csv(curve: Sequence[dict], path) -> None:
    from .io_utils import atomic_write_text

    if not curve:
        atomic_write_text(path, "")
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(curve[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in curve:
        writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def end_to_end_loss(model: nets.TemplateModel, images: torch.Tensor, atk: BatchAttack,
                    gen: torch.Generator, cfg: TrainConfig, with_le: bool = False):
    """Total loss and its parts for one batch of canvas images (B, 1, U, U) in pixel units."""
    layout = generate_layout(model.layout_key, size=model.cfg.canvas)
    k = model.k_tensor(layout)
    raw = model.generator(k)
    marked = images + raw * model.mask_tensor(layout)
    attacked = attack_tensor(marked, atk, gen)
    k_ext = model.extractor(attacked / 255.0)
    gt = torch.tensor(atk.params, dtype=images.dtype)
    est = model.matcher(k_ext, k)
    lg = nets.loss_g(raw)
    ld = nets.loss_d(est, gt)
    total = cfg.lam * lg / cfg.energy_norm + (1.0 - cfg.lam) * ld
    parts = {"L_g": lg.item(), "L_d": ld.item()}
    if with_le:
        le = nets.loss_e(k_ext, k, gt)
        total = total + cfg.le_weight * le
        parts["L_e"] = le.item()
    return total, parts


@torch.no_grad()
def heldout_loss_d(model: nets.TemplateModel, images: np.ndarray, seed: int, cfg: TrainConfig,
                   batch: int = 16) -> float:
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for i in range(0, len(images), batch):
        x = torch.tensor(images[i:i + batch, None], dtype=model.dtype)
        atk = sample_batch_attack(rng, x.shape[0], cfg)
        _, parts = end_to_end_loss(model, x, atk, gen, cfg)
        losses.append(parts["L_d"] * x.shape[0])
    return float(np.sum(losses) / len(images))


def train_end_to_end(model: nets.TemplateModel, images: np.ndarray, epochs: int, seed: int = 0,
                     cfg: TrainConfig = TrainConfig(), heldout: Optional[np.ndarray] = None,
                     curve_path=None, progress: Optional[Callable[[dict], None]] = None) -> TrainReport:
    """Optimise lam * L_g + (1 - lam) * L_d over (image, attack) pairs.

    ``images`` is an (n, U, U) array in pixel units. Each epoch draws fresh
    attacks from a generator seeded by ``(seed, epoch)``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != (model.cfg.canvas,) * 2:
        raise ValueError(f"expected (n, {model.cfg.canvas}, {model.cfg.canvas}) images")
    torch.manual_seed(seed)
    nets_to_train = [model.extractor, model.matcher]
    if not cfg.freeze_generator:
        nets_to_train.insert(0, model.generator)
    params = [p for net in nets_to_train for p in net.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.lr, eps=cfg.eps)
    curve = []
    start = model.train_meta.get("epochs", 0)
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, start + epoch])
        gen = torch.Generator().manual_seed(seed * 100003 + start + epoch)
        order = rng.permutation(len(images))
        sums = {}
        with_le = epoch < cfg.le_warmup_epochs
        for b0 in range(0, len(order), cfg.batch):
            idx = order[b0:b0 + cfg.batch]
            x = torch.tensor(images[idx, None], dtype=model.dtype)
            atk = sample_batch_attack(rng, len(idx), cfg)
            opt.zero_grad()
            total, parts = end_to_end_loss(model, x, atk, gen, cfg, with_le)
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"loss is {total.item()} at epoch {start + epoch}, batch {b0 // cfg.batch}; parts {parts}")
            total.backward()
            opt.step()
            parts["loss"] = total.item()
            for key, v in parts.items():
                sums[key] = sums.get(key, 0.0) + v * len(idx)
        row = {"epoch": start + epoch}
        row.update({key: v / len(images) for key, v in sums.items()})
        if heldout is not None and len(heldout):
            row["heldout_L_d"] = heldout_loss_d(model, heldout, seed + 7919, cfg)
        curve.append(row)
        log.info("epoch %s", row)
        if progress:
            progress(row)
        model.train_meta["epochs"] = start + epoch + 1
    model.train_meta.setdefault("curve", []).extend(curve)
    report = TrainReport(curve, epochs)
    if curve_path is not None:
        report.write_csv(curve_path)
    return report


def pretrain_matcher(model: nets.TemplateModel, steps: int, seed: int = 0, batch: int = 64,
                     cfg: TrainConfig = TrainConfig(), blur: float = 0.15,
                     flip: float = 0.1) -> List[float]:
    """Warm up the matcher on warped copies of K_64 (no images involved).

    The synthetic extractions are the ground-truth warp with mild corruption:
    a soft blend towards 0.5 and a fraction of randomly flipped cells.
    """
    layout = generate_layout(model.layout_key, size=model.cfg.canvas)
    k = model.k_tensor(layout)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.matcher.parameters(), lr=cfg.lr, eps=cfg.eps)
    history = []
    for _ in range(steps):
        atk = sample_batch_attack(rng, batch, cfg)
        gt = torch.tensor(atk.params, dtype=model.dtype)
        with torch.no_grad():
            warped = nets.warp_tensor(k.expand(batch, -1, -1, -1), nets.unit_matrices(gt))
            noise = torch.rand(warped.shape, generator=gen, dtype=model.dtype)
            warped = torch.where(noise < flip, 1.0 - warped, warped)
            warped = (1 - blur) * warped + blur * 0.5
        opt.zero_grad()
        loss = nets.loss_d(model.matcher(warped, k), gt)
        if not torch.isfinite(loss):
            raise TrainingDiverged("matcher warm-up diverged")
        loss.backward()
        opt.step()
        history.append(loss.item())
    return history


def collect_extractions(model: nets.TemplateModel, images: np.ndarray, samples: int, seed: int = 0,
                        cfg: TrainConfig = TrainConfig(), batch: int = 16):
    """Extractor outputs on attacked stego canvases, with their attack parameters.

    Returns ``(k_ext, params)`` of shapes (samples, 1, V, V) and (samples, 5).
    Nothing is trained; the generator and extractor are used as they are.
    """
    images = np.asarray(images, dtype=np.float64)
    layout = generate_layout(model.layout_key, size=model.cfg.canvas)
    k = model.k_tensor(layout)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    outs, params = [], []
    with torch.no_grad():
        noise = model.generator(k) * model.mask_tensor(layout)
        for b0 in range(0, samples, batch):
            n = min(batch, samples - b0)
            idx = rng.integers(0, len(images), n)
            atk = sample_batch_attack(rng, n, cfg)
            x = torch.tensor(images[idx, None], dtype=model.dtype) + noise
            outs.append(model.extractor(attack_tensor(x, atk, gen) / 255.0))
            params.append(atk.params)
    return torch.cat(outs), torch.tensor(np.concatenate(params), dtype=model.dtype)


def tune_matcher(model: nets.TemplateModel, k_ext: torch.Tensor, params: torch.Tensor, epochs: int,
                 seed: int = 0, batch: int = 64, lr: float = 1e-3) -> List[float]:
    """Fit the matcher alone to collected extractions (see :func:`collect_extractions`).

    Returns the mean L_d of every epoch.
    """
    layout = generate_layout(model.layout_key, size=model.cfg.canvas)
    k = model.k_tensor(layout)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.matcher.parameters(), lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(k_ext))
        total = 0.0
        for b0 in range(0, len(order), batch):
            idx = torch.as_tensor(order[b0:b0 + batch])
            opt.zero_grad()
            loss = nets.loss_d(model.matcher(k_ext[idx], k), params[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged("matcher tuning diverged")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(order))
    return history


def pretrain_extractor(model: nets.TemplateModel, images: np.ndarray, steps: int, seed: int = 0,
                       batch: int = 32, crop: Optional[int] = None, cfg: TrainConfig = TrainConfig(),
                       log_every: int = 100) -> List[float]:
    """Warm up the extractor with L_e on random crops of attacked stego images.

    The extractor is fully convolutional with a small receptive field, so
    crops aligned to its output grid give the same per-cell targets as full
    canvases at a fraction of the cost. The generator is not updated here.
    """
    images = np.asarray(images, dtype=np.float64)
    U, V = model.cfg.canvas, model.cfg.template
    cell = U // V
    crop = min(128, U) if crop is None else crop
    if crop % cell or crop > U:
        raise ValueError(f"crop must be a multiple of {cell} and at most {U}")
    layout = generate_layout(model.layout_key, size=U)
    k = model.k_tensor(layout)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.extractor.parameters(), lr=cfg.lr, eps=cfg.eps)
    with torch.no_grad():
        noise = model.generator(k) * model.mask_tensor(layout)
    history = []
    cc = crop // cell
    for step in range(steps):
        idx = rng.integers(0, len(images), batch)
        atk = sample_batch_attack(rng, batch, cfg)
        gt = torch.tensor(atk.params, dtype=model.dtype)
        with torch.no_grad():
            x = torch.tensor(images[idx, None], dtype=model.dtype) + noise
            y = attack_tensor(x, atk, gen) / 255.0
            target = nets.warp_tensor(k.expand(batch, -1, -1, -1), nets.unit_matrices(gt))
        oy = rng.integers(0, V - cc + 1, batch)
        ox = rng.integers(0, V - cc + 1, batch)
        xs = torch.stack([y[i, :, oy[i] * cell:(oy[i] + cc) * cell, ox[i] * cell:(ox[i] + cc) * cell]
                          for i in range(batch)])
        ts = torch.stack([target[i, :, oy[i]:oy[i] + cc, ox[i]:ox[i] + cc] for i in range(batch)])
        opt.zero_grad()
        loss = ((model.extractor(xs) - ts) ** 2).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged("extractor warm-up diverged")
        loss.backward()
        opt.step()
        history.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            log.info("extractor step %d L_e %.4f", step + 1, float(np.mean(history[-log_every:])))
    return history
