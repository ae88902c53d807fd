"""Robustness and quality experiments.

A suite is a grid of attack cells: rows are one geometric attack family
(rotation, scaling or translation), columns a signal attack (Gaussian noise
variance or JPEG quality). Each cell is decoded with every requested recovery
mode and reported as mean BER over the image set. A random-guess row is
always appended as a sanity baseline.
"""

import configparser
import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from . import pipeline as pipe
from . import qim
from .io_utils import atomic_write_text, dumps_json
from .metrics import ber

ROTATIONS = (10.0, 30.0, 50.0, 70.0, 90.0)
SCALINGS = (0.7, 0.9, 1.2, 1.5)
TRANSLATIONS = (0.03, 0.09, 0.15, 0.21, 0.27)
NOISE_VARS = (25.0, 50.0, 100.0, 200.0)
JPEG_QS = (100, 70, 30)

# suite name -> (geometric family, default rows, signal family, default columns)
SUITES = {
    "rotation_noise": ("rotation", ROTATIONS, "noise", NOISE_VARS),
    "scaling_noise": ("scaling", SCALINGS, "noise", NOISE_VARS),
    "translation_noise": ("translation", TRANSLATIONS, "noise", NOISE_VARS),
    "rotation_jpeg": ("rotation", ROTATIONS, "jpeg", JPEG_QS),
    "scaling_jpeg": ("scaling", SCALINGS, "jpeg", JPEG_QS),
    "translation_jpeg": ("translation", TRANSLATIONS, "jpeg", JPEG_QS),
    "rotation": ("rotation", ROTATIONS, "none", ("none",)),
    "scaling": ("scaling", SCALINGS, "none", ("none",)),
    "translation": ("translation", TRANSLATIONS, "none", ("none",)),
}
SUITE_GROUPS = {
    "rst": ("rotation", "scaling", "translation"),
    "tables": ("rotation_noise", "scaling_noise", "translation_noise",
               "rotation_jpeg", "scaling_jpeg", "translation_jpeg"),
}


def expand_suites(name: str) -> Tuple[str, ...]:
    if name in SUITE_GROUPS:
        return SUITE_GROUPS[name]
    if name in SUITES:
        return (name,)
    raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES) + sorted(SUITE_GROUPS)}")


def make_attack(family: str, value: float, signal: str, level) -> geo.AttackSpec:
    if family == "rotation":
        rst = geo.RstParams(R=float(value))
    elif family == "scaling":
        rst = geo.RstParams(Sx=float(value), Sy=float(value))
    elif family == "translation":
        rst = geo.RstParams(Tx=float(value), Ty=float(value))
    else:
        raise ValueError(f"unknown geometric family {family!r}")
    noise = float(level) if signal == "noise" else 0.0
    jpeg = int(level) if signal == "jpeg" else None
    return geo.AttackSpec(rst, noise, jpeg, "resize")


@dataclass(frozen=True)
class ExperimentManifest:
    images: str = "builtin:test"
    n_images: int = 50
    suite: str = "rst"
    rows: Optional[Tuple[float, ...]] = None
    cols: Optional[Tuple] = None
    recovery: Tuple[str, ...] = ("template", "gt", "none")
    seed: int = 0
    key: int = 7
    output: str = "results"

    def __post_init__(self):
        expand_suites(self.suite)
        bad = set(self.recovery) - set(pipe.RECOVERY_MODES)
        if bad:
            raise ValueError(f"unknown recovery modes {sorted(bad)}")
        if self.n_images < 1:
            raise ValueError("need at least one image")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["recovery"] = list(self.recovery)
        return rec

    @classmethod
    def from_ini(cls, path) -> "ExperimentManifest":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(f"cannot read manifest {path}")
        if "experiment" not in cp:
            raise ValueError("manifest needs an [experiment] section")
        s = cp["experiment"]

        def floats(key):
            return tuple(float(v) for v in s[key].split(",")) if s.get(key) else None

        cols = s.get("cols")
        return cls(
            images=s.get("images", "builtin:test"),
            n_images=s.getint("n_images", 50),
            suite=s.get("suite", "rst"),
            rows=floats("rows"),
            cols=tuple(c.strip() for c in cols.split(",")) if cols else None,
            recovery=tuple(m.strip() for m in s.get("recovery", "template,gt,none").split(",")),
            seed=s.getint("seed", 0),
            key=s.getint("key", 7),
            output=s.get("output", "results"),
        )


@dataclass
class SuiteTable:
    suite: str
    family: str
    signal: str
    rows: Tuple
    cols: Tuple
    # (row value, recovery mode) -> list of mean BER per column
    cells: Dict[Tuple, List[float]] = field(default_factory=dict)
    stds: Dict[Tuple, List[float]] = field(default_factory=dict)
    random_guess: List[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.suite, self.family, "recover"] + [f"{self.signal}={c}" for c in self.cols])
        for (row, mode), vals in self.cells.items():
            w.writerow([self.suite, _fmt_row(self.family, row), mode] + [f"{v:.4f}" for v in vals])
        w.writerow([self.suite, "random guess", "-"] + [f"{v:.4f}" for v in self.random_guess])
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = f"| {self.family} | recover | " + " | ".join(f"{self.signal} {c}" for c in self.cols) + " |"
        sep = "|" + "---|" * (2 + len(self.cols))
        lines = [f"### {self.suite}", "", head, sep]
        for (row, mode), vals in self.cells.items():
            lines.append(f"| {_fmt_row(self.family, row)} | {mode} | " + " | ".join(f"{v:.3f}" for v in vals) + " |")
        lines.append("| random guess | - | " + " | ".join(f"{v:.3f}" for v in self.random_guess) + " |")
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {
            "suite": self.suite, "family": self.family, "signal": self.signal,
            "rows": list(self.rows), "cols": [str(c) for c in self.cols],
            "cells": [{"row": r, "recover": m, "mean_ber": v, "std_ber": self.stds[(r, m)]}
                      for (r, m), v in self.cells.items()],
            "random_guess": self.random_guess,
        }


def _fmt_row(family, value):
    if family == "rotation":
        return f"{value:g} deg"
    if family == "translation":
        return f"{100 * value:g}%"
    return f"{value:g}"


def load_manifest_images(manifest: ExperimentManifest) -> np.ndarray:
    from . import datasets

    if manifest.images.startswith("builtin:"):
        split = manifest.images.split(":", 1)[1] or "test"
        return datasets.builtin_corpus(split, manifest.n_images, seed=manifest.seed)
    paths = datasets.list_images(manifest.images)[: manifest.n_images]
    if not paths:
        raise FileNotFoundError(f"no images in {manifest.images}")
    return datasets.load_canvas_set(paths)


def prepare_stego(images: np.ndarray, model, cfg: pipe.PipelineConfig, seed: int):
    """Embed a seeded random payload into every image."""
    out = []
    for i, img in enumerate(images):
        payload = qim.Payload.random(cfg.capacity, seed=[seed, i])
        out.append((pipe.embed_image(img, payload, model, cfg).stego_image, payload))
    return out


def run_robustness_suite(manifest: ExperimentManifest, model=None,
                         cfg: Optional[pipe.PipelineConfig] = None, images: Optional[np.ndarray] = None,
                         stego=None, progress: Optional[Callable[[str], None]] = None) -> List[SuiteTable]:
    cfg = cfg or pipe.PipelineConfig(key=manifest.key)
    if "template" in manifest.recovery and model is None:
        raise ValueError("template recovery requested but no model given")
    if images is None and stego is None:
        images = load_manifest_images(manifest)
    if stego is None:
        stego = prepare_stego(images, model, cfg, manifest.seed)
    tables = []
    for s_idx, suite in enumerate(expand_suites(manifest.suite)):
        family, rows, signal, cols = SUITES[suite]
        rows = manifest.rows or rows
        cols = manifest.cols or cols
        table = SuiteTable(suite, family, signal, tuple(rows), tuple(cols))
        for r_idx, row in enumerate(rows):
            per_mode = {m: [[] for _ in cols] for m in manifest.recovery}
            for c_idx, col in enumerate(cols):
                atk = make_attack(family, row, signal, col)
                for i, (img, payload) in enumerate(stego):
                    seed = [manifest.seed, s_idx, r_idx, c_idx, i]
                    attacked = geo.apply_attack(img, atk, seed=np.random.SeedSequence(seed))
                    for mode in manifest.recovery:
                        rep = pipe.decode_image(attacked, model, cfg=cfg, mode=mode,
                                                gt=geo.effective_rst(atk))
                        per_mode[mode][c_idx].append(ber(rep.payload, payload))
            for mode in manifest.recovery:
                table.cells[(row, mode)] = [float(np.mean(v)) for v in per_mode[mode]]
                table.stds[(row, mode)] = [float(np.std(v)) for v in per_mode[mode]]
            if progress:
                progress(f"{suite} {_fmt_row(family, row)} done")
        rng = np.random.default_rng([manifest.seed, s_idx, 99])
        table.random_guess = [
            float(np.mean([ber(rng.integers(0, 2, len(p)), p) for _, p in stego])) for _ in cols]
        tables.append(table)
    return tables


def write_suite_outputs(tables: Sequence[SuiteTable], manifest: ExperimentManifest, out_dir=None) -> dict:
    """Write ``<suite>.csv``, ``<suite>.md`` and ``results.json``; return the JSON record."""
    out = Path(out_dir or manifest.output)
    record = {"manifest": manifest.to_record(), "tables": [t.to_record() for t in tables]}
    for t in tables:
        atomic_write_text(out / f"{t.suite}.csv", t.to_csv())
        atomic_write_text(out / f"{t.suite}.md", t.to_markdown())
    atomic_write_text(out / "results.json", dumps_json(record))
    return record


def quality_report(images: np.ndarray, model, cfg: pipe.PipelineConfig, seed: int = 0) -> dict:
    """Mean PSNR/SSIM of stego images and the template noise variance."""
    ps, ss = [], []
    for i, img in enumerate(images):
        payload = qim.Payload.random(cfg.capacity, seed=[seed, i])
        res = pipe.embed_image(img, payload, model, cfg)
        ps.append(res.psnr)
        ss.append(res.ssim)
    rec = {"n_images": len(images), "psnr_mean": float(np.mean(ps)), "ssim_mean": float(np.mean(ss)),
           "psnr_min": float(np.min(ps)), "ssim_min": float(np.min(ss))}
    if model is not None:
        layout = cfg.layout()
        noise = model.generate_noise(layout)
        mask = pipe.resize_layout(layout, noise.shape[0]).K_r.astype(bool)
        rec["template_variance"] = float(np.var(noise[mask]))
    return rec
