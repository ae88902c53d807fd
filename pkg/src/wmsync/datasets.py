"""Image sources: a reproducible offline corpus and a directory loader.

The built-in corpus draws random crops from the sample images bundled with
scikit-image and adds procedural 1/f textures. Training and test images come
from disjoint source photographs, so no test content is seen during training.
"""

from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image

from .layout import CANONICAL_SIZE

LUMA = np.array([0.299, 0.587, 0.114])

TEST_SOURCES = ("astronaut", "camera", "coffee", "chelsea", "rocket", "moon", "brick",
                "hubble_deep_field")
TRAIN_SOURCES = ("coins", "horse", "clock", "grass", "gravel", "immunohistochemistry",
                 "retina", "cell", "shepp_logan_phantom")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm"}


def to_gray(image) -> np.ndarray:
    """Luma of an RGB(A) image, or the image itself when already grayscale."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        return a
    if a.ndim == 3 and a.shape[2] in (3, 4):
        return a[..., :3] @ LUMA
    raise ValueError(f"unsupported image shape {a.shape}")


def _source(name: str) -> np.ndarray:
    import skimage.data

    img = to_gray(getattr(skimage.data, name)())
    if img.max() <= 1.0:  # some samples are float or boolean in [0, 1]
        img = img * 255.0
    return img


def _fit(img: np.ndarray, size: int) -> np.ndarray:
    pil = Image.fromarray(np.clip(img, 0, 255).astype(np.float32), mode="F")
    return np.asarray(pil.resize((size, size), Image.BICUBIC), dtype=np.float64)


def random_crop(img: np.ndarray, rng: np.random.Generator, size: int = CANONICAL_SIZE,
                min_frac: float = 0.5) -> np.ndarray:
    h, w = img.shape
    side = int(rng.uniform(min_frac, 1.0) * min(h, w))
    y = int(rng.integers(0, h - side + 1))
    x = int(rng.integers(0, w - side + 1))
    out = img[y:y + side, x:x + side]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    return np.clip(_fit(out, size), 0, 255)


def pink_texture(rng: np.random.Generator, size: int = CANONICAL_SIZE) -> np.ndarray:
    """Random 1/f^beta field rescaled to a random gray range."""
    beta = rng.uniform(1.6, 2.6)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f ** (beta / 2)
    spec[0, 0] = 0.0
    field = np.fft.irfft2(spec, s=(size, size))
    field = (field - field.min()) / (np.ptp(field) + 1e-12)
    lo = rng.uniform(0, 80)
    hi = rng.uniform(170, 255)
    return lo + (hi - lo) * field


def builtin_corpus(split: str, n: int, seed: int = 0, size: int = CANONICAL_SIZE,
                   texture_frac: float = 0.15) -> np.ndarray:
    """(n, size, size) float images in [0, 255] for ``split`` in {'train', 'test'}."""
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    names = TRAIN_SOURCES if split == "train" else TEST_SOURCES
    sources = [_source(name) for name in names]
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    out = np.empty((n, size, size))
    n_tex = int(round(texture_frac * n)) if split == "train" else 0
    for i in range(n):
        if i < n_tex:
            out[i] = pink_texture(rng, size)
        else:
            out[i] = random_crop(sources[i % len(sources)], rng, size)
    return out


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as float; colour images keep their channels."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "LA", "P"):
            im = im.convert("RGB")
        elif im.mode not in ("L", "RGB", "I;16", "I", "F"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64)


def save_image(path, image) -> None:
    from .io_utils import atomic_write_bytes
    import io

    arr = np.clip(np.floor(np.asarray(image, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def list_images(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_canvas_set(paths: Sequence, size: int = CANONICAL_SIZE) -> np.ndarray:
    """Grayscale images resized to the canvas, stacked."""
    from .geometry import resize

    return np.stack([resize(to_gray(load_image(p)), (size, size)) for p in paths])
