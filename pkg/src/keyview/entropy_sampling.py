"""Local image entropy and the pixel distribution used to draw training rays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_WINDOW = 9
DEFAULT_BINS = 256


@dataclass(frozen=True)
class EntropyMap:
    values: np.ndarray  # (H, W) bits

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def rgb_to_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def quantize(gray, bins: int) -> np.ndarray:
    q = np.floor(np.asarray(gray, dtype=np.float64) * bins).astype(np.int64)
    return np.clip(q, 0, bins - 1)


def entropy_terms(window: int) -> np.ndarray:
    """``-h log2 h`` for every possible count in a ``window x window`` patch."""
    n = window * window
    h = np.arange(n + 1, dtype=np.float64) / n
    out = np.zeros(n + 1)
    out[1:] = -(h[1:] * np.log2(h[1:]))
    return out


def histogram_entropy(counts) -> float:
    """Entropy in bits of a histogram given as raw counts (0 log 0 := 0)."""
    c = np.asarray(counts, dtype=np.float64)
    h = c[c > 0] / c.sum()
    return float(-(h * np.log2(h)).sum())


def _box_count(mask: np.ndarray, window: int) -> np.ndarray:
    r = window // 2
    padded = np.pad(mask.astype(np.int64), r, mode="edge")
    s = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    s[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = mask.shape
    return (s[window:window + h, window:window + w] - s[:h, window:window + w]
            - s[window:window + h, :w] + s[:h, :w])


def local_entropy_map(image, window: int = DEFAULT_WINDOW, bins: int = DEFAULT_BINS) -> EntropyMap:
    """Shannon entropy (bits) of the quantized histogram around every pixel.

    The square neighborhood is centered on the pixel and replicates edge
    pixels past the border. Per-bin terms are accumulated in ascending bin
    order, so the result is reproducible term for term.
    """
    if window < 3 or window % 2 == 0:
        raise InputError(f"window must be odd and >= 3, got {window}")
    if bins < 2:
        raise InputError(f"bins must be >= 2, got {bins}")
    gray = np.asarray(image, dtype=np.float64)
    if gray.ndim != 2:
        raise InputError("local_entropy_map expects a grayscale (H, W) image")
    q = quantize(gray, bins)
    terms = entropy_terms(window)
    e = np.zeros(q.shape)
    for level in np.unique(q):
        e += terms[_box_count(q == level, window)]
    return EntropyMap(e)


def to_distribution(em, floor: float = 0.0) -> np.ndarray:
    """Flat row-major sampling probabilities proportional to entropy.

    ``floor`` adds ``floor * mean(e)`` to every pixel before normalizing;
    an all-zero map falls back to uniform.
    """
    e = np.asarray(em.values if isinstance(em, EntropyMap) else em, dtype=np.float64).ravel()
    total = e.sum()
    if total <= 0:
        return np.full(e.size, 1.0 / e.size)
    w = e + floor * total / e.size
    return w / w.sum()


def sample_rays(dist, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Half the batch from ``dist``, half uniform, both with replacement."""
    if batch_size < 2 or batch_size % 2:
        raise InputError(f"batch size must be even and >= 2, got {batch_size}")
    dist = np.asarray(dist, dtype=np.float64)
    half = batch_size // 2
    informed = rng.choice(dist.size, size=half, p=dist)
    uniform = rng.integers(0, dist.size, size=half)
    return np.concatenate([informed, uniform])
