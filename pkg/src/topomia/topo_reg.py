"""Topographic regularizer on 2-D sheets of hidden activations.

Each sheet ``C`` is compared with a Gaussian-blurred copy ``C'`` of itself; the
penalty is the negated mean cosine similarity across sheets, so smooth,
spatially organized sheets score close to -1.

Boundary handling is mirror reflection that repeats the edge sample
(``d c b a | a b c d | d c b a``), which keeps the blur mean-preserving for a
symmetric normalized kernel. The same index map gives the exact adjoint used
by :func:`r_topo_grad`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError

DEFAULT_SIGMA = 1.0
DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class BlurKernel:
    sigma: float
    radius: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        side = 2 * self.radius + 1
        if w.shape != (side, side):
            raise ShapeMismatchError(f"kernel weights must be {side}x{side}, got {w.shape}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def gaussian(cls, sigma: float = DEFAULT_SIGMA, radius: int | None = None) -> "BlurKernel":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        if radius is None:
            radius = math.ceil(3 * sigma)
        offsets = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-0.5 * (offsets / sigma) ** 2)
        w = np.outer(g, g)
        return cls(sigma, radius, w / w.sum())

    @classmethod
    def identity(cls) -> "BlurKernel":
        """Radius-0 kernel; the sigma -> 0 limit of the Gaussian."""
        return cls(0.0, 0, np.ones((1, 1)))


@dataclass(frozen=True)
class TopoConfig:
    tau: float = 0.0
    sigma: float = DEFAULT_SIGMA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def kernel(self) -> BlurKernel:
        return _cached_gaussian(self.sigma)


@lru_cache(maxsize=32)
def _cached_gaussian(sigma: float) -> BlurKernel:
    return BlurKernel.gaussian(sigma)


@lru_cache(maxsize=64)
def _reflect_index(height: int, width: int, radius: int) -> np.ndarray:
    """Flat source index for every cell of the padded sheet."""
    idx = np.arange(height * width).reshape(height, width)
    return np.pad(idx, radius, mode="symmetric")


def _as_batch(maps) -> np.ndarray:
    if isinstance(maps, np.ndarray):
        arr = maps.astype(np.float64, copy=False)
        if arr.ndim == 2:
            arr = arr[None]
    else:
        maps = list(maps)
        if not maps:
            raise ValueError("at least one cortical map is required")
        shapes = {np.shape(m) for m in maps}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"cortical maps have differing shapes: {sorted(shapes)}")
        arr = np.stack([np.asarray(m, dtype=np.float64) for m in maps])
    if arr.ndim != 3:
        raise ShapeMismatchError(f"expected (N, H, W) maps, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("at least one cortical map is required")
    return arr


def gaussian_blur(maps: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Convolve each 2-D map with ``kernel`` under mirror padding.

    Accepts a single ``(H, W)`` map or a ``(N, H, W)`` stack; the output has the
    input's shape.
    """
    x = np.asarray(maps, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    n, h, w = x.shape
    r = kernel.radius
    padded = x.reshape(n, -1)[:, _reflect_index(h, w, r)]
    windows = sliding_window_view(padded, (2 * r + 1, 2 * r + 1), axis=(1, 2))
    # true convolution: flip the kernel before correlating
    out = np.einsum("nijab,ab->nij", windows, kernel.weights[::-1, ::-1])
    return out[0] if single else out


def gaussian_blur_adjoint(grads: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Adjoint of :func:`gaussian_blur` for a ``(N, H, W)`` stack."""
    g = np.asarray(grads, dtype=np.float64)
    n, h, w = g.shape
    r = kernel.radius
    side = 2 * r + 1
    flipped = kernel.weights[::-1, ::-1]
    padded = np.zeros((n, h + 2 * r, w + 2 * r))
    for a in range(side):
        for b in range(side):
            padded[:, a : a + h, b : b + w] += flipped[a, b] * g
    out = np.zeros((n, h * w))
    idx = _reflect_index(h, w, r).ravel()
    for k in range(n):
        np.add.at(out[k], idx, padded[k].ravel())
    return out.reshape(n, h, w)


def _cosines(x: np.ndarray, y: np.ndarray, epsilon: float):
    flat_x = x.reshape(len(x), -1)
    flat_y = y.reshape(len(y), -1)
    nx = np.linalg.norm(flat_x, axis=1)
    ny = np.linalg.norm(flat_y, axis=1)
    active = (nx >= epsilon) & (ny >= epsilon)
    dots = np.einsum("ij,ij->i", flat_x, flat_y)
    cos = np.zeros(len(x))
    cos[active] = dots[active] / (nx[active] * ny[active])
    return cos, nx, ny, active


def r_topo(maps, config: TopoConfig, kernel: BlurKernel | None = None) -> float:
    """Negated mean cosine between each map and its blurred copy.

    Maps whose raw or blurred norm falls below ``config.epsilon`` add 0.
    ``kernel`` overrides the Gaussian implied by ``config.sigma``.
    """
    x = _as_batch(maps)
    kernel = kernel or config.kernel()
    y = gaussian_blur(x, kernel)
    cos, *_ = _cosines(x, y, config.epsilon)
    return -math.fsum(cos) / len(x)


def r_topo_grad(maps, config: TopoConfig, kernel: BlurKernel | None = None) -> np.ndarray:
    """Gradient of :func:`r_topo` with respect to every activation.

    The blurred branch is differentiated too (no stop-gradient). Returns an
    array shaped ``(N, H, W)``.
    """
    x = _as_batch(maps)
    kernel = kernel or config.kernel()
    y = gaussian_blur(x, kernel)
    cos, nx, ny, active = _cosines(x, y, config.epsilon)
    n = len(x)
    nx_ = np.where(active, nx, 1.0)[:, None, None]
    ny_ = np.where(active, ny, 1.0)[:, None, None]
    c = cos[:, None, None]
    # d cos / dx (direct) and d cos / dy (to be pulled back through the blur)
    dx = y / (nx_ * ny_) - c * x / nx_**2
    dy = x / (nx_ * ny_) - c * y / ny_**2
    grad = dx + gaussian_blur_adjoint(dy, kernel)
    grad[~active] = 0.0
    return -grad / n


def total_loss(j_cap: float, r: float, tau: float) -> float:
    return j_cap + tau * r
