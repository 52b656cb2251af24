"""Trimap generation and closed-form alpha matting for grayscale images.

The matting Laplacian is the standard local-linear-model one, specialised
to a single intensity channel: each window contributes

    delta_ij - (1 + (I_i - mu)(I_j - mu) / (var + eps/|w|)) / |w|

so the 3x3 colour covariance of the colour formulation becomes a scalar
variance.  Only windows touching UNKNOWN pixels are assembled, and the
quadratic form is minimised over the unknowns with the constrained pixels
moved to the right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import DegenerateTrimap, SolverDiverged
from .raster import BACKGROUND, FOREGROUND, UNKNOWN, as_gray, as_prob, check_same_shape


@dataclass(frozen=True)
class MattingConfig:
    fg_threshold: float = 0.95
    bg_threshold: float = 0.05
    window_radius: int = 1
    eps: float = 1e-5
    solver_tolerance: float = 1e-6
    max_iterations: int = 2000
    binarize_threshold: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.bg_threshold < self.fg_threshold <= 1.0:
            raise ValueError("need 0 <= bg_threshold < fg_threshold <= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")


def make_trimap(mask, cfg: MattingConfig = MattingConfig()) -> np.ndarray:
    prob = as_prob(mask)
    tri = np.full(prob.shape, UNKNOWN, dtype=np.uint8)
    tri[prob >= cfg.fg_threshold] = FOREGROUND
    tri[prob <= cfg.bg_threshold] = BACKGROUND
    if not (tri == FOREGROUND).any():
        raise DegenerateTrimap("trimap has no foreground pixel")
    return tri


def _window_indices(shape, radius, centers=None):
    """Flat pixel indices of every (2r+1)^2 window, one row per window."""
    h, w = shape
    idx = np.arange(h * w).reshape(h, w)
    size = 2 * radius + 1
    win = sliding_window_view(idx, (size, size)).reshape(h - size + 1, w - size + 1, size * size)
    if centers is not None:
        inner = centers[radius:h - radius, radius:w - radius]
        return win[inner]
    return win.reshape(-1, size * size)


def matting_laplacian(image, cfg: MattingConfig = MattingConfig(), centers=None):
    """Sparse matting Laplacian of a gray image.

    ``centers`` optionally restricts assembly to windows centred on the true
    pixels of a boolean mask; rows of pixels fully covered by the chosen
    windows are then exact.
    """
    img = as_gray(image).astype(np.float64) / 255.0
    h, w = img.shape
    r = cfg.window_radius
    n = h * w
    if h < 2 * r + 1 or w < 2 * r + 1:
        return sp.csr_matrix((n, n))
    win = _window_indices(img.shape, r, centers)
    if len(win) == 0:
        return sp.csr_matrix((n, n))
    size = win.shape[1]
    vals = img.ravel()[win]
    mu = vals.mean(axis=1, keepdims=True)
    var = vals.var(axis=1, keepdims=True)
    d = vals - mu
    inv = 1.0 / (var + cfg.eps / size)
    # (k, size, size) local blocks
    blocks = np.eye(size)[None] - (1.0 + d[:, :, None] * d[:, None, :] * inv[:, :, None]) / size
    rows = np.repeat(win, size, axis=1).ravel()
    cols = np.tile(win, (1, size)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


def solve_matte(image, trimap, cfg: MattingConfig = MattingConfig()) -> np.ndarray:
    """Alpha matte in ``[0, 1]`` honouring the trimap exactly on constrained pixels."""
    img = as_gray(image)
    tri = np.asarray(trimap)
    check_same_shape(img, tri)
    fg = tri == FOREGROUND
    bg = tri == BACKGROUND
    unknown = ~(fg | bg)
    alpha = fg.astype(np.float64)
    if not unknown.any():
        return alpha
    if not fg.any() or not bg.any():
        raise DegenerateTrimap("matting needs at least one foreground and one background pixel")

    r = cfg.window_radius
    centers = ndimage.binary_dilation(unknown, structure=np.ones((2 * r + 1,) * 2, bool))
    lap = matting_laplacian(img, cfg, centers)
    u = np.flatnonzero(unknown.ravel())
    c = np.flatnonzero(~unknown.ravel())
    lap_u = lap[u]
    a_uu = lap_u[:, u].tocsr()
    rhs = -(lap_u[:, c] @ alpha.ravel()[c])

    diag = a_uu.diagonal()
    # unknown pixels that no full window covers (image corners) have an empty row
    lonely = diag <= 0
    if lonely.any():
        a_uu = a_uu + sp.diags(lonely.astype(np.float64))
        diag = a_uu.diagonal()
    precond = sp.diags(1.0 / diag)
    x0 = np.full(len(u), 0.5)
    sol, info = spla.cg(a_uu, rhs, x0=x0, rtol=cfg.solver_tolerance, atol=0.0,
                        maxiter=cfg.max_iterations, M=precond)
    if info != 0:
        raise SolverDiverged(f"CG did not reach rtol={cfg.solver_tolerance} in {cfg.max_iterations} iterations")
    out = alpha.ravel().copy()
    out[u] = np.clip(sol, 0.0, 1.0)
    return out.reshape(alpha.shape)


def binarize_matte(matte, cfg: MattingConfig = MattingConfig()) -> np.ndarray:
    return np.asarray(matte) > cfg.binarize_threshold
