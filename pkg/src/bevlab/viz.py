"""Qualitative feature analysis: PCA color maps and correlation maps.

Images are [3, H, W] float arrays in [0, 1], row i = y cell, column
j = x cell of the BEV grid, written as binary PPM (P6).  The PCA basis
is fitted with a deflated power iteration so the package stays free of
dense linear-algebra dependencies in its production path; tests compare
it against a dense eigensolver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PcaBasis", "fit_pca", "project_onto_basis",
    "render_pca_topview", "render_correlation",
    "write_image", "read_image",
]

_POWER_SEED = 0x9CA
_CORR_EPS = 1e-8


@dataclass
class PcaBasis:
    mean: np.ndarray         # (N,)
    components: np.ndarray   # (3, N), orthonormal rows
    eigenvalues: np.ndarray  # (3,), non-increasing
    ranges: np.ndarray       # (3, 2): per-component (min, max) over the fit data


def fit_pca(features: np.ndarray, n_components: int = 3) -> PcaBasis:
    """Top principal components of (M, N) feature rows.

    Power iteration with deflation and per-step re-orthogonalization;
    the start vector is fixed-seeded, and each converged component is
    sign-normalized so its largest-magnitude coordinate is positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 4:
        raise ValueError(f"need at least 4 feature rows, got shape {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    if np.trace(cov) <= 0.0:
        raise ValueError("features have zero variance; PCA basis undefined")

    rng = np.random.default_rng(_POWER_SEED)
    n = cov.shape[0]
    comps = np.zeros((n_components, n))
    eigs = np.zeros(n_components)
    work = cov.copy()
    for c in range(n_components):
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        for _ in range(1000):
            w = work @ v
            for prev in comps[:c]:
                w -= (w @ prev) * prev
            norm = np.linalg.norm(w)
            if norm < 1e-30:
                # remaining spectrum is (numerically) zero; keep current v
                break
            w /= norm
            if np.linalg.norm(w - v) < 1e-13 or np.linalg.norm(w + v) < 1e-13:
                v = w
                break
            v = w
        for prev in comps[:c]:
            v -= (v @ prev) * prev
        v /= np.linalg.norm(v)
        top = np.argmax(np.abs(v))
        if v[top] < 0:
            v = -v
        comps[c] = v
        eigs[c] = float(v @ cov @ v)
        work = work - eigs[c] * np.outer(v, v)

    proj = xc @ comps.T
    ranges = np.stack([proj.min(axis=0), proj.max(axis=0)], axis=1)
    return PcaBasis(mean, comps, eigs, ranges)


def project_onto_basis(features: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """(M, N) rows → (M, 3) coordinates, min-max normalized to [0, 1]
    using the basis's stored ranges (colors stay comparable across scenes)."""
    proj = (features - basis.mean) @ basis.components.T
    span = basis.ranges[:, 1] - basis.ranges[:, 0]
    span = np.where(span > 0, span, 1.0)
    return np.clip((proj - basis.ranges[:, 0]) / span, 0.0, 1.0)


def _top_voxels(mask: np.ndarray):
    """Per BEV column, the highest voxel with mask > 0.

    Returns (ii, jj, kk) index arrays of non-empty columns.
    """
    z = mask.shape[0]
    stack = (mask > 0) * (np.arange(z) + 1)[:, None, None]
    top = stack.max(axis=0) - 1
    ii, jj = np.nonzero(top >= 0)
    return ii, jj, top[ii, jj]


def render_pca_topview(features: np.ndarray, mask: np.ndarray,
                       basis: PcaBasis, grid) -> np.ndarray:
    """[3, H_B, W_B] RGB top view of a [N, Z, H, W] feature volume.

    Each BEV cell shows the highest masked voxel's feature projected
    onto the basis; cells whose column is entirely unmasked are black.
    """
    if mask.shape != features.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} != voxel shape {features.shape[1:]}")
    image = np.zeros((3, mask.shape[1], mask.shape[2]))
    ii, jj, kk = _top_voxels(mask)
    if ii.size:
        rows = features[:, kk, ii, jj].T  # (M, N)
        image[:, ii, jj] = project_onto_basis(rows, basis).T
    return image


def _diverging_rgb(v: np.ndarray) -> np.ndarray:
    """Map values in [−1, 1] to a blue-white-red scale, shape (3,) + v.shape."""
    c = (np.clip(v, -1.0, 1.0) + 1.0) / 2.0
    r = np.minimum(2.0 * c, 1.0)
    g = 1.0 - np.abs(np.clip(v, -1.0, 1.0))
    b = np.minimum(2.0 - 2.0 * c, 1.0)
    return np.stack([r, g, b])


def render_correlation(features: np.ndarray, query: tuple, mask: np.ndarray,
                       grid) -> np.ndarray:
    """[3, H_B, W_B] map of cosine similarity against one query voxel.

    Per BEV column the strongest (max) correlation among masked voxels
    is shown on a blue-white-red scale over [−1, 1]; columns with no
    masked voxel sit at the midpoint (0).
    """
    k, i, j = query
    if not mask[k, i, j] > 0:
        raise ValueError(f"query voxel {query} is not masked/occupied")
    q = features[:, k, i, j]
    qn = np.sqrt(q @ q + _CORR_EPS ** 2)
    norms = np.sqrt((features * features).sum(axis=0) + _CORR_EPS ** 2)
    cos = (features * q[:, None, None, None]).sum(axis=0) / (norms * qn)
    cos = np.where(mask > 0, cos, -np.inf)
    col = cos.max(axis=0)
    col = np.where(np.isfinite(col), col, 0.0)
    return _diverging_rgb(col)


def write_image(pixels: np.ndarray, path: str) -> None:
    """Binary PPM (P6) with 8-bit channels; values clamped then rounded."""
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] pixels, got {pixels.shape}")
    _, h, w = pixels.shape
    q = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())


def read_image(path: str) -> np.ndarray:
    """Read a binary PPM written by :func:`write_image`; returns uint8 [3, H, W]."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not a P6/255 PPM written by this package")
    w, h = (int(t) for t in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=3 * h * w)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).copy()
