"""Classic whitened spectral-angle similarity over a feature cube.

Fits the second-order statistics of a cube, whitens spectra with the
pseudo-inverse square root of the covariance-like matrix, and scores each
pixel by the cosine between its whitened spectrum and a whitened target
spectrum. This is a standalone detection utility and verification oracle; it
is not part of the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import HSCube

EIG_TOL_FACTOR = 1e-10
NORM_EPS = 1e-12


@dataclass(frozen=True)
class SAMModel:
    """Whitening model: flattened spectra, mapping matrix, and its
    pseudo-inverse square root."""

    spectra: np.ndarray  # [HW, C] float64
    spatial_shape: tuple[int, int]
    mapping: np.ndarray  # [C, C]
    mapping_inv_sqrt: np.ndarray  # [C, C]
    target: np.ndarray | None = None  # [C]

    def with_target(self, target) -> "SAMModel":
        t = np.asarray(target, dtype=np.float64).reshape(-1)
        if t.shape[0] != self.mapping.shape[0]:
            raise ValueError(
                f"target has {t.shape[0]} bands, model has {self.mapping.shape[0]}"
            )
        if not np.all(np.isfinite(t)):
            raise ValueError("target spectrum contains non-finite values")
        return replace(self, target=t)


def sam_fit(cube, target=None) -> SAMModel:
    """Fit the whitening model to an [H, W, C] cube (or HSCube).

    The mapping matrix is the uncentered second-moment estimate S^T S / HW;
    its inverse square root comes from the symmetric eigendecomposition with
    eigenvalues below ``EIG_TOL_FACTOR * max_eigenvalue`` treated as null.
    """
    arr = cube.data if isinstance(cube, HSCube) else np.asarray(cube)
    if arr.ndim != 3:
        raise ValueError(f"expected [H, W, C] cube, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cube contains non-finite values")
    h, w, c = arr.shape
    spectra = arr.reshape(h * w, c).astype(np.float64)
    mapping = spectra.T @ spectra / (h * w)
    evals, evecs = np.linalg.eigh(mapping)
    tol = EIG_TOL_FACTOR * max(float(evals.max(initial=0.0)), 0.0)
    inv_sqrt = np.where(evals > tol, 1.0 / np.sqrt(np.where(evals > tol, evals, 1.0)), 0.0)
    mapping_inv_sqrt = (evecs * inv_sqrt) @ evecs.T
    model = SAMModel(
        spectra=spectra,
        spatial_shape=(h, w),
        mapping=mapping,
        mapping_inv_sqrt=mapping_inv_sqrt,
    )
    return model if target is None else model.with_target(target)


def sam_score(model: SAMModel, loc: tuple[int, int]) -> float:
    """Whitened cosine between the spectrum at (row, col) and the target.

    Returns 0.0 when either whitened vector is numerically null.
    """
    if model.target is None:
        raise ValueError("model has no target spectrum; call with_target first")
    i, j = loc
    h, w = model.spatial_shape
    if not (0 <= i < h and 0 <= j < w):
        raise IndexError(f"location {loc} outside {model.spatial_shape}")
    ws = model.mapping_inv_sqrt @ model.spectra[i * w + j]
    wt = model.mapping_inv_sqrt @ model.target
    ns, nt = np.linalg.norm(ws), np.linalg.norm(wt)
    if ns < NORM_EPS or nt < NORM_EPS:
        return 0.0
    return float(ws @ wt / (ns * nt))


def sam_score_map(model: SAMModel) -> np.ndarray:
    """Whitened-cosine score of every pixel against the target, [H, W]."""
    if model.target is None:
        raise ValueError("model has no target spectrum; call with_target first")
    ws = model.spectra @ model.mapping_inv_sqrt.T
    wt = model.mapping_inv_sqrt @ model.target
    ns = np.linalg.norm(ws, axis=1)
    nt = np.linalg.norm(wt)
    scores = np.zeros(ws.shape[0])
    ok = (ns >= NORM_EPS) & (nt >= NORM_EPS)
    if nt >= NORM_EPS:
        scores[ok] = (ws[ok] @ wt) / (ns[ok] * nt)
    return scores.reshape(model.spatial_shape)
