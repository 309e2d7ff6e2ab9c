"""Shepp-Logan phantoms, a parallel-beam Radon operator, and PSNR scoring.

Geometry conventions: images live on the square [-1, 1]^2 with pixel size
2/n.  Pixel (row r, column c) of the n x n array covers x in
[-1 + c*2/n, -1 + (c+1)*2/n) and y in [1 - (r+1)*2/n, 1 - r*2/n); image
vectors are the column-major flattening used by the TV machinery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sensing import ExplicitEnsemble
from .tv import vec

__all__ = [
    "SHEPP_LOGAN_ELLIPSES",
    "MODIFIED_SHEPP_LOGAN_INTENSITIES",
    "shepp_logan",
    "RadonOperator",
    "radon_operator",
    "radon_ensemble",
    "psnr",
    "write_pgm",
    "read_pgm",
    "write_image_csv",
    "write_ellipse_json",
]

# (additive intensity, semi-axis a, semi-axis b, center x, center y, rotation degrees)
# Original additive intensity table; the high-contrast variant swaps intensities.
SHEPP_LOGAN_ELLIPSES: tuple[tuple[float, float, float, float, float, float], ...] = (
    (2.00, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.02, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.01, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.01, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.01, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.01, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.01, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.01, 0.023, 0.046, 0.06, -0.605, 0.0),
)

MODIFIED_SHEPP_LOGAN_INTENSITIES = (1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1)

# The small circle just below the image center; the one whose radius and
# intensity the metal-insert experiments modify.
CENTER_ELLIPSE_INDEX = 6


def _inside(u, v, ellipse):
    _, a, b, x0, y0, phi_deg = ellipse
    phi = math.radians(phi_deg)
    du = u - x0
    dv = v - y0
    p = (math.cos(phi) * du + math.sin(phi) * dv) / a
    q = (-math.sin(phi) * du + math.cos(phi) * dv) / b
    return p * p + q * q <= 1.0


def shepp_logan(
    n: int,
    center_radius_factor: float = 1.0,
    center_intensity: float | None = None,
    global_scale: float = 1.0,
    table=SHEPP_LOGAN_ELLIPSES,
    center_index: int = CENTER_ELLIPSE_INDEX,
) -> np.ndarray:
    """Rasterized phantom as an image vector of length n^2.

    The ellipse at ``center_index`` has its semi-axes multiplied by
    ``center_radius_factor``; when ``center_intensity`` is given, its additive
    intensity is chosen so the value at that ellipse's center equals
    ``center_intensity`` before scaling.  All pixels are divided by
    ``global_scale`` and clamped at zero from below.
    """
    if n < 16:
        raise ValueError(f"n must be at least 16, got {n}")
    if center_radius_factor <= 0 or global_scale <= 0:
        raise ValueError("factors must be positive")
    ellipses = [list(e) for e in table]
    ellipses[center_index][1] *= center_radius_factor
    ellipses[center_index][2] *= center_radius_factor
    if center_intensity is not None:
        cx, cy = ellipses[center_index][3], ellipses[center_index][4]
        base = sum(
            e[0]
            for i, e in enumerate(ellipses)
            if i != center_index and _inside(cx, cy, e)
        )
        ellipses[center_index][0] = center_intensity - base
    step = 2.0 / n
    cols = -1.0 + step * (np.arange(n) + 0.5)
    rows = 1.0 - step * (np.arange(n) + 0.5)
    U, V = np.meshgrid(cols, rows)  # U[r, c] = x, V[r, c] = y
    img = np.zeros((n, n))
    for intensity, a, b, x0, y0, phi_deg in ellipses:
        phi = math.radians(phi_deg)
        du = U - x0
        dv = V - y0
        p = (math.cos(phi) * du + math.sin(phi) * dv) / a
        q = (-math.sin(phi) * du + math.cos(phi) * dv) / b
        img += intensity * (p * p + q * q <= 1.0)
    img = np.maximum(img / global_scale, 0.0)
    return vec(img)


# ---------------------------------------------------------------------------
# Parallel-beam Radon operator (Siddon ray traversal)
# ---------------------------------------------------------------------------


def _ray_weights(n: int, theta: float, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Pixel indices (flat, column-major) and intersection lengths of one ray.

    The ray passes through s * (cos t, sin t) with unit direction
    (-sin t, cos t); weights are the lengths of its segments inside each
    pixel of the [-1, 1]^2 grid.
    """
    px = math.cos(theta) * s
    py = math.sin(theta) * s
    dx = -math.sin(theta)
    dy = math.cos(theta)
    # Entry/exit parameters for the bounding square.
    t_lo, t_hi = -np.inf, np.inf
    for p0, d in ((px, dx), (py, dy)):
        if abs(d) < 1e-15:
            if not -1.0 <= p0 <= 1.0:
                return np.empty(0, dtype=int), np.empty(0)
        else:
            ta = (-1.0 - p0) / d
            tb = (1.0 - p0) / d
            t_lo = max(t_lo, min(ta, tb))
            t_hi = min(t_hi, max(ta, tb))
    if not t_lo < t_hi:
        return np.empty(0, dtype=int), np.empty(0)
    lines = np.linspace(-1.0, 1.0, n + 1)
    crossings = [np.array([t_lo, t_hi])]
    if abs(dx) > 1e-15:
        tx = (lines - px) / dx
        crossings.append(tx[(tx > t_lo) & (tx < t_hi)])
    if abs(dy) > 1e-15:
        ty = (lines - py) / dy
        crossings.append(ty[(ty > t_lo) & (ty < t_hi)])
    ts = np.unique(np.concatenate(crossings))
    lengths = np.diff(ts)
    mids = 0.5 * (ts[:-1] + ts[1:])
    keep = lengths > 1e-14
    lengths = lengths[keep]
    mids = mids[keep]
    xm = px + mids * dx
    ym = py + mids * dy
    ix = np.clip(((xm + 1.0) * (n / 2.0)).astype(int), 0, n - 1)
    iy = np.clip(((ym + 1.0) * (n / 2.0)).astype(int), 0, n - 1)
    r = n - 1 - iy
    c = ix
    return c * n + r, lengths


@dataclass
class RadonOperator:
    """Sparse discrete Radon transform: one row per (angle, detector) pair."""

    side: int
    angles: np.ndarray
    n_detectors: int
    rows: sp.csr_matrix

    def to_ensemble(self) -> ExplicitEnsemble:
        return ExplicitEnsemble(rows=self.rows)


def radon_operator(n: int, n_angles: int, n_detectors: int | None = None,
                   angle_offset: float = 0.0) -> RadonOperator:
    """Parallel-beam geometry: angles equispaced on [0, pi) starting at
    ``angle_offset``, detector offsets equispaced across the image diagonal."""
    if n < 1 or n_angles < 1:
        raise ValueError("n and n_angles must be positive")
    n_detectors = n if n_detectors is None else n_detectors
    if n_detectors < 1:
        raise ValueError("n_detectors must be positive")
    angles = angle_offset + np.pi * np.arange(n_angles) / n_angles
    half_diag = math.sqrt(2.0)
    spacing = 2.0 * half_diag / n_detectors
    offsets = -half_diag + spacing * (np.arange(n_detectors) + 0.5)
    data, indices, indptr = [], [], [0]
    for theta in angles:
        for s in offsets:
            cols, weights = _ray_weights(n, float(theta), float(s))
            order = np.argsort(cols)
            indices.append(cols[order])
            data.append(weights[order])
            indptr.append(indptr[-1] + len(cols))
    rows = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.array(indptr)),
        shape=(n_angles * n_detectors, n * n),
    )
    return RadonOperator(side=n, angles=angles, n_detectors=n_detectors, rows=rows)


def radon_ensemble(n: int, n_angles: int = 60, n_detectors: int | None = None,
                   angle_offset: float = 0.0) -> ExplicitEnsemble:
    """The Radon operator packaged as an explicit-row sensing ensemble."""
    return radon_operator(n, n_angles, n_detectors, angle_offset).to_ensemble()


def psnr(reconstruction: np.ndarray, truth: np.ndarray) -> float:
    """Peak signal-to-noise ratio in decibels.

    -10 log10( (1/N) (||rec - truth||_F / max |truth|)^2 ); returns inf for an
    exact reconstruction, raises for identically zero truth.
    """
    reconstruction = np.asarray(reconstruction, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if reconstruction.shape != truth.shape:
        raise ValueError("shapes differ")
    peak = float(np.max(np.abs(truth)))
    if peak == 0.0:
        raise ValueError("truth is identically zero")
    err = float(np.linalg.norm(reconstruction - truth))
    if err == 0.0:
        return math.inf
    return -10.0 * math.log10((err / peak) ** 2 / truth.size)


# ---------------------------------------------------------------------------
# File exports
# ---------------------------------------------------------------------------


def write_pgm(path: str, img: np.ndarray, vmax: float | None = None):
    """Binary 16-bit PGM (big-endian sample order per the netpbm format)."""
    img = np.asarray(img, dtype=float)
    n = math.isqrt(img.size)
    M = img.reshape((n, n), order="F")
    vmax = float(np.max(M)) if vmax is None else float(vmax)
    if vmax <= 0:
        vmax = 1.0
    scaled = np.clip(M / vmax, 0.0, 1.0)
    samples = np.round(scaled * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {n}\n65535\n".encode("ascii"))
        fh.write(samples.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        w, h = map(int, fh.readline().split())
        maxval = int(fh.readline())
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(float) / maxval


def write_image_csv(path: str, img: np.ndarray):
    """Flat CSV: one value per line in image-vector (column-major) order."""
    img = np.asarray(img, dtype=float).ravel()
    with open(path, "w") as fh:
        fh.write("value\n")
        for v in img:
            fh.write(f"{v!r}\n")


def write_ellipse_json(path: str, table=SHEPP_LOGAN_ELLIPSES):
    entries = [
        {
            "intensity": e[0],
            "semi_axes": [e[1], e[2]],
            "center": [e[3], e[4]],
            "rotation_degrees": e[5],
        }
        for e in table
    ]
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")
