"""Measurement ensembles, the exponential forward model and noise injection.

Randomness policy: every random quantity is drawn from a counter-based Philox
bit generator keyed by ``(seed, purpose)``, where the purpose word is a fixed
tag per kind of draw (ensemble entries, Hadamard signs, test signals, detector
noise).  Draws for different purposes therefore never share a stream, so an
ensemble and the noise applied to its measurements are independently
reproducible from the same user seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SensingEnsemble",
    "GaussianEnsemble",
    "RwhtEnsemble",
    "ExplicitEnsemble",
    "MeasurementSet",
    "gaussian_ensemble",
    "rwht_ensemble",
    "explicit_ensemble",
    "fwht",
    "forward_model",
    "generate_measurements",
    "sample_signal",
    "save_ensemble",
    "load_ensemble",
    "save_measurements",
    "load_measurements",
    "stream_rng",
]

# Purpose tags for Philox key words (documented stream split).
STREAM_GAUSSIAN = 0x01
STREAM_RWHT_SIGNS = 0x02
STREAM_SIGNAL = 0x03
STREAM_NOISE = 0x04
STREAM_EXPERIMENT = 0x05


def stream_rng(seed: int, purpose: int) -> np.random.Generator:
    """Generator for the (seed, purpose) substream of the Philox family."""
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(purpose)]))


class SensingEnsemble:
    """Linear map A in R^{m x d} with matvec, adjoint and row access."""

    kind: str
    dim: int
    samples: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x for a vector of length dim, or columnwise for a (dim, b) block."""
        raise NotImplementedError

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """A.T @ u for a vector of length samples, or columnwise for a block."""
        raise NotImplementedError

    def row(self, i: int) -> np.ndarray:
        """Dense copy of row a_i."""
        raise NotImplementedError

    def _check_dim(self, x: np.ndarray):
        if x.shape[0] != self.dim:
            raise ValueError(f"expected leading dimension {self.dim}, got {x.shape[0]}")

    def _check_samples(self, u: np.ndarray):
        if u.shape[0] != self.samples:
            raise ValueError(f"expected leading dimension {self.samples}, got {u.shape[0]}")


@dataclass
class GaussianEnsemble(SensingEnsemble):
    matrix: np.ndarray
    seed: int
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        self.samples, self.dim = self.matrix.shape

    def apply(self, x):
        self._check_dim(x)
        return self.matrix @ x

    def adjoint(self, u):
        self._check_samples(u)
        return self.matrix.T @ u

    def row(self, i):
        return self.matrix[i].copy()


@dataclass
class RwhtEnsemble(SensingEnsemble):
    """Stacked sign-randomized Hadamard blocks H_d D_j, j = 1..ell.

    ``signs`` has shape (ell, d) with entries in {-1, +1}; block j of the map
    is the unnormalized Walsh-Hadamard transform of the sign-flipped input, so
    every row has squared norm exactly d.
    """

    signs: np.ndarray
    seed: int
    kind: str = field(default="rwht", init=False)

    def __post_init__(self):
        ell, d = self.signs.shape
        self.dim = d
        self.samples = ell * d
        self.ell = ell

    def apply(self, x):
        self._check_dim(x)
        blocks = [fwht(self.signs[j].reshape((-1,) + (1,) * (x.ndim - 1)) * x) for j in range(self.ell)]
        return np.concatenate(blocks, axis=0)

    def adjoint(self, u):
        self._check_samples(u)
        d = self.dim
        out = np.zeros((d,) + u.shape[1:])
        for j in range(self.ell):
            out += self.signs[j].reshape((-1,) + (1,) * (u.ndim - 1)) * fwht(u[j * d : (j + 1) * d])
        return out

    def row(self, i):
        j, k = divmod(i, self.dim)
        # Row k of H_d is (-1)^{popcount(k & col)} in the Sylvester ordering.
        cols = np.arange(self.dim, dtype=np.uint64)
        bits = np.bitwise_count(np.bitwise_and(cols, np.uint64(k)))
        h_row = np.where(bits % 2 == 0, 1.0, -1.0)
        return h_row * self.signs[j]


@dataclass
class ExplicitEnsemble(SensingEnsemble):
    """Caller-provided rows, dense ndarray or scipy sparse matrix."""

    rows: np.ndarray | sp.spmatrix
    seed: int = 0
    kind: str = field(default="explicit", init=False)

    def __post_init__(self):
        self.samples, self.dim = self.rows.shape

    def apply(self, x):
        self._check_dim(x)
        return self.rows @ x

    def adjoint(self, u):
        self._check_samples(u)
        return self.rows.T @ u

    def row(self, i):
        if sp.issparse(self.rows):
            return np.asarray(self.rows.getrow(i).todense()).ravel()
        return self.rows[i].copy()


def _require_power_of_two(n: int):
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the first axis.

    Uses the Sylvester convention H_2 = [[1, 1], [1, -1]],
    H_{2d} = [[H_d, H_d], [H_d, -H_d]]; applying twice yields d * x.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    _require_power_of_two(d)
    y = x.copy()
    h = 1
    while h < d:
        y = y.reshape((d // (2 * h), 2, h) + y.shape[1:])
        a = y[:, 0] + y[:, 1]
        b = y[:, 0] - y[:, 1]
        y = np.stack([a, b], axis=1).reshape((d,) + x.shape[1:])
        h *= 2
    return y


def gaussian_ensemble(d: int, m: int, seed: int) -> GaussianEnsemble:
    """m x d matrix with iid standard normal entries from the (seed, gaussian) stream."""
    if d < 1 or m < 1:
        raise ValueError("d and m must be positive")
    rng = stream_rng(seed, STREAM_GAUSSIAN)
    return GaussianEnsemble(matrix=rng.standard_normal((m, d)), seed=seed)


def rwht_ensemble(d: int, ell: int, seed: int) -> RwhtEnsemble:
    """Randomized Walsh-Hadamard ensemble with oversampling factor ell (m = ell * d)."""
    _require_power_of_two(d)
    if ell < 1:
        raise ValueError("ell must be positive")
    rng = stream_rng(seed, STREAM_RWHT_SIGNS)
    signs = rng.integers(0, 2, size=(ell, d)).astype(np.float64) * 2.0 - 1.0
    return RwhtEnsemble(signs=signs, seed=seed)


def explicit_ensemble(rows, seed: int = 0) -> ExplicitEnsemble:
    return ExplicitEnsemble(rows=rows, seed=seed)


def forward_model(ensemble: SensingEnsemble, x: np.ndarray) -> np.ndarray:
    """h_i = 1 - exp(-max(<a_i, x>, 0)); outputs lie in [0, 1)."""
    z = ensemble.apply(np.asarray(x, dtype=float))
    return 1.0 - np.exp(-np.maximum(z, 0.0))


@dataclass
class MeasurementSet:
    """Measurement vector with noise metadata and (optionally) the true signal.

    Clean measurements lie in [0, 1) exactly.  Poisson-Gaussian measurements
    are normalized raw counts, 1 - counts/S, and carry no range guarantee: no
    clipping is applied, and the losses accept arbitrary y.
    """

    y: np.ndarray
    noise_kind: str = "clean"
    detector_scale: float = 0.0
    truth: np.ndarray | None = None
    truth_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.truth is not None and self.truth_norm is None:
            self.truth_norm = float(np.linalg.norm(self.truth))


def generate_measurements(
    ensemble: SensingEnsemble,
    x_star: np.ndarray,
    seed: int = 0,
    noise: str = "clean",
    detector_scale: float | None = None,
) -> MeasurementSet:
    """Measure x_star through the exponential model, optionally with photon noise.

    ``noise="clean"`` gives y_i = 1 - exp(-<a_i, x_star>_+).  With
    ``noise="poisson-gaussian"`` the raw detector counts follow the Gaussian
    approximation S t_i + sqrt(S t_i) xi_i for t_i = exp(-<a_i, x_star>_+),
    and y_i = 1 - counts_i / S.
    """
    x_star = np.asarray(x_star, dtype=float)
    t = np.exp(-np.maximum(ensemble.apply(x_star), 0.0))
    if noise == "clean":
        y = 1.0 - t
        return MeasurementSet(y=y, noise_kind="clean", truth=x_star.copy(), seed=seed)
    if noise == "poisson-gaussian":
        if detector_scale is None or detector_scale <= 0:
            raise ValueError("poisson-gaussian noise needs detector_scale > 0")
        rng = stream_rng(seed, STREAM_NOISE)
        xi = rng.standard_normal(t.shape)
        counts = detector_scale * t + np.sqrt(detector_scale * t) * xi
        y = 1.0 - counts / detector_scale
        return MeasurementSet(
            y=y,
            noise_kind="poisson-gaussian",
            detector_scale=float(detector_scale),
            truth=x_star.copy(),
            seed=seed,
        )
    raise ValueError(f"unknown noise kind {noise!r}")


def sample_signal(d: int, r: float, seed: int) -> np.ndarray:
    """Uniform random direction scaled to norm exactly r."""
    if d < 1:
        raise ValueError("d must be positive")
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0.0:
        return np.zeros(d)
    rng = stream_rng(seed, STREAM_SIGNAL)
    g = rng.standard_normal(d)
    while np.linalg.norm(g) == 0.0:  # probability zero; retried for totality
        g = rng.standard_normal(d)
    return r * g / np.linalg.norm(g)


# ---------------------------------------------------------------------------
# Serialization: little-endian binary container + JSON metadata sidecar.
#
# Ensemble container:   magic b"CTSE", u16 version=1, u8 kind tag
#                       (0 gaussian, 1 rwht, 2 explicit-dense, 3 explicit-csr),
#                       u64 dim, u64 samples, u64 seed, payload.
# Measurement container: magic b"CTME", u16 version=1, u8 noise tag
#                       (0 clean, 1 poisson-gaussian), f64 detector scale,
#                       u64 seed, u64 m, y payload, u8 truth flag,
#                       [u64 d, truth payload].
# All scalars and float payloads are little-endian; the sidecar "<path>.json"
# repeats the header fields for tooling that does not read the binary.
# ---------------------------------------------------------------------------

_ENSEMBLE_MAGIC = b"CTSE"
_MEASUREMENT_MAGIC = b"CTME"
_KIND_TAGS = {"gaussian": 0, "rwht": 1, "explicit-dense": 2, "explicit-csr": 3}
_NOISE_TAGS = {"clean": 0, "poisson-gaussian": 1}


def _write_sidecar(path: str, meta: dict):
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _i64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<i8").tobytes()


def save_ensemble(path: str, ensemble: SensingEnsemble):
    if isinstance(ensemble, GaussianEnsemble):
        tag_name = "gaussian"
        payload = _f64(ensemble.matrix)
        extra = b""
    elif isinstance(ensemble, RwhtEnsemble):
        tag_name = "rwht"
        extra = struct.pack("<Q", ensemble.ell)
        payload = np.ascontiguousarray(ensemble.signs, dtype="<i1").tobytes()
    elif isinstance(ensemble, ExplicitEnsemble):
        if sp.issparse(ensemble.rows):
            tag_name = "explicit-csr"
            csr = ensemble.rows.tocsr()
            extra = struct.pack("<Q", csr.nnz)
            payload = _i64(csr.indptr) + _i64(csr.indices) + _f64(csr.data)
        else:
            tag_name = "explicit-dense"
            extra = b""
            payload = _f64(np.asarray(ensemble.rows))
    else:
        raise TypeError(f"cannot serialize ensemble of type {type(ensemble)!r}")
    header = _ENSEMBLE_MAGIC + struct.pack(
        "<HBQQQ", 1, _KIND_TAGS[tag_name], ensemble.dim, ensemble.samples, ensemble.seed
    )
    with open(path, "wb") as fh:
        fh.write(header + extra + payload)
    _write_sidecar(
        path,
        {
            "format": "ctrecover-ensemble",
            "version": 1,
            "kind": tag_name,
            "dim": ensemble.dim,
            "samples": ensemble.samples,
            "seed": int(ensemble.seed),
        },
    )


def load_ensemble(path: str) -> SensingEnsemble:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _ENSEMBLE_MAGIC:
        raise ValueError(f"{path}: not an ensemble container")
    version, tag, dim, samples, seed = struct.unpack_from("<HBQQQ", blob, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = 4 + struct.calcsize("<HBQQQ")
    if tag == _KIND_TAGS["gaussian"]:
        mat = np.frombuffer(blob, dtype="<f8", count=dim * samples, offset=off)
        return GaussianEnsemble(matrix=mat.reshape(samples, dim).copy(), seed=seed)
    if tag == _KIND_TAGS["rwht"]:
        (ell,) = struct.unpack_from("<Q", blob, off)
        off += 8
        signs = np.frombuffer(blob, dtype="<i1", count=ell * dim, offset=off)
        return RwhtEnsemble(signs=signs.reshape(ell, dim).astype(np.float64), seed=seed)
    if tag == _KIND_TAGS["explicit-dense"]:
        mat = np.frombuffer(blob, dtype="<f8", count=dim * samples, offset=off)
        return ExplicitEnsemble(rows=mat.reshape(samples, dim).copy(), seed=seed)
    if tag == _KIND_TAGS["explicit-csr"]:
        (nnz,) = struct.unpack_from("<Q", blob, off)
        off += 8
        indptr = np.frombuffer(blob, dtype="<i8", count=samples + 1, offset=off)
        off += 8 * (samples + 1)
        indices = np.frombuffer(blob, dtype="<i8", count=nnz, offset=off)
        off += 8 * nnz
        data = np.frombuffer(blob, dtype="<f8", count=nnz, offset=off)
        rows = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(samples, dim))
        return ExplicitEnsemble(rows=rows, seed=seed)
    raise ValueError(f"{path}: unknown kind tag {tag}")


def save_measurements(path: str, ms: MeasurementSet):
    header = _MEASUREMENT_MAGIC + struct.pack(
        "<HBdQQ", 1, _NOISE_TAGS[ms.noise_kind], ms.detector_scale, ms.seed, len(ms.y)
    )
    body = _f64(ms.y)
    if ms.truth is not None:
        body += struct.pack("<BQ", 1, len(ms.truth)) + _f64(ms.truth)
    else:
        body += struct.pack("<B", 0)
    with open(path, "wb") as fh:
        fh.write(header + body)
    _write_sidecar(
        path,
        {
            "format": "ctrecover-measurements",
            "version": 1,
            "noise_kind": ms.noise_kind,
            "detector_scale": ms.detector_scale,
            "seed": int(ms.seed),
            "samples": int(len(ms.y)),
            "truth_dim": None if ms.truth is None else int(len(ms.truth)),
            "truth_norm": ms.truth_norm,
        },
    )


def load_measurements(path: str) -> MeasurementSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MEASUREMENT_MAGIC:
        raise ValueError(f"{path}: not a measurement container")
    version, tag, scale, seed, m = struct.unpack_from("<HBdQQ", blob, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = 4 + struct.calcsize("<HBdQQ")
    y = np.frombuffer(blob, dtype="<f8", count=m, offset=off).copy()
    off += 8 * m
    (has_truth,) = struct.unpack_from("<B", blob, off)
    off += 1
    truth = None
    if has_truth:
        (d,) = struct.unpack_from("<Q", blob, off)
        off += 8
        truth = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
    noise_kind = {v: k for k, v in _NOISE_TAGS.items()}[tag]
    return MeasurementSet(y=y, noise_kind=noise_kind, detector_scale=scale, truth=truth, seed=seed)
