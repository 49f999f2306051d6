"""Precalculated MVDR weight dictionary.

The table is stored as ``weights[model, bin, steering, channel]``. A
dictionary always contains the isotropic model; its position is kept in
``iso_index``.
"""

import logging
import struct
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .array import Direction, angular_distance, relative_tf, steering_grid, steering_lookup
from .beamformer import mvdr_weights_batch, robust_loading
from .noisemodels import (
    Isotropy,
    NcmModel,
    covariance_from_weights,
    default_aniso_set,
    identity_model,
    isotropy_weights,
)
from .numerics import SingularMatrix, hermitize

log = logging.getLogger(__name__)

MAGIC = b"HYBD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH5I")


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatch(FormatError):
    pass


class AtfFingerprintMismatch(UserWarning):
    pass


class NotHermitian(ValueError):
    pass


class BadLength(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class InsufficientTraining(ValueError):
    def __init__(self, bin_index, n, m):
        super().__init__(f"bin {bin_index}: {n} training snapshots for {m} models")
        self.bin_index, self.n, self.m = bin_index, n, m


class BuildError(RuntimeError):
    pass


@dataclass
class WeightDictionary:
    model_ids: list
    iso_index: int
    steer_az: np.ndarray
    steer_inc: np.ndarray
    weights: np.ndarray  # (M, F, Psi, Q)
    atf_fingerprint: bytes = bytes(32)
    kappa0: float = None
    steering_rtf: np.ndarray = field(default=None, repr=False)  # (F, Psi, Q)

    def __post_init__(self):
        self.steer_az = np.asarray(self.steer_az, dtype=float)
        self.steer_inc = np.asarray(self.steer_inc, dtype=float)
        M, F, P, Q = self.weights.shape
        if len(self.model_ids) != M:
            raise ValueError(f"{len(self.model_ids)} model ids for {M} models")
        if not 0 <= self.iso_index < M:
            raise ValueError("dictionary must include the isotropic model")
        if self.steer_az.shape != (P,) or self.steer_inc.shape != (P,):
            raise ValueError("steering table does not match weight table")
        if len(self.atf_fingerprint) != 32:
            raise ValueError("ATF fingerprint must be 32 bytes")
        el = np.pi / 2 - self.steer_inc
        az_step = _min_step(self.steer_az)
        el_step = _min_step(el)
        self._az_box = (self.steer_az.min() - az_step / 2, self.steer_az.max() + az_step / 2)
        self._el_box = (el.min() - el_step / 2, el.max() + el_step / 2)

    @property
    def n_models(self):
        return self.weights.shape[0]

    @property
    def n_bins(self):
        return self.weights.shape[1]

    @property
    def n_steering(self):
        return self.weights.shape[2]

    @property
    def n_channels(self):
        return self.weights.shape[3]

    def steering_direction(self, psi):
        return Direction(self.steer_az[psi], self.steer_inc[psi])

    def steering_index(self, target):
        """Nearest steering direction and whether ``target`` was outside coverage."""
        d = angular_distance(self.steer_az, self.steer_inc, target.azimuth, target.inclination)
        psi = int(np.argmin(d))
        el = target.elevation
        clamped = not (
            self._az_box[0] - 1e-9 <= target.azimuth <= self._az_box[1] + 1e-9
            and self._el_box[0] - 1e-9 <= el <= self._el_box[1] + 1e-9
        )
        return psi, clamped

    def summary(self):
        return f"M={self.n_models} F={self.n_bins} Q={self.n_channels} Ψ={self.n_steering}"

    def distortionless_error(self, rtf=None, sample=None, rng=None):
        """``max |w^H d - 1|`` over all entries or ``sample`` random ones."""
        rtf = self.steering_rtf if rtf is None else rtf
        if rtf is None:
            raise ValueError("no steering RTF table available")
        if sample is None:
            resp = np.einsum("mfpq,fpq->mfp", np.conj(self.weights), rtf)
            return float(np.max(np.abs(resp - 1.0)))
        rng = rng or np.random.default_rng(0)
        m = rng.integers(0, self.n_models, sample)
        f = rng.integers(0, self.n_bins, sample)
        p = rng.integers(0, self.n_steering, sample)
        resp = np.sum(np.conj(self.weights[m, f, p]) * rtf[f, p], axis=-1)
        return float(np.max(np.abs(resp - 1.0)))


def _min_step(x):
    u = np.unique(np.round(x, 12))
    return float(np.min(np.diff(u))) if u.size > 1 else 0.0


def steering_rtfs(atfs, directions, ref_channel=None):
    """RTF table ``(F, Psi, Q)`` for the grid points nearest each direction."""
    rtf = np.stack([steering_lookup(atfs, d, ref_channel).rtf for d in directions])
    return np.ascontiguousarray(np.swapaxes(rtf, 0, 1))


def default_parametric_spec(include_identity=True, include_plane_waves=False, atfs=None,
                            peaks_deg=None, ranges_db=None):
    """Iso first, then Identity, then the unimodal anisotropic set.

    Plane-wave models (one per ATF grid direction) are left out unless
    asked for.
    """
    spec = [Isotropy()]
    if include_identity:
        spec.append("identity")
    spec.extend(default_aniso_set(peaks_deg, ranges_db))
    if include_plane_waves:
        if atfs is None:
            raise ValueError("plane-wave models need the ATF grid")
        spec.extend(Isotropy.plane_wave(atfs.direction(i)) for i in range(atfs.n_dirs))
    return spec


def _weights_for_models(R, rtf, kappa0, labels, offset=0):
    """MVDR weights ``(M, F, Psi, Q)`` for covariances ``R`` ``(M, F, Q, Q)``."""
    M, F = R.shape[:2]
    out = np.empty((M, F) + rtf.shape[1:], dtype=complex)
    for m in range(M):
        R_eps, _ = robust_loading(R[m], kappa0)
        try:
            out[m] = mvdr_weights_batch(R_eps, rtf)
        except (SingularMatrix, np.linalg.LinAlgError) as e:
            for nu in range(F):
                try:
                    mvdr_weights_batch(R_eps[nu], rtf[nu])
                except (SingularMatrix, np.linalg.LinAlgError):
                    raise BuildError(
                        f"MVDR failed for model {offset + m} ({labels[m]}), bin {nu}, "
                        f"steering 0..{rtf.shape[1] - 1}: {e}"
                    ) from e
            raise
    return out


def build_parametric(atfs, spec=None, steering=None, kappa0=None, ref_channel=None):
    spec = default_parametric_spec(atfs=atfs) if spec is None else list(spec)
    if not spec:
        raise ValueError("empty model specification")
    steering = steering_grid() if steering is None else list(steering)
    iso = [i for i, s in enumerate(spec) if isinstance(s, Isotropy) and s.kind == "iso"]
    if not iso:
        raise ValueError("parametric specification must include the isotropic model")
    rtf = steering_rtfs(atfs, steering, ref_channel)
    F, Q = atfs.n_bins, atfs.n_channels
    labels, R = [], np.empty((len(spec), F, Q, Q), dtype=complex)
    iso_rows = [i for i, s in enumerate(spec) if isinstance(s, Isotropy)]
    if iso_rows:
        wts = np.stack([isotropy_weights(spec[i], atfs) for i in iso_rows])
        R[iso_rows] = covariance_from_weights(wts, atfs).reshape(len(iso_rows), F, Q, Q)
    for i, s in enumerate(spec):
        if isinstance(s, Isotropy):
            labels.append(s.label)
        elif s == "identity":
            R[i] = identity_model(Q, F).matrices
            labels.append("Identity")
        else:
            raise ValueError(f"unknown model specification {s!r}")
    W = _weights_for_models(R, rtf, kappa0, labels)
    return WeightDictionary(labels, iso[0], [d.azimuth for d in steering],
                            [d.inclination for d in steering], W, atfs.fingerprint(),
                            kappa0, rtf)


# ground-truth NCM training data ---------------------------------------------


def ema_alpha(T, hop_seconds):
    return float(np.exp(-hop_seconds / T))


def ema_covariances(Y, alpha):
    """Running ``R(l) = a R(l-1) + (1-a) y y^H`` over frames.

    ``Y`` is ``(Q, F, L)``; returns ``(F, L, Q, Q)``. The first frame is
    initialised with its own outer product.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.shape[-1] == 0:
        raise ValueError("no frames")
    C = np.einsum("pfl,qfl->flpq", Y, np.conj(Y))
    zi = alpha * C[:, :1]
    out, _ = lfilter([1.0 - alpha], [1.0, -alpha], C, axis=1, zi=zi)
    return hermitize(out)


class TrainingSet:
    """Vectorized ground-truth NCM snapshots, ``vectors[bin]`` is ``(N, Q*Q)``."""

    def __init__(self, vectors):
        self.vectors = np.asarray(vectors, dtype=float)

    @property
    def n_bins(self):
        return self.vectors.shape[0]

    @property
    def counts(self):
        return np.full(self.n_bins, self.vectors.shape[1])

    def matrices(self, nu):
        return devectorize(self.vectors[nu])

    @classmethod
    def concatenate(cls, sets):
        sets = list(sets)
        if not sets:
            raise ValueError("no training sets")
        return cls(np.concatenate([s.vectors for s in sets], axis=1))


def ema_gt_ncm(gt_noise, T=0.08, hop_seconds=None):
    """Ground-truth NCM snapshots from the noise-only STFT of one recording."""
    hop_seconds = gt_noise.config.hop_seconds if hop_seconds is None else hop_seconds
    if gt_noise.frames == 0:
        raise ValueError("empty input")
    R = ema_covariances(gt_noise.data, ema_alpha(T, hop_seconds))
    return TrainingSet(vectorize(R))


# vectorization --------------------------------------------------------------


def _triu(Q):
    return np.triu_indices(Q, k=1)


def vectorize(R, rtol=1e-9):
    """Hermitian ``(..., Q, Q)`` to real ``(..., Q*Q)``.

    Layout: the Q diagonal entries, then real parts of the strict upper
    triangle (row-major), then their imaginary parts.
    """
    R = np.asarray(R)
    if R.shape[-1] != R.shape[-2]:
        raise NotHermitian("matrix is not square")
    scale = np.max(np.abs(R)) if R.size else 0.0
    if np.any(np.abs(R - np.conj(np.swapaxes(R, -1, -2))) > rtol * scale):
        raise NotHermitian("matrix is not Hermitian")
    Q = R.shape[-1]
    iu = _triu(Q)
    diag = np.real(np.diagonal(R, axis1=-2, axis2=-1))
    up = R[..., iu[0], iu[1]]
    return np.concatenate([diag, np.real(up), np.imag(up)], axis=-1)


def devectorize(r):
    r = np.asarray(r, dtype=float)
    D = r.shape[-1]
    Q = int(round(np.sqrt(D)))
    if Q * Q != D or D == 0:
        raise BadLength(f"vector length {D} is not a perfect square")
    iu = _triu(Q)
    n = len(iu[0])
    up = r[..., Q:Q + n] + 1j * r[..., Q + n:]
    R = np.zeros(r.shape[:-1] + (Q, Q), dtype=complex)
    idx = np.arange(Q)
    R[..., idx, idx] = r[..., :Q]
    R[..., iu[0], iu[1]] = up
    R[..., iu[1], iu[0]] = np.conj(up)
    return R


# clustering -----------------------------------------------------------------


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignments: np.ndarray
    inertia_history: list


def _assign(X, x2, C):
    d = x2[:, None] - 2.0 * (X @ C.T) + np.sum(C * C, axis=1)[None, :]
    return np.argmin(d, axis=1)


def _fill_empty(X, C, labels, K):
    """Move each empty centroid onto the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=K)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return
    dist = np.sum((X - C[labels]) ** 2, axis=1)
    for k in empty:
        movable = counts[labels] > 1
        cand = np.where(movable, dist, -np.inf)
        p = int(np.argmax(cand))
        counts[labels[p]] -= 1
        counts[k] += 1
        labels[p] = k
        C[k] = X[p]
        dist[p] = 0.0


def kmeans_cluster(points, K, seed=0, max_iter=100, tol=1e-10):
    """Lloyd's algorithm with random (Forgy) initialisation.

    Stops when no centroid moves by more than ``tol`` (relative to the data
    scale) or after ``max_iter`` iterations.
    """
    X = np.asarray(points, dtype=float)
    N = X.shape[0]
    if K < 1 or N < K:
        raise TooFewPoints(f"{N} points for {K} clusters")
    rng = np.random.default_rng(seed)
    C = X[np.sort(rng.choice(N, size=K, replace=False))].copy()
    x2 = np.sum(X * X, axis=1)
    scale = max(np.sqrt(np.max(x2)), np.finfo(float).tiny)
    history = []
    labels = None
    for _ in range(max_iter):
        labels = _assign(X, x2, C)
        _fill_empty(X, C, labels, K)
        history.append(float(np.sum((X - C[labels]) ** 2)))
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        new = sums / counts[:, None]
        shift = np.max(np.linalg.norm(new - C, axis=1))
        C = new
        if shift <= tol * scale:
            break
    labels = _assign(X, x2, C)
    _fill_empty(X, C, labels, K)
    history.append(float(np.sum((X - C[labels]) ** 2)))
    return KMeansResult(C, labels, history)


def psd_repair(R):
    """Clamp negative eigenvalues of Hermitian ``(..., Q, Q)`` to zero."""
    w, V = np.linalg.eigh(hermitize(R))
    w = np.maximum(w, 0.0)
    return hermitize((V * w[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2)))


def cluster_training_set(training, M, seed=0, max_iter=100):
    """Per-bin k-means centroids as covariance matrices ``(M, F, Q, Q)``."""
    F, N, _ = training.vectors.shape
    seeds = np.random.SeedSequence(seed).spawn(F)
    out = []
    for nu in range(F):
        if N < M:
            raise InsufficientTraining(nu, N, M)
        res = kmeans_cluster(training.vectors[nu], M, seed=seeds[nu], max_iter=max_iter)
        out.append(psd_repair(devectorize(res.centroids)))
    return np.stack(out, axis=1)


def build_datadriven(training, M, atfs, steering=None, seed=0, kappa0=None,
                     ref_channel=None, max_iter=100):
    """Cluster ground-truth NCMs into ``M`` models per bin, then append Iso."""
    steering = steering_grid() if steering is None else list(steering)
    if training.n_bins != atfs.n_bins:
        raise ValueError("training set and ATF bin counts differ")
    R = cluster_training_set(training, M, seed, max_iter)
    R_iso = covariance_from_weights(isotropy_weights(Isotropy(), atfs), atfs)
    R = np.concatenate([R, R_iso[None]], axis=0)
    labels = [f"K{m}" for m in range(M)] + ["Iso"]
    rtf = steering_rtfs(atfs, steering, ref_channel)
    W = _weights_for_models(R, rtf, kappa0, labels)
    return WeightDictionary(labels, M, [d.azimuth for d in steering],
                            [d.inclination for d in steering], W, atfs.fingerprint(),
                            kappa0, rtf)


def single_model_dictionary(model, atfs, steering=None, kappa0=None, ref_channel=None):
    """Dictionary holding one NCM model, flagged as the isotropic slot."""
    steering = steering_grid() if steering is None else list(steering)
    rtf = steering_rtfs(atfs, steering, ref_channel)
    W = _weights_for_models(model.matrices[None], rtf, kappa0, [model.model_id])
    return WeightDictionary([model.model_id], 0, [d.azimuth for d in steering],
                            [d.inclination for d in steering], W, atfs.fingerprint(),
                            kappa0, rtf)


def subset(d, models):
    """Dictionary restricted to the given model indices (Iso must be kept)."""
    models = list(models)
    if d.iso_index not in models:
        raise ValueError("subset must keep the isotropic model")
    return WeightDictionary([d.model_ids[m] for m in models], models.index(d.iso_index),
                            d.steer_az, d.steer_inc, d.weights[models], d.atf_fingerprint,
                            d.kappa0, d.steering_rtf)


# serialization ----------------------------------------------------------------


def save_dict(d, path):
    M, F, P, Q = d.weights.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, M, F, Q, P, d.iso_index))
        table = np.empty((P, 2), dtype="<f8")
        table[:, 0] = d.steer_az
        table[:, 1] = d.steer_inc
        fh.write(table.tobytes())
        fh.write(bytes(d.atf_fingerprint))
        for m in range(M):
            fh.write(np.ascontiguousarray(d.weights[m], dtype="<c8").tobytes())
    return path


def load_dict(path, atfs=None):
    """Read a dictionary file; warns when ``atfs`` has a different fingerprint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than header", len(raw))
    magic, version, M, F, Q, P, iso = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}", 4)
    off = _HEADER.size
    need = off + P * 16 + 32 + M * F * P * Q * 8
    if len(raw) < need:
        raise FormatError(f"file truncated: expected {need} bytes", len(raw))
    if len(raw) > need:
        raise FormatError("trailing data after weight table", need)
    if iso >= M:
        raise FormatError(f"iso model index {iso} out of range", off - 4)
    table = np.frombuffer(raw, dtype="<f8", count=2 * P, offset=off).reshape(P, 2)
    off += P * 16
    fp = raw[off:off + 32]
    off += 32
    W = np.frombuffer(raw, dtype="<c8", count=M * F * P * Q, offset=off).reshape(M, F, P, Q)
    if atfs is not None and atfs.fingerprint() != fp:
        warnings.warn("dictionary was built from a different ATF set", AtfFingerprintMismatch)
    ids = ["Iso" if m == iso else f"m{m}" for m in range(M)]
    return WeightDictionary(ids, int(iso), table[:, 0].copy(), table[:, 1].copy(),
                            W.astype(complex), fp)
