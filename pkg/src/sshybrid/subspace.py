"""Wideband inter-method PCA combining the Iso and Hybrid output spectra.

The two full-band spectra of a frame form a 2 x F data matrix. Its
smoothed 2 x 2 covariance is tracked over frames and the data is projected
onto the dominant eigenvector; the first row of the projection is the
enhanced output.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .beamformer import hybrid_stage
from .numerics import evd_2x2
from .stft import StftTensor

log = logging.getLogger(__name__)

DEFAULT_T = 0.08


class LengthMismatch(ValueError):
    pass


@dataclass
class InterMethodState:
    alpha: float
    R_z: np.ndarray = None
    initialized: bool = False

    @classmethod
    def from_time_constant(cls, T=DEFAULT_T, hop_seconds=0.008):
        if T <= 0:
            raise ValueError("time constant must be positive")
        return cls(float(np.exp(-hop_seconds / T)))


@dataclass(frozen=True)
class MixingWeights:
    beta_hyb: complex
    beta_iso: complex


def warmup_frames(T=DEFAULT_T, hop_seconds=0.008):
    """Frames before the covariance EMA has settled; left out of metrics."""
    return int(math.ceil(T / hop_seconds - 1e-9))


def instantaneous_covariance(z_hyb, z_iso):
    """``Z Z^H`` for the stacked rows ``[z_hyb; z_iso]``; works along a leading axis."""
    z_hyb = np.asarray(z_hyb, dtype=complex)
    z_iso = np.asarray(z_iso, dtype=complex)
    if z_hyb.shape != z_iso.shape:
        raise LengthMismatch(f"spectra have shapes {z_hyb.shape} and {z_iso.shape}")
    # every entry goes through the same product and sum so that identical
    # inputs give an exactly all-equal matrix
    c = np.empty(z_hyb.shape[:-1] + (2, 2), dtype=complex)
    c[..., 0, 0] = np.sum(z_hyb * np.conj(z_hyb), axis=-1)
    c[..., 0, 1] = np.sum(z_hyb * np.conj(z_iso), axis=-1)
    c[..., 1, 0] = np.sum(z_iso * np.conj(z_hyb), axis=-1)
    c[..., 1, 1] = np.sum(z_iso * np.conj(z_iso), axis=-1)
    return c


def update_covariance(state, z_hyb, z_iso):
    C = instantaneous_covariance(z_hyb, z_iso)
    if not state.initialized:
        R = C
    else:
        R = state.alpha * state.R_z + (1.0 - state.alpha) * C
    return InterMethodState(state.alpha, R, True)


def mixing_weights(R_z):
    """``beta_hyb = U1 U1*``, ``beta_iso = U1 U2*`` from the dominant eigenvector."""
    R_z = np.asarray(R_z, dtype=complex)
    a, b, c = R_z[0, 0], R_z[0, 1], R_z[1, 1]
    if a == b == c == R_z[1, 0]:
        # identical streams: projector onto [1, 1]/sqrt(2) is exactly 1/2
        return MixingWeights(0.5 + 0j, 0.5 + 0j)
    _, V = evd_2x2(R_z)
    u = V[:, 0]
    return MixingWeights(complex(u[0] * np.conj(u[0])), complex(u[0] * np.conj(u[1])))


def projection_output(U_s, z_hyb, z_iso):
    """First row of ``U_s U_s^H Z``; the reference form of the projection."""
    Z = np.vstack([z_hyb, z_iso])
    U = np.asarray(U_s, dtype=complex).reshape(2, 1)
    return (U @ (np.conj(U).T @ Z))[0]


def project_subspace(state, z_hyb, z_iso):
    if not state.initialized:
        raise RuntimeError("state has no covariance yet")
    w = mixing_weights(state.R_z)
    return w.beta_hyb * np.asarray(z_hyb) + w.beta_iso * np.asarray(z_iso), w


@dataclass
class PipelineDiagnostics:
    selected: np.ndarray  # (F, L) model index per bin
    beta: np.ndarray  # (L, 2) complex: beta_hyb, beta_iso
    z_iso: np.ndarray  # (F, L)
    z_hyb: np.ndarray
    z_ss_iso: np.ndarray  # second row of the projection
    steer_index: np.ndarray  # (L,)
    clamped: np.ndarray  # (L,) bool
    shadows: list  # per shadow input: dict of iso / hyb / ss outputs
    warmup: int

    def model_histogram(self, n_models):
        return np.bincount(self.selected.ravel(), minlength=n_models)


def smoothed_covariances(z_hyb, z_iso, alpha):
    """EMA of the per-frame ``Z Z^H``; inputs are ``(F, L)``, result ``(L, 2, 2)``."""
    C = instantaneous_covariance(z_hyb.T, z_iso.T)
    out, _ = lfilter([1.0 - alpha], [1.0, -alpha], C, axis=0, zi=alpha * C[:1])
    return out


def _steering_indices(dictionary, doa_track):
    cache, idx, clamped = {}, [], []
    for d in doa_track:
        key = (d.azimuth, d.inclination)
        if key not in cache:
            cache[key] = dictionary.steering_index(d)
        idx.append(cache[key][0])
        clamped.append(cache[key][1])
    clamped = np.array(clamped, dtype=bool)
    if clamped.any():
        log.warning("%d frames steer outside coverage; nearest covered direction used",
                    int(clamped.sum()))
    return np.array(idx, dtype=np.int64), clamped


def run_pipeline(y, dictionary, doa_track, T=DEFAULT_T, shadows=()):
    """Hybrid MVDR followed by the inter-method PCA.

    ``doa_track`` has one Direction per frame. ``shadows`` are further
    multichannel STFTs pushed through exactly the same per-bin model choices
    and mixing weights (for example the ground-truth target). Returns the
    single-channel SS-Hybrid STFT and diagnostics.
    """
    Y = y.data
    L = Y.shape[2]
    if len(doa_track) != L:
        raise LengthMismatch(f"{len(doa_track)} DOAs for {L} frames")
    steer, clamped = _steering_indices(dictionary, doa_track)
    sh_data = [s.data if isinstance(s, StftTensor) else np.asarray(s) for s in shadows]
    z_iso, z_hyb, sel, sh = hybrid_stage(Y, dictionary, steer, shadows=sh_data)
    hop = y.config.hop_seconds
    alpha = float(np.exp(-hop / T))
    R = smoothed_covariances(z_hyb, z_iso, alpha)
    beta = np.empty((L, 2), dtype=complex)
    beta_2 = np.empty((L, 2), dtype=complex)  # U2 U1*, U2 U2* for the second row
    for l in range(L):
        w = mixing_weights(R[l])
        beta[l] = w.beta_hyb, w.beta_iso
        # second row of the projector is Hermitian-conjugate of the first
        beta_2[l] = np.conj(w.beta_iso), 1.0 - w.beta_hyb
    z_ss = beta[None, :, 0] * z_hyb + beta[None, :, 1] * z_iso
    z_ss_iso = beta_2[None, :, 0] * z_hyb + beta_2[None, :, 1] * z_iso
    sh_out = []
    for s_iso, s_hyb in sh:
        sh_out.append({
            "iso": s_iso,
            "hyb": s_hyb,
            "ss": beta[None, :, 0] * s_hyb + beta[None, :, 1] * s_iso,
        })
    diag = PipelineDiagnostics(sel, beta, z_iso, z_hyb, z_ss_iso, steer, clamped, sh_out,
                               warmup_frames(T, hop))
    return StftTensor(z_ss[None], y.config), diag
