"""MVDR weights with condition-number loading, and the hybrid stage that
picks the minimum-output-power beamformer per time-frequency bin."""

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import eig_extremes, hermitian_solve, hermitian_solve_batch

log = logging.getLogger(__name__)


class InvalidKappa(ValueError):
    pass


class ZeroSteering(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def loading_level(lmin, lmax, kappa0):
    """Diagonal load that caps the condition number at ``kappa0``."""
    if kappa0 is None:
        return np.zeros_like(np.asarray(lmax, dtype=float))
    if not kappa0 > 1:
        raise InvalidKappa(f"kappa0 must exceed 1, got {kappa0}")
    return np.maximum((lmax - kappa0 * lmin) / (kappa0 - 1.0), 0.0)


def robust_loading(R, kappa0=None):
    """Return ``(R + eps*I, eps)``; works on a single matrix or a stack."""
    R = np.asarray(R, dtype=complex)
    if kappa0 is None:
        return R.copy(), np.zeros(R.shape[:-2]) if R.ndim > 2 else 0.0
    lmin, lmax = eig_extremes(R)
    eps = loading_level(lmin, lmax, kappa0)
    Q = R.shape[-1]
    out = R + np.asarray(eps)[..., None, None] * np.eye(Q)
    return out, (float(eps) if R.ndim == 2 else eps)


@dataclass(frozen=True)
class MvdrWeights:
    weights: np.ndarray  # (bins, channels)
    steering: object = None
    model_id: str = ""


def mvdr_weights(R_eps, d):
    """``w = R^-1 d / (d^H R^-1 d)`` for one matrix and steering vector."""
    d = np.asarray(d, dtype=complex)
    if not np.any(d):
        raise ZeroSteering("steering vector is zero")
    x = hermitian_solve(R_eps, d)
    return x / np.vdot(d, x)


def mvdr_weights_batch(R_eps, D):
    """Batched MVDR: ``R_eps`` is ``(..., Q, Q)``, ``D`` is ``(..., K, Q)``.

    Returns ``(..., K, Q)``: one weight vector per steering vector.
    """
    D = np.asarray(D, dtype=complex)
    if np.any(~np.any(D, axis=-1)):
        raise ZeroSteering("steering vector is zero")
    X = hermitian_solve_batch(R_eps, np.swapaxes(D, -1, -2))  # (..., Q, K)
    X = np.swapaxes(X, -1, -2)
    denom = np.sum(np.conj(np.broadcast_to(D, X.shape)) * X, axis=-1)
    return X / denom[..., None]


def design_mvdr(model, rtf, kappa0=None, steering=None):
    """Per-bin MVDR weights for an NCM model and a ``(bins, Q)`` RTF."""
    R_eps, _ = robust_loading(model.matrices, kappa0)
    W = mvdr_weights_batch(R_eps, np.asarray(rtf)[:, None, :])[:, 0, :]
    return MvdrWeights(W, steering, model.model_id)


@dataclass
class HybridFrameOutput:
    z_iso: np.ndarray
    z_hyb: np.ndarray
    selected_model: np.ndarray
    clamped: bool = False


def beam_outputs(weights, y):
    """All model outputs ``w_m^H y`` for one steering direction.

    ``weights`` is ``(M, F, Q)`` and ``y`` is ``(Q, F)`` or ``(Q, F, L)``;
    returns ``(M, F)`` or ``(F, M, L)``.
    """
    Wc = np.conj(weights)
    if y.ndim == 2:
        return np.einsum("mfq,qf->mf", Wc, y)
    return np.matmul(np.swapaxes(Wc, 0, 1), np.swapaxes(y, 0, 1))


def select_min_power(Z, iso_index, axis):
    """Minimum-power pick along ``axis``; ties go to the lower model index."""
    P = Z.real ** 2 + Z.imag ** 2
    sel = np.argmin(P, axis=axis)
    z_hyb = np.squeeze(np.take_along_axis(Z, np.expand_dims(sel, axis), axis=axis), axis=axis)
    z_iso = np.take(Z, iso_index, axis=axis)
    return z_iso, z_hyb, sel


def process_frame(y, dictionary, target):
    """Hybrid MVDR on one frame ``y`` of shape ``(Q, F)``."""
    y = np.asarray(y, dtype=complex)
    if y.shape != (dictionary.n_channels, dictionary.n_bins):
        raise DimensionMismatch(
            f"frame is {y.shape}, dictionary expects {(dictionary.n_channels, dictionary.n_bins)}"
        )
    psi, clamped = dictionary.steering_index(target)
    if clamped:
        log.warning("target %s outside steering coverage; using nearest covered direction",
                    target.degrees())
    Z = beam_outputs(dictionary.weights[:, :, psi, :], y)
    z_iso, z_hyb, sel = select_min_power(Z, dictionary.iso_index, axis=0)
    return HybridFrameOutput(z_iso, z_hyb, sel, clamped)


def hybrid_stage(Y, dictionary, steer_idx, chunk=128, shadows=()):
    """Hybrid MVDR over a whole ``(Q, F, L)`` STFT.

    ``steer_idx`` holds the dictionary steering index of every frame.
    ``shadows`` are further ``(Q, F, L)`` arrays filtered with the same
    per-bin choices (used to push ground-truth components through the
    identical time-varying filter). Returns ``(z_iso, z_hyb, selected,
    shadow_outputs)`` where shadow outputs are ``(iso, hyb)`` pairs.
    """
    Q, F, L = Y.shape
    if (Q, F) != (dictionary.n_channels, dictionary.n_bins):
        raise DimensionMismatch(
            f"STFT is {(Q, F)}, dictionary expects {(dictionary.n_channels, dictionary.n_bins)}"
        )
    steer_idx = np.asarray(steer_idx)
    if steer_idx.shape != (L,):
        raise DimensionMismatch("one steering index per frame required")
    z_iso = np.empty((F, L), dtype=complex)
    z_hyb = np.empty((F, L), dtype=complex)
    sel = np.empty((F, L), dtype=np.int64)
    sh_out = [(np.empty((F, L), complex), np.empty((F, L), complex)) for _ in shadows]
    fidx = np.arange(F)[:, None]
    for psi in np.unique(steer_idx):
        frames = np.flatnonzero(steer_idx == psi)
        W = dictionary.weights[:, :, psi, :]
        for start in range(0, frames.size, chunk):
            fr = frames[start:start + chunk]
            Z = beam_outputs(W, Y[:, :, fr])  # (F, M, l)
            zi, zh, s = select_min_power(Z, dictionary.iso_index, axis=1)
            z_iso[:, fr] = zi
            z_hyb[:, fr] = zh
            sel[:, fr] = s
            for (out_i, out_h), S in zip(sh_out, shadows):
                Ws = np.conj(W[s, fidx])  # (F, l, Q)
                Wi = np.conj(W[dictionary.iso_index])  # (F, Q)
                Sf = S[:, :, fr]
                out_h[:, fr] = np.einsum("flq,qfl->fl", Ws, Sf)
                out_i[:, fr] = np.einsum("fq,qfl->fl", Wi, Sf)
    return z_iso, z_hyb, sel, sh_out
