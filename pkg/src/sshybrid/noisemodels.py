"""Parametric noise covariance models.

Spatially correlated models are specified by an isotropy (directional power
density) and turned into per-bin covariance matrices with the quadrature
weighted sum over the ATF grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .array import Direction, angular_distance, wrap_angle
from .numerics import hermitize

PSD_TOL = 1e-10


class EmptyGrid(ValueError):
    pass


class NotPSD(ValueError):
    pass


def eval_aniso(phi, phi_peak, A):
    """Horizontally unimodal isotropy: linear in dB with azimuth distance.

    Returns ``10 ** (-A * |angle(phi, phi_peak)| / (10 pi))``, which is 1 at
    the peak and ``10 ** (-A/10)`` directly opposite.
    """
    if A < 0:
        raise ValueError("dynamic range A must be >= 0 dB")
    d = np.abs(wrap_angle(np.asarray(phi, dtype=float) - phi_peak))
    return 10.0 ** (-A * d / (10 * np.pi))


@dataclass(frozen=True)
class Isotropy:
    """Directional power density; ``kind`` is ``iso``, ``aniso`` or ``pw``."""

    kind: str = "iso"
    phi_peak: float = 0.0
    A: float = 0.0
    peak: Direction = None

    def __post_init__(self):
        if self.kind not in ("iso", "aniso", "pw"):
            raise ValueError(f"unknown isotropy kind {self.kind!r}")
        if self.kind == "pw" and self.peak is None:
            raise ValueError("plane-wave isotropy needs a peak direction")

    @classmethod
    def aniso(cls, phi_peak, A):
        return cls("aniso", float(phi_peak), float(A))

    @classmethod
    def plane_wave(cls, peak):
        return cls("pw", peak=peak)

    def __call__(self, azimuth, inclination):
        az = np.asarray(azimuth, dtype=float)
        if self.kind == "iso":
            return np.ones_like(az)
        if self.kind == "aniso":
            return eval_aniso(az, self.phi_peak, self.A)
        d = angular_distance(az, inclination, self.peak.azimuth, self.peak.inclination)
        return (d < 1e-9).astype(float)

    @property
    def label(self):
        if self.kind == "iso":
            return "Iso"
        if self.kind == "aniso":
            return f"Aniso(phi={np.rad2deg(self.phi_peak):.0f}deg,A={self.A:g}dB)"
        az, el = self.peak.degrees()
        return f"PW(az={az:.0f}deg,el={el:.0f}deg)"


@dataclass
class NcmModel:
    """Per-bin covariance matrices ``matrices[bin]`` (Q x Q)."""

    model_id: str
    matrices: np.ndarray
    provenance: tuple = field(default=("parametric", "iso"))

    @property
    def n_bins(self):
        return self.matrices.shape[0]

    @property
    def n_channels(self):
        return self.matrices.shape[-1]

    def validate(self, tol=PSD_TOL):
        w = np.linalg.eigvalsh(self.matrices)
        lmax = np.maximum(np.abs(w).max(axis=-1), np.finfo(float).tiny)
        bad = np.flatnonzero(w[:, 0] < -tol * lmax)
        if bad.size:
            raise NotPSD(f"model {self.model_id}: bin {bad[0]} has eigenvalue {w[bad[0], 0]:.3e}")
        return self


def isotropy_weights(p, atfs):
    """``P(Omega_i) * q_i`` for every grid direction."""
    return p(atfs.azimuth, atfs.inclination) * atfs.quad_weights


def covariance_from_weights(weights, atfs):
    """``sum_i weights[..., i] h_i h_i^H`` for every bin.

    ``weights`` is ``(I,)`` or ``(M, I)``; the result is ``(F, Q, Q)`` or
    ``(M, F, Q, Q)``.
    """
    if atfs.n_dirs == 0:
        raise EmptyGrid("ATF set has no directions")
    wts = np.atleast_2d(np.asarray(weights, dtype=float))
    H = atfs.responses
    I, F, Q = H.shape
    out = np.empty((wts.shape[0], F, Q, Q), dtype=complex)
    for nu in range(F):
        h = H[:, nu, :]
        outer = (h[:, :, None] * h[:, None, :].conj()).reshape(I, Q * Q)
        out[:, nu] = (wts @ outer).reshape(-1, Q, Q)
    out = hermitize(out)
    return out[0] if np.ndim(weights) == 1 else out


def isotropy_to_ncm(p, atfs, model_id=None):
    if atfs.n_dirs == 0:
        raise EmptyGrid("ATF set has no directions")
    R = covariance_from_weights(isotropy_weights(p, atfs), atfs)
    return NcmModel(model_id or p.label, R, ("parametric", p.kind))


def identity_model(Q, F):
    if Q < 1 or F < 1:
        raise ValueError("need Q >= 1 and F >= 1")
    return NcmModel("Identity", np.broadcast_to(np.eye(Q, dtype=complex), (F, Q, Q)).copy(),
                    ("parametric", "identity"))


def default_aniso_set(peaks_deg=None, ranges_db=None):
    """300 unimodal models: peaks every 6 deg times A in {8, 16, 24, 32, 40} dB."""
    peaks_deg = np.arange(0, 360, 6) if peaks_deg is None else peaks_deg
    ranges_db = (8, 16, 24, 32, 40) if ranges_db is None else ranges_db
    return [Isotropy.aniso(np.deg2rad(p), A) for p in peaks_deg for A in ranges_db]
