"""Array transfer functions: synthetic free-field sets, quadrature weights,
steering lookup and the on-disk ATF format.

Direction convention: azimuth is measured in the horizontal plane from +x
towards +y and wrapped to [-pi, pi); inclination is measured down from +z,
so elevation = pi/2 - inclination.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stft import StftConfig

SPEED_OF_SOUND = 343.0
ATF_FORMAT_VERSION = 1
PAYLOAD_LAYOUT = "direction-major, then bin, then channel, complex64 little-endian interleaved re/im"


class InvalidGrid(ValueError):
    pass


class InvalidGeometry(ValueError):
    pass


class RefChannelOutOfRange(IndexError):
    pass


class ZeroReference(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def wrap_angle(x):
    """Wrap radians to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Direction:
    azimuth: float
    inclination: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(wrap_angle(self.azimuth)))
        if not 0.0 <= self.inclination <= np.pi:
            raise InvalidGrid(f"inclination {self.inclination} outside [0, pi]")

    @classmethod
    def from_degrees(cls, azimuth_deg, elevation_deg=0.0):
        return cls(np.deg2rad(azimuth_deg), np.deg2rad(90.0 - elevation_deg))

    @property
    def elevation(self):
        return np.pi / 2 - self.inclination

    def degrees(self):
        """(azimuth, elevation) in degrees."""
        return float(np.rad2deg(self.azimuth)), float(np.rad2deg(self.elevation))

    def unit_vector(self):
        return unit_vectors(self.azimuth, self.inclination)


def unit_vectors(azimuth, inclination):
    az = np.asarray(azimuth, dtype=float)
    inc = np.asarray(inclination, dtype=float)
    return np.stack(
        [np.sin(inc) * np.cos(az), np.sin(inc) * np.sin(az), np.cos(inc)], axis=-1
    )


def angular_distance(az1, inc1, az2, inc2):
    """Great-circle angle between directions, in radians."""
    u = unit_vectors(az1, inc1)
    v = unit_vectors(az2, inc2)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(cross, dot)


def quadrature_weights(n_phi, n_theta, inclinations):
    """Driscoll-Healy quadrature weight for each sample inclination.

    The weights of a full ``n_phi x n_theta`` grid sum to one, i.e. they
    integrate over the sphere normalised by 4*pi.
    """
    if n_phi < 2 or n_theta < 2:
        raise InvalidGrid("need at least two samples in azimuth and inclination")
    theta = np.asarray(inclinations, dtype=float)
    if np.any((theta < 0) | (theta > np.pi)):
        raise InvalidGrid("inclination outside [0, pi]")
    acc = np.zeros_like(theta)
    for p in range(math.ceil(0.5 * n_theta - 1) + 1):
        acc += np.sin((2 * p + 1) * theta) / (2 * p + 1)
    q = 2.0 * np.sin(theta) / (n_phi * n_theta) * acc
    # sin(0) and sin(pi) are not exactly zero in floating point
    q[(theta == 0) | (theta == np.pi)] = 0.0
    return q


@dataclass(frozen=True)
class GridSpec:
    """Uniform equiangular grid; inclinations are ``pi * j / n_incl``."""

    n_az: int = 60
    n_incl: int = 20

    def __post_init__(self):
        if self.n_az < 2 or self.n_incl < 2:
            raise InvalidGrid("grid needs n_az >= 2 and n_incl >= 2")

    def directions(self):
        """Grid azimuths and inclinations; the pole is kept once."""
        az = wrap_angle(2 * np.pi * np.arange(self.n_az) / self.n_az)
        az_list = [0.0]
        inc_list = [0.0]
        for j in range(1, self.n_incl):
            theta = np.pi * j / self.n_incl
            az_list.extend(az)
            inc_list.extend([theta] * self.n_az)
        return np.array(az_list), np.array(inc_list)


@dataclass
class AtfSet:
    """Array responses ``responses[direction, bin, channel]``."""

    azimuth: np.ndarray
    inclination: np.ndarray
    responses: np.ndarray
    quad_weights: np.ndarray
    sample_rate: int
    n_az: int = 0
    n_incl: int = 0
    coverage: str = "full"
    ref_channel: int = 1
    _fingerprint: bytes = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.azimuth = np.asarray(self.azimuth, dtype=float)
        self.inclination = np.asarray(self.inclination, dtype=float)
        self.responses = np.asarray(self.responses)
        self.quad_weights = np.asarray(self.quad_weights, dtype=float)
        n = self.azimuth.shape[0]
        if self.responses.ndim != 3 or self.responses.shape[0] != n:
            raise FormatError("responses must be (directions, bins, channels)")
        if self.inclination.shape != (n,) or self.quad_weights.shape != (n,):
            raise FormatError("direction table and quadrature weights disagree in length")
        if np.any(self.quad_weights < 0):
            raise InvalidGrid("negative quadrature weight")
        if not np.all(np.isfinite(self.responses)):
            raise FormatError("non-finite response")
        for arr in (self.azimuth, self.inclination, self.responses, self.quad_weights):
            arr.setflags(write=False)

    @property
    def n_dirs(self):
        return self.responses.shape[0]

    @property
    def n_bins(self):
        return self.responses.shape[1]

    @property
    def n_channels(self):
        return self.responses.shape[2]

    def direction(self, i):
        return Direction(self.azimuth[i], self.inclination[i])

    def fingerprint(self):
        """SHA-256 over dimensions, direction table, weights and responses."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(np.array(self.responses.shape, dtype="<u4").tobytes())
            h.update(np.asarray(self.azimuth, dtype="<f8").tobytes())
            h.update(np.asarray(self.inclination, dtype="<f8").tobytes())
            h.update(np.asarray(self.quad_weights, dtype="<f8").tobytes())
            h.update(np.asarray(self.responses, dtype="<c16").tobytes())
            self._fingerprint = h.digest()
        return self._fingerprint


def default_geometry():
    """Six-sensor head-worn layout (metres): four coplanar sensors on the
    front of a glasses frame plus one sensor at each ear.

    Index 1 is the mid-front sensor used as the default reference.
    """
    return np.array(
        [
            [0.080, 0.070, 0.010],
            [0.080, 0.000, 0.025],
            [0.080, -0.070, 0.010],
            [0.080, 0.035, -0.015],
            [0.000, 0.080, 0.000],
            [0.000, -0.080, 0.000],
        ]
    )


def synth_freefield_atf(geometry, grid=None, config=None, speed_of_sound=SPEED_OF_SOUND,
                        ref_channel=1):
    """Far-field free-field responses ``exp(-2j*pi*f*tau)`` on a uniform grid.

    ``tau`` is the arrival delay at each sensor relative to the array origin,
    negative for sensors closer to the source.
    """
    grid = grid or GridSpec()
    config = config or StftConfig()
    pos = np.asarray(geometry, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
        raise InvalidGeometry("geometry must be a (Q, 3) array of sensor positions")
    if not np.all(np.isfinite(pos)):
        raise InvalidGeometry("non-finite sensor position")
    if speed_of_sound <= 0:
        raise InvalidGeometry("speed of sound must be positive")
    az, inc = grid.directions()
    tau = -(unit_vectors(az, inc) @ pos.T) / speed_of_sound  # (I, Q)
    f = config.frequencies
    responses = np.exp(-2j * np.pi * f[None, :, None] * tau[:, None, :])
    q = quadrature_weights(grid.n_az, grid.n_incl, inc)
    return AtfSet(az, inc, responses, q, config.sample_rate, grid.n_az, grid.n_incl,
                  "full", ref_channel)


def nearest_index(atfs_az, atfs_inc, target):
    """Index of the grid direction closest to ``target`` (lowest index on ties)."""
    d = angular_distance(atfs_az, atfs_inc, target.azimuth, target.inclination)
    return int(np.argmin(d))


@dataclass(frozen=True)
class SteeringVector:
    direction: Direction
    index: int
    rtf: np.ndarray  # (bins, channels), reference entry exactly 1


def relative_tf(h, ref_channel):
    """Normalise responses ``(..., Q)`` by the reference channel."""
    h = np.asarray(h)
    if not 0 <= ref_channel < h.shape[-1]:
        raise RefChannelOutOfRange(f"reference channel {ref_channel} not in [0, {h.shape[-1]})")
    ref = h[..., ref_channel:ref_channel + 1]
    if np.any(np.abs(ref) < 1e-12):
        raise ZeroReference("reference channel response vanishes")
    out = h / ref
    out[..., ref_channel] = 1.0
    return out


def steering_lookup(atfs, target, ref_channel=None):
    ref_channel = atfs.ref_channel if ref_channel is None else ref_channel
    if atfs.n_dirs == 0:
        raise InvalidGrid("empty ATF set")
    i = nearest_index(atfs.azimuth, atfs.inclination, target)
    return SteeringVector(atfs.direction(i), i, relative_tf(atfs.responses[i], ref_channel))


def steering_grid(az_deg=None, el_deg=None):
    """Default steering directions: azimuth -90..90 deg in 6 deg steps and
    elevation -27..27 deg in 9 deg steps, 31 x 7 = 217 directions."""
    az_deg = np.arange(-90, 91, 6) if az_deg is None else np.asarray(az_deg)
    el_deg = np.arange(-27, 28, 9) if el_deg is None else np.asarray(el_deg)
    return [Direction.from_degrees(a, e) for e in el_deg for a in az_deg]


def export_atf(atfs, path):
    """Write ``<path>`` (JSON manifest) and ``<path stem>.bin`` (payload)."""
    path = Path(path)
    payload = path.with_suffix(".bin")
    data = np.ascontiguousarray(atfs.responses, dtype="<c8")
    payload.write_bytes(data.tobytes())
    manifest = {
        "version": ATF_FORMAT_VERSION,
        "Q": atfs.n_channels,
        "F": atfs.n_bins,
        "sample_rate": atfs.sample_rate,
        "grid": {"n_az": atfs.n_az, "n_incl": atfs.n_incl, "coverage": atfs.coverage},
        "ref_channel": atfs.ref_channel,
        "payload_file": payload.name,
        "payload_layout": PAYLOAD_LAYOUT,
        "directions": [[float(a), float(i)] for a, i in zip(atfs.azimuth, atfs.inclination)],
        "quad_weights": [float(q) for q in atfs.quad_weights],
    }
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def import_atf(manifest_path):
    manifest_path = Path(manifest_path)
    raw = manifest_path.read_bytes()
    try:
        m = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e.msg}", e.pos) from None
    for key in ("version", "Q", "F", "sample_rate", "grid", "payload_file"):
        if key not in m:
            raise FormatError(f"manifest missing {key!r}")
    if m["version"] != ATF_FORMAT_VERSION:
        raise FormatError(f"unsupported ATF format version {m['version']}")
    if m.get("payload_layout", PAYLOAD_LAYOUT) != PAYLOAD_LAYOUT:
        raise FormatError("unsupported payload layout")
    Q, F = int(m["Q"]), int(m["F"])
    grid = m["grid"]
    if "directions" in m:
        dirs = np.asarray(m["directions"], dtype=float).reshape(-1, 2)
        az, inc = dirs[:, 0], dirs[:, 1]
    else:
        az, inc = GridSpec(grid["n_az"], grid["n_incl"]).directions()
    if "quad_weights" in m:
        q = np.asarray(m["quad_weights"], dtype=float)
    else:
        q = quadrature_weights(grid["n_az"], grid["n_incl"], inc)
    if q.shape[0] != az.shape[0]:
        raise FormatError(f"{q.shape[0]} quadrature weights for {az.shape[0]} directions")
    payload = (manifest_path.parent / m["payload_file"]).read_bytes()
    expected = az.shape[0] * F * Q * 8
    if len(payload) < expected:
        raise FormatError(f"payload truncated: expected {expected} bytes", len(payload))
    if len(payload) > expected:
        raise FormatError(f"payload has trailing data after {expected} bytes", expected)
    responses = np.frombuffer(payload, dtype="<c8").reshape(az.shape[0], F, Q)
    return AtfSet(az, inc, responses.astype(complex), q, int(m["sample_rate"]),
                  int(grid.get("n_az", 0)), int(grid.get("n_incl", 0)),
                  grid.get("coverage", "full"), int(m.get("ref_channel", 1)))
