"""Synthetic multi-talker scenes with exact ground-truth decomposition.

Sources are plane waves rendered by per-bin multiplication with the array
response in the STFT domain. The ambient field is a sum over the ATF grid
of independent noise weighted by ``sqrt(P * q)``. Sensor noise is white and
independent per channel.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt

from .array import Direction, angular_distance, nearest_index
from .noisemodels import Isotropy
from .stft import StftConfig, StftTensor, analyze, synthesize
from .wavio import read_wav

MAX_GRID_GAP = 0.2  # rad; farther than this from any grid point is out of coverage
SEGMENT_DURATION = 6.0
TARGET_ONSET = 2.0


class CoverageError(ValueError):
    pass


@dataclass
class SourceSpec:
    """One talker.

    ``signal`` is a dict with ``kind`` in ``speech``, ``tone``, ``impulses``
    or ``file`` plus its parameters. ``doa`` is a list of
    ``(start_seconds, Direction)`` pairs, piecewise constant. ``gain_db`` is
    the RMS level over the active span; ``onset``/``offset`` bound activity.
    """

    signal: dict
    doa: list
    gain_db: float = 0.0
    onset: float = 0.0
    offset: float = None

    def direction_at(self, t):
        cur = self.doa[0][1]
        for start, d in self.doa:
            if t >= start:
                cur = d
        return cur


@dataclass
class SceneSpec:
    duration: float
    sources: list
    target_index: int = 0
    ambient: Isotropy = None
    ambient_db: float = None
    sensor_noise_db: float = None
    sample_rate: int = 10000
    seed: int = 0
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 0 <= self.target_index < len(self.sources):
            raise ValueError(f"target_index {self.target_index} out of range")

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))


@dataclass
class SceneOutput:
    mixed: np.ndarray  # (Q, N) float32
    target_direct: np.ndarray
    gt_noise: np.ndarray
    doa_track: list  # target Direction per STFT frame of ``mixed``
    target_active: np.ndarray  # (L,) bool
    sample_rate: int
    labels: dict


# signal generators ------------------------------------------------------------


def speech_shaped_noise(n, rate, rng, syllable_rate=4.0):
    """Noise with a falling long-term spectrum and 4 Hz syllabic bursts."""
    x = rng.standard_normal(n + rate // 10)
    hi = min(4000.0, 0.45 * rate)
    sos = np.vstack([butter(2, [100.0, hi], btype="band", fs=rate, output="sos"),
                     butter(1, 500.0, fs=rate, output="sos")])
    x = sosfilt(sos, x)[rate // 10:]
    t = np.arange(n) / rate
    phase = rng.uniform(0, 2 * np.pi)
    env = np.abs(np.sin(np.pi * syllable_rate * t + phase)) ** 1.5
    return x * env


def generate_signal(desc, n, rate, rng):
    kind = desc.get("kind", "speech")
    if kind == "speech":
        return speech_shaped_noise(n, rate, rng, desc.get("syllable_rate", 4.0))
    if kind == "tone":
        t = np.arange(n) / rate
        return np.sin(2 * np.pi * desc["frequency"] * t + desc.get("phase", 0.0))
    if kind == "impulses":
        x = np.zeros(n)
        x[::max(1, int(round(desc["period"] * rate)))] = 1.0
        return x
    if kind == "file":
        x, _ = read_wav(desc["path"], rate)
        x = x[0]
        return np.resize(x, n) if x.size else np.zeros(n)
    raise ValueError(f"unknown signal kind {kind!r}")


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


# rendering ----------------------------------------------------------------------


def _grid_index(atfs, d):
    i = nearest_index(atfs.azimuth, atfs.inclination, d)
    gap = angular_distance(atfs.azimuth[i], atfs.inclination[i], d.azimuth, d.inclination)
    if gap > MAX_GRID_GAP:
        raise CoverageError(f"direction {d.degrees()} is outside ATF coverage")
    return i


def _padded_length(n, cfg):
    """Length with one hop of padding on each side that frames exactly."""
    m = n + 2 * cfg.hop
    extra = (-(m - cfg.window_len)) % cfg.hop
    return m + extra


def render_plane_wave(signal, direction_of_frame, atfs, cfg):
    """``(Q, n)`` sensor signals of a mono source moving frame by frame.

    ``direction_of_frame(t)`` gives the DOA at time ``t`` seconds.
    """
    n = signal.shape[-1]
    m = _padded_length(n, cfg)
    x = np.zeros(m)
    x[cfg.hop:cfg.hop + n] = signal
    S = analyze(x, cfg).data[0]  # (F, L)
    L = S.shape[1]
    # frame l is centred on padded sample l*hop + win/2
    centres = (np.arange(L) * cfg.hop + cfg.window_len / 2 - cfg.hop) / cfg.sample_rate
    idx = np.array([_grid_index(atfs, direction_of_frame(t)) for t in centres])
    H = atfs.responses[idx]  # (L, F, Q)
    X = np.transpose(H, (2, 1, 0)) * S[None]
    y = synthesize(StftTensor(X, cfg))
    return y[:, cfg.hop:cfg.hop + n]


def render_ambient(isotropy, atfs, n, cfg, rng, chunk=32):
    """Spatially coloured noise: independent complex Gaussian per grid
    direction, weighted by ``sqrt(P q)``, mixed through the responses."""
    m = _padded_length(n, cfg)
    L = cfg.n_frames(m)
    g = np.sqrt(isotropy(atfs.azimuth, atfs.inclination) * atfs.quad_weights)
    keep = np.flatnonzero(g > 0)
    H = np.transpose(atfs.responses[keep], (1, 2, 0)) * g[keep]  # (F, Q, I)
    F, Q, I = H.shape
    X = np.empty((Q, F, L), dtype=complex)
    for start in range(0, L, chunk):
        l = min(chunk, L - start)
        G = (rng.standard_normal((F, I, l)) + 1j * rng.standard_normal((F, I, l))) / np.sqrt(2)
        X[:, :, start:start + l] = np.transpose(H @ G, (1, 0, 2))
    # DC and Nyquist bins of a real signal are real; keep their variance
    X[:, 0, :] = np.sqrt(2) * X[:, 0, :].real
    if cfg.fft_len % 2 == 0:
        X[:, -1, :] = np.sqrt(2) * X[:, -1, :].real
    y = synthesize(StftTensor(X, cfg))
    return y[:, cfg.hop:cfg.hop + n]


def render_scene(spec, atfs, cfg=None):
    cfg = cfg or StftConfig(sample_rate=spec.sample_rate)
    if cfg.sample_rate != atfs.sample_rate:
        raise ValueError("STFT and ATF sample rates differ")
    n = spec.n_samples
    Q = atfs.n_channels
    ref = atfs.ref_channel
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.sources) + 2)
    target = np.zeros((Q, n))
    noise = np.zeros((Q, n))
    for k, src in enumerate(spec.sources):
        rng = np.random.default_rng(seeds[k])
        s = generate_signal(src.signal, n, spec.sample_rate, rng)
        t = np.arange(n) / spec.sample_rate
        off = spec.duration if src.offset is None else src.offset
        active = (t >= src.onset) & (t < off)
        s = np.where(active, s, 0.0)
        r = _rms(s[active])
        if r > 0:
            s *= 10 ** (src.gain_db / 20) / r
        y = render_plane_wave(s, src.direction_at, atfs, cfg)
        if k == spec.target_index:
            target += y
        else:
            noise += y
    if spec.ambient is not None and spec.ambient_db is not None:
        amb = render_ambient(spec.ambient, atfs, n, cfg, np.random.default_rng(seeds[-2]))
        amb *= 10 ** (spec.ambient_db / 20) / max(_rms(amb[ref]), np.finfo(float).tiny)
        noise += amb
    if spec.sensor_noise_db is not None:
        rng = np.random.default_rng(seeds[-1])
        noise += 10 ** (spec.sensor_noise_db / 20) * rng.standard_normal((Q, n))
    t32 = target.astype(np.float32)
    n32 = noise.astype(np.float32)
    # summing the stored float32 parts keeps the decomposition exact
    mixed = t32 + n32
    L = cfg.n_frames(n)
    centres = (np.arange(L) * cfg.hop + cfg.window_len / 2) / spec.sample_rate
    tsrc = spec.sources[spec.target_index]
    track = [tsrc.direction_at(c) for c in centres]
    off = spec.duration if tsrc.offset is None else tsrc.offset
    active = (centres >= tsrc.onset) & (centres < off)
    labels = dict(spec.labels)
    labels.setdefault("n_sources", len(spec.sources))
    return SceneOutput(mixed, t32, n32, track, active, spec.sample_rate, labels)


def check_decomposition(out):
    return np.array_equal(out.mixed, out.target_direct + out.gt_noise)


# segmentation ---------------------------------------------------------------------


def segment_scenes(pool, n_sources, n_segments, seed=0, duration=SEGMENT_DURATION,
                   onset=TARGET_ONSET, target_az_deg=(-60, 60), min_separation_deg=30,
                   ambient=None, ambient_db=None, sensor_noise_db=None, interferer_db=0.0,
                   az_step_deg=6):
    """Scene specs of ``duration`` seconds with the target starting at ``onset``.

    ``pool`` is a list of signal descriptors. Each segment uses ``n_sources``
    distinct pool entries; the first is the target, the others are
    interferers active throughout. Returns an empty list when the pool is too
    small.
    """
    if n_sources < 1 or n_sources > len(pool):
        return []
    rng = np.random.default_rng(seed)
    lo, hi = target_az_deg
    target_grid = np.arange(lo, hi + 1e-9, az_step_deg)
    all_az = np.arange(-180, 180, az_step_deg)
    specs = []
    for k in range(n_segments):
        pick = rng.choice(len(pool), size=n_sources, replace=False)
        t_az = float(rng.choice(target_grid))
        sources = [SourceSpec(pool[pick[0]], [(0.0, Direction.from_degrees(t_az, 0.0))], 0.0,
                              onset)]
        used = [t_az]
        for j in pick[1:]:
            ok = [a for a in all_az
                  if min(abs((a - u + 180) % 360 - 180) for u in used) >= min_separation_deg]
            a = float(rng.choice(ok))
            used.append(a)
            sources.append(SourceSpec(pool[j], [(0.0, Direction.from_degrees(a, 0.0))],
                                      interferer_db))
        specs.append(SceneSpec(duration, sources, 0, ambient, ambient_db, sensor_noise_db,
                               seed=int(rng.integers(2**31)),
                               labels={"segment": k, "n_sources": n_sources}))
    return specs


def validate_segment(spec, duration=SEGMENT_DURATION, onset=TARGET_ONSET):
    """List of violated segmentation constraints (empty when valid)."""
    problems = []
    if abs(spec.duration - duration) > 1e-9:
        problems.append(f"duration {spec.duration} != {duration}")
    tgt = spec.sources[spec.target_index]
    if abs(tgt.onset - onset) > 1e-9:
        problems.append(f"target onset {tgt.onset} != {onset}")
    if spec.labels.get("n_sources") != len(spec.sources):
        problems.append("n_sources label does not match the source count")
    for k, s in enumerate(spec.sources):
        if k != spec.target_index and (s.onset > 0 or (s.offset is not None
                                                       and s.offset < spec.duration)):
            problems.append(f"interferer {k} not active throughout")
    return problems
