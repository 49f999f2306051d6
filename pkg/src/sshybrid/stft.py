"""Short-time Fourier transform with weighted overlap-add resynthesis.

Defaults: 10 kHz, 16 ms square-root Hann window, 8 ms hop, no zero
padding, so a frame has ``160 // 2 + 1 = 81`` one-sided bins.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class SignalTooShort(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


WINDOW_KINDS = ("sqrt_hann",)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 10000
    window_len: int = 160
    hop: int = 80
    fft_len: int = 160
    window_kind: str = "sqrt_hann"

    def __post_init__(self):
        if self.window_kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.window_kind!r}")
        if self.hop <= 0 or self.window_len % self.hop:
            raise ValueError("hop must divide window_len")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")

    @property
    def n_bins(self):
        return self.fft_len // 2 + 1

    @property
    def hop_seconds(self):
        return self.hop / self.sample_rate

    @property
    def frequencies(self):
        return np.arange(self.n_bins) * self.sample_rate / self.fft_len

    def window(self):
        n = np.arange(self.window_len)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_len))

    def n_frames(self, n_samples):
        return (n_samples - self.window_len) // self.hop + 1

    def n_samples(self, n_frames):
        return (n_frames - 1) * self.hop + self.window_len

    def to_dict(self):
        return {
            "sample_rate": self.sample_rate,
            "window_len": self.window_len,
            "hop": self.hop,
            "fft_len": self.fft_len,
            "window_kind": self.window_kind,
        }


def is_cola(config, tol=1e-12):
    """True when the analysis*synthesis window pair overlap-adds to a constant."""
    w2 = config.window() ** 2
    acc = np.zeros(config.hop)
    for k in range(config.window_len // config.hop):
        acc += w2[k * config.hop:(k + 1) * config.hop]
    return bool(np.all(np.abs(acc - 1.0) <= tol))


@dataclass
class StftTensor:
    """Complex STFT data indexed ``(channel, bin, frame)``."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("STFT data must be (channels, bins, frames)")
        if self.data.shape[1] != self.config.n_bins:
            raise ConfigMismatch(
                f"{self.data.shape[1]} bins but config implies {self.config.n_bins}"
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def bins(self):
        return self.data.shape[1]

    @property
    def frames(self):
        return self.data.shape[2]


def analyze(signal, config=None):
    """STFT of a ``(channels, samples)`` (or 1-D) real signal."""
    config = config or StftConfig()
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] < config.window_len:
        raise SignalTooShort(
            f"{x.shape[-1]} samples is shorter than the {config.window_len}-sample window"
        )
    frames = sliding_window_view(x, config.window_len, axis=-1)[:, ::config.hop, :]
    spec = np.fft.rfft(frames * config.window(), n=config.fft_len, axis=-1)
    return StftTensor(np.ascontiguousarray(np.swapaxes(spec, 1, 2)), config)


def synthesize(tensor):
    """Weighted overlap-add inverse of :func:`analyze`.

    Exact in the interior; the first and last ``hop`` samples are only
    covered by a single frame and are not reconstructed exactly.
    """
    config = tensor.config
    if not is_cola(config):
        raise ConfigMismatch("window pair does not satisfy the COLA condition")
    if tensor.bins != config.n_bins:
        raise ConfigMismatch("bin count does not match config")
    Q, _, L = tensor.data.shape
    frames = np.fft.irfft(np.swapaxes(tensor.data, 1, 2), n=config.fft_len, axis=-1)
    frames = frames[..., :config.window_len] * config.window()
    out = np.zeros((Q, config.n_samples(L)))
    W, H = config.window_len, config.hop
    # accumulate one window-phase at a time so each add is a strided block
    for k in range(W // H):
        seg = frames[:, :, k * H:(k + 1) * H].reshape(Q, L * H)
        out[:, k * H:k * H + L * H] += seg
    return out


def interior(config, n_samples):
    """Slice of samples reconstructed exactly (drops a hop at each edge)."""
    return slice(config.hop, n_samples - config.hop)
