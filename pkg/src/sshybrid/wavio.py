"""32-bit float WAV reading and writing, with rate conversion on input."""

from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


class FileError(OSError):
    pass


def write_wav(path, data, sample_rate):
    """Write ``(channels, samples)`` or 1-D float data as 32-bit float WAV."""
    x = np.asarray(data, dtype=np.float32)
    if x.ndim == 2:
        x = x.T
    wavfile.write(str(path), int(sample_rate), np.ascontiguousarray(x))
    return Path(path)


def read_wav(path, sample_rate=None):
    """Return ``(channels, samples)`` float64 data and its sample rate.

    Integer PCM is scaled to [-1, 1). With ``sample_rate`` given the signal
    is resampled to it by polyphase filtering.
    """
    try:
        rate, x = wavfile.read(str(path))
    except (OSError, ValueError) as e:
        raise FileError(f"cannot read {path}: {e}") from e
    if np.issubdtype(x.dtype, np.integer):
        x = x.astype(float) / float(2 ** (8 * x.dtype.itemsize - 1))
        if x.dtype == np.uint8:
            x -= 1.0
    x = np.asarray(x, dtype=float)
    x = x[None, :] if x.ndim == 1 else x.T
    if sample_rate is not None and rate != sample_rate:
        r = Fraction(int(sample_rate), int(rate))
        x = resample_poly(x, r.numerator, r.denominator, axis=-1)
        rate = sample_rate
    return x, int(rate)
