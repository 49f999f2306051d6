"""Figures for the CLI report path (PNG files, reproducible bytes)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import COLUMNS  # noqa: E402

_META = {"Software": None}
_LABELS = {
    "fwsegsnr": "fwSegSNR (dB)",
    "seg_noise_power": "residual noise power (dB)",
    "target_distortion": "target distortion (dB)",
}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def metric_boxplots(report, path):
    """One panel per metric; boxes grouped by number of sources, one per method."""
    rows = report.rows
    methods = list(dict.fromkeys(r["method"] for r in rows))
    groups = sorted({r["n_sources"] for r in rows})
    metrics = COLUMNS[3:]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.5 * len(metrics), 3.8))
    width = 0.8 / max(len(methods), 1)
    colors = plt.cm.tab10(np.arange(len(methods)))
    for ax, key in zip(np.atleast_1d(axes), metrics):
        for j, m in enumerate(methods):
            data = [[r[key] for r in rows if r["method"] == m and r["n_sources"] == g]
                    for g in groups]
            pos = np.arange(len(groups)) + (j - (len(methods) - 1) / 2) * width
            keep = [k for k, d in enumerate(data) if d]
            if not keep:
                continue
            bp = ax.boxplot([data[k] for k in keep], positions=pos[keep], widths=width * 0.9,
                            patch_artist=True, showmeans=True)
            for b in bp["boxes"]:
                b.set_facecolor(colors[j])
            ax.plot([], [], "s", color=colors[j], label=m)
        ax.set_xticks(np.arange(len(groups)))
        ax.set_xticklabels([f"N_s={g}" for g in groups])
        ax.set_ylabel(_LABELS[key])
        ax.grid(alpha=0.3)
    np.atleast_1d(axes)[0].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def spectrograms(spectra, config, path, floor_db=-80.0):
    """Stacked magnitude spectrograms; ``spectra`` maps a title to ``(F, L)``."""
    n = len(spectra)
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), sharex=True, squeeze=False)
    peak = max(float(np.max(np.abs(z))) for z in spectra.values()) or 1.0
    for ax, (title, z) in zip(axes[:, 0], spectra.items()):
        db = 20 * np.log10(np.maximum(np.abs(z) / peak, 10 ** (floor_db / 20)))
        t = np.arange(z.shape[1]) * config.hop_seconds
        ax.pcolormesh(t, config.frequencies / 1000, db, shading="auto", vmin=floor_db, vmax=0)
        ax.set_title(title, fontsize=9)
        ax.set_ylabel("kHz")
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    return _save(fig, path)


def beam_patterns(dictionary, atfs, psi, bins, models, path):
    """Horizontal-plane power response ``|w^H h|^2`` in dB for selected models."""
    horiz = np.flatnonzero(np.isclose(atfs.inclination, np.pi / 2))
    order = horiz[np.argsort(atfs.azimuth[horiz])]
    az = np.rad2deg(atfs.azimuth[order])
    fig, axes = plt.subplots(1, len(bins), figsize=(4 * len(bins), 3.4), squeeze=False)
    freqs = np.arange(dictionary.n_bins) * atfs.sample_rate / (2 * (dictionary.n_bins - 1))
    for ax, nu in zip(axes[0], bins):
        for m in models:
            w = dictionary.weights[m, nu, psi]
            h = atfs.responses[order, nu, :]
            p = np.abs(h @ np.conj(w)) ** 2
            ax.plot(az, 10 * np.log10(np.maximum(p, 1e-12)), label=dictionary.model_ids[m])
        ax.axvline(np.rad2deg(dictionary.steer_az[psi]), color="k", ls="--", lw=0.8)
        ax.set_title(f"{freqs[nu]:.0f} Hz", fontsize=9)
        ax.set_xlabel("azimuth (deg)")
        ax.set_ylim(-40, 15)
        ax.grid(alpha=0.3)
    axes[0, 0].set_ylabel("power (dB)")
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
