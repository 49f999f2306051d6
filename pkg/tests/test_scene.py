import numpy as np
import pytest

from sshybrid.array import Direction, GridSpec, default_geometry, synth_freefield_atf
from sshybrid.noisemodels import Isotropy, isotropy_to_ncm
from sshybrid.scene import (
    CoverageError,
    SceneSpec,
    SourceSpec,
    check_decomposition,
    render_ambient,
    render_plane_wave,
    render_scene,
    segment_scenes,
    speech_shaped_noise,
    validate_segment,
)
from sshybrid.stft import StftConfig, analyze, interior
from sshybrid.wavio import read_wav, write_wav


@pytest.fixture(scope="module")
def atf():
    return synth_freefield_atf(default_geometry(), GridSpec(24, 10))


def src(az=0.0, gain=0.0, kind="speech", **kw):
    return SourceSpec(dict(kind=kind, **kw), [(0.0, Direction.from_degrees(az, 0.0))], gain)


def test_single_plane_wave_no_noise(atf):
    spec = SceneSpec(1.0, [src(30.0)], seed=3)
    out = render_scene(spec, atf)
    assert not np.any(out.gt_noise)
    np.testing.assert_array_equal(out.mixed, out.target_direct)
    assert len(out.doa_track) == StftConfig().n_frames(10000)


def test_plane_wave_matches_delayed_source():
    # broadside pair has zero path difference: both channels equal the source
    pos = np.array([[0.0, -0.05, 0.0], [0.0, 0.05, 0.0]])
    atf = synth_freefield_atf(pos, GridSpec(12, 6), ref_channel=0)
    rng = np.random.default_rng(0)
    s = rng.standard_normal(4000)
    y = render_plane_wave(s, lambda t: Direction.from_degrees(0.0, 0.0), atf, StftConfig())
    np.testing.assert_allclose(y[0], s, atol=1e-12)
    np.testing.assert_allclose(y[1], s, atol=1e-12)


def test_decomposition_exact_and_deterministic(atf):
    spec = SceneSpec(1.0, [src(0.0), src(90.0, -3.0)], ambient=Isotropy(), ambient_db=-6.0,
                     sensor_noise_db=-30.0, seed=11)
    a = render_scene(spec, atf)
    b = render_scene(spec, atf)
    assert check_decomposition(a)
    assert a.mixed.dtype == np.float32
    assert a.mixed.tobytes() == b.mixed.tobytes()


def test_linear_in_gain(atf):
    one = render_scene(SceneSpec(0.5, [src(12.0, 0.0)], seed=2), atf).target_direct
    two = render_scene(SceneSpec(0.5, [src(12.0, 20 * np.log10(2))], seed=2), atf).target_direct
    np.testing.assert_allclose(two, 2 * one, rtol=1e-5, atol=1e-6)


def test_levels_calibrated(atf):
    out = render_scene(SceneSpec(2.0, [src(0.0, -6.0)], seed=1), atf)
    rms = np.sqrt(np.mean(out.target_direct[1].astype(float) ** 2))
    assert 20 * np.log10(rms) == pytest.approx(-6.0, abs=0.3)


def _covariance_error(atf, iso, seconds, seed):
    cfg = StftConfig()
    n = int(seconds * cfg.sample_rate)
    y = render_ambient(iso, atf, n, cfg, np.random.default_rng(seed))
    Y = analyze(y, cfg).data
    R = np.einsum("pfl,qfl->fpq", Y, Y.conj()) / Y.shape[2]
    M = isotropy_to_ncm(iso, atf).matrices
    # a real signal has a real Nyquist-bin covariance, so that bin is left out
    band = slice(0, 80)
    c = np.vdot(M[band], R[band]).real / np.vdot(M[band], M[band]).real
    err = np.linalg.norm(R[band] - c * M[band], axis=(1, 2)) / np.linalg.norm(c * M[band], axis=(1, 2))
    return err


def test_diffuse_field_covariance(atf):
    assert _covariance_error(atf, Isotropy(), 12.0, 0).max() <= 0.10


def test_anisotropic_field_covariance(atf):
    assert _covariance_error(atf, Isotropy.aniso(np.pi / 2, 40), 12.0, 1).max() <= 0.10


def test_out_of_coverage():
    partial = synth_freefield_atf(default_geometry(), GridSpec(24, 10))
    keep = np.abs(partial.azimuth) < 1.0
    from sshybrid.array import AtfSet
    sub = AtfSet(partial.azimuth[keep], partial.inclination[keep], partial.responses[keep],
                 partial.quad_weights[keep], partial.sample_rate, coverage="partial")
    with pytest.raises(CoverageError):
        render_scene(SceneSpec(0.5, [src(170.0)]), sub)


def test_target_active_mask(atf):
    s = src(0.0)
    s.onset = 0.5
    out = render_scene(SceneSpec(1.0, [s]), atf)
    cfg = StftConfig()
    centres = (np.arange(len(out.target_active)) * cfg.hop + cfg.window_len / 2) / 10000
    np.testing.assert_array_equal(out.target_active, centres >= 0.5)
    # per-bin filtering leaks only a little ahead of the onset
    pre = np.abs(out.target_direct[:, :4800]).max()
    assert pre <= 1e-3 * np.abs(out.target_direct).max()


def test_segment_scenes_rules():
    pool = [dict(kind="speech"), dict(kind="speech", syllable_rate=3.0), dict(kind="tone", frequency=300)]
    assert all(s.labels["n_sources"] == 1 for s in segment_scenes(pool[:1], 1, 4))
    assert segment_scenes(pool[:2], 3, 4) == []
    for ns in (1, 2, 3):
        specs = segment_scenes(pool, ns, 5, seed=ns)
        assert len(specs) == 5
        for s in specs:
            assert validate_segment(s) == []
            az = [x.doa[0][1].degrees()[0] for x in s.sources]
            assert -60 <= az[0] <= 60


def test_validate_flags_bad_onset():
    s = segment_scenes([dict(kind="speech")], 1, 1)[0]
    s.sources[0].onset = 1.0
    assert validate_segment(s)


def test_speech_shaped_spectrum_falls(rng):
    x = speech_shaped_noise(50000, 10000, rng)
    X = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(x.size, 1e-4)
    low = X[(f > 200) & (f < 500)].mean()
    high = X[(f > 2000) & (f < 3000)].mean()
    assert low > 10 * high


def test_wav_round_trip(tmp_path, rng):
    x = rng.standard_normal((3, 500)).astype(np.float32)
    write_wav(tmp_path / "a.wav", x, 10000)
    y, rate = read_wav(tmp_path / "a.wav")
    assert rate == 10000
    assert y.astype(np.float32).tobytes() == x.tobytes()
    z, rate = read_wav(tmp_path / "a.wav", 5000)
    assert rate == 5000 and z.shape == (3, 250)


def test_file_source(tmp_path, atf):
    t = np.arange(16000) / 16000
    write_wav(tmp_path / "s.wav", np.sin(2 * np.pi * 440 * t), 16000)
    out = render_scene(SceneSpec(0.5, [src(0.0, kind="file", path=str(tmp_path / "s.wav"))]), atf)
    sl = interior(StftConfig(), 5000)
    X = np.abs(np.fft.rfft(out.target_direct[1, sl].astype(float)))
    f = np.fft.rfftfreq(sl.stop - sl.start, 1e-4)
    assert abs(f[np.argmax(X)] - 440) < 5
