import json

import numpy as np
import pytest

from sshybrid.array import (
    AtfSet,
    Direction,
    FormatError,
    GridSpec,
    InvalidGeometry,
    InvalidGrid,
    RefChannelOutOfRange,
    ZeroReference,
    angular_distance,
    default_geometry,
    export_atf,
    import_atf,
    quadrature_weights,
    steering_grid,
    steering_lookup,
    synth_freefield_atf,
)
from sshybrid.stft import StftConfig


def test_quadrature_single_term():
    assert quadrature_weights(4, 2, [np.pi / 2])[0] == pytest.approx(0.25)


def test_quadrature_pole_vanishes():
    q = quadrature_weights(60, 20, [0.0, np.pi])
    assert q[0] == 0.0 and q[1] == 0.0


def test_quadrature_bad_inclination():
    with pytest.raises(InvalidGrid):
        quadrature_weights(4, 4, [-0.1])
    with pytest.raises(InvalidGrid):
        quadrature_weights(1, 4, [0.5])


def test_grid_weights_nonnegative_and_normalised():
    g = GridSpec(60, 20)
    az, inc = g.directions()
    q = quadrature_weights(g.n_az, g.n_incl, inc)
    assert np.all(q >= 0)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    assert len(set(zip(az.round(12), inc.round(12)))) == len(az)


def dense_isotropic_cov(pos, k, n=400):
    """Midpoint-rule integral of h h^H over the sphere, divided by 4 pi."""
    th = (np.arange(n) + 0.5) * np.pi / n
    ph = (np.arange(2 * n) + 0.5) * np.pi / n
    T, P = np.meshgrid(th, ph, indexing="ij")
    u = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    dA = (np.sin(T) * (np.pi / n) ** 2).ravel()
    h = np.exp(1j * k * (u @ pos.T))
    return (h * dA[:, None]).T @ h.conj() / (4 * np.pi)


def test_quadrature_reproduces_unit_field_integral():
    cfg = StftConfig()
    g = GridSpec(60, 20)
    pos = default_geometry()
    atf = synth_freefield_atf(pos, g, cfg)
    for nu in (5, 20, 40):
        k = 2 * np.pi * cfg.frequencies[nu] / 343.0
        h = atf.responses[:, nu, :]
        R = (h * atf.quad_weights[:, None]).T @ h.conj()
        ref = dense_isotropic_cov(pos, k)
        assert np.linalg.norm(R - ref) <= 0.01 * np.linalg.norm(ref)
        # closed form coherence sin(kd)/(kd)
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.testing.assert_allclose(ref.real, np.sinc(k * d / np.pi), atol=2e-3)


def test_single_sensor_at_origin():
    atf = synth_freefield_atf(np.zeros((1, 3)), GridSpec(8, 4), StftConfig())
    np.testing.assert_array_equal(atf.responses, 1.0)


def test_broadside_equal_responses():
    pos = np.array([[-0.05, 0, 0], [0.05, 0, 0]])
    atf = synth_freefield_atf(pos, GridSpec(8, 4), StftConfig())
    i = np.flatnonzero(np.isclose(atf.azimuth, np.pi / 2) & np.isclose(atf.inclination, np.pi / 2))[0]
    np.testing.assert_allclose(atf.responses[i, :, 0], atf.responses[i, :, 1], atol=1e-15)


def test_endfire_phase_difference():
    cfg = StftConfig(sample_rate=8000, window_len=160, hop=80, fft_len=160)
    pos = np.array([[0.0, 0, 0], [0.1, 0, 0]])
    atf = synth_freefield_atf(pos, GridSpec(8, 4), cfg, speed_of_sound=343.0)
    i = np.flatnonzero(np.isclose(atf.azimuth, 0) & np.isclose(atf.inclination, np.pi / 2))[0]
    nu = int(np.argmin(np.abs(cfg.frequencies - 1000)))
    assert cfg.frequencies[nu] == 1000
    dphi = np.angle(atf.responses[i, nu, 1] / atf.responses[i, nu, 0])
    assert dphi == pytest.approx(2 * np.pi * 1000 * 0.1 / 343, abs=1e-12)
    assert dphi == pytest.approx(1.832, abs=1e-3)


def test_freefield_magnitudes_and_dc():
    atf = synth_freefield_atf(default_geometry())
    np.testing.assert_allclose(np.abs(atf.responses), 1.0, atol=1e-15)
    np.testing.assert_array_equal(atf.responses[:, 0, :], 1.0)


def test_invalid_geometry():
    with pytest.raises(InvalidGeometry):
        synth_freefield_atf(np.zeros((0, 3)))
    with pytest.raises(InvalidGeometry):
        synth_freefield_atf(np.zeros((2, 2)))


def test_direction_ranges():
    d = Direction(np.pi, 0.3)
    assert d.azimuth == pytest.approx(-np.pi)
    with pytest.raises(InvalidGrid):
        Direction(0.0, 3.5)
    assert Direction.from_degrees(30, 10).degrees() == pytest.approx((30, 10))


def test_steering_on_grid_and_reference():
    atf = synth_freefield_atf(default_geometry())
    target = atf.direction(300)
    sv = steering_lookup(atf, target, ref_channel=1)
    assert sv.index == 300
    np.testing.assert_array_equal(sv.rtf[:, 1], 1.0 + 0j)
    np.testing.assert_allclose(sv.rtf, atf.responses[300] / atf.responses[300][:, 1:2])


def test_steering_nearest_and_idempotent():
    atf = synth_freefield_atf(default_geometry())
    target = Direction.from_degrees(31.0, 0.0)  # grid has 30 deg
    sv = steering_lookup(atf, target)
    assert sv.direction.degrees() == pytest.approx((30.0, 0.0), abs=1e-9)
    again = steering_lookup(atf, sv.direction)
    assert again.index == sv.index
    np.testing.assert_array_equal(again.rtf, sv.rtf)


def test_steering_tie_goes_to_lower_index():
    az = np.array([0.0, np.deg2rad(6.0)])
    inc = np.full(2, np.pi / 2)
    atf = AtfSet(az, inc, np.ones((2, 3, 2), complex), np.ones(2), 10000)
    sv = steering_lookup(atf, Direction(np.deg2rad(3.0), np.pi / 2), ref_channel=0)
    assert sv.index == 0


def test_steering_errors():
    atf = synth_freefield_atf(default_geometry(), GridSpec(8, 4))
    with pytest.raises(RefChannelOutOfRange):
        steering_lookup(atf, atf.direction(0), ref_channel=6)
    resp = np.array(atf.responses)
    resp[3, 5, 1] = 0.0
    bad = AtfSet(atf.azimuth, atf.inclination, resp, atf.quad_weights, 10000)
    with pytest.raises(ZeroReference):
        steering_lookup(bad, bad.direction(3), ref_channel=1)


def test_default_steering_grid():
    grid = steering_grid()
    assert len(grid) == 217
    degs = np.array([d.degrees() for d in grid])
    assert degs[:, 0].min() == pytest.approx(-90) and degs[:, 0].max() == pytest.approx(90)
    assert np.abs(degs[:, 1]).max() <= 30
    # every steering direction is a grid point of the default ATF set
    atf = synth_freefield_atf(default_geometry())
    for d in grid:
        i = steering_lookup(atf, d).index
        assert angular_distance(atf.azimuth[i], atf.inclination[i], d.azimuth, d.inclination) < 1e-9


def random_atf(rng, I=7, F=5, Q=3):
    resp = (rng.standard_normal((I, F, Q)) + 1j * rng.standard_normal((I, F, Q))).astype(np.complex64)
    az = rng.uniform(-np.pi, np.pi, I)
    inc = rng.uniform(0, np.pi, I)
    return AtfSet(az, inc, resp.astype(complex), rng.uniform(0, 1, I), 10000, 0, 0, "custom", 2)


def test_atf_round_trip_bit_identical(tmp_path, rng):
    atf = random_atf(rng)
    p = export_atf(atf, tmp_path / "atf.json")
    back = import_atf(p)
    assert back.responses.tobytes() == atf.responses.tobytes()
    assert back.azimuth.tobytes() == atf.azimuth.tobytes()
    assert back.inclination.tobytes() == atf.inclination.tobytes()
    assert back.quad_weights.tobytes() == atf.quad_weights.tobytes()
    assert back.ref_channel == 2 and back.coverage == "custom"
    assert back.fingerprint() == atf.fingerprint()
    # file -> object -> file is byte-identical as well
    export_atf(back, tmp_path / "again.json")
    assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "atf.bin").read_bytes()


def test_atf_dimension_mismatch(tmp_path, rng):
    p = export_atf(random_atf(rng), tmp_path / "atf.json")
    m = json.loads(p.read_text())
    m["quad_weights"] = m["quad_weights"][:-1]
    p.write_text(json.dumps(m))
    with pytest.raises(FormatError):
        import_atf(p)


def test_atf_truncated_payload(tmp_path, rng):
    p = export_atf(random_atf(rng), tmp_path / "atf.json")
    b = tmp_path / "atf.bin"
    b.write_bytes(b.read_bytes()[:100])
    with pytest.raises(FormatError) as e:
        import_atf(p)
    assert e.value.offset == 100


def test_atf_bad_json(tmp_path):
    p = tmp_path / "atf.json"
    p.write_text('{"version": 1,, }')
    with pytest.raises(FormatError) as e:
        import_atf(p)
    assert e.value.offset == 14
