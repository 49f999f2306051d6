import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_complex, random_hermitian, random_psd
from sshybrid.array import GridSpec, default_geometry, steering_grid, synth_freefield_atf
from sshybrid.dictionary import (
    AtfFingerprintMismatch,
    BadLength,
    FormatError,
    InsufficientTraining,
    NotHermitian,
    TooFewPoints,
    TrainingSet,
    VersionMismatch,
    WeightDictionary,
    build_datadriven,
    build_parametric,
    devectorize,
    ema_alpha,
    ema_covariances,
    ema_gt_ncm,
    kmeans_cluster,
    load_dict,
    psd_repair,
    save_dict,
    vectorize,
)
from sshybrid.stft import StftConfig, StftTensor


@pytest.fixture(scope="module")
def atf():
    return synth_freefield_atf(default_geometry(), GridSpec(60, 20))


def test_vectorize_example():
    R = np.array([[1, 2 + 3j], [2 - 3j, 4]])
    np.testing.assert_array_equal(vectorize(R), [1, 4, 2, 3])


def test_vectorize_round_trip_exact(rng):
    for _ in range(1000):
        R = random_hermitian(rng, int(rng.integers(1, 7)))
        assert np.array_equal(devectorize(vectorize(R)), R)
    r = rng.standard_normal((50, 36))
    assert np.array_equal(vectorize(devectorize(r)), r)


def test_vectorize_errors():
    with pytest.raises(NotHermitian):
        vectorize(np.array([[1, 2], [3, 4]], dtype=complex))
    with pytest.raises(BadLength):
        devectorize(np.zeros(5))


def test_vectorize_is_isometric_up_to_offdiag_factor(rng):
    R = random_hermitian(rng, 4)
    r = vectorize(R)
    # Frobenius norm counts each off-diagonal pair twice
    d = np.sum(r[:4] ** 2) + 2 * np.sum(r[4:] ** 2)
    assert d == pytest.approx(np.linalg.norm(R) ** 2)


def test_ema_recursion_oracle(rng):
    Y = random_complex(rng, (3, 2, 9))
    a = 0.7
    R = ema_covariances(Y, a)
    ref = np.einsum("pf,qf->fpq", Y[:, :, 0], Y[:, :, 0].conj())
    np.testing.assert_allclose(R[:, 0], ref, rtol=1e-12)
    for l in range(1, 9):
        ref = a * ref + (1 - a) * np.einsum("pf,qf->fpq", Y[:, :, l], Y[:, :, l].conj())
        np.testing.assert_allclose(R[:, l], ref, rtol=1e-12, atol=1e-14)


def test_ema_alpha_default():
    assert ema_alpha(0.08, 0.008) == pytest.approx(np.exp(-0.1))


def test_ema_snapshots_psd(rng):
    tensor = StftTensor(random_complex(rng, (4, 5, 30)), StftConfig(window_len=8, hop=4, fft_len=8))
    ts = ema_gt_ncm(tensor)
    assert ts.vectors.shape == (5, 30, 16)
    w = np.linalg.eigvalsh(ts.matrices(2))
    assert np.all(w >= -1e-12 * w.max())


def test_kmeans_monotone_and_nonempty(rng):
    X = np.concatenate([rng.standard_normal((60, 3)) + c for c in (0, 8, -8)])
    res = kmeans_cluster(X, 5, seed=3)
    h = np.array(res.inertia_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert np.all(np.bincount(res.assignments, minlength=5) > 0)
    again = kmeans_cluster(X, 5, seed=3)
    np.testing.assert_array_equal(res.centroids, again.centroids)


def test_kmeans_duplicates():
    X = np.tile([1.0, 2.0, -3.0], (10, 1))
    res = kmeans_cluster(X, 4, seed=0)
    np.testing.assert_array_equal(res.centroids, np.tile(X[0], (4, 1)))
    assert np.all(np.bincount(res.assignments, minlength=4) > 0)


def test_kmeans_too_few():
    with pytest.raises(TooFewPoints):
        kmeans_cluster(np.zeros((3, 2)), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_kmeans_k_equals_n_reproduces_points(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    res = kmeans_cluster(X, n, seed=seed)
    np.testing.assert_allclose(np.sort(res.centroids, axis=0), np.sort(X, axis=0))
    assert res.inertia_history[-1] == pytest.approx(0.0, abs=1e-20)


def test_psd_repair(rng):
    R = random_hermitian(rng, 4)
    P = psd_repair(R)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    S = random_psd(rng, 4)
    np.testing.assert_allclose(psd_repair(S), S, rtol=1e-10, atol=1e-10)


def test_parametric_distortionless(atf):
    d = build_parametric(atf, kappa0=1000.0)
    assert d.summary() == "M=302 F=81 Q=6 Ψ=217"
    assert d.model_ids[d.iso_index] == "Iso"
    assert d.distortionless_error(sample=5000) <= 1e-9


def test_datadriven_identical_copies(atf, rng):
    R = random_psd(rng, 6, load=1.0)
    F = atf.n_bins
    vec = np.broadcast_to(vectorize(R), (F, 20, 36)).copy()
    d = build_datadriven(TrainingSet(vec), 3, atf, steering_grid()[:5], seed=1, kappa0=1000.0)
    assert d.n_models == 4 and d.iso_index == 3
    assert d.model_ids[-1] == "Iso"
    # all clustered models coincide, so their weights do too
    np.testing.assert_allclose(d.weights[0], d.weights[2], atol=1e-12)
    assert d.distortionless_error() <= 1e-9


def test_datadriven_insufficient(atf):
    with pytest.raises(InsufficientTraining):
        build_datadriven(TrainingSet(np.zeros((atf.n_bins, 2, 36))), 3, atf)


def test_datadriven_deterministic(atf, rng):
    vec = vectorize(np.stack([random_psd(rng, 6, load=0.1) for _ in range(40)]))
    ts = TrainingSet(np.broadcast_to(vec, (atf.n_bins, 40, 36)).copy())
    a = build_datadriven(ts, 4, atf, steering_grid()[:3], seed=7, kappa0=100.0)
    b = build_datadriven(ts, 4, atf, steering_grid()[:3], seed=7, kappa0=100.0)
    assert a.weights.tobytes() == b.weights.tobytes()


def random_dict(rng, M=3, F=4, P=5, Q=2):
    W = random_complex(rng, (M, F, P, Q)).astype(np.complex64).astype(complex)
    return WeightDictionary([f"m{i}" for i in range(M)], 1, rng.uniform(-1, 1, P),
                            rng.uniform(0.5, 2.5, P), W, bytes(range(32)))


def test_dict_round_trip(tmp_path, rng):
    d = random_dict(rng)
    p = save_dict(d, tmp_path / "d.bin")
    back = load_dict(p)
    assert back.weights.tobytes() == d.weights.tobytes()
    assert back.steer_az.tobytes() == d.steer_az.tobytes()
    assert back.iso_index == 1 and back.atf_fingerprint == d.atf_fingerprint
    save_dict(back, tmp_path / "e.bin")
    assert (tmp_path / "e.bin").read_bytes() == p.read_bytes()


def test_dict_format_errors(tmp_path, rng):
    p = save_dict(random_dict(rng), tmp_path / "d.bin")
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-10])
    with pytest.raises(FormatError) as e:
        load_dict(tmp_path / "t.bin")
    assert e.value.offset == len(raw) - 10
    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_dict(tmp_path / "m.bin")
    (tmp_path / "v.bin").write_bytes(raw[:4] + (9).to_bytes(2, "little") + raw[6:])
    with pytest.raises(VersionMismatch):
        load_dict(tmp_path / "v.bin")


def test_dict_fingerprint_warning(tmp_path, rng, atf):
    p = save_dict(random_dict(rng), tmp_path / "d.bin")
    with pytest.warns(AtfFingerprintMismatch):
        load_dict(p, atfs=atf)


def test_dict_requires_iso(rng):
    with pytest.raises(ValueError):
        WeightDictionary(["a"], 1, [0.0], [1.0], np.zeros((1, 1, 1, 1), complex))
