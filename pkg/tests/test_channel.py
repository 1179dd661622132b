import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wettrack.channel import (ChannelDynamics, ChannelSequence, feedback, generate_batch,
                              generate_sequence, harvested_energy, initial_channel, load_sequence_csv,
                              save_sequence_csv, snr_to_noise_var, step_channel)
from wettrack.numerics import Rng

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
cplx = st.builds(complex, finite, finite)


def test_frozen_channel():
    h = np.array([0.3 - 1j, 2.0 + 0.5j])
    out = step_channel(h, ChannelDynamics(gamma=1.0), Rng(0), u=np.zeros(2))
    np.testing.assert_array_equal(out, h)


def test_memoryless_limit_has_unit_power():
    dyn = ChannelDynamics(gamma=0.0)
    h = step_channel(np.full((1_000_000, 1), 5.0 + 0j), dyn, Rng(1))
    assert 0.98 <= np.mean(np.abs(h) ** 2) <= 1.02


def test_stationary_power_long_trajectory():
    dyn, rng = ChannelDynamics(), Rng(2)
    h = initial_channel(rng, 1, dyn)
    power = 0.0
    for _ in range(1_000_000):
        h = step_channel(h, dyn, rng)
        power += abs(h[0]) ** 2
    assert 0.95 <= power / 1_000_000 <= 1.05


def test_nonlinear_drift_formula():
    dyn = ChannelDynamics("nonlinear", gamma=0.9, nonlinear_strength=0.05)
    h = np.array([0.7 - 2j, -0.1 + 0.3j])
    expect = 0.9 * h + 0.05 * (np.tanh(h.real) + 1j * np.tanh(h.imag))
    np.testing.assert_allclose(step_channel(h, dyn, Rng(0), u=np.zeros(2)), expect, rtol=0, atol=1e-15)


def test_linear_kind_ignores_strength():
    h = np.array([0.7 - 2j, -0.1 + 0.3j])
    a = step_channel(h, ChannelDynamics(gamma=0.9, nonlinear_strength=3.0), Rng(4))
    b = step_channel(h, ChannelDynamics(gamma=0.9), Rng(4))
    np.testing.assert_array_equal(a, b)


def test_real_channel_switch():
    ch, _, _ = generate_batch(3, 50, 2, ChannelDynamics(real_channel=True), 1.0, 30.0, Rng(0))
    assert np.all(ch.imag == 0)


def test_dynamics_validation():
    with pytest.raises(ValueError):
        ChannelDynamics(gamma=1.5)
    with pytest.raises(ValueError):
        ChannelDynamics(kind="quadratic")
    with pytest.raises(ValueError):
        step_channel(np.array([np.nan]), ChannelDynamics(), Rng(0))


def test_matched_beamformer_energy():
    h = np.array([0.5 + 0.5j, -0.5, 2j])
    x = np.conj(h) / np.linalg.norm(h)
    assert harvested_energy(x, h, 1.0) == pytest.approx(np.linalg.norm(h) ** 2, rel=1e-14)


def test_orthogonal_probe_harvests_nothing():
    assert harvested_energy([1, 1], [1, -1], 1.0) == 0.0


def test_hand_evaluated_energy():
    assert harvested_energy([1, -1], [0.5 + 0.5j, -0.5], 1.0) == pytest.approx(1.25, abs=1e-15)


def test_energy_dimension_mismatch():
    with pytest.raises(ValueError):
        harvested_energy([1, 1, 1], [1, 1], 1.0)
    with pytest.raises(ValueError):
        harvested_energy([1, 1], [1, 1], 0.0)


@given(st.lists(st.tuples(cplx, cplx), min_size=1, max_size=4), st.floats(0.01, 1.0))
def test_cauchy_schwarz(pairs, zeta):
    x = np.array([p[0] for p in pairs])
    h = np.array([p[1] for p in pairs])
    e = harvested_energy(x, h, zeta)
    assert 0 <= e <= zeta * np.linalg.norm(x) ** 2 * np.linalg.norm(h) ** 2 * (1 + 1e-12) + 1e-300


def test_cauchy_schwarz_random_triples():
    gen = np.random.default_rng(0)
    x = gen.standard_normal((10_000, 3)) + 1j * gen.standard_normal((10_000, 3))
    h = gen.standard_normal((10_000, 3)) + 1j * gen.standard_normal((10_000, 3))
    zeta = gen.uniform(0.01, 1.0, 10_000)
    e = np.array([harvested_energy(x[i], h[i], zeta[i]) for i in range(10_000)])
    bound = zeta * np.sum(np.abs(x) ** 2, 1) * np.sum(np.abs(h) ** 2, 1)
    assert np.all(e <= bound * (1 + 1e-12))


def test_noiseless_feedback_is_exact():
    x, h = np.array([1, -1]), np.array([0.5 + 0.5j, -0.5])
    assert feedback(x, h, 1.0, 0.0, Rng(0)) == harvested_energy(x, h, 1.0)


def test_feedback_moments():
    x, h = np.array([1, 1]), np.array([0.4 - 0.2j, 1.1 + 0.3j])
    q = harvested_energy(x, h, 0.8)
    r = feedback(np.tile(x, (1_000_000, 1)), np.tile(h, (1_000_000, 1)), 0.8, 0.3, Rng(7))
    assert abs(r.mean() - q) <= 0.01 * q
    assert abs(r.var() - 0.3) <= 0.02 * 0.3


def test_feedback_rejects_negative_noise():
    with pytest.raises(ValueError):
        feedback([1], [1], 1.0, -0.1, Rng(0))


def test_feedback_seeded():
    args = (np.array([1, -1]), np.array([0.1j, 2.0]), 1.0, 0.5)
    assert feedback(*args, Rng(11)) == feedback(*args, Rng(11))


@pytest.mark.parametrize("snr, var", [(30, 1e-3), (0, 1.0), (10, 0.1)])
def test_snr_conversion(snr, var):
    assert snr_to_noise_var(snr) == pytest.approx(var, rel=1e-15)


def test_single_step_sequence():
    seq = generate_sequence(1, 2, ChannelDynamics(), 1.0, 30.0, Rng(0))
    assert seq.channels.shape == (1, 2) and seq.probes.shape == (1, 2) and seq.feedbacks.shape == (1,)


def test_sequence_lengths_must_agree():
    with pytest.raises(ValueError):
        ChannelSequence(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros(3), 1.0, 0.1)


def test_lag_one_autocorrelation():
    ch, _, _ = generate_batch(100, 1000, 2, ChannelDynamics(gamma=0.998), 1.0, 30.0, Rng(3))
    rho = []
    for b in range(100):
        for k in range(2):
            z = ch[b, :, k]
            rho.append(np.real(np.vdot(z[:-1], z[1:])) / np.sqrt(np.vdot(z[:-1], z[:-1]).real
                                                                 * np.vdot(z[1:], z[1:]).real))
    assert 0.99 <= np.mean(rho) <= 1.0


def test_sequence_reproducible():
    a = generate_sequence(200, 3, ChannelDynamics(), 0.7, 20.0, Rng(5))
    b = generate_sequence(200, 3, ChannelDynamics(), 0.7, 20.0, Rng(5))
    c = generate_sequence(200, 3, ChannelDynamics(), 0.7, 20.0, Rng(6))
    assert a == b and not a == c


def test_feedback_residual_is_noise_like():
    seq = generate_sequence(100_000, 2, ChannelDynamics(), 0.6, 10.0, Rng(8))
    resid = seq.feedbacks - harvested_energy(seq.probes, seq.channels, seq.zeta)
    assert abs(resid.var() / seq.noise_var - 1) < 0.1
    assert abs(np.corrcoef(resid[:-1], resid[1:])[0, 1]) < 0.02


def test_negative_feedback_kept():
    seq = generate_sequence(2000, 2, ChannelDynamics(), 1.0, 0.0, Rng(1))
    assert np.any(seq.feedbacks < 0)


def test_sequence_csv_round_trip(tmp_path):
    seq = generate_sequence(57, 3, ChannelDynamics(), 0.5, 13.0, Rng(12))
    path = tmp_path / "seq.csv"
    save_sequence_csv(seq, path)
    back = load_sequence_csv(path)
    assert back == seq
    assert back.gamma == seq.gamma and back.seed == seq.seed and back.prng == seq.prng
    text = path.read_text().splitlines()
    assert text[0] == "# M=3" and text[7].startswith("h0_re,h1_re,h2_re,h0_im")


def test_sequence_csv_truncated(tmp_path):
    seq = generate_sequence(5, 2, ChannelDynamics(), 1.0, 13.0, Rng(12))
    path = tmp_path / "seq.csv"
    save_sequence_csv(seq, path)
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(ValueError):
        load_sequence_csv(path)
