import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from radarvmp.beliefs import AmplitudeBelief, GaussianBelief, GaussianMessage, MessageSource, NoiseState, Track
from radarvmp.beliefs import fuse_state_marginal
from radarvmp.scenario import transition_matrices
from radarvmp.signal import complex_noise, steering_vector
from radarvmp.updates import (Direction, RadarTerms, SmootherMode, amplitude_system,
                              compute_data_message, estimate_cardinality, existence_matrix,
                              expected_gram, fisher_information, noise_statistic, predict,
                              process_noise_statistic, smooth_track, transition_message,
                              transition_precision, update_alpha, update_gamma,
                              update_process_noise, update_xi, xi_objective)

from conftest import random_visible_state
from oracles import gamma_log_density, gauss_hermite_points, grid_posterior_mean, random_spd

DT = 0.1


def terms_for(radar, states, z, gamma, lam):
    S = np.array([steering_vector(radar, s).s for s in states])
    J = np.array([steering_vector(radar, s).gradient for s in states])
    gram = expected_gram(S, J, np.zeros((len(states), 4, 4)))
    return RadarTerms(np.conj(S) @ z, gram, np.asarray(gamma, float), lam), S


def make_track(means, covs, prior_cov=10.0):
    prior = GaussianMessage(means[0], prior_cov * np.eye(4), MessageSource.PRIOR)
    t = Track(0, 0, prior, [0], gamma_init=10.0, zeta=1.0, chi=1.0)
    for m, c in zip(means, covs):
        t.append_slot(m, c, 1.0)
    return t


# transition messages ----------------------------------------------------------

def test_forward_precision_matches_matrix_formula():
    lam = np.array([6.25, 3.0, 1.0, 0.5])
    _, G = transition_matrices(DT)
    expected = np.linalg.inv(G).T @ np.diag(lam) @ np.linalg.inv(G)
    np.testing.assert_allclose(transition_precision(lam, DT), expected, rtol=1e-12)
    msg = transition_message(GaussianBelief(np.ones(4), np.eye(4)), lam, DT, Direction.FORWARD)
    np.testing.assert_allclose(np.linalg.inv(msg.cov), expected, rtol=1e-10)


def test_forward_then_backward_recovers_mean():
    m = np.array([1.0, -2.0, 0.3, 0.7])
    lam = np.full(4, 6.25)
    fwd = transition_message(GaussianBelief(m, np.eye(4)), lam, 1e-3, "forward")
    back = transition_message(GaussianBelief(fwd.mean, np.eye(4)), lam, 1e-3, "backward")
    np.testing.assert_allclose(back.mean, m, atol=1e-12)
    assert np.linalg.norm(fwd.mean - m) < 1e-2


def test_prediction_of_stationary_object():
    T, _ = transition_matrices(DT)
    m = np.array([5.0, 5.0, 0.0, 0.0])
    mean, cov = predict(m, np.eye(4) * 1e-3, np.full(4, 1e12), DT)
    np.testing.assert_array_equal(mean, T @ m)
    np.testing.assert_allclose(cov, T @ (np.eye(4) * 1e-3) @ T.T, atol=1e-12)


def test_near_zero_precision_is_floored():
    Q = transition_precision([0.0, 0.0, 1.0, 1.0], DT)
    assert np.all(np.isfinite(Q)) and np.all(np.diag(Q) > 0)


# smoothing ------------------------------------------------------------------

def noisy_track(rng, n=30):
    T, _ = transition_matrices(DT)
    x = np.array([0.0, 0.0, 3.0, -1.0])
    truth = []
    for _ in range(n):
        truth.append(x)
        x = T @ x + rng.normal(0, [0.01, 0.01, 0.2, 0.2])
    truth = np.array(truth)
    t = make_track(truth + rng.normal(0, 0.5, truth.shape), [np.eye(4)] * n)
    for i in range(n):
        info = np.zeros((4, 4))
        info[:2, :2] = random_spd(rng, 2, 5, 50)
        pos = truth[i, :2] + rng.normal(0, 0.1, 2)
        t.set_data_messages(i, [GaussianMessage.from_information(info, np.r_[pos, 0, 0])])
    return t


def test_joint_smoother_is_fixed_point_of_slot_updates():
    """A per-slot sweep applied to the joint solution leaves it unchanged."""
    rng = np.random.default_rng(7)
    lam = np.full(4, 6.25)
    t = noisy_track(rng)
    smooth_track(t, lam, DT, None, SmootherMode.JOINT)
    joint_means, joint_covs = t.means.copy(), t.covs.copy()
    smooth_track(t, lam, DT, None, SmootherMode.SWEEP)
    np.testing.assert_allclose(t.means, joint_means, atol=1e-9)
    np.testing.assert_allclose(t.covs, joint_covs, rtol=1e-12)


def test_repeated_sweeps_approach_joint_solution():
    rng = np.random.default_rng(17)
    lam = np.full(4, 6.25)
    a, b = noisy_track(rng, n=5), noisy_track(np.random.default_rng(17), n=5)
    smooth_track(a, lam, DT, None, SmootherMode.JOINT)
    errors = []
    for _ in range(200):
        smooth_track(b, lam, DT, None, SmootherMode.SWEEP)
        errors.append(np.max(np.abs(a.means - b.means)))
    assert errors[-1] < 0.5 * errors[0]
    assert np.all(np.diff(errors[10:]) <= 1e-12)


def test_sweep_equals_literal_message_products():
    """One sweep: each slot is the product of its data, prior/forward and backward messages."""
    rng = np.random.default_rng(8)
    lam = np.array([6.25, 6.25, 2.0, 2.0])
    t = noisy_track(rng, n=6)
    before = t.means.copy()
    expected = before.copy()
    for i in range(t.length):
        msgs = list(t.archive[i])
        msgs.append(t.prior if i == 0 else transition_message(
            GaussianBelief(expected[i - 1], np.eye(4)), lam, DT, "forward"))
        if i < t.length - 1:
            msgs.append(transition_message(GaussianBelief(before[i + 1], np.eye(4)), lam, DT, "backward"))
        expected[i] = fuse_state_marginal(msgs).mean
    smooth_track(t, lam, DT, None, SmootherMode.SWEEP)
    np.testing.assert_allclose(t.means, expected, atol=1e-9)


def test_window_leaves_older_slots_untouched():
    rng = np.random.default_rng(9)
    t = noisy_track(rng, n=30)
    old = t.means[:20].copy()
    smooth_track(t, np.full(4, 6.25), DT, 10)
    np.testing.assert_array_equal(t.means[:20], old)


def test_marginal_covariance_of_last_slot():
    rng = np.random.default_rng(10)
    t = noisy_track(rng, n=8)
    lam = np.full(4, 6.25)
    smooth_track(t, lam, DT, None)
    # dense joint precision of the chain
    T, _ = transition_matrices(DT)
    Q = transition_precision(lam, DT)
    m = t.length
    A = np.zeros((4 * m, 4 * m))
    for i in range(m):
        A[4 * i:4 * i + 4, 4 * i:4 * i + 4] += t.data_info[i]
    A[:4, :4] += np.linalg.inv(t.prior.cov)
    for i in range(1, m):
        D = np.zeros((4, 4 * m))
        D[:, 4 * i:4 * i + 4] = np.eye(4)
        D[:, 4 * (i - 1):4 * i] = -T
        A += D.T @ Q @ D
    np.testing.assert_allclose(t.marginal_cov, np.linalg.inv(A)[-4:, -4:], rtol=1e-8, atol=1e-12)


# process noise ----------------------------------------------------------------

def test_process_noise_statistic_matches_quadrature():
    rng = np.random.default_rng(11)
    T, G = transition_matrices(DT)
    Ginv = np.linalg.inv(G)
    for _ in range(5):
        m0, m1 = rng.normal(size=4), rng.normal(size=4)
        c0, c1 = random_spd(rng, 4, 0.01, 0.1), random_spd(rng, 4, 0.01, 0.1)
        v = process_noise_statistic(np.array([m0, m1]), np.array([c0, c1]), DT)[0]
        # independent slots: joint Gaussian over (x_{n-1}, x_n)
        mean = np.r_[m0, m1]
        cov = np.zeros((8, 8))
        cov[:4, :4], cov[4:, 4:] = c0, c1
        nodes, w = gauss_hermite_points(mean, cov, order=3)
        resid = (nodes[:, 4:] - nodes[:, :4] @ T.T) @ Ginv.T
        oracle = w @ resid**2
        np.testing.assert_allclose(v, oracle, rtol=1e-9)


def test_process_noise_posterior_matches_grid_oracle():
    rng = np.random.default_rng(12)
    T, G = transition_matrices(DT)
    Ginv = np.linalg.inv(G)
    n = 4
    means = np.cumsum(rng.normal(0, 0.3, (n, 4)), axis=0)
    covs = np.array([random_spd(rng, 4, 0.001, 0.02) for _ in range(n)])
    t = make_track(means, covs)
    zeta, chi = 1.0, 1.0
    post = update_process_noise(t, DT, zeta, chi)
    # expected squared residuals per transition by quadrature
    E = np.zeros(4)
    for k in range(1, n):
        cov = np.zeros((8, 8))
        cov[:4, :4], cov[4:, 4:] = covs[k - 1], covs[k]
        nodes, w = gauss_hermite_points(np.r_[means[k - 1], means[k]], cov, order=3)
        E += w @ ((nodes[:, 4:] - nodes[:, :4] @ T.T) @ Ginv.T) ** 2
    for i in range(4):
        def log_q(lam, i=i):
            return gamma_log_density(lam, zeta / 2, chi / 2) + (n - 1) / 2 * np.log(lam) - lam / 2 * E[i]
        oracle = grid_posterior_mean(log_q, center=post[i].mean)
        assert post[i].mean == pytest.approx(oracle, rel=1e-3)


def test_zero_residual_process_noise():
    T, _ = transition_matrices(DT)
    x = np.array([0.0, 0.0, 1.0, 2.0])
    means = [x]
    for _ in range(9):
        means.append(T @ means[-1])
    t = make_track(np.array(means), np.zeros((10, 4, 4)))
    post = update_process_noise(t, DT, zeta=1.0, chi=2.0)
    for g in post:
        assert g.mean == pytest.approx((9 + 1.0) / 2.0)


def test_process_precision_decreases_with_residual():
    T, _ = transition_matrices(DT)
    x0 = np.array([0.0, 0.0, 1.0, 0.0])
    prev = math.inf
    for r in [0.0, 0.01, 0.1, 1.0]:
        t = make_track(np.array([x0, T @ x0 + r]), np.zeros((2, 4, 4)))
        mean = update_process_noise(t, DT, 1.0, 1.0)[0].mean
        assert mean < prev or r == 0.0
        prev = mean


# amplitudes -------------------------------------------------------------------

def test_scalar_ridge_amplitude(radar, rng):
    for _ in range(20):
        phi = random_visible_state(rng, radar)
        z = complex_noise(rng, radar.n_z, 1e-6) + (1e-3 - 2e-3j) * steering_vector(radar, phi).s
        lam, gamma = rng.uniform(1e5, 1e7), rng.uniform(1, 100)
        terms, S = terms_for(radar, [phi], z, [gamma], lam)
        amp = update_alpha(terms, np.array([1.0]))
        s = S[0]
        ridge = lam * np.vdot(s, z) / (lam * np.vdot(s, s).real + gamma)
        assert abs(amp.mean[0] - ridge) <= 1e-10 * abs(ridge)


def test_amplitude_least_squares_limit(radar, rng):
    phi = random_visible_state(rng, radar)
    alpha = 0.7 + 0.1j
    z = alpha * steering_vector(radar, phi).s
    terms, _ = terms_for(radar, [phi], z, [1e-12], 1e6)
    assert update_alpha(terms, np.array([1.0])).mean[0] == pytest.approx(alpha, rel=1e-9)


def test_amplitude_mean_is_stationary_point(radar, rng):
    """Finite-difference gradient of the expected log joint vanishes at the returned mean."""
    K = 3
    states = [random_visible_state(rng, radar) for _ in range(K)]
    S = np.array([steering_vector(radar, s).s for s in states])
    z = complex_noise(rng, radar.n_z, 1e-6) + np.array([1e-3, 2e-3j, -5e-4]) @ S
    xi = np.array([0.9, 0.6, 0.3])
    gamma, lam = np.array([5.0, 20.0, 50.0]), 1e6
    terms, _ = terms_for(radar, states, z, gamma, lam)
    mean = update_alpha(terms, xi).mean

    def expected_log_joint(a):
        # enumerate the existence indicators explicitly
        total = 0.0
        for c in itertools.product([0, 1], repeat=K):
            c = np.array(c)
            w = np.prod(np.where(c == 1, xi, 1 - xi))
            total += w * -lam * np.linalg.norm(z - (c * a) @ S) ** 2
        return total - np.sum(gamma * np.abs(a) ** 2)

    h = 1e-7 * np.max(np.abs(mean))
    grad = []
    for k in range(K):
        for d in (1, 1j):
            e = np.zeros(K, complex)
            e[k] = h * d
            grad.append((expected_log_joint(mean + e) - expected_log_joint(mean - e)) / (2 * h))
    # scale: gradient magnitude at a point displaced by 10% of the mean
    ref = []
    shifted = mean * 1.1
    for k in range(K):
        e = np.zeros(K, complex)
        e[k] = h
        ref.append((expected_log_joint(shifted + e) - expected_log_joint(shifted - e)) / (2 * h))
    assert np.linalg.norm(grad) <= 1e-5 * np.linalg.norm(ref)


def test_all_existing_gives_full_gram():
    xi = np.ones(3)
    np.testing.assert_array_equal(existence_matrix(xi), np.ones((3, 3)))
    gram = np.array([[2, 1j, 0], [-1j, 2, 0.5], [0, 0.5, 2]])
    P, _ = amplitude_system(RadarTerms(np.zeros(3), gram, np.array([1.0, 2, 3]), 1.0), xi)
    np.testing.assert_allclose(P, gram + np.diag([1.0, 2, 3]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_existence_matrix_is_psd(xi):
    M = existence_matrix(np.array(xi))
    assert np.linalg.eigvalsh(M).min() >= -1e-12


def test_pruned_object_is_decoupled():
    gram = np.array([[3.0, 1.0], [1.0, 3.0]], complex)
    terms = RadarTerms(np.array([1.0 + 1j, 2.0]), gram, np.array([1.0, 1.0]), 1.0)
    P, b = amplitude_system(terms, np.array([1.0, 0.0]))
    assert P[0, 1] == 0 and P[1, 0] == 0 and b[1] == 0


# gamma updates ------------------------------------------------------------------

def test_gamma_vanishing_memory():
    shape, rate = update_gamma(np.array([0.3 + 0.4j]), np.array([0.1]), np.array([7.0]), 0.0)
    assert shape[0] == 1.0 and rate[0] == pytest.approx(0.25 + 0.1)


def test_gamma_fixed_point():
    eta = 1e-3
    shape, rate = update_gamma(np.array([math.sqrt(eta / 2)]), np.array([eta / 2]), np.array([1 / eta]), eta)
    assert shape[0] / rate[0] == pytest.approx(1 / eta)


def test_gamma_posterior_matches_grid_oracle():
    rng = np.random.default_rng(13)
    for _ in range(20):
        eta = 10 ** rng.uniform(-6.5, 0)
        g_prev = 10 ** rng.uniform(0, 2)
        mu = complex(*rng.normal(0, 0.3, 2))
        var = rng.uniform(0.001, 0.2)
        shape, rate = update_gamma(np.array([mu]), np.array([var]), np.array([g_prev]), eta)
        # E|alpha|^2 by quadrature over the complex Gaussian amplitude
        nodes, w = gauss_hermite_points([mu.real, mu.imag], np.eye(2) * var / 2, order=3)
        e_abs2 = w @ (nodes**2).sum(axis=1)

        def log_q(g):
            # Gamma(eta g_prev, eta) prior and CN(0, 1/g) amplitude likelihood
            return gamma_log_density(g, eta * g_prev, eta) + np.log(g) - g * e_abs2

        oracle = grid_posterior_mean(log_q, center=shape[0] / rate[0], rel_width=1e6)
        assert shape[0] / rate[0] == pytest.approx(oracle, rel=1e-3)


# noise precision --------------------------------------------------------------------

def test_noise_posterior_matches_grid_oracle(radar, rng):
    K = 2
    states = [random_visible_state(rng, radar) for _ in range(K)]
    S = np.array([steering_vector(radar, s).s for s in states])
    state = NoiseState(1.0, 1e-6, radar.n_z, radar.n_samples)
    expected_energy = 0.0
    for _ in range(3):
        z = complex_noise(rng, radar.n_z, 1e-6) + np.array([2e-4, 1e-4j]) @ S
        xi = rng.uniform(0.2, 0.95, K)
        terms, _ = terms_for(radar, states, z, [10.0, 10.0], 1e6)
        amp = update_alpha(terms, xi)
        state.add(noise_statistic(np.vdot(z, z).real, terms, xi, amp))
        # oracle: enumerate existence configurations, quadrature over the amplitudes
        cov = np.linalg.inv(amp.precision)
        real_cov = 0.5 * np.block([[cov.real, -cov.imag], [cov.imag, cov.real]])
        nodes, w = gauss_hermite_points(np.r_[amp.mean.real, amp.mean.imag], real_cov, order=2)
        a = nodes[:, :K] + 1j * nodes[:, K:]
        for c in itertools.product([0, 1], repeat=K):
            c = np.array(c)
            pc = np.prod(np.where(c == 1, xi, 1 - xi))
            resid = z[None] - (a * c) @ S
            expected_energy += pc * (w @ np.sum(np.abs(resid) ** 2, axis=1))
    n_snap = 3

    def log_q(lam):
        return gamma_log_density(lam, 1.0, 1e-6) + n_snap * radar.n_z * np.log(lam) - lam * expected_energy

    oracle = grid_posterior_mean(log_q, center=state.mean, rel_width=10.0)
    assert state.mean == pytest.approx(oracle, rel=1e-3)


def test_noise_statistic_without_objects_is_energy(radar, rng):
    z = complex_noise(rng, radar.n_z, 1e-6)
    states = [random_visible_state(rng, radar)]
    terms, _ = terms_for(radar, states, z, [10.0], 1e6)
    amp = update_alpha(terms, np.zeros(1))
    assert noise_statistic(np.vdot(z, z).real, terms, np.zeros(1), amp) == pytest.approx(np.vdot(z, z).real)


def test_noise_precision_consistency_on_pure_noise(radar):
    rng = np.random.default_rng(14)
    state = NoiseState(1.0, 1e-6, radar.n_z, radar.n_samples)
    for _ in range(5):
        z = complex_noise(rng, radar.n_z, 1e-6)
        state.add(np.vdot(z, z).real)
    assert state.mean == pytest.approx(1e6, rel=0.05)


def test_noiseless_perfect_beliefs_give_vanishing_residual(radar, rng):
    phi = random_visible_state(rng, radar)
    alpha = 1e-3 + 1e-3j
    z = alpha * steering_vector(radar, phi).s
    terms, _ = terms_for(radar, [phi], z, [1e-12], 1e6)
    amp = AmplitudeBelief(np.array([alpha]), np.array([[1e30]]))
    w = noise_statistic(np.vdot(z, z).real, terms, np.ones(1), amp)
    assert abs(w) < 1e-12 * np.vdot(z, z).real
    state = NoiseState(1.0, 1e-6, radar.n_z, radar.n_samples)
    state.add(w)
    assert state.mean > 1e3 * 1e6


# existence ------------------------------------------------------------------------

def test_existence_objective_is_log_evidence(radar, rng):
    """Differences of the objective equal differences of the log of the
    amplitude-integrated evidence, integrated numerically."""
    phi = random_visible_state(rng, radar)
    s = steering_vector(radar, phi).s
    lam, gamma = 1.0, 2.0
    z = (0.05 + 0.02j) * s + complex_noise(rng, radar.n_z, 0.5) / np.sqrt(radar.n_z)
    terms = RadarTerms(np.array([np.vdot(s, z)]), np.array([[np.vdot(s, s).real]]), np.array([gamma]), lam)
    ps, pb, xi_prev = 0.92, 1e-3, 0.4
    grid = np.linspace(-0.3, 0.3, 1201)
    A = grid[:, None] + 1j * grid[None, :]

    def log_evidence(xi):
        # E_indicator[log p(z | a)] + log p(a | gamma), a-dependent part, integrated over a
        expo = -xi * lam * np.abs(A) ** 2 * np.vdot(s, s).real + 2 * xi * lam * np.real(np.conj(A) * np.vdot(s, z))
        expo += np.log(gamma / np.pi) - gamma * np.abs(A) ** 2
        m = expo.max()
        return m + np.log(trapezoid(trapezoid(np.exp(expo - m), grid, axis=1), grid))

    def prior_terms(xi):
        h = -(xi * math.log(xi) + (1 - xi) * math.log(1 - xi))
        g = xi_prev * (math.log(ps / (1 - ps)) - math.log(pb / (1 - pb))) + math.log(pb / (1 - pb))
        return h + xi * g

    x1, x2 = 0.3, 0.8
    lhs = xi_objective(np.array([x1]), [terms], [xi_prev], ps, pb) - xi_objective(np.array([x2]), [terms], [xi_prev], ps, pb)
    rhs = log_evidence(x1) + prior_terms(x1) - log_evidence(x2) - prior_terms(x2)
    assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-8)


def test_existence_without_signal_is_low(radar, rng):
    phi = random_visible_state(rng, radar)
    terms, _ = terms_for(radar, [phi], np.zeros(radar.n_z, complex), [10.0], 1e6)
    xi = update_xi(np.array([0.5]), [terms], [0.0], 0.92, 1e-3)
    assert xi[0] < 0.05


def test_existence_of_strong_object_is_high(radar, rng):
    phi = random_visible_state(rng, radar)
    amp = math.sqrt(1e-6)      # 0 dB single-sensor SNR
    z = amp * steering_vector(radar, phi).s + complex_noise(rng, radar.n_z, 1e-6)
    terms, _ = terms_for(radar, [phi], z, [10.0], 1e6)
    xi = update_xi(np.array([0.5]), [terms], [1.0], 0.92, 1e-3)
    assert xi[0] > 0.95


def test_existence_update_dominates_coordinate_grid(radar, rng):
    K = 3
    states = [random_visible_state(rng, radar) for _ in range(K)]
    S = np.array([steering_vector(radar, s).s for s in states])
    z = complex_noise(rng, radar.n_z, 1e-6) + np.array([3e-4, 1e-4, 0]) @ S
    terms, _ = terms_for(radar, states, z, [10.0] * K, 1e6)
    xi_prev = np.array([0.9, 0.5, 0.1])
    xi = update_xi(np.full(K, 0.5), [terms], xi_prev, 0.92, 1e-3)
    best = xi_objective(xi, [terms], xi_prev, 0.92, 1e-3)
    for k in range(K):
        cand = np.repeat(xi[None], 101, axis=0)
        cand[:, k] = np.linspace(0, 1, 101)
        assert best >= xi_objective(cand, [terms], xi_prev, 0.92, 1e-3).max() - 1e-6


def test_fixed_existence_coordinates_are_kept(radar, rng):
    states = [random_visible_state(rng, radar) for _ in range(2)]
    terms, _ = terms_for(radar, states, complex_noise(rng, radar.n_z, 1e-6), [10.0] * 2, 1e6)
    xi = update_xi(np.array([0.7, 0.5]), [terms], [0.9, 0.0], 0.92, 1e-3, fixed=np.array([True, False]))
    assert xi[0] == 0.7


# data messages ------------------------------------------------------------------

def planted(radar, rng, alpha=3e-3 + 1e-3j):
    phi = random_visible_state(rng, radar, 20, 150, 0.8)
    phi[2:] = 0.0
    z = alpha * steering_vector(radar, phi).s
    return phi, z.reshape(radar.n_virtual, radar.n_samples), alpha


def test_map_recovers_planted_position(radar, rng):
    for _ in range(5):
        phi, zmat, alpha = planted(radar, rng)
        start = phi[:2] + rng.uniform(-0.3, 0.3, 2)
        msg = compute_data_message(radar, zmat, alpha, 0.0, 1.0, 1e6, start, [2.0, 2.0])
        assert np.linalg.norm(msg.mean[:2] - phi[:2]) <= 1e-3
        assert list(msg.informed) == [True, True, False, False]


def test_fisher_covariance_matches_finite_difference_hessian(radar, rng):
    """Inverse Fisher covariance vs the inverse FD Hessian of the negative
    expected log-likelihood at the planted truth (noiseless data)."""
    for _ in range(10):
        phi, zmat, alpha = planted(radar, rng)
        z = zmat.ravel()
        lam = rng.uniform(1e5, 1e7)

        def nll(p):
            s = steering_vector(radar, np.r_[p, 0, 0]).s
            return lam * np.linalg.norm(z - alpha * s) ** 2

        h = 1e-3
        H = np.zeros((2, 2))
        p0 = phi[:2]
        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
                H[i, j] = (nll(p0 + ei + ej) - nll(p0 + ei - ej) - nll(p0 - ei + ej) + nll(p0 - ei - ej)) / (4 * h * h)
        info = fisher_information(radar, phi, 1.0, abs(alpha) ** 2, lam)
        cov = np.linalg.inv(info[:2, :2])
        cov_fd = np.linalg.inv(H)
        assert np.linalg.norm(cov - cov_fd) / np.linalg.norm(cov_fd) <= 0.01


def test_message_covariance_scaling_laws(radar, rng):
    phi, zmat, alpha = planted(radar, rng)
    base = compute_data_message(radar, zmat, alpha, 0.0, 1.0, 1e6, phi[:2], [1.0, 1.0])
    double_power = compute_data_message(radar, zmat * math.sqrt(2), alpha * math.sqrt(2), 0.0, 1.0, 1e6,
                                        phi[:2], [1.0, 1.0])
    triple_lam = compute_data_message(radar, zmat, alpha, 0.0, 1.0, 3e6, phi[:2], [1.0, 1.0])
    c0 = base.cov[:2, :2]
    np.testing.assert_allclose(double_power.cov[:2, :2], c0 / 2, rtol=1e-3)
    np.testing.assert_allclose(triple_lam.cov[:2, :2], c0 / 3, rtol=1e-9)
    assert np.linalg.eigvalsh(c0).min() > 0


def test_uninformative_message_raises(radar, rng):
    phi, zmat, _ = planted(radar, rng)
    with pytest.raises(ValueError, match="uninformative data message"):
        compute_data_message(radar, zmat, 0.0, 0.0, 1.0, 1e6, phi[:2], [1.0, 1.0])


# cardinality ----------------------------------------------------------------------

def tracks_with_xi(values):
    out = []
    for i, v in enumerate(values):
        t = make_track(np.array([[i, 0, 0, 0.0]]), np.eye(4)[None])
        t.xi = v
        out.append(t)
    return out


def test_cardinality_threshold():
    assert estimate_cardinality(tracks_with_xi([0.0, 0.0]))[0] == 0
    n, est = estimate_cardinality(tracks_with_xi([0.9, 0.4]), delta=0.5)
    assert n == 1 and est[0, 0] == 0


@given(st.lists(st.floats(0, 1), max_size=8), st.floats(0, 1))
def test_cardinality_matches_filter(values, delta):
    n, est = estimate_cardinality(tracks_with_xi(values), delta=delta)
    assert n == sum(v > delta for v in values)
    assert est.shape == (n, 4)
