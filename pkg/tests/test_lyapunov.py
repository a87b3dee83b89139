import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lnpsnn.dynamics import discrete_map_step
from lnpsnn.lyapunov import (JacobianSequence, LyapunovReport, SingularR, average_reports,
                             jacobian_at, lyapunov_matrix, lyapunov_spectrum, max_local_le,
                             network_exponents, network_jacobians, network_max_local_le,
                             rk4_tangent_jacobians)
from lnpsnn.network import from_edges, generate_small_world, prune_nodes

from oracles import harmonic_mean_edge, lorenz_f, lorenz_jac

nonzero = st.floats(0.05, 5.0).flatmap(lambda x: st.sampled_from([x, -x]))


class TestJacobianSequence:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            JacobianSequence([])

    def test_rejects_mixed_shapes(self):
        with pytest.raises(ValueError):
            JacobianSequence([np.eye(2), np.eye(3)])

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            JacobianSequence([np.full((2, 2), np.nan)])


class TestSpectrum:
    @given(st.lists(nonzero, min_size=1, max_size=8), st.integers(1, 40))
    @settings(max_examples=60, deadline=None)
    def test_constant_diagonal(self, a, T):
        a = np.array(a)
        rep = lyapunov_spectrum(JacobianSequence([np.diag(a)] * T))
        np.testing.assert_allclose(rep.spectrum, np.sort(np.log(np.abs(a)))[::-1], atol=1e-12)
        np.testing.assert_allclose(rep.per_neuron, np.log(np.abs(a)), atol=1e-12)

    def test_sorted_descending(self):
        rng = np.random.default_rng(0)
        rep = lyapunov_spectrum(JacobianSequence([rng.normal(size=(5, 5)) for _ in range(50)]))
        assert np.all(np.diff(rep.spectrum) <= 0)

    @given(st.integers(0, 10_000), st.integers(2, 6))
    @settings(max_examples=30, deadline=None)
    def test_sum_equals_mean_log_det(self, seed, n):
        rng = np.random.default_rng(seed)
        mats = [np.eye(n) + 0.5 * rng.normal(size=(n, n)) for _ in range(30)]
        rep = lyapunov_spectrum(JacobianSequence(mats))
        log_det = np.mean([np.linalg.slogdet(m)[1] for m in mats])
        np.testing.assert_allclose(rep.spectrum.sum(), log_det, atol=1e-10)

    def test_upper_triangular_constant(self):
        J = np.array([[2.0, 5.0], [0.0, 0.5]])
        rep = lyapunov_spectrum(JacobianSequence([J] * 300))
        np.testing.assert_allclose(rep.spectrum, [np.log(2), np.log(0.5)], atol=2e-2)
        # diagonal of J^T is (2^T, 0.5^T) for triangular J
        np.testing.assert_allclose(rep.per_neuron, [np.log(2), np.log(0.5)], atol=1e-12)

    def test_long_product_stays_finite(self):
        rep = lyapunov_spectrum(JacobianSequence([np.diag([3.0, 1e-3])] * 5000))
        assert np.all(np.isfinite(rep.per_neuron))
        np.testing.assert_allclose(rep.per_neuron, np.log([3.0, 1e-3]), atol=1e-9)

    def test_singular_jacobian(self):
        with pytest.raises(SingularR) as exc:
            lyapunov_spectrum(JacobianSequence([np.eye(2), np.diag([1.0, 0.0])]))
        assert exc.value.step == 1 and exc.value.k == 1

    def test_contribution(self):
        rep = lyapunov_spectrum(JacobianSequence([np.diag([1.0, -2.0]), np.diag([3.0, 4.0])]))
        np.testing.assert_allclose(rep.contribution, [2.0, 3.0])

    def test_lorenz_largest_exponent(self):
        dt = 0.01
        seq = rk4_tangent_jacobians(lorenz_f, lorenz_jac, (12.0, 2.0, 9.0), dt, 20_000,
                                    transient=1000)
        rep = lyapunov_spectrum(seq)
        assert abs(rep.spectrum[0] / dt - 0.906) < 0.05
        assert abs(rep.spectrum.sum() / dt + 13.667) < 0.01


class TestTangentJacobians:
    def test_matches_finite_difference(self):
        from lnpsnn.data import rk4_step
        x = np.array([1.0, -3.0, 20.0])
        J = rk4_tangent_jacobians(lorenz_f, lorenz_jac, x, 0.01, 1).mats[0]
        eps = 1e-6
        fd = np.column_stack([(rk4_step(lorenz_f, x + eps * e, 0.01)
                               - rk4_step(lorenz_f, x - eps * e, 0.01)) / (2 * eps)
                              for e in np.eye(3)])
        np.testing.assert_allclose(J, fd, atol=1e-7)

    def test_linear_system_exact(self):
        A = np.array([[0.0, 1.0], [-1.0, -0.1]])
        dt = 0.1
        J = rk4_tangent_jacobians(lambda x: A @ x, lambda x: A, [1.0, 0.0], dt, 1).mats[0]
        M = dt * A
        np.testing.assert_allclose(J, np.eye(2) + M + M @ M / 2 + M @ M @ M / 6
                                   + M @ M @ M @ M / 24, atol=1e-15)


class TestJacobianAt:
    @given(st.integers(0, 10_000), st.sampled_from(["tanh", "identity"]))
    @settings(max_examples=25, deadline=None)
    def test_finite_difference(self, seed, phi):
        rng = np.random.default_rng(seed)
        n = 5
        W = rng.normal(size=(n, n))
        h = rng.normal(size=n)
        dt = rng.uniform(0.05, 1.0, size=n)
        J = jacobian_at(h, W, dt, phi)
        eps = 1e-6
        fd = np.column_stack([(discrete_map_step(h + eps * e, W, dt, phi)
                               - discrete_map_step(h - eps * e, W, dt, phi)) / (2 * eps)
                              for e in np.eye(n)])
        np.testing.assert_allclose(J, fd, atol=1e-7)

    def test_zero_coupling(self):
        np.testing.assert_array_equal(jacobian_at(np.zeros(3), np.zeros((3, 3)), 0.25),
                                      0.75 * np.eye(3))


class TestReports:
    def test_json_roundtrip(self):
        rep = LyapunovReport(np.array([0.1, -0.2]), np.array([0.3, -0.4]), 10)
        doc = json.loads(rep.to_json(seed=3))
        assert doc["seed"] == 3
        back = LyapunovReport.from_dict(doc)
        np.testing.assert_array_equal(back.spectrum, rep.spectrum)
        np.testing.assert_array_equal(back.per_neuron, rep.per_neuron)
        assert back.T == 10

    def test_average(self):
        a = LyapunovReport(np.array([1.0, 0.0]), np.array([2.0, 2.0]), 5)
        b = LyapunovReport(np.array([3.0, -2.0]), np.array([0.0, 4.0]), 7)
        avg = average_reports([a, b])
        np.testing.assert_array_equal(avg.spectrum, [2.0, -1.0])
        np.testing.assert_array_equal(avg.per_neuron, [1.0, 3.0])
        assert avg.T == 12


class TestNetworkExponents:
    def test_deterministic(self):
        net = generate_small_world(30, 4, 0.2, seed=2)
        a = network_exponents(net, n_sequences=2, seed=1, steps=60)
        b = network_exponents(net, n_sequences=2, seed=1, steps=60)
        np.testing.assert_array_equal(a.spectrum, b.spectrum)
        np.testing.assert_array_equal(a.per_neuron, b.per_neuron)

    def test_uncoupled_leak(self):
        net = from_edges(3, [], tau_m=[10.0, 20.0, 40.0])
        rep = network_exponents(net, n_sequences=1, steps=30, dt_ms=5.0)
        np.testing.assert_allclose(rep.per_neuron, np.log(1 - 5.0 / np.array([10, 20, 40.0])),
                                   atol=1e-12)

    def test_alive_only(self):
        net = prune_nodes(generate_small_world(20, 4, 0.1, seed=0), [0, 5])
        seq = network_jacobians(net, steps=10)
        assert seq.dim == 18 and len(seq) == 10


class TestLyapunovMatrix:
    @given(st.integers(0, 10_000), st.integers(3, 12))
    @settings(max_examples=40, deadline=None)
    def test_matches_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        adj = rng.random((n, n)) < 0.3
        np.fill_diagonal(adj, False)
        edges = [(int(s), int(d), 1.0) for s, d in zip(*np.nonzero(adj))]
        net = from_edges(n, edges)
        lam = rng.uniform(0.1, 2.0, size=n) * rng.choice([-1, 1], size=n)
        L = lyapunov_matrix(net, lam)
        for s, d, _ in edges:
            np.testing.assert_allclose(L.values[d, s], harmonic_mean_edge(adj, lam, s, d),
                                       rtol=1e-12, atol=1e-300)
        off = ~adj.T
        assert np.all(L.values[off] == 0)

    def test_zero_exponent_is_undefined(self):
        net = from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
        L = lyapunov_matrix(net, [0.5, 0.5, 0.0])
        # 0 -> 1 sees only neuron 2; 1 -> 2 sees only neuron 0
        assert L.values[1, 0] == 0.0
        assert L.values[2, 1] == 0.5
        assert L.undefined == 1 and L.undefined_edges == [(0, 1)]

    def test_reciprocal_pair_includes_endpoints(self):
        net = from_edges(2, [(0, 1, 1.0), (1, 0, 1.0)])
        L = lyapunov_matrix(net, [1.0, 3.0])
        np.testing.assert_allclose(L.values[1, 0], 2 / (1 + 1 / 3))

    def test_length_checked(self):
        with pytest.raises(ValueError):
            lyapunov_matrix(from_edges(3, []), [1.0, 2.0])


class TestMaxLocalLE:
    def test_hand_case(self):
        U = np.eye(2)
        W_hat = np.diag([2.0, 0.5])
        D = [np.ones(2), np.ones(2)]
        # eigenvalues alpha + d*w: 0.5 + 2 = 2.5, 0.5 + 0.5 = 1.0
        assert max_local_le(U, W_hat, D, 0.5) == pytest.approx(np.log(2.5), abs=1e-14)

    def test_sorted_tracking(self):
        U = np.zeros((2, 2))
        W_hat = np.eye(2)
        D = [np.array([4.0, 1.0]), np.array([1.0, 4.0])]
        # sorted moduli are (4, 1) at both steps
        assert max_local_le(U, W_hat, D, 1.0) == pytest.approx(np.log(4.0), abs=1e-14)

    def test_empty(self):
        with pytest.raises(ValueError):
            max_local_le(np.eye(2), np.eye(2), [], 1.0)

    def test_network_leak_only(self):
        net = from_edges(2, [], tau_m=[10.0, 50.0])
        val = network_max_local_le(net, steps=5, dt_ms=5.0)
        assert val == pytest.approx(np.log(1 - 5.0 / 50.0), abs=1e-14)

    def test_tau_override(self):
        net = from_edges(2, [], tau_m=[10.0, 50.0])
        val = network_max_local_le(net, tau_m=[10.0, 10.0], steps=5, dt_ms=5.0)
        assert val == pytest.approx(np.log(0.5), abs=1e-14)
