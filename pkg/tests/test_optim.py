import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rasopt.errors import ConfigError
from rasopt.kernels import enforce_bound_numba, enforce_bound_numpy
from rasopt.manifolds import Grassmann, Stiefel, qf
from rasopt.optim import (
    AdaptiveState,
    Mode,
    RasaConfig,
    StepSchedule,
    VarBetaState,
    VecAdaptiveState,
    adapt_gradient,
    enforce_weight_bound,
    kron_weights,
    make_optimizer,
    rasa_direction,
    rasa_step,
    rasa_update_weights,
    rasa_vec_step,
    rsgd_step,
    step_size,
    unvec,
    varbeta_step,
    vec,
)

e1 = np.array([[1.0], [0.0]])
e2 = np.array([[0.0], [1.0]])
TINY = 1e-300  # epsilon that vanishes against any weight used below


def random_tangent(M, U, rng, scale=1.0):
    return M.proj(U, scale * rng.standard_normal((M.n, M.r)))


class TestStepSize:
    @pytest.mark.parametrize("alpha0,t,expected", [(1, 1, 1.0), (1, 4, 0.5), (0.05, 100, 0.005)])
    def test_values(self, alpha0, t, expected):
        assert step_size(StepSchedule(alpha0), t) == pytest.approx(expected, rel=1e-15)

    def test_decreasing(self):
        s = StepSchedule(0.3)
        vals = [s(t) for t in range(1, 50)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ConfigError):
            StepSchedule(0.0)
        with pytest.raises(ValueError):
            StepSchedule(1.0)(0)


class TestConfig:
    def test_defaults(self):
        cfg = RasaConfig()
        assert (cfg.beta, cfg.epsilon, cfg.p, cfg.q, cfg.mode) == (0.99, 1e-8, 4.0, 4.0, Mode.BOTH)

    @pytest.mark.parametrize("p,q", [(3.0, 6.0), (2.5, 10.0)])
    def test_admissible_exponents(self, p, q):
        RasaConfig(p=p, q=q)

    @pytest.mark.parametrize(
        "kw", [dict(p=4.0, q=3.0), dict(beta=1.0), dict(beta=-0.1), dict(epsilon=0.0)]
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            RasaConfig(**kw)


class TestRsgd:
    def test_zero_gradient(self):
        M = Stiefel(4, 2)
        U = M.random_point(0)
        np.testing.assert_array_equal(rsgd_step(M, U, np.zeros((4, 2)), 0.5), U)

    def test_two_vector(self):
        out = rsgd_step(Stiefel(2, 1), e1, e2, 1.0)
        np.testing.assert_allclose(out, (e1 - e2) / np.sqrt(2), atol=1e-15)

    def test_on_manifold(self, rng):
        M = Grassmann(6, 3)
        U = M.random_point(1)
        for _ in range(20):
            U = rsgd_step(M, U, random_tangent(M, U, rng), 0.7)
            assert M.check_point(U)


class TestWeights:
    def test_beta_zero_example(self):
        G = np.array([[1.0, 2.0], [3.0, 4.0]])
        s = rasa_update_weights(AdaptiveState.zeros(2, 2), G, 0.0)
        # diag(G G^T) = [5, 25] / r ; diag(G^T G) = [10, 20] / n
        np.testing.assert_array_equal(s.l, [2.5, 12.5])
        np.testing.assert_array_equal(s.r, [5.0, 10.0])
        np.testing.assert_array_equal(s.l_hat, s.l)
        np.testing.assert_array_equal(s.r_hat, s.r)
        assert s.t == 1

    def test_zero_gradient_decays(self, rng):
        s = AdaptiveState(3, rng.random(4), rng.random(4) + 1, rng.random(2), rng.random(2) + 1)
        new = rasa_update_weights(s, np.zeros((4, 2)), 0.9)
        np.testing.assert_allclose(new.l, 0.9 * s.l)
        np.testing.assert_allclose(new.r, 0.9 * s.r)
        np.testing.assert_array_equal(new.l_hat, s.l_hat)
        np.testing.assert_array_equal(new.r_hat, s.r_hat)

    def test_bounded_by_H_squared(self, rng):
        H = 2.5
        s = AdaptiveState.zeros(5, 3)
        for _ in range(300):
            G = rng.standard_normal((5, 3))
            G *= H / np.linalg.norm(G)
            s = rasa_update_weights(s, G, 0.9)
            assert s.l_hat.max() <= H * H + 1e-12
            assert s.r_hat.max() <= H * H + 1e-12


def direct_adapted(G, l_hat, r_hat, eps, p=4.0, q=4.0):
    n, r = G.shape
    out = np.empty_like(G)
    for i in range(n):
        for j in range(r):
            out[i, j] = G[i, j] / (math.pow(l_hat[i] + eps, 1 / p) * math.pow(r_hat[j] + eps, 1 / q))
    return out


class TestAdaptGradient:
    def test_unit_weights(self, rng):
        G = rng.standard_normal((4, 3))
        out = adapt_gradient(G, np.ones(4), np.ones(3), RasaConfig(epsilon=TINY))
        np.testing.assert_array_equal(out, G)

    def test_direct_arithmetic(self):
        G = np.array([[1.0, 2.0], [3.0, 4.0]])
        l_hat, r_hat = np.array([2.5, 12.5]), np.array([5.0, 10.0])
        out = adapt_gradient(G, l_hat, r_hat, RasaConfig(epsilon=TINY))
        assert out[0, 0] == pytest.approx(0.5318, abs=1e-4)
        np.testing.assert_allclose(out, direct_adapted(G, l_hat, r_hat, 0.0), rtol=1e-14)

    def test_general_exponents(self, rng):
        G = rng.standard_normal((5, 2))
        l_hat, r_hat = rng.random(5), rng.random(2)
        cfg = RasaConfig(p=3.0, q=6.0)
        np.testing.assert_allclose(
            adapt_gradient(G, l_hat, r_hat, cfg), direct_adapted(G, l_hat, r_hat, 1e-8, 3.0, 6.0), rtol=1e-13
        )

    def test_kronecker_identity(self, rng):
        for _ in range(50):
            n, r = rng.integers(1, 9), rng.integers(1, 7)
            G = rng.standard_normal((n, r))
            l_hat, r_hat = rng.random(n) + 0.01, rng.random(r) + 0.01
            v_hat = np.kron(np.sqrt(r_hat), np.sqrt(l_hat))
            expected = v_hat ** -0.5 * G.reshape(-1, order="F")
            out = adapt_gradient(G, l_hat, r_hat, RasaConfig(epsilon=TINY))
            assert np.max(np.abs(vec(out) - expected)) <= 1e-12

    def test_one_sided_modes(self, rng):
        G = rng.standard_normal((4, 3))
        l_hat, r_hat = rng.random(4) + 0.1, rng.random(3) + 0.1
        left = adapt_gradient(G, l_hat, r_hat, RasaConfig(mode="left"))
        right = adapt_gradient(G, l_hat, r_hat, RasaConfig(mode="right"))
        np.testing.assert_allclose(left, G / ((l_hat + 1e-8) ** 0.25)[:, None], rtol=1e-14)
        np.testing.assert_allclose(right, G / ((r_hat + 1e-8) ** 0.25)[None, :], rtol=1e-14)

    def test_length_check(self):
        with pytest.raises(ValueError):
            adapt_gradient(np.ones((3, 2)), np.ones(2), np.ones(2), RasaConfig())


def literal_first_step(U, G, beta, alpha0, eps):
    """First iteration written out step by step from zero weights (n x r Stiefel)."""
    n, r = G.shape
    l = (1 - beta) * np.array([sum(G[i, j] ** 2 for j in range(r)) for i in range(n)]) / r
    l_hat = np.maximum(np.zeros(n), l)
    rr = (1 - beta) * np.array([sum(G[i, j] ** 2 for i in range(n)) for j in range(r)]) / n
    r_hat = np.maximum(np.zeros(r), rr)
    Gt = np.diag((l_hat + eps) ** -0.25) @ G @ np.diag((r_hat + eps) ** -0.25)
    S = U.T @ Gt
    xi = Gt - U @ (0.5 * (S + S.T))
    A = U - alpha0 / math.sqrt(1) * xi
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    return l, l_hat, rr, r_hat, Gt, xi, Q


class TestRasaStep:
    def test_zero_gradient(self, rng):
        M = Stiefel(4, 2)
        U = M.random_point(0)
        s = AdaptiveState(2, rng.random(4), rng.random(4) + 1, rng.random(2), rng.random(2) + 1)
        U2, s2 = rasa_step(M, U, np.zeros((4, 2)), s, RasaConfig(), StepSchedule(1.0))
        np.testing.assert_array_equal(U2, U)
        np.testing.assert_allclose(s2.l, 0.99 * s.l)

    def test_first_step_trace(self):
        M = Stiefel(2, 1)
        cfg = RasaConfig(beta=0.99)
        l, l_hat, rr, r_hat, Gt, xi, x2 = literal_first_step(e1, e2, 0.99, 1.0, 1e-8)
        np.testing.assert_allclose(l, [0.0, 0.01], rtol=1e-14)
        np.testing.assert_allclose(rr, [0.005], rtol=1e-14)
        state = rasa_update_weights(AdaptiveState.zeros(2, 1), e2, 0.99)
        np.testing.assert_allclose(state.l, l, rtol=1e-15)
        np.testing.assert_allclose(state.l_hat, l_hat, rtol=1e-15)
        np.testing.assert_allclose(state.r, rr, rtol=1e-15)
        np.testing.assert_allclose(state.r_hat, r_hat, rtol=1e-15)
        np.testing.assert_allclose(adapt_gradient(e2, state.l_hat, state.r_hat, cfg), Gt, rtol=1e-14)
        d, _ = rasa_direction(M, e1, e2, AdaptiveState.zeros(2, 1), cfg)
        np.testing.assert_allclose(d, xi, rtol=1e-14)
        U2, s2 = rasa_step(M, e1, e2, AdaptiveState.zeros(2, 1), cfg, StepSchedule(1.0))
        np.testing.assert_allclose(U2, x2, atol=1e-14)
        assert s2.t == 1

    def test_trace_random(self, rng):
        M = Stiefel(6, 3)
        for s in range(10):
            U = M.random_point(s)
            G = random_tangent(M, U, rng)
            *_, x2 = literal_first_step(U, G, 0.9, 0.3, 1e-8)
            U2, _ = rasa_step(M, U, G, AdaptiveState.zeros(6, 3), RasaConfig(beta=0.9), StepSchedule(0.3))
            np.testing.assert_allclose(U2, x2, atol=1e-12)

    def test_unit_weights_is_rsgd(self, rng):
        M = Stiefel(7, 3)
        U_a = U_b = M.random_point(3)
        cfg = RasaConfig(unit_weights=True)
        sched = StepSchedule(0.2)
        state = AdaptiveState.zeros(7, 3)
        for t in range(1, 30):
            G = random_tangent(M, U_a, rng)
            U_a, state = rasa_step(M, U_a, G, state, cfg, sched)
            U_b = rsgd_step(M, U_b, G, sched(t))
            assert np.array_equal(U_a, U_b)

    def test_rank_one_collinear(self, rng):
        M = Stiefel(6, 1)
        U = M.random_point(0)
        sb = sl = AdaptiveState.zeros(6, 1)
        for _ in range(30):
            G = random_tangent(M, U, rng)
            db, sb = rasa_direction(M, U, G, sb, RasaConfig(mode="both"))
            dl, sl = rasa_direction(M, U, G, sl, RasaConfig(mode="left"))
            cos = np.vdot(db, dl) / (np.linalg.norm(db) * np.linalg.norm(dl))
            assert cos >= 1 - 1e-12
            U = M.retr(U, -0.1 * db)


class TestVec:
    def test_zero_gradient(self):
        M = Grassmann(5, 2)
        U = M.random_point(0)
        U2, s = rasa_vec_step(M, U, np.zeros((5, 2)), VecAdaptiveState.zeros(5, 2), RasaConfig(), StepSchedule(1))
        np.testing.assert_array_equal(U2, U)

    def test_beta_zero_sign(self, rng):
        M = Stiefel(5, 2)
        U = M.random_point(1)
        G = random_tangent(M, U, rng)
        cfg = RasaConfig(beta=0.0, epsilon=TINY)
        U2, s = rasa_vec_step(M, U, G, VecAdaptiveState.zeros(5, 2), cfg, StepSchedule(0.5))
        np.testing.assert_array_equal(s.v_hat, vec(G) ** 2)
        expected = M.retr(U, -0.5 * M.proj(U, np.sign(G)))
        np.testing.assert_allclose(U2, expected, atol=1e-14)

    def test_monotone(self, rng):
        M = Stiefel(6, 3)
        U = M.random_point(2)
        s = VecAdaptiveState.zeros(6, 3)
        cfg = RasaConfig(beta=0.9)
        for _ in range(100):
            G = random_tangent(M, U, rng, scale=rng.uniform(0.01, 3))
            U, s2 = rasa_vec_step(M, U, G, s, cfg, StepSchedule(0.1))
            assert np.all(s2.v_hat >= s.v_hat)
            assert M.check_point(U)
            s = s2


class TestEnforce:
    def test_zero_gradient(self, rng):
        p, q = rng.random(4), rng.random(3)
        ph, qh = enforce_weight_bound(p, q, np.zeros((4, 3)))
        np.testing.assert_array_equal(ph, p)
        np.testing.assert_array_equal(qh, q)

    def test_already_satisfied(self, rng):
        G = rng.standard_normal((4, 3))
        p = q = None
        p = np.full(4, np.max(G**2))
        q = np.full(3, np.max(G**2))
        ph, qh = enforce_weight_bound(p, q, G)
        np.testing.assert_array_equal(ph, p)
        np.testing.assert_array_equal(qh, q)

    def test_single_entry(self):
        ph, qh = enforce_weight_bound(np.array([0.01]), np.array([0.01]), np.array([[1.0]]))
        assert ph.tolist() == [1.0] and qh.tolist() == [1.0]

    def test_row_then_column(self):
        G = np.array([[2.0, 1.0], [0.0, 0.0]])
        # row 0 violates in both columns -> p_0 = max(4, 1) = 4;
        # then column 0 still needs sqrt(4 q_0) >= 4 -> q_0 = 4, column 1 fine with q_1 = 1e-4? sqrt(4e-4) < 1 -> q_1 = 1
        ph, qh = enforce_weight_bound(np.array([0.0, 0.0]), np.array([0.0, 1e-4]), G)
        assert ph.tolist() == [4.0, 0.0]
        assert qh.tolist() == [4.0, 1.0]

    @settings(max_examples=100, deadline=None)
    @given(
        G=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(-10, 10)),
        data=st.data(),
    )
    def test_bound_holds_and_paths_agree(self, G, data):
        n, r = G.shape
        p = data.draw(arrays(np.float64, n, elements=st.floats(0, 5)))
        q = data.draw(arrays(np.float64, r, elements=st.floats(0, 5)))
        ph, qh = enforce_bound_numpy(p, q, G)
        ph2, qh2 = enforce_bound_numba(p, q, G)
        np.testing.assert_array_equal(ph, ph2)
        np.testing.assert_array_equal(qh, qh2)
        assert np.all(np.outer(np.sqrt(ph), np.sqrt(qh)) >= G**2)
        assert np.all(ph >= p) and np.all(qh >= q)


class TestVarBeta:
    def test_first_step_weights(self, rng):
        M = Stiefel(5, 3)
        U = M.random_point(0)
        G = random_tangent(M, U, rng)
        _, s = varbeta_step(M, U, G, VarBetaState.zeros(5, 3), StepSchedule(0.1))
        np.testing.assert_array_equal(s.l, s.p_hat)
        np.testing.assert_array_equal(s.r, s.q_hat)
        np.testing.assert_allclose(s.v_hat, kron_weights(s.p_hat, s.q_hat))

    def test_average_lower_bound_and_monotone(self, rng):
        M = Stiefel(6, 2)
        U = M.random_point(4)
        s = VarBetaState.zeros(6, 2)
        sq = np.zeros(12)
        for t in range(1, 80):
            G = random_tangent(M, U, rng, scale=rng.uniform(0.1, 2))
            sq += vec(G) ** 2
            U, s2 = varbeta_step(M, U, G, s, StepSchedule(0.05))
            assert np.all(s2.v >= sq / t - 1e-9)
            assert np.all(s2.v_hat >= s.v_hat)
            s = s2


def test_effective_step_nonincreasing(rng):
    M = Stiefel(5, 2)
    U = M.random_point(0)
    opt = make_optimizer("rasa-lr", 0.5)
    state = opt.init_state(5, 2)
    prev = None
    for t in range(1, 60):
        G = random_tangent(M, U, rng, scale=rng.uniform(0.1, 2))
        U, state = opt.step(M, U, G, state)
        eff = opt.schedule(t) / np.sqrt(kron_weights(state.l_hat, state.r_hat))
        if prev is not None:
            assert np.all(eff <= prev * (1 + 1e-15))
        prev = eff


@pytest.mark.parametrize("name", ["rsgd", "rasa-l", "rasa-r", "rasa-lr", "rasa-vec", "rasa-varbeta"])
def test_every_optimizer_stays_on_manifold(name, rng):
    for M in (Stiefel(7, 3), Grassmann(7, 3)):
        opt = make_optimizer(name, 0.3)
        U = M.random_point(1)
        state = opt.init_state(7, 3)
        for _ in range(40):
            U, state = opt.step(M, U, random_tangent(M, U, rng), state)
            assert M.check_point(U)


def test_unknown_optimizer():
    with pytest.raises(ConfigError):
        make_optimizer("adam", 0.1)


def test_vec_roundtrip(rng):
    G = rng.standard_normal((4, 3))
    assert vec(G)[1 * 4 + 2] == G[2, 1]
    np.testing.assert_array_equal(unvec(vec(G), 4, 3), G)
    l, r = rng.random(4), rng.random(3)
    assert kron_weights(l, r)[2 * 4 + 1] == pytest.approx(np.sqrt(r[2] * l[1]))


def test_qf_used_by_retraction_is_unique(rng):
    # sanity: two different QR paths agree after sign normalisation
    A = rng.standard_normal((5, 2))
    Q1 = qf(A)
    Q2 = qf(A @ np.diag([3.0, 0.5]))
    np.testing.assert_allclose(Q1, Q2, atol=1e-12)
