import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import lsqr

from artifact.dynamics import LorenzParams, RampSchedule, Trajectory, one_step, random_initial_state, simulate
from artifact.metrics import valid_time
from artifact.reservoir import (
    HyperParams,
    KnowledgeModel,
    ReservoirTopology,
    TrainedModel,
    build_topology,
    drive_open_loop,
    feature_length,
    feature_rows,
    hybrid_prior,
    knowledge_step,
    load_model,
    predict_closed_loop,
    reservoir_step,
    save_model,
    solve_readout,
    spectral_radius,
    train,
    train_readout,
)
from artifact.reservoir.core import _accumulate, _open_loop_features


def small_hp(**kw):
    base = dict(n_nodes=60, spectral_radius=0.5, input_scale=0.5, tikhonov=1e-8, washout=20, rc_dt=0.01)
    base.update(kw)
    return HyperParams(**base)


def test_hyperparams_validation():
    for bad in (dict(n_nodes=0), dict(spectral_radius=0.0), dict(leakage=1.5), dict(training_passes=0),
                dict(tikhonov=-1.0), dict(architecture="deep")):
        with pytest.raises(ValueError):
            HyperParams(**bad)
    with pytest.raises(ValueError):
        HyperParams.from_dict({"n_nodes": 10, "radius": 1})
    hp = small_hp()
    assert HyperParams.from_dict(hp.to_dict()) == hp


def test_topology_degree_and_radius():
    nnz = []
    for seed in range(20):
        topo = build_topology(HyperParams(n_nodes=100, spectral_radius=0.8), 3, seed)
        nnz.append(topo.adjacency.nnz)
        assert spectral_radius(topo.adjacency) == pytest.approx(0.8, abs=1e-6)
        # one nonzero per row of the plain input layer
        assert np.all(np.count_nonzero(topo.input_layer, axis=1) == 1)
        assert topo.input_layer.shape == (100, 4)
    assert abs(np.mean(nnz) - 300) < 60


def test_sparse_radius_uses_arpack_path():
    topo = build_topology(HyperParams(n_nodes=500, spectral_radius=0.3), 3, 1)
    dense = np.max(np.abs(np.linalg.eigvals(topo.adjacency.toarray())))
    assert dense == pytest.approx(0.3, abs=1e-6)


def test_split_control_layer_half_filled():
    frac = []
    for seed in range(10):
        topo = build_topology(HyperParams(n_nodes=400, architecture="split"), 3, seed)
        assert topo.input_layer.shape == (400, 3)
        frac.append(np.mean(topo.control_layer != 0))
        assert topo.input_matrix.shape == (400, 4)
    assert np.mean(frac) == pytest.approx(0.5, abs=0.03)


def test_reservoir_step_trivial_cases():
    hp = small_hp(n_nodes=4, leakage=0.0)
    topo = build_topology(hp, 2, 0)
    r = np.array([0.3, -0.2, 0.1, 0.9])
    np.testing.assert_array_equal(reservoir_step(r, np.ones(3), topo, hp), r)
    hp1 = small_hp(n_nodes=4, leakage=1.0)
    np.testing.assert_array_equal(reservoir_step(np.zeros(4), np.zeros(3), topo, hp1), 0.0)


@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(-0.5, 0.5))
def test_reservoir_step_matches_scalar_oracle(seed, alpha, bias):
    rng = np.random.default_rng(seed)
    n, k = 4, 3
    A = rng.normal(size=(n, n))
    W = rng.normal(size=(n, k))
    r, u = rng.uniform(-1, 1, n), rng.normal(size=k)
    topo = ReservoirTopology(sp.csr_matrix(A), W)
    hp = small_hp(n_nodes=n, leakage=alpha, activation_bias=bias)
    got = reservoir_step(r, u, topo, hp)
    for i in range(n):
        acc = bias
        for j in range(n):
            acc += A[i, j] * r[j]
        for j in range(k):
            acc += W[i, j] * u[j]
        expected = (1 - alpha) * r[i] + alpha * np.tanh(acc)
        assert got[i] == pytest.approx(expected, abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 1000), st.integers(1, 20), st.integers(1, 20), st.floats(0.1, 1.0))
def test_drive_concatenation_and_bounds(seed, n1, n2, alpha):
    rng = np.random.default_rng(seed)
    hp = small_hp(n_nodes=30, leakage=alpha)
    topo = build_topology(hp, 2, seed)
    x, y = rng.normal(size=(n1, 3)), rng.normal(size=(n2, 3))
    r0 = rng.uniform(-2, 2, 30)
    whole = drive_open_loop(topo, hp, np.vstack([x, y]), r0)
    first = drive_open_loop(topo, hp, x, r0)
    second = drive_open_loop(topo, hp, y, first[-1])
    np.testing.assert_allclose(whole, np.vstack([first, second]), atol=1e-14)
    assert np.max(np.abs(whole)) <= max(np.max(np.abs(r0)), 1.0) + 1e-12
    single = drive_open_loop(topo, hp, x[:1], r0)
    np.testing.assert_allclose(single[0], reservoir_step(r0, x[0], topo, hp))


def test_drive_alpha_one_stays_in_unit_box():
    hp = small_hp(leakage=1.0)
    topo = build_topology(hp, 2, 0)
    out = drive_open_loop(topo, hp, np.random.default_rng(0).normal(0, 50, (40, 3)), np.full(60, 5.0))
    assert np.max(np.abs(out)) <= 1.0


def test_feature_lengths():
    n, dim = 7, 3
    r, u, kb = np.ones((2, n)), np.ones((2, dim + 1)), np.ones((2, dim))
    for arch in ("plain", "split", "split_quadratic", "hybrid"):
        assert feature_rows(arch, r, u, kb).shape == (2, feature_length(arch, n, dim))
    assert feature_length("split_quadratic", n, dim) == 2 * n + dim + 1 + 1
    with pytest.raises(ValueError):
        feature_rows("hybrid", r, u)


def test_ridge_recovers_linear_targets():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(400, 12))
    W = rng.normal(size=(3, 12))
    got = train_readout(F, F @ W.T, 1e-12)
    assert np.linalg.norm(got - W) / np.linalg.norm(W) < 1e-6


def test_ridge_large_penalty_returns_prior():
    rng = np.random.default_rng(1)
    F = rng.normal(size=(50, 10))
    P = rng.normal(size=(2, 10))
    got = train_readout(F, rng.normal(size=(50, 2)), 1e12, P)
    np.testing.assert_allclose(got, P, atol=1e-4)


@given(st.integers(0, 10_000), st.floats(1e-6, 10.0))
def test_ridge_matches_lsqr_on_augmented_system(seed, lam):
    # min mean||W f - y||^2 + lam ||W - P||^2 as one stacked least-squares problem
    rng = np.random.default_rng(seed)
    n, f, d = 5, 3, 2
    F, Y, P = rng.normal(size=(n, f)), rng.normal(size=(n, d)), rng.normal(size=(d, f))
    got = train_readout(F, Y, lam, P)
    M = np.vstack([F / np.sqrt(n), np.sqrt(lam) * np.eye(f)])
    for i in range(d):
        b = np.concatenate([Y[:, i] / np.sqrt(n), np.sqrt(lam) * P[i]])
        ref = lsqr(M, b, atol=1e-15, btol=1e-15, iter_lim=10_000)[0]
        np.testing.assert_allclose(got[i], ref, atol=1e-6)


def test_ridge_normal_equation_residual():
    rng = np.random.default_rng(2)
    G = rng.normal(size=(30, 8))
    gram, cross = G.T @ G / 30, rng.normal(size=(3, 8))
    P = rng.normal(size=(3, 8))
    W = solve_readout(gram, cross, 1e-3, P)
    res = (gram + 1e-3 * np.eye(8)) @ W.T - cross.T - 1e-3 * P.T
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(cross)


def test_singular_system_without_penalty_raises():
    with pytest.raises(np.linalg.LinAlgError):
        solve_readout(np.zeros((3, 3)), np.ones((1, 3)), 0.0)


def _lorenz_data(t0=-60.0, t1=0.0, seed=0, rho=28.0):
    sys_ = LorenzParams(rho=RampSchedule.constant(rho))
    return simulate(sys_, random_initial_state(sys_, seed), t0, t1, seed)


@pytest.mark.parametrize("arch", ["plain", "split_quadratic"])
def test_gram_accumulation_matches_explicit_features(arch):
    data = _lorenz_data(-3.0, 0.0)
    hp = small_hp(architecture=arch, control_slope=1e-3, washout=17)
    scales = np.sqrt(np.mean(data.states ** 2, axis=0))
    v = data.states / scales
    topo = build_topology(hp, 3, 4)
    gram, cross = _accumulate(topo, hp, v, 1, data.t0, data.dt, None, np.random.default_rng(0), chunk=64)
    model = TrainedModel(topo, np.zeros((3, feature_length(arch, 60, 3))), np.zeros((0, 3)), scales, hp,
                         data.t0, data.dt)
    feats, _ = _open_loop_features(model, v[:-1], 1, data.t0)
    F, Y = feats[17:], v[18:]
    np.testing.assert_allclose(gram, F.T @ F / len(F), atol=1e-12)
    np.testing.assert_allclose(cross, Y.T @ F / len(F), atol=1e-12)


def test_training_is_bit_reproducible_and_seed_dependent():
    data = _lorenz_data(-10.0, 0.0)
    hp = small_hp(obs_noise=0.01, training_passes=3)
    a, b = train(data, hp, 3), train(data, hp, 3)
    assert np.array_equal(a.readout, b.readout)
    assert not np.array_equal(a.readout, train(data, hp, 4).readout)


def test_training_rejects_bad_input():
    data = _lorenz_data(-3.0, 0.0)
    with pytest.raises(ValueError):
        train(data, small_hp(rc_dt=0.02), 0)
    with pytest.raises(ValueError):
        train(data, small_hp(washout=10_000), 0)
    with pytest.raises(ValueError):
        train(data, small_hp(architecture="hybrid"), 0)
    with pytest.raises(ValueError):
        train(Trajectory(0.0, 0.01, np.ones((5, 3)), diverged=True), small_hp(), 0)


def _linear_data(n=1500, dt=0.01):
    # a slowly decaying rotation sampled at dt; exactly linear in its own state
    theta = 0.05
    M = 0.999 * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    v = np.empty((n, 2))
    v[0] = [1.0, 0.0]
    for i in range(1, n):
        v[i] = M @ v[i - 1]
    return Trajectory(-dt * (n - 1), dt, v), M


def test_residuals_of_exact_linear_fit_vanish():
    data, _ = _linear_data()
    hp = small_hp(tikhonov=1e-14, washout=0, n_nodes=20)
    model = train(data, hp, 0, scales=np.ones(2))
    assert model.residuals.shape[0] == len(data) - 1
    assert np.max(np.linalg.norm(model.residuals, axis=1)) < 1e-8


def test_closed_loop_reproduces_linear_system():
    data, M = _linear_data()
    hp = small_hp(tikhonov=1e-14, washout=0, n_nodes=20)
    model = train(data, hp, 0, scales=np.ones(2))
    pred = predict_closed_loop(model, data.window(-0.5, 0.0), 100, stochastic=False)
    v = data.states[-1].copy()
    ref = [v]
    for _ in range(100):
        v = M @ v
        ref.append(v)
    assert pred.t0 == pytest.approx(0.0)
    np.testing.assert_allclose(pred.states, np.array(ref), atol=1e-6)


def test_residual_spread_reflects_target_noise():
    h = 0.1
    rng = np.random.default_rng(5)
    t = np.arange(3000) * 0.01
    clean = np.column_stack([np.sin(t), np.cos(0.5 * t)]) * 3.0
    data = Trajectory(-t[-1], 0.01, clean + rng.uniform(-h, h, clean.shape))
    model = train(data, small_hp(tikhonov=1e-6), 1, scales=np.ones(2))
    sd = model.residuals.std(axis=0)
    np.testing.assert_allclose(sd, h / np.sqrt(3), rtol=0.3)


def test_prediction_edges_and_replay():
    data = _lorenz_data(-10.0, 1.0)
    model = train(data.window(-10.0, 0.0), small_hp(), 0)
    sync = data.window(-1.0, 0.0)
    p0 = predict_closed_loop(model, sync, 0)
    assert len(p0) == 1
    np.testing.assert_allclose(p0.states[0], sync.states[-1])
    a = predict_closed_loop(model, sync, 50, stochastic=True, seed=9)
    b = predict_closed_loop(model, sync, 50, stochastic=True, seed=9)
    c = predict_closed_loop(model, sync, 50, stochastic=False, seed=1)
    d = predict_closed_loop(model, sync, 50, stochastic=False, seed=2)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(c.states, d.states)
    assert not np.array_equal(a.states, c.states)
    with pytest.raises(ValueError):
        predict_closed_loop(model, sync, -1)


def test_prediction_flags_divergence():
    data = _lorenz_data(-5.0, 0.0)
    model = train(data, small_hp(), 0)
    blown = TrainedModel(model.topology, model.readout * 50.0, model.residuals, model.scales,
                         model.hyperparams, model.train_t0, model.dt)
    pred = predict_closed_loop(blown, data.window(-1.0, 0.0), 500, stochastic=False)
    assert pred.diverged and len(pred) < 501


def test_mismatched_readout_rejected():
    data = _lorenz_data(-5.0, 0.0)
    model = train(data, small_hp(), 0)
    with pytest.raises(ValueError):
        TrainedModel(model.topology, model.readout[:, :-1], model.residuals, model.scales,
                     model.hyperparams.with_(architecture="split_quadratic"), model.train_t0, model.dt)


@pytest.mark.parametrize("arch", ["plain", "split_quadratic", "hybrid"])
def test_model_file_roundtrip(tmp_path, arch):
    data = _lorenz_data(-5.0, 0.0)
    km = KnowledgeModel.inaccurate_lorenz(RampSchedule(25.0, 1.0, 50.0)) if arch == "hybrid" else None
    model = train(data, small_hp(architecture=arch, control_slope=1e-4), 2, knowledge=km)
    save_model(model, tmp_path / "m.dcrm")
    back = load_model(tmp_path / "m.dcrm")
    assert back.hyperparams == model.hyperparams
    assert np.array_equal(back.readout, model.readout)
    assert np.array_equal(back.residuals, model.residuals)
    assert (back.topology.adjacency != model.topology.adjacency).nnz == 0
    assert back.train_t0 == model.train_t0 and back.dt == model.dt
    sync = data.window(-1.0, 0.0)
    np.testing.assert_array_equal(predict_closed_loop(back, sync, 30, seed=4).states,
                                  predict_closed_loop(model, sync, 30, seed=4).states)
    (tmp_path / "bad.dcrm").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.dcrm")


def test_knowledge_model_matches_dynamics_with_true_params():
    rho = RampSchedule(154.0, 8.0, 100.0)
    sys_ = LorenzParams(rho=rho)
    km = KnowledgeModel(sys_).with_scales([5.0, 7.0, 40.0])
    x = np.array([3.0, -2.0, 150.0])
    got = knowledge_step(km, x / km.scales, 1.5) * km.scales
    np.testing.assert_allclose(got, one_step(sys_, x, 1.5), atol=1e-10)


def test_knowledge_model_independent_rk4():
    km = KnowledgeModel.inaccurate_lorenz(RampSchedule.constant(29.5))
    s, b, r, h = 20.0, 16.0 / 3.0, 29.5, 0.01

    def f(p):
        x, y, z = p
        return np.array([s * (y - x), x * (r - z) - y, x * y - b * z])

    p = np.ones(3)
    k1 = f(p)
    k2 = f(p + h / 2 * k1)
    k3 = f(p + h / 2 * k2)
    k4 = f(p + h * k3)
    np.testing.assert_allclose(knowledge_step(km, p, 0.0), p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), atol=1e-12)


def test_knowledge_model_mismatch_moves_fixed_point():
    rho = 28.0
    q = np.sqrt(8.0 / 3.0 * (rho - 1.0))
    fp = np.array([q, q, rho - 1.0])
    km = KnowledgeModel.inaccurate_lorenz(RampSchedule.constant(rho))
    assert np.linalg.norm(knowledge_step(km, fp, 0.0) - fp) > 1e-3
    exact = KnowledgeModel(LorenzParams(rho=RampSchedule.constant(rho)))
    assert np.linalg.norm(knowledge_step(exact, fp, 0.0) - fp) < 1e-10


def test_hybrid_prior_limit_follows_knowledge_model():
    data = _lorenz_data(-5.0, 0.0)
    km = KnowledgeModel.inaccurate_lorenz(RampSchedule.constant(28.0))
    model = train(data, small_hp(architecture="hybrid", tikhonov=1e12), 0, knowledge=km)
    np.testing.assert_allclose(model.readout, hybrid_prior(60, 3), atol=1e-4)
    sync = data.window(-1.0, 0.0)
    pred = predict_closed_loop(model, sync, 1, stochastic=False)
    kb = knowledge_step(model.knowledge, sync.states[-1] / model.scales, 0.0) * model.scales
    np.testing.assert_allclose(pred.states[1], kb, rtol=1e-3, atol=1e-3)


def test_stationary_lorenz_short_term_skill():
    # 5 Lyapunov times at lambda_max ~ 0.9 in at least half of the trials
    data = _lorenz_data(-200.0, 80.0)
    hp = HyperParams(n_nodes=2000, spectral_radius=0.4, input_scale=0.5, tikhonov=1e-10, train_length=100.0)
    model = train(data.window(-100.0, 0.0), hp, 5)
    vts = []
    for t0 in np.arange(0.0, 60.0, 6.0):
        pred = predict_closed_loop(model, data.window(t0 - 1.0, t0), 1500, stochastic=False)
        vts.append(valid_time(pred, data.window(t0, t0 + 15.0), 0.4).valid_time)
    assert np.mean(np.array(vts) >= 5 / 0.9) >= 0.5
