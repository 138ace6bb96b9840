import json

import numpy as np
import pytest

from artifact.cli import main
from artifact.dynamics import LorenzParams, RampSchedule, Trajectory
from artifact.harness import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    SweepConfig,
    appendixA_compare,
    bundled_configs,
    emit_plot_data,
    load_config,
    member_seeds,
    read_json,
    rewrite_run,
    run_ensemble_experiment,
    stationary_sweep,
    write_sweep,
)
from artifact.harness.analysis import departure_time, levels_transition_time
from artifact.harness.config import TransitionSpec
from artifact.hpo import GridSpec
from artifact.observables import EventSeries

TINY = {
    "name": "tiny",
    "system": {"kind": "lorenz", "ramp": [28.0, 1.0, 100.0], "spinup": 20.0},
    "hyperparams": {"n_nodes": 40, "spectral_radius": 0.5, "input_scale": 0.5, "tikhonov": 1e-6,
                    "train_length": 8.0, "washout": 50},
    "ensemble_size": 3,
    "horizon": 4.0,
    "observable": {"kind": "maxima", "component": 2},
    "transition": {"kind": "levels", "window": 2.0, "min_levels": 2, "tol": 0.01},
    "snapshot_times": [1.0],
    "seed": 5,
}


def tiny(**changes):
    return ExperimentConfig.from_dict({**TINY, **changes})


def test_bundled_configs_load():
    names = bundled_configs()
    for expected in ("lorenz_headline", "appendix_a", "hopf_pure", "hopf_hybrid", "ikeda", "ks_noisy",
                     "sweep_hopf_branch", "sweep_ikeda_crisis"):
        assert expected in names
    for name in names:
        data = read_json(name)
        if "hyperparams" in data:
            cfg = load_config(name)
            assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        else:
            SweepConfig.from_dict(data).parameter_values()


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"ensemble_size": 0},
    {"hyperparams": {**TINY["hyperparams"], "rc_dt": 0.02}},
    {"hyperparams": {**TINY["hyperparams"], "architecture": "hybrid"}},
    {"hyperparams": {**TINY["hyperparams"], "leak": 1.0}},
    {"system": {"kind": "pendulum"}},
    {"observable": {"kind": "maxima", "component": 7}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        tiny(**bad)


def test_missing_config_name():
    with pytest.raises(ConfigError):
        read_json("no_such_config")


def test_run_key_ignores_labels():
    a = tiny()
    assert a.run_key() == a.with_(name="other", notes="x", workers=2).run_key()
    assert a.run_key() != a.with_(seed=6).run_key()
    assert a.digest() != a.with_(name="other").digest()


def test_member_seeds_counter_based():
    a = member_seeds(1, 3)
    assert a == member_seeds(1, 3)
    assert a != member_seeds(1, 4) and a != member_seeds(2, 3)
    assert len({a.initial, a.simulation, a.reservoir, a.prediction}) == 4
    assert all(0 <= s < 2 ** 63 for s in (a.initial, a.simulation, a.reservoir, a.prediction))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_ensemble_experiment(tiny(), out)


def test_ensemble_manifest_complete(tiny_run):
    out, manifest = tiny_run
    back = RunManifest.read(out)
    assert back.digest == manifest.digest and back.kind == "ensemble"
    assert len(back.members) == 3 and back.used + len(back.diverged) + len(back.failed) >= 3
    for f in back.files:
        assert (out / f).is_file(), f
    for name in ("config.json", "transitions.csv", "gamma.csv", "cdf_t1.csv"):
        assert name in back.files
    lines = (out / "transitions.csv").read_text().splitlines()
    assert lines[0] == "member,diverged,failed,true_transition,pred_transition,bounded" and len(lines) == 4
    res = manifest.result
    assert np.all((res.gamma.gamma[np.isfinite(res.gamma.gamma)] >= 0) &
                  (res.gamma.gamma[np.isfinite(res.gamma.gamma)] <= 2))
    assert 0 <= res.fraction_transitioned("pred") <= 1


def test_ensemble_is_reproducible_and_order_free(tiny_run):
    _, manifest = tiny_run
    again = run_ensemble_experiment(tiny())
    assert again.digest == manifest.digest
    parallel = run_ensemble_experiment(tiny(), workers=2)
    assert parallel.digest == manifest.digest
    assert run_ensemble_experiment(tiny(seed=6)).digest != manifest.digest


def test_member_is_independent_of_ensemble_size(tiny_run):
    _, manifest = tiny_run
    one = run_ensemble_experiment(tiny(ensemble_size=1))
    a = one.result.members[0].prediction.states
    b = manifest.result.members[0].prediction.states
    assert np.array_equal(a, b)


def test_rewrite_run_relabels(tiny_run, tmp_path):
    _, manifest = tiny_run
    cfg = tiny(name="renamed")
    m = rewrite_run(manifest, cfg, tmp_path)
    assert RunManifest.read(tmp_path).name == "renamed"
    assert m.result.gamma.gamma.tolist() == pytest.approx(manifest.result.gamma.gamma.tolist(), nan_ok=True)
    with pytest.raises(ValueError):
        rewrite_run(manifest, tiny(seed=9))


def test_emit_all_kinds(tiny_run, tmp_path):
    out, _ = tiny_run
    (p,) = emit_plot_data(out, "gamma", tmp_path)
    assert p.read_text().startswith("t,gamma")
    paths = emit_plot_data(out / "manifest.json", "cdf", tmp_path)
    assert [q.name for q in paths] == ["cdf_t1.csv"]
    (p,) = emit_plot_data(out, "events", tmp_path)
    rows = p.read_text().splitlines()
    assert rows[0] == "member,source,t,value" and len(rows) > 1
    (p,) = emit_plot_data(out, "snapshot", tmp_path, t=2.0)
    rows = p.read_text().splitlines()
    assert rows[0] == "member,source,v1',v2',v3'"
    assert len(rows) == 1 + 3 + (3 - len(RunManifest.read(out).diverged))
    with pytest.raises(ValueError):
        emit_plot_data(out, "snapshot", tmp_path)
    with pytest.raises(ValueError):
        emit_plot_data(out, "sweep", tmp_path)


def test_emit_reports_missing_artifact(tiny_run, tmp_path):
    out, _ = tiny_run
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "manifest.json").write_text((out / "manifest.json").read_text())
    with pytest.raises(FileNotFoundError, match="gamma.csv"):
        emit_plot_data(broken, "gamma", tmp_path)
    with pytest.raises(FileNotFoundError):
        emit_plot_data(tmp_path / "nowhere", "gamma")


def test_zero_horizon_writes_models(tmp_path):
    m = run_ensemble_experiment(tiny(horizon=0.0, ensemble_size=1), tmp_path)
    assert "members/m0000_model.dcrm" in m.files
    assert m.result.gamma is None


def test_levels_transition_detection():
    spec = TransitionSpec(kind="levels", window=10.0, min_levels=3, tol=0.01)
    t = np.arange(0.0, 40.0, 0.5)
    periodic = np.where(np.arange(t.size) % 2, 1.0, 2.0)
    assert levels_transition_time(EventSeries(t, periodic), spec, 0.0, 40.0) is None
    vals = periodic.copy()
    vals[t >= 20] = np.random.default_rng(0).uniform(0, 3, np.count_nonzero(t >= 20))
    got = levels_transition_time(EventSeries(t, vals), spec, 0.0, 40.0)
    assert got is not None and 10.0 <= got <= 20.0


def test_departure_detection():
    sys_ = LorenzParams(rho=RampSchedule.constant(28.0))
    q = np.sqrt(sys_.beta * 27.0)
    states = np.tile([q, q, 27.0], (100, 1))
    states[60:, 0] += 10.0
    traj = Trajectory(0.0, 0.1, states)
    assert departure_time(traj, sys_, 5.0) == pytest.approx(6.0)
    assert departure_time(traj, sys_, 5.0, (0.0, 5.0)) is None
    blown = Trajectory(0.0, 0.1, states[:30], diverged=True)
    assert departure_time(blown, sys_, 5.0) == pytest.approx(2.9)


def test_single_row_sweep_and_outputs(tmp_path):
    sys_ = LorenzParams(rho=RampSchedule.constant(20.0))
    table = stationary_sweep(sys_, [20.0], "fp_distance", transient=5.0, samples=5.0)
    assert len(table) == 1 and table.values[0].size > 0
    cfg = SweepConfig.from_dict({"name": "one", "system": {"kind": "lorenz", "ramp": [20.0, 0.0, 1.0]},
                                 "parameters": [20.0], "observable": "maxima", "transient": 5.0,
                                 "samples": 5.0})
    manifest = write_sweep(cfg, cfg.run(), tmp_path)
    assert manifest.kind == "sweep" and manifest.used == 1
    (p,) = emit_plot_data(tmp_path, "sweep", tmp_path / "plots")
    assert p.read_text().splitlines()[0] == "parameter,value"
    with pytest.raises(ValueError):
        emit_plot_data(tmp_path, "gamma")


def test_sweep_hysteresis_and_errors():
    sys_ = LorenzParams(rho=RampSchedule.constant(24.0))
    up = stationary_sweep(sys_, [24.0, 24.3, 24.6], "fp_distance", 50.0, 20.0, "up",
                          x0=np.array([8.0, 8.0, 23.0]))
    down = stationary_sweep(sys_, [24.0, 24.3, 24.6], "fp_distance", 50.0, 20.0, "down", seed=1,
                            x0=np.array([1.0, 1.0, 1.0]))
    # bistable below the Hopf point: the fixed point persists going up, chaos persists going down
    assert np.all(up.summary(np.max) < 1.0)
    assert np.all(down.summary(np.max) > 1.0)
    assert list(down.parameters) == [24.6, 24.3, 24.0]
    with pytest.raises(ValueError):
        stationary_sweep(sys_, [], "maxima")
    with pytest.raises(ValueError):
        stationary_sweep(sys_, [1.0], "colour")
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"name": "x", "system": {"kind": "lorenz"}, "parameters": {"start": 1}})


def test_compare_identical_winners_share_run(tmp_path):
    cfg = tiny(horizon=6.0)
    grid = GridSpec({"tikhonov": [1e-6]}, base=cfg.build_hyperparams(), m1=2, m2=1, seed=1, T1=1.0,
                    long_length=4.0, sync_length=0.2)
    report = appendixA_compare(cfg, grid, tmp_path)
    assert report.same_winner
    assert report.manifests["combined"] is report.manifests["valid_time"]
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["same_winner"] is True
    assert (tmp_path / "hpo_combined.csv").is_file() and (tmp_path / "gamma_compare.csv").is_file()
    m = RunManifest.read(tmp_path)
    assert m.kind == "compare"
    for f in m.files:
        assert (tmp_path / f).is_file(), f


def test_compare_reuses_finished_run(tiny_run, tmp_path):
    _, manifest = tiny_run
    cfg = tiny()
    grid = GridSpec({"tikhonov": [1e-6]}, base=cfg.build_hyperparams(), m1=2, m2=1, seed=1, T1=1.0,
                    long_length=4.0, sync_length=0.2)
    report = appendixA_compare(cfg, grid, None, finished=[manifest])
    assert report.manifests["combined"].result.members is manifest.result.members


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps({**TINY, "ensemble_size": 1}))
    assert main(["ensemble", "--config", str(cfg_path), "--out", str(tmp_path / "e")]) == 0
    assert main(["emit", str(tmp_path / "e"), "--what", "gamma"]) == 0
    assert (tmp_path / "e" / "plots" / "gamma.csv").is_file()
    assert main(["emit", str(tmp_path / "nowhere"), "--what", "gamma"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "colour": 1}))
    assert main(["ensemble", "--config", str(bad)]) == 1
    assert main(["ensemble", "--config", "no_such_config"]) == 1
    assert main(["hpo", "--config", str(cfg_path)]) == 1
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({"system": {"kind": "ikeda", "ramp": [6.75, 0.0, 1.0]}, "t_start": 0, "t_end": 50}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "s")]) == 0
    assert Trajectory.load(tmp_path / "s" / "trajectory.dctr").states.shape == (51, 2)
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "t")]) == 0
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "l")]) == 0
    assert main(["predict", "--model", str(tmp_path / "t" / "model.dcrm"), "--data",
                 str(tmp_path / "l" / "trajectory.dctr"), "--horizon", "1", "--out", str(tmp_path / "p")]) == 0
    pred = Trajectory.load(tmp_path / "p" / "prediction.dctr")
    assert len(pred) == 101 and pred.t0 == pytest.approx(0.0)
    # a Lorenz model cannot be synchronized on a 2-D record
    assert main(["predict", "--model", str(tmp_path / "t" / "model.dcrm"), "--data",
                 str(tmp_path / "s" / "trajectory.dctr"), "--horizon", "1", "--out", str(tmp_path / "q")]) == 2
    capsys.readouterr()
