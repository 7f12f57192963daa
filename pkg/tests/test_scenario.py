import math
from pathlib import Path

import numpy as np
import pytest

from voifilter.errors import ConfigError
from voifilter.scenario import (
    Maneuver,
    ScenarioConfig,
    build_ncv,
    config_from_dict,
    deploy_uniform,
    load_config,
    simulate_truth,
    stream_rng,
)
from voifilter.sensing import SensorKind, SensorSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ONE_SENSOR = (SensorSpec("TOA", (0.0, 0.0)),)


class TestNcv:
    def test_unit_delta_matrices(self):
        m = build_ncv(1.0)
        np.testing.assert_array_equal(
            m.A, [[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 0, 1]]
        )
        np.testing.assert_allclose(m.Q[:2, :2], [[1 / 3, 1 / 2], [1 / 2, 1]])
        np.testing.assert_allclose(m.Q[2:, 2:], [[1 / 3, 1 / 2], [1 / 2, 1]])
        np.testing.assert_array_equal(m.Q[:2, 2:], 0)

    @pytest.mark.parametrize("delta", [0.01, 0.1, 1.0, 2.5, 10.0])
    def test_block_determinant(self, delta):
        m = build_ncv(delta)
        assert np.linalg.det(m.Q[:2, :2]) == pytest.approx(delta**4 / 12, rel=1e-9)
        assert np.linalg.eigvalsh(m.Q).min() > 0

    def test_inverse(self):
        m = build_ncv(0.7)
        expected = np.array([[1, -0.7, 0, 0], [0, 1, 0, 0], [0, 0, 1, -0.7], [0, 0, 0, 1]])
        np.testing.assert_allclose(np.linalg.inv(m.A), expected, atol=1e-15)

    def test_q_scale(self):
        np.testing.assert_allclose(build_ncv(1.0, 3.0).Q, 3 * build_ncv(1.0).Q)

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_ncv(0.0)
        with pytest.raises(ValueError):
            build_ncv(1.0, -1.0)


class TestTruth:
    def test_noiseless_is_power_of_a(self):
        cfg = ScenarioConfig(ONE_SENSOR, horizon=200, delta=0.5, q_scale=0.0)
        traj = simulate_truth(cfg.truth_model(), cfg, stream_rng(0, 0))
        x0 = np.array(cfg.initial_state)
        for k in (0, 1, 57, 199):
            np.testing.assert_allclose(traj[k], np.linalg.matrix_power(cfg.truth_model().A, k) @ x0, rtol=1e-9)

    def test_empirical_process_noise(self):
        cfg = ScenarioConfig(ONE_SENSOR, horizon=100_001, delta=1.0, q_scale=2.0)
        model = cfg.truth_model()
        traj = simulate_truth(model, cfg, np.random.default_rng(1))
        w = traj[1:] - traj[:-1] @ model.A.T
        emp = np.cov(w.T)
        # Zero blocks are checked absolutely against the diagonal scale.
        scale = np.sqrt(np.outer(np.diag(model.Q), np.diag(model.Q)))
        assert np.all(np.abs(emp - model.Q) <= 0.05 * scale)
        nz = model.Q != 0
        assert np.all(np.abs(emp[nz] - model.Q[nz]) <= 0.05 * np.abs(model.Q[nz]))

    def test_maneuver_overrides_velocity(self):
        cfg = ScenarioConfig(
            ONE_SENSOR,
            horizon=20,
            q_scale=0.0,
            maneuvers=(Maneuver(10, (-8.0, 0.1)),),
        )
        traj = simulate_truth(cfg.truth_model(), cfg, np.random.default_rng(0))
        np.testing.assert_allclose(traj[9], [1500 + 9 * 8, 8, 1000 + 9 * 12, 12])
        np.testing.assert_allclose(traj[10], [1500 + 10 * 8, -8, 1000 + 10 * 12, 0.1])
        np.testing.assert_allclose(traj[11, [0, 2]], [1500 + 80 - 8, 1000 + 120 + 0.1])

    def test_reproducible(self):
        cfg = ScenarioConfig(ONE_SENSOR, horizon=50)
        a = simulate_truth(cfg.truth_model(), cfg, stream_rng(4, 0))
        b = simulate_truth(cfg.truth_model(), cfg, stream_rng(4, 0))
        np.testing.assert_array_equal(a, b)
        c = simulate_truth(cfg.truth_model(), cfg, stream_rng(5, 0))
        assert not np.array_equal(a, c)

    def test_streams_differ(self):
        assert stream_rng(1, 0).random() != stream_rng(1, 1).random()


class TestConfig:
    def test_paper_like_loads(self):
        cfg = load_config(CONFIGS / "paper_like.yaml")
        assert cfg.num_nodes == 20 and cfg.horizon == 3000
        assert cfg.initial_state == (1500.0, 8.0, 1000.0, 12.0)
        assert cfg.maneuvers == (Maneuver(1500, (-8.0, 0.1)),)
        assert cfg.sensors[0].sensing_radius == 1000.0
        doa = [s for s in cfg.sensors if s.kind is SensorKind.DOA]
        assert doa and doa[0].noise_std == pytest.approx(math.radians(2.0))

    def test_all_shipped_configs_load(self):
        for path in sorted(CONFIGS.glob("*.yaml")):
            load_config(path)

    def test_explicit_node_list(self):
        cfg = config_from_dict(
            {
                "nodes": {
                    "list": [
                        {"kind": "toa", "position": [0, 0], "noise_std": 2.0},
                        {"kind": "DOA", "position": [10, 0], "noise_std_deg": 1.0},
                        {"kind": "NONE", "position": [5, 5]},
                    ]
                },
                "horizon": 10,
            }
        )
        assert [s.kind for s in cfg.sensors] == [SensorKind.TOA, SensorKind.DOA, SensorKind.NONE]
        assert cfg.sensors[1].noise_std == pytest.approx(math.radians(1.0))

    @pytest.mark.parametrize(
        "raw",
        [
            {},
            {"nodes": {"list": [{"kind": "NONE", "position": [0, 0]}]}},
            {"nodes": {"list": [{"kind": "TOA", "position": [0, 0]}]}, "filter": "bogus"},
            {"nodes": {"list": [{"kind": "TOA", "position": [0, 0]}]}, "gamma": -1},
            {
                "nodes": {"list": [{"kind": "TOA", "position": [0, 0]}]},
                "horizon": 10,
                "target": {"maneuvers": [{"step": 20, "velocity": [0, 0]}]},
            },
            {"nodes": {"list": [{"kind": "TOA", "position": [0, 0]}]}, "link": {"success_at_reference": 2}},
        ],
    )
    def test_invalid_configs(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_bad_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        p = tmp_path / "list.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_filter_model_defaults_to_truth(self):
        cfg = ScenarioConfig(ONE_SENSOR, q_scale=0.3)
        np.testing.assert_array_equal(cfg.filter_model().Q, cfg.truth_model().Q)
        np.testing.assert_allclose(cfg.with_(filter_q_scale=0.6).filter_model().Q, 2 * cfg.truth_model().Q)


class TestDeploy:
    def test_counts_and_bounds(self):
        specs = deploy_uniform(20, [[0, 4000], [0, 4000]], seed=3, toa_fraction=0.3, non_sensing=2)
        kinds = [s.kind for s in specs]
        assert kinds.count(SensorKind.NONE) == 2
        assert kinds.count(SensorKind.TOA) == round(0.3 * 18)
        pos = np.array([s.position for s in specs])
        assert pos.min() >= 0 and pos.max() <= 4000

    def test_seeded(self):
        a = deploy_uniform(5, [[0, 1], [0, 1]], seed=9)
        b = deploy_uniform(5, [[0, 1], [0, 1]], seed=9)
        assert a == b
