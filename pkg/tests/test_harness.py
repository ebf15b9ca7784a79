"""Tests for configuration, metric aggregation, reports and sweeps."""
import math
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from otfs_isac.core.geometry import FrameGeometry, PathParams, PathSet
from otfs_isac.core.operators import build_channel_operator, dense_channel_matrix
from otfs_isac.core.rng import trial_rng
from otfs_isac.core.safety import PerformanceMonitor, performance_monitor
from otfs_isac.harness.config import (
    ConfigError,
    SimConfig,
    SweepSection,
    load_config,
    parse_config,
)
from otfs_isac.harness.experiments import (
    CRLB_REFERENCE,
    EXPERIMENTS,
    crlb_reference_rows,
    run_experiment,
    sweep_axis,
    train_detector,
)
from otfs_isac.harness.metrics import (
    DB_FLOOR,
    BerAccumulator,
    MeanAccumulator,
    MetricRow,
    NmseAccumulator,
    RmseAccumulator,
    nmse,
    operator_nmse,
    to_db,
)
from otfs_isac.harness.reporting import (
    CSV_HEADER,
    HAS_PANDAS,
    load_report,
    render_report,
    write_report,
)
from otfs_isac.harness.selftest import CHECKS, run_selftest
from otfs_isac.link.channel import ChannelProfile, NoiseSpec, add_awgn, draw_channel
from otfs_isac.link.equalizer import imfc_equalize
from otfs_isac.link.waveform import Constellation, random_data_frame

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

SMALL_FRAME = """
[frame]
M = 16
N = 8
"""


class TestConfig:
    """TOML parsing and validation."""

    def test_defaults(self) -> None:
        cfg = load_config(None)
        assert cfg.geometry() == FrameGeometry(64, 16)
        assert cfg.run.trials == 100
        assert cfg.channel.profile().num_paths == 4
        assert cfg.estimator.hierarchy_levels == (2,)
        assert cfg.geometry(N=32).N == 32

    def test_parse_sections(self) -> None:
        cfg = parse_config(
            SMALL_FRAME
            + """
[estimator]
levels = [1, 3]
methods = ["correlation"]

[equalizer]
qam_order = 16
ebn0_db = 10

[run]
seed = 4
trials = 3
"""
        )
        assert cfg.geometry() == FrameGeometry(16, 8)
        assert cfg.estimator.hierarchy_levels == (1, 3)
        assert cfg.equalizer.constellation().order == 16
        assert isinstance(cfg.equalizer.ebn0_db, float)
        assert cfg.run.seed == 4

    def test_estimator_build(self) -> None:
        cfg = parse_config(SMALL_FRAME)
        est = cfg.estimator.build(cfg.channel.profile(), cfg.geometry(), 0.5, L_h=3)
        assert est.L_h == 3
        assert est.noise_variance == 0.5
        assert est.known_P == 4
        eq = cfg.equalizer.build(cfg.geometry(), 2.0)
        assert eq.epsilon == pytest.approx(0.5 * math.sqrt(128 * 2.0))

    @pytest.mark.parametrize(
        "text,key",
        [
            ("[bogus]\nx = 1\n", "bogus"),
            ("[frame]\nQ = 1\n", "frame.Q"),
            ('[frame]\nM = "64"\n', "frame.M"),
            ("[frame]\nM = 6.5\n", "frame.M"),
            ("[channel]\nrayleigh = 1\n", "channel.rayleigh"),
            ("[channel]\ndelays_us = 1.0\n", "channel.delays_us"),
            ("[run]\ntrials = 0\n", "run.trials"),
            ("[run]\nthreads = 0\n", "run.threads"),
            ("[sweep]\npoints = [1.0, 1.0]\n", "sweep.points"),
            ('[sweep]\nname = "rho"\n', "sweep.name"),
            ('[sweep]\nname = "N"\npoints = [8.5]\n', "sweep.points"),
            ('[estimator]\nmethods = ["ml"]\n', "estimator.methods"),
            ('[equalizer]\ndetectors = ["zf"]\n', "equalizer.detectors"),
            ('[equalizer]\ncsi = ["genie"]\n', "equalizer.csi"),
            ('[estimator]\np_source = "fnn"\n', "estimator.model"),
            ("[frame]\nM = 0\n", "frame"),
            ("[equalizer]\nqam_order = 8\n", "equalizer"),
        ],
    )
    def test_errors_name_the_key(self, text: str, key: str) -> None:
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.key == key
        assert str(info.value).startswith(key)

    def test_syntax_error(self) -> None:
        with pytest.raises(ConfigError, match="TOML"):
            parse_config("[frame\nM = 1")

    def test_overrides(self) -> None:
        cfg = SimConfig()
        assert cfg.with_overrides() is cfg
        updated = cfg.with_overrides(seed=3, trials=5, out="x.csv")
        run = updated.run
        assert (run.seed, run.trials, run.out) == (3, 5, "x.csv")
        assert updated.run.threads == 1
        with pytest.raises(ConfigError):
            cfg.with_overrides(threads=0)

    def test_missing_file(self) -> None:
        with pytest.raises(ConfigError, match="cannot read"):
            load_config("/nonexistent/config.toml")

    @pytest.mark.parametrize(
        "path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem
    )
    def test_shipped_configs_load(self, path: Path) -> None:
        cfg = load_config(path)
        assert cfg.run.out.startswith("results/")


class TestMetrics:
    """Figures of merit and accumulators."""

    def test_to_db(self) -> None:
        assert to_db(0.01) == pytest.approx(-20.0)
        assert to_db(0.0) == DB_FLOOR
        assert to_db(1e-40) == DB_FLOOR

    def test_dense_and_operator_nmse_agree(self) -> None:
        geometry = FrameGeometry(8, 4)
        truth = PathSet.from_arrays([1.0, 0.5j], [0.0, 1.5], [0.3, -1.0]).normalize()
        estimate = PathSet((PathParams(0.9, 0.1, 0.3),))
        H = dense_channel_matrix(truth, geometry)
        H_hat = dense_channel_matrix(estimate, geometry)
        assert operator_nmse(truth, estimate, geometry) == pytest.approx(
            nmse(H, H_hat), abs=1e-8
        )
        assert operator_nmse(truth, PathSet(), geometry, db=False) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            nmse(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            nmse(np.eye(2), np.eye(3))

    def test_mean_accumulator(self) -> None:
        acc = MeanAccumulator()
        for value in (1.0, 2.0, 3.0):
            acc.add(value)
        row = acc.row("snr_p_db", 5.0, "mean_p_hat")
        assert row.mean == pytest.approx(2.0)
        assert row.stderr == pytest.approx(1.0 / math.sqrt(3))
        assert row.trials == 3

    def test_nmse_averages_before_db(self) -> None:
        acc = NmseAccumulator()
        acc.add(0.1)
        acc.add(0.001)
        row = acc.row("snr_p_db", 0.0, "nmse_db")
        assert row.mean == pytest.approx(10 * math.log10(0.0505))
        single = NmseAccumulator()
        single.add(0.0)
        assert single.row("snr_p_db", 0.0, "nmse_db").mean == DB_FLOOR

    def test_rmse_root_after_mean(self) -> None:
        acc = RmseAccumulator()
        acc.add(1.0)
        acc.add(9.0)
        assert acc.row("snr_rad_db", 0.0, "range").mean == pytest.approx(math.sqrt(5.0))

    def test_ber_pools_bits(self) -> None:
        acc = BerAccumulator()
        acc.add(1, 100)
        acc.add(3, 300)
        row = acc.row("ebn0_db", 2.0, "ber_imfc_perfect")
        assert row.mean == pytest.approx(0.01)
        assert row.trials == 2
        assert row.stderr == pytest.approx(math.sqrt(0.01 * 0.99 / 400))
        assert BerAccumulator().row("ebn0_db", 0.0, "ber").mean == 0.0

    def test_row_rejects_non_finite(self) -> None:
        with pytest.raises(ValueError):
            MetricRow("a", 0.0, "m", math.nan, 0.0, 1)


class TestReporting:
    """CSV rendering and round trip."""

    def setup_method(self) -> None:
        self.temp_dir = tempfile.mkdtemp()
        self.rows = [
            MetricRow(
                "snr_p_db", 2.5, "nmse_db_threshold", -12.345678901234567, 0.1, 10
            ),
            MetricRow("snr_p_db", 5.0, "nmse_db_threshold", -15.0, 0.0, 10),
        ]

    def teardown_method(self) -> None:
        shutil.rmtree(self.temp_dir)

    def test_render(self) -> None:
        text = render_report(self.rows)
        lines = text.split("\n")
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "snr_p_db,2.5,nmse_db_threshold,-12.345678901234567,0.1,10"
        assert lines[2] == "snr_p_db,5.0,nmse_db_threshold,-15.0,0.0,10"
        assert "\r" not in text
        assert text.endswith("\n")

    def test_write_and_load(self) -> None:
        path = write_report(self.rows, Path(self.temp_dir) / "out" / "chest.csv")
        assert load_report(path) == self.rows

    def test_load_rejects_foreign_csv(self) -> None:
        path = Path(self.temp_dir) / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            load_report(path)

    @pytest.mark.skipif(not HAS_PANDAS, reason="pandas not installed")
    def test_load_as_frame(self) -> None:
        path = write_report(self.rows, Path(self.temp_dir) / "chest.csv")
        frame = load_report(path, as_frame=True)
        assert list(frame.columns) == list(CSV_HEADER)
        assert len(frame) == 2


class TestSweepAxis:
    def test_defaults(self) -> None:
        name, points = sweep_axis("chest-sweep", SimConfig())
        assert name == "snr_p_db"
        assert points == (0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0)
        assert sweep_axis("ber-sweep", SimConfig())[1][-1] == 14.0
        assert sweep_axis("sensing-sweep", SimConfig())[1][0] == -20.0

    def test_axis_must_match_experiment(self) -> None:
        cfg = parse_config('[sweep]\nname = "ebn0_db"\npoints = [1.0]\n')
        with pytest.raises(ConfigError) as info:
            sweep_axis("chest-sweep", cfg)
        assert info.value.key == "sweep.name"

    def test_secondary_axis_needs_points(self) -> None:
        cfg = parse_config('[sweep]\nname = "N"\n')
        with pytest.raises(ConfigError) as info:
            sweep_axis("chest-sweep", cfg)
        assert info.value.key == "sweep.points"

    def test_crlb_rows(self) -> None:
        rows = crlb_reference_rows()
        assert len(rows) == 2 * len(CRLB_REFERENCE)
        assert {r.metric for r in rows} == {
            "reference_crlb_range_m",
            "reference_crlb_velocity_mps",
        }
        assert all(r.trials == 0 and r.stderr == 0.0 for r in rows)


class TestExperiments:
    """Small end-to-end sweeps."""

    def setup_method(self) -> None:
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self) -> None:
        shutil.rmtree(self.temp_dir)

    def config(self, extra: str, trials: int = 2) -> SimConfig:
        return parse_config(SMALL_FRAME + extra).with_overrides(trials=trials)

    def test_chest_sweep_rows(self) -> None:
        cfg = self.config(
            '[estimator]\nlevels = [1, 2]\n'
            '[sweep]\nname = "snr_p_db"\npoints = [0.0, 20.0]\n'
        )
        rows = run_experiment("chest-sweep", cfg)
        metrics = {(r.sweep_value, r.metric) for r in rows}
        for value in (0.0, 20.0):
            assert (value, "nmse_db_threshold") in metrics
            assert (value, "nmse_db_correlation_Lh1") in metrics
            assert (value, "nmse_db_correlation_Lh2") in metrics
        assert all(r.trials == 2 for r in rows)
        assert all(r.sweep_name == "snr_p_db" for r in rows)

    def test_n_sweep_and_sc_count(self) -> None:
        cfg = self.config(
            '[estimator]\np_source = "sc"\nmethods = ["correlation"]\n'
            '[sweep]\nname = "N"\npoints = [4, 8]\n'
        )
        rows = run_experiment("chest-sweep", cfg)
        values = [r.sweep_value for r in rows if r.metric.startswith("nmse")]
        assert values == [4.0, 8.0]
        assert any(r.metric == "mean_p_hat_Lh2" for r in rows)

    def test_results_independent_of_workers(self) -> None:
        cfg = self.config('[sweep]\nname = "snr_p_db"\npoints = [10.0]\n', trials=3)
        serial = run_experiment("chest-sweep", cfg)
        parallel = run_experiment("chest-sweep", cfg.with_overrides(threads=2))
        assert serial == parallel

    def test_seed_changes_results(self) -> None:
        cfg = self.config('[sweep]\nname = "snr_p_db"\npoints = [10.0]\n')
        a = run_experiment("chest-sweep", cfg)
        b = run_experiment("chest-sweep", cfg.with_overrides(seed=1))
        assert [r.mean for r in a] != [r.mean for r in b]

    def test_stage_timer_restarts_each_run(self) -> None:
        cfg = self.config('[sweep]\nname = "snr_p_db"\npoints = [5.0, 10.0]\n', 1)
        run_experiment("chest-sweep", cfg)
        run_experiment("chest-sweep", cfg)
        assert performance_monitor.count("chest-sweep.point") == 2

    def test_ber_sweep(self) -> None:
        cfg = self.config(
            '[equalizer]\ncsi = ["perfect", "correlation", "threshold"]\n'
            '[sweep]\nname = "ebn0_db"\npoints = [30.0]\n'
        )
        rows = {r.metric: r for r in run_experiment("ber-sweep", cfg)}
        for csi in ("perfect", "correlation", "threshold"):
            for detector in ("imfc", "lmmse"):
                assert 0.0 <= rows[f"ber_{detector}_{csi}"].mean <= 1.0
            assert rows[f"iterations_{csi}"].mean >= 1
        assert rows["ber_lmmse_perfect"].mean < 0.05

    def test_epsilon_sweep(self) -> None:
        cfg = self.config(
            '[equalizer]\ndetectors = ["imfc"]\n'
            '[sweep]\nname = "epsilon_scale"\npoints = [0.5, 3.0]\n'
        )
        rows = run_experiment("ber-sweep", cfg)
        rows = [r for r in rows if r.metric == "iterations_perfect"]
        assert rows[0].mean >= rows[1].mean

    def test_sensing_sweep(self) -> None:
        cfg = parse_config(
            "[frame]\nM = 32\nN = 32\n[sensing]\nlevels = [1, 2]\n"
            '[sweep]\nname = "snr_rad_db"\npoints = [20.0]\n'
        ).with_overrides(trials=2)
        rows = run_experiment("sensing-sweep", cfg)
        measured = {r.metric: r for r in rows if r.trials == 2}
        assert set(measured) == {
            "range_rmse_m_Lh1",
            "velocity_rmse_mps_Lh1",
            "range_rmse_m_Lh2",
            "velocity_rmse_mps_Lh2",
        }
        assert measured["range_rmse_m_Lh2"].mean < 100.0
        assert len(rows) == 4 + 2 * len(CRLB_REFERENCE)

    def test_detect_eval_without_model(self) -> None:
        cfg = self.config(
            f'[fnn]\nmodel = "{self.temp_dir}/missing.bin"\n'
            '[sweep]\nname = "snr_p_db"\npoints = [20.0]\n'
        )
        metrics = {r.metric for r in run_experiment("detect-eval", cfg)}
        assert metrics == {"mean_p_hat_sc", "rmse_p_hat_sc"}

    def test_fnn_eval_requires_model(self) -> None:
        cfg = self.config(f'[fnn]\nmodel = "{self.temp_dir}/missing.bin"\n')
        with pytest.raises(ConfigError, match="does not exist"):
            run_experiment("fnn-eval", cfg)

    def test_unknown_experiment(self) -> None:
        assert "selftest" not in EXPERIMENTS
        with pytest.raises(ValueError):
            run_experiment("selftest", SimConfig())

    @pytest.mark.slow
    def test_train_then_evaluate(self) -> None:
        model_path = f"{self.temp_dir}/fnn.bin"
        dataset = f"{self.temp_dir}/fnn_dataset"
        cfg = self.config(
            '[fnn]\nepochs = 3\nsamples_per_level = 8\nsnr_levels_db = [10.0]\n'
            f'path_counts = [2, 3]\nbatch_size = 4\nmodel = "{model_path}"\n'
            f'dataset = "{dataset}"\n'
            '[sweep]\nname = "snr_p_db"\npoints = [10.0]\n'
        )
        model, rows = train_detector(cfg)
        assert Path(model_path).exists()
        assert Path(dataset).with_suffix(".bin").exists()
        names = [r.metric for r in rows[:3]]
        assert names == ["loss", "learning_rate", "validation_accuracy"]
        assert rows[-1].sweep_value == 3.0

        cached, _ = train_detector(cfg)
        np.testing.assert_array_equal(cached.weights[0], model.weights[0])
        assert performance_monitor.count("fnn.dataset") == 0
        assert performance_monitor.count("fnn.training") == 1

        fnn_rows = {r.metric: r for r in run_experiment("fnn-eval", cfg)}
        assert 0.0 <= fnn_rows["accuracy"].mean <= 1.0
        assert fnn_rows["mean_p_true"].mean in (2.0, 2.5, 3.0)

        detect = {r.metric for r in run_experiment("detect-eval", cfg)}
        assert {"mean_p_hat_fnn", "rmse_p_hat_fnn"} <= detect


def by_point(rows: list[MetricRow]) -> dict[tuple[float, str], float]:
    return {(r.sweep_value, r.metric): r.mean for r in rows if r.trials > 0}


@pytest.mark.slow
class TestShippedScenarios:
    """Reference figures of the shipped configs at the default seed."""

    def setup_method(self) -> None:
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self) -> None:
        shutil.rmtree(self.temp_dir)

    def scenario(self, name: str, *points: float) -> SimConfig:
        cfg = load_config(CONFIG_DIR / name)
        if points:
            cfg = replace(cfg, sweep=SweepSection(cfg.sweep.name, points))
        return cfg

    def test_channel_estimation_figures(self) -> None:
        cfg = self.scenario("chest_sweep.toml", 15.0, 20.0)
        nmse_db = by_point(run_experiment("chest-sweep", cfg))
        assert nmse_db[15.0, "nmse_db_correlation_Lh2"] == pytest.approx(
            -26.17, abs=2.0
        )
        assert nmse_db[20.0, "nmse_db_threshold"] == pytest.approx(-14.93, abs=2.0)
        gain = (
            nmse_db[20.0, "nmse_db_correlation_Lh1"]
            - nmse_db[20.0, "nmse_db_correlation_Lh2"]
        )
        assert 1.0 <= gain <= 3.5
        for snr in (15.0, 20.0):
            lh2 = nmse_db[snr, "nmse_db_correlation_Lh2"]
            assert abs(nmse_db[snr, "nmse_db_correlation_Lh3"] - lh2) < 0.5
            assert nmse_db[snr, "nmse_db_threshold"] - lh2 >= 9.0

    def test_sensing_figures(self) -> None:
        cfg = self.scenario("sensing_sweep.toml", 10.0, 15.0, 20.0)
        rmse = by_point(run_experiment("sensing-sweep", cfg))
        assert 0.278 / 2 <= rmse[20.0, "range_rmse_m_Lh3"] <= 0.278 * 2
        assert 0.020 / 2 <= rmse[20.0, "velocity_rmse_mps_Lh3"] <= 0.020 * 2
        for snr in (10.0, 15.0, 20.0):
            lh1, lh2, lh3 = (rmse[snr, f"range_rmse_m_Lh{h}"] for h in (1, 2, 3))
            assert lh1 > lh2
            assert lh2 >= 0.9 * lh3

    def test_ber_figures(self) -> None:
        cfg = self.scenario("ber_sweep.toml", 10.0, 12.0)
        cfg = replace(cfg, equalizer=replace(cfg.equalizer, csi=("perfect",)))
        ber = by_point(run_experiment("ber-sweep", cfg))
        assert 1.31e-3 <= ber[10.0, "ber_lmmse_perfect"] <= 5.24e-3
        for ebn0 in (10.0, 12.0):
            lmmse = ber[ebn0, "ber_lmmse_perfect"]
            assert lmmse / 2 <= ber[ebn0, "ber_imfc_perfect"] <= 2 * lmmse
        assert 15.0 <= ber[12.0, "iterations_perfect"] <= 30.0

    def test_imfc_operator_applications(self) -> None:
        geometry = FrameGeometry(64, 16)
        constellation = Constellation.qam(4)
        N0 = NoiseSpec.for_ebn0(12.0, 2, 1.0).N0
        section = replace(load_config(None).equalizer, safe_step=True)
        eq_cfg = section.build(geometry, N0)
        monitor = PerformanceMonitor()
        iterations = 0
        for trial in range(3):
            rng = trial_rng(0, "imfc-operators", 0, trial)
            paths = draw_channel(ChannelProfile.vehicular(), geometry, rng)
            grid, _ = random_data_frame(geometry, constellation, rng)
            clean = dense_channel_matrix(paths, geometry) @ grid.vector
            y = add_awgn(clean, NoiseSpec(N0), rng)
            operator = build_channel_operator(paths, geometry, monitor)
            iterations += imfc_equalize(y, operator, eq_cfg).iterations
        assert monitor.count("channel.forward") == iterations + 3
        assert monitor.count("channel.adjoint") == iterations

    def test_epsilon_trade_off(self) -> None:
        cfg = self.scenario("epsilon_sweep.toml").with_overrides(trials=300)
        rows = run_experiment("ber-sweep", cfg)
        iterations = [r.mean for r in rows if r.metric == "iterations_perfect"]
        assert len(iterations) == len(cfg.sweep.points)
        assert all(b <= a + 0.5 for a, b in zip(iterations, iterations[1:]))
        ber = by_point(rows)
        assert 3 * ber[0.4, "ber_imfc_perfect"] <= ber[3.0, "ber_imfc_perfect"]

    def test_path_count_detector(self) -> None:
        model = f"{self.temp_dir}/fnn.bin"
        train = self.scenario("fnn_train.toml")
        train = replace(
            train,
            fnn=replace(train.fnn, model=model, dataset=f"{self.temp_dir}/dataset"),
        )
        train_detector(train)

        cfg = self.scenario("detect_eval.toml", 0.0, 10.0)
        cfg = replace(
            cfg,
            estimator=replace(cfg.estimator, model=model),
            fnn=replace(cfg.fnn, model=model),
        )
        p_hat = by_point(run_experiment("detect-eval", cfg))
        assert abs(p_hat[10.0, "mean_p_hat_fnn"] - 4) < 0.5
        assert abs(p_hat[0.0, "mean_p_hat_fnn"] - 4) < abs(
            p_hat[0.0, "mean_p_hat_sc"] - 4
        )


class TestSelftest:
    def test_all_checks_pass(self) -> None:
        results = run_selftest()
        assert [r.name for r in results] == list(CHECKS)
        failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
        assert failed == []

    def test_exception_counts_as_failure(self, mocker) -> None:
        def boom() -> tuple[bool, str]:
            raise RuntimeError("broken oracle")

        mocker.patch.dict(
            "otfs_isac.harness.selftest.CHECKS", {"boom": boom}, clear=True
        )
        (result,) = run_selftest()
        assert not result.passed
        assert "broken oracle" in result.detail
