"""Config parsing, per-cell seeding, the experiment driver, and the CLI."""

import json
import os

import numpy as np
import pytest

import crtlab
from crtlab.distributions import build_grid
from crtlab.estimators import EstimatorState, ingest
from crtlab.expcli import (
    ConfigError,
    build_config,
    cell_seed,
    config_hash,
    emit_density_snapshot,
    emit_phase_diagram,
    emit_rate_plot,
    main,
    parse_config,
    run_experiment,
    theory_check_report,
)
from crtlab.rates import RateSummary
from crtlab.svgfig import read_metadata

TOML_TEXT = """\
kind = "bcrt_ecdf"

[run]
m1 = 10
T = 40
replicates = 2
base_seed = 7
alphas = [0.5, 0.75]
qs = [0.5]

[grid]
m_grid = 60
"""

CSV_HEADER = "replicate,t,M_t,w1,mmd,bias_level"


def tiny_config(out_dir, **run_over):
    run = {"m1": 10, "T": 40, "replicates": 2, "base_seed": 7,
           "alphas": [0.5, 0.75], "qs": [0.5]}
    run.update(run_over)
    return build_config({
        "kind": "bcrt_ecdf",
        "run": run,
        "grid": {"m_grid": 60},
        "output": {"dir": str(out_dir)},
    })


class TestParseConfig:
    def test_inline_toml(self):
        cfg = parse_config(TOML_TEXT)
        assert cfg.kind == "bcrt_ecdf"
        assert cfg.m1 == 10 and cfg.T == 40 and cfg.replicates == 2
        assert cfg.alphas == (0.5, 0.75)
        assert cfg.qs == (0.5,)
        assert cfg.m_grid == 60

    def test_inline_json(self):
        cfg = parse_config('{"kind": "crt_ecdf", "run": {"m1": 20}}')
        assert cfg.kind == "crt_ecdf"
        assert cfg.m1 == 20

    def test_from_file(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(TOML_TEXT)
        assert parse_config(str(path)) == parse_config(TOML_TEXT)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            parse_config("/no/such/config.toml")

    def test_invalid_toml(self):
        with pytest.raises(ConfigError, match="TOML"):
            parse_config("kind = =\n")

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="JSON"):
            parse_config("{not json}")

    def test_root_must_be_table(self):
        with pytest.raises(ConfigError, match="table"):
            parse_config("[1, 2]\n")


class TestBuildConfig:
    def test_missing_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            build_config({})

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown kind"):
            build_config({"kind": "crt_gan"})

    def test_crt_ecdf_defaults(self):
        cfg = build_config({"kind": "crt_ecdf"})
        assert cfg.m1 == 50 and cfg.T == 2000 and cfg.replicates == 50
        assert cfg.h0 == 0.0 and cfg.qs is None
        assert len(cfg.alphas) == 10
        assert cfg.alphas[0] == pytest.approx(0.1)
        assert cfg.alphas[-1] == 1.0

    def test_bcrt_ecdf_defaults(self):
        cfg = build_config({"kind": "bcrt_ecdf"})
        assert cfg.m1 == 25 and cfg.replicates == 100
        assert cfg.alphas == (0.25, 0.5, 0.75)
        assert cfg.qs == (0.25, 0.5, 0.75)

    def test_kde_bandwidth_defaults(self):
        assert build_config({"kind": "crt_kde"}).h0 == 0.5
        assert build_config({"kind": "bcrt_kde"}).h0 == 2.0

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown key 'outputs'"):
            build_config({"kind": "crt_ecdf", "outputs": {}})

    def test_unknown_key_with_line_hint(self):
        text = 'kind = "crt_ecdf"\n\n[run]\nbogus_key = 3\n'
        with pytest.raises(ConfigError, match=r"'run\.bogus_key' \(line 4\)"):
            parse_config(text)

    def test_section_kind_mismatch(self):
        with pytest.raises(ConfigError, match=r"\[neural\] does not apply"):
            build_config({"kind": "crt_ecdf", "neural": {"lr": 0.1}})
        with pytest.raises(ConfigError, match=r"\[bias\] does not apply"):
            build_config({"kind": "crt_kde", "bias": {"amplitude": 0.1}})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="must be an integer"):
            build_config({"kind": "crt_ecdf", "run": {"m1": "fifty"}})
        with pytest.raises(ConfigError, match="must be a number"):
            build_config({"kind": "crt_kde", "estimator": {"h0": True}})
        with pytest.raises(ConfigError, match="must be a list"):
            build_config({"kind": "crt_ecdf", "run": {"alphas": 0.5}})

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError, match="alphas"):
            build_config({"kind": "crt_ecdf", "run": {"alphas": [0.5, 1.5]}})
        with pytest.raises(ConfigError, match="alphas"):
            build_config({"kind": "crt_ecdf", "run": {"alphas": [0.0]}})

    def test_kde_requires_positive_h0(self):
        with pytest.raises(ConfigError, match="h0"):
            build_config({"kind": "crt_kde", "estimator": {"h0": 0.0}})

    def test_bcrt_requires_qs(self):
        with pytest.raises(ConfigError, match="qs"):
            build_config({"kind": "bcrt_ecdf", "run": {"qs": []}})

    def test_target_lengths_checked(self):
        with pytest.raises(ConfigError, match="equal lengths"):
            build_config({"kind": "crt_ecdf", "target": {"weights": [1.0]}})


class TestCellSeed:
    def test_deterministic(self):
        a = cell_seed(7, "crt_ecdf", 0.5, None, 3)
        assert a == cell_seed(7, "crt_ecdf", 0.5, None, 3)
        assert 0 <= a < 2**64

    def test_distinct_components(self):
        base = cell_seed(7, "crt_ecdf", 0.5, None, 3)
        assert cell_seed(8, "crt_ecdf", 0.5, None, 3) != base
        assert cell_seed(7, "crt_kde", 0.5, None, 3) != base
        assert cell_seed(7, "crt_ecdf", 0.25, None, 3) != base
        assert cell_seed(7, "crt_ecdf", 0.5, 0.5, 3) != base
        assert cell_seed(7, "crt_ecdf", 0.5, None, 4) != base


class TestConfigHash:
    def test_ignores_output_dir(self, tmp_path):
        a = tiny_config(tmp_path / "a")
        b = tiny_config(tmp_path / "b")
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 64

    def test_sensitive_to_run_parameters(self, tmp_path):
        a = tiny_config(tmp_path / "a")
        b = tiny_config(tmp_path / "a", m1=11)
        assert config_hash(a) != config_hash(b)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp") / "out"
    cfg = tiny_config(out)
    manifest = run_experiment(cfg, workers=1)
    return cfg, manifest


class TestRunExperiment:
    def test_manifest(self, run):
        cfg, manifest = run
        assert manifest.config_hash == config_hash(cfg)
        assert manifest.version == crtlab.__version__
        assert manifest.failed_cells == ()
        for rel in manifest.files:
            assert not os.path.isabs(rel)
            assert os.path.exists(os.path.join(cfg.output_dir, rel))
        on_disk = json.load(open(os.path.join(cfg.output_dir, "manifest.json")))
        assert on_disk["config_hash"] == manifest.config_hash
        assert tuple(on_disk["files"]) == manifest.files

    def test_trajectory_csv(self, run):
        cfg, _ = run
        path = os.path.join(cfg.output_dir, "traj_alpha0.5_q0.5.csv")
        text = open(path, encoding="utf-8", newline="").read()
        assert "\r" not in text
        lines = text.splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 1 + cfg.replicates * (cfg.T + 1)
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
        assert int(first[2]) == cfg.m1
        # bias level at t=0 is 0.2 * 5^-q, never zero on a decaying schedule
        assert float(first[5]) == pytest.approx(0.2 * 5.0 ** -0.5)
        for line in lines[1:]:
            parts = line.split(",")
            assert len(parts) == 6
            assert np.isfinite(float(parts[3])) and float(parts[3]) >= 0

    def test_replicates_ordered(self, run):
        cfg, _ = run
        path = os.path.join(cfg.output_dir, "traj_alpha0.75_q0.5.csv")
        reps = [int(line.split(",", 1)[0])
                for line in open(path).read().splitlines()[1:]]
        assert reps == sorted(reps)

    def test_summary_entries(self, run):
        cfg, _ = run
        summary = json.load(open(os.path.join(cfg.output_dir, "summary.json")))
        assert set(summary) == {"alpha=0.5;q=0.5", "alpha=0.75;q=0.5"}
        entry = summary["alpha=0.5;q=0.5"]
        assert set(entry) == {
            "alpha", "q", "theory_rate", "log_flag", "mean_rate_w1",
            "sd_rate_w1", "mean_rate_mmd", "sd_rate_mmd", "n_replicates",
        }
        assert entry["alpha"] == 0.5 and entry["q"] == 0.5
        assert entry["n_replicates"] == cfg.replicates
        per_cell = json.load(
            open(os.path.join(cfg.output_dir, "summary_alpha0.5_q0.5.json")))
        assert per_cell == entry

    def test_figures_emitted(self, run):
        cfg, _ = run
        for name in ("density_alpha0.5_q0.5.svg", "rate_vs_alpha_q0.5.svg"):
            path = os.path.join(cfg.output_dir, name)
            assert os.path.exists(path)
        meta = read_metadata(
            os.path.join(cfg.output_dir, "rate_vs_alpha_q0.5.svg"))
        assert meta["alpha"] == [0.5, 0.75]


class TestWorkerDeterminism:
    def test_byte_identical_outputs(self, tmp_path):
        cfg_a = tiny_config(tmp_path / "a", replicates=3, alphas=[0.5], T=30)
        cfg_b = tiny_config(tmp_path / "b", replicates=3, alphas=[0.5], T=30)
        run_experiment(cfg_a, workers=1)
        run_experiment(cfg_b, workers=2)
        names_a = sorted(os.listdir(cfg_a.output_dir))
        assert names_a == sorted(os.listdir(cfg_b.output_dir))
        for name in names_a:
            blob_a = open(os.path.join(cfg_a.output_dir, name), "rb").read()
            blob_b = open(os.path.join(cfg_b.output_dir, name), "rb").read()
            if name == "manifest.json":
                ma, mb = json.loads(blob_a), json.loads(blob_b)
                ma.pop("timestamp"), mb.pop("timestamp")
                assert ma == mb
            else:
                assert blob_a == blob_b, name


class TestFailureIsolation:
    def test_failed_cell_recorded_others_complete(self, tmp_path, monkeypatch, capsys):
        import crtlab.expcli as expcli

        real = expcli.run_replicate

        def flaky(cfg, alpha, q, r):
            if alpha == 0.75:
                raise RuntimeError("synthetic failure")
            return real(cfg, alpha, q, r)

        monkeypatch.setattr(expcli, "run_replicate", flaky)
        cfg = tiny_config(tmp_path / "out")
        manifest = run_experiment(cfg, workers=1)
        assert manifest.failed_cells == ("alpha=0.75;q=0.5",)
        assert "synthetic failure" in capsys.readouterr().err
        summary = json.load(open(os.path.join(cfg.output_dir, "summary.json")))
        assert set(summary) == {"alpha=0.5;q=0.5"}
        assert os.path.exists(
            os.path.join(cfg.output_dir, "traj_alpha0.5_q0.5.csv"))
        assert not os.path.exists(
            os.path.join(cfg.output_dir, "traj_alpha0.75_q0.5.csv"))


CLI_TOML = """\
kind = "crt_ecdf"

[run]
m1 = 10
T = 30
replicates = 2
base_seed = 11
alphas = [0.5]

[grid]
m_grid = 60
"""


class TestCli:
    def test_run_success(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(CLI_TOML)
        out = tmp_path / "out"
        code = main(["crt", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        assert str(out / "manifest.json") in capsys.readouterr().out
        traj = (out / "traj_alpha0.5.csv").read_text()
        assert traj.splitlines()[0] == CSV_HEADER
        # crt kind has no bias schedule, the column is identically zero
        assert all(line.rsplit(",", 1)[1] == "0.0"
                   for line in traj.splitlines()[1:])

    def test_replicates_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(CLI_TOML)
        out = tmp_path / "out"
        code = main(["crt", "--config", str(cfg_path), "--out", str(out),
                     "--replicates", "1"])
        assert code == 0
        lines = (out / "traj_alpha0.5.csv").read_text().splitlines()
        assert len(lines) == 1 + 31

    def test_missing_config_exits_1(self, capsys):
        assert main(["crt", "--config", "/no/such.toml"]) == 1
        assert "config error" in capsys.readouterr().err

    def test_kind_subcommand_mismatch_exits_1(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(TOML_TEXT)
        assert main(["crt", "--config", str(cfg_path)]) == 1
        assert "does not match" in capsys.readouterr().err

    def test_bad_replicates_exits_1(self, tmp_path):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(CLI_TOML)
        assert main(["crt", "--config", str(cfg_path), "--replicates", "0"]) == 1

    def test_failed_cells_exit_2(self, tmp_path, monkeypatch, capsys):
        import crtlab.expcli as expcli

        def boom(cfg, alpha, q, r):
            raise RuntimeError("nope")

        monkeypatch.setattr(expcli, "run_replicate", boom)
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(CLI_TOML)
        code = main(["crt", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "failed cells" in capsys.readouterr().err

    def test_seed_override_changes_hash(self, tmp_path):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(CLI_TOML)
        hashes = []
        for seed in (1, 2):
            out = tmp_path / f"out{seed}"
            assert main(["crt", "--config", str(cfg_path), "--out", str(out),
                         "--seed", str(seed)]) == 0
            hashes.append(json.load(open(out / "manifest.json"))["config_hash"])
        assert hashes[0] != hashes[1]

    def test_theory_check_subcommand(self, tmp_path, capsys):
        out = tmp_path / "report"
        assert main(["theory-check", "--out", str(out)]) == 0
        report = json.load(open(out / "theory_report.json"))
        assert report["all_pass"] is True
        capsys.readouterr()

    def test_plot_subcommand(self, tmp_path, capsys):
        out = tmp_path / "plots"
        out.mkdir()
        entry = {"q": None, "theory_rate": 0.25, "log_flag": False,
                 "mean_rate_w1": 0.24, "sd_rate_w1": 0.02,
                 "mean_rate_mmd": 0.26, "sd_rate_mmd": 0.03, "n_replicates": 5}
        summary = {
            "alpha=0.25": dict(entry, alpha=0.25),
            "alpha=0.75": dict(entry, alpha=0.75, theory_rate=0.5,
                               mean_rate_w1=0.47),
        }
        (out / "summary.json").write_text(json.dumps(summary))
        assert main(["plot", "--out", str(out)]) == 0
        assert (out / "rate_vs_alpha.svg").exists()
        assert (out / "phase_diagram.svg").exists()
        printed = capsys.readouterr().out
        assert "rate_vs_alpha.svg" in printed and "phase_diagram.svg" in printed


def _summary(mean, sd, theory):
    return RateSummary(per_replicate=(), mean_rate=mean, sd_rate=sd,
                       theory_rate=theory, theory_log_flag=False)


class TestEmitters:
    def test_rate_plot_roundtrip(self, tmp_path):
        out = tmp_path / "rates.svg"
        emit_rate_plot(
            [(0.25, _summary(0.24, 0.02, 0.25)),
             (0.75, _summary(0.47, 0.04, 0.5)),
             (0.5, _summary(0.52, 0.03, 0.5))],
            out,
        )
        meta = read_metadata(out)
        assert meta["alpha"] == [0.25, 0.5, 0.75]
        assert meta["mean_rate"] == [0.24, 0.52, 0.47]
        assert meta["theory_rate"] == [0.25, 0.5, 0.5]

    def test_rate_plot_needs_two_points(self, tmp_path):
        with pytest.raises(ValueError, match="two alpha"):
            emit_rate_plot([(0.5, _summary(0.5, 0.0, 0.5))], tmp_path / "x.svg")

    def test_phase_diagram(self, tmp_path):
        out = tmp_path / "phase.svg"
        emit_phase_diagram([0.25, 0.5, 0.75], [0.25, 0.5, 0.75], out)
        meta = read_metadata(out)
        names = {r for row in meta["regime"] for r in row}
        assert names <= {"real_data_limited", "baseline_limited", "boundary"}
        assert "boundary" in names

    def test_phase_diagram_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError, match="nonempty"):
            emit_phase_diagram([], [0.5], tmp_path / "x.svg")

    def test_density_snapshot(self, tmp_path):
        cfg = build_config({"kind": "crt_ecdf", "grid": {"m_grid": 60}})
        target = cfg.target()
        grid = build_grid(target, 60, 6.0)
        state = EstimatorState(cfg.estimator(), grid)
        rng = np.random.default_rng(0)
        from crtlab.distributions import sample_mixture
        ingest(state, sample_mixture(target, 500, rng), "real", 0)
        out = tmp_path / "density.svg"
        emit_density_snapshot(state, target, grid, out)
        meta = read_metadata(out)
        assert meta["curve"] == "cdf"
        assert 0 < meta["max_gap"] < 0.2

    def test_density_snapshot_rejects_empty_state(self, tmp_path):
        cfg = build_config({"kind": "crt_ecdf", "grid": {"m_grid": 60}})
        grid = build_grid(cfg.target(), 60, 6.0)
        state = EstimatorState(cfg.estimator(), grid)
        with pytest.raises(ValueError, match="no data"):
            emit_density_snapshot(state, cfg.target(), grid, tmp_path / "x.svg")


class TestTheoryReport:
    def test_report_structure(self):
        report = theory_check_report(0)
        assert set(report) == {
            "identity", "gamma_ratio", "cesaro", "envelope", "all_pass"}
        assert report["all_pass"] is True
        assert report["identity"]["max_rel_diff"] < 1e-10
