import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from otbayes.cli import DEFAULTS, RunConfig, build_parser, config_from_args, main, parse_config_text
from otbayes.svgplot import Figure

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestConfigParsing:
    def test_grammar(self):
        text = "# header\nparticles = 10\n\n  seed=3   # trailing\nlr_f = 1e-3\n"
        assert parse_config_text(text) == {"particles": "10", "seed": "3", "lr_f": "1e-3"}

    @pytest.mark.parametrize("line", ["particles 10", "= 3", "Particles = 1", "particles ="])
    def test_bad_lines(self, line):
        with pytest.raises(ValueError, match="config line 1"):
            parse_config_text(line)

    def test_precedence(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("particles = 100\nseed = 4\ny = 2.0\n")
        args = build_parser().parse_args(["gauss-enkf", "--config", str(conf), "--set", "y=3.0",
                                          "--particles", "50", "--out", str(tmp_path / "o")])
        cfg = config_from_args(args)
        assert cfg.int("particles") == 50
        assert cfg.seed == 4
        assert cfg.floats("y") == [3.0]
        assert cfg.out == tmp_path / "o"
        assert cfg.plot

    def test_seed_flag_beats_file(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("seed = 4\nplot = false\n")
        cfg = config_from_args(build_parser().parse_args(["fpf", "--config", str(conf), "--seed", "9"]))
        assert cfg.seed == 9
        assert not cfg.plot

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            RunConfig("gauss-enkf", values={"learning_rate": "1"})

    def test_particles_minimum(self):
        with pytest.raises(ValueError, match="at least 2"):
            RunConfig("gauss-enkf", values={"particles": "1"})

    @pytest.mark.parametrize("sub", sorted(DEFAULTS))
    def test_shipped_config_matches_defaults(self, sub):
        values = parse_config_text((CONFIGS / f"{sub}.conf").read_text())
        assert values.pop("seed") == "0"
        assert values == DEFAULTS[sub]

    def test_baseline_config_parses(self):
        args = build_parser().parse_args(["bimodal-icnn", "--config", str(CONFIGS / "bimodal-icnn-baseline.conf")])
        cfg = config_from_args(args)
        assert (cfg.float("lr_f"), cfg.float("lr_g"), cfg.int("inner_steps")) == (1e-3, 1e-3, 5)

    def test_defaults_cover_training_keys(self):
        for key in ("batch_size", "lr_f", "lr_g", "inner_steps", "outer_steps", "units", "projection"):
            assert key in DEFAULTS["bimodal-icnn"]


class TestProp1Check:
    def test_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "prop1-check", "--out", str(tmp_path), "--set", "cases=5")
        assert code == 0
        assert "PASS max_entrywise_error" in out
        rows = read_csv(tmp_path / "prop1-check.csv")
        assert rows[0] == ["case", "n", "m", "max_error"]
        assert len(rows) == 6
        assert all(float(r[3]) < 1e-4 for r in rows[1:])

    def test_scalar_case(self, capsys, tmp_path):
        code, _, _ = run(capsys, "prop1-check", "--out", str(tmp_path), "--set", "n=1", "--set", "m=1",
                         "--set", "cases=3")
        assert code == 0
        assert all(r[1:3] == ["1", "1"] for r in read_csv(tmp_path / "prop1-check.csv")[1:])

    def test_degenerate_moments(self, capsys, tmp_path):
        code, _, err = run(capsys, "prop1-check", "--out", str(tmp_path), "--set", "degenerate_y=true",
                           "--set", "cases=1")
        assert code == 2
        assert "degenerate moments" in json.loads(err.strip().splitlines()[-1])["error"]

    def test_failure_list(self, capsys, tmp_path):
        code, out, err = run(capsys, "prop1-check", "--out", str(tmp_path), "--set", "cases=2",
                             "--set", "tol=0")
        assert code == 1
        assert "FAIL max_entrywise_error" in out
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["subcommand"] == "prop1-check"
        assert [f["check"] for f in payload["failures"]] == ["max_entrywise_error"]


class TestGaussEnkf:
    def test_reference_run(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gauss-enkf", "--out", str(tmp_path))
        assert code == 0, out
        rows = read_csv(tmp_path / "gauss-enkf.csv")
        assert rows[0] == ["method", "mean_error", "cov_rel_error", "mean_sq_displacement"]
        assert [r[0] for r in rows[1:]] == ["ot", "perturbed"]
        assert float(read_csv(tmp_path / "gauss-enkf-identity.csv")[1][0]) < 1e-8
        assert (tmp_path / "gauss-enkf-posterior.svg").exists()

    def test_two_particles(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gauss-enkf", "--out", str(tmp_path), "--particles", "2")
        assert code in (0, 1)
        assert "moment_identity_residual" in out
        assert (tmp_path / "gauss-enkf-checks.csv").exists()

    def test_vector_model(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gauss-enkf", "--out", str(tmp_path), "--set", "model=gauss-nd",
                           "--set", "y=0.5", "--no-plot")
        assert code == 0, out
        assert not list(tmp_path.glob("*.svg"))

    def test_wrong_observation_size(self, capsys, tmp_path):
        code, _, err = run(capsys, "gauss-enkf", "--out", str(tmp_path), "--set", "y=1,2")
        assert code == 2
        assert "error" in json.loads(err)

    def test_byte_identical_rerun(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "gauss-enkf", "--out", str(tmp_path / d), "--seed", "7", "--particles", "500")
        for name in ("gauss-enkf.csv", "gauss-enkf-identity.csv", "gauss-enkf-checks.csv",
                     "gauss-enkf-posterior.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestFpf:
    SMALL = ("--particles", "300", "--set", "horizon=0.1", "--set", "check_times=0.05,0.1",
             "--set", "expansion=false", "--set", "grid_nodes=256")

    def test_small_run_artifacts(self, capsys, tmp_path):
        code, out, _ = run(capsys, "fpf", "--out", str(tmp_path), *self.SMALL)
        assert code == 0, out
        rows = read_csv(tmp_path / "fpf-trajectory.csv")
        assert rows[0] == ["t", "mean", "variance", "oracle_mean", "oracle_variance"]
        assert len(rows) == 102
        assert read_csv(tmp_path / "fpf-gain.csv")[0] == ["x", "p", "phi", "gain"]
        for panel in ("mean", "variance", "gain"):
            assert (tmp_path / f"fpf-{panel}.svg").exists()

    def test_constant_observation_leaves_statistics(self, capsys, tmp_path):
        code, out, _ = run(capsys, "fpf", "--out", str(tmp_path), *self.SMALL, "--set", "h_coef=0",
                           "--set", "h_offset=2.0")
        assert code == 0, out
        traj = np.array(read_csv(tmp_path / "fpf-trajectory.csv")[1:], dtype=float)
        np.testing.assert_allclose(traj[:, 1], traj[0, 1], atol=1e-12)
        np.testing.assert_allclose(traj[:, 2], traj[0, 2], rtol=1e-10)
        np.testing.assert_allclose(traj[:, 4], 1.0)

    def test_byte_identical_rerun(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "fpf", "--out", str(tmp_path / d), *self.SMALL, "--no-plot")
        for name in ("fpf-trajectory.csv", "fpf-gain.csv", "fpf-checks.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_check_time_beyond_horizon(self, capsys, tmp_path):
        code, _, err = run(capsys, "fpf", "--out", str(tmp_path), *self.SMALL, "--set", "check_times=0.5")
        assert code == 2
        assert "horizon" in json.loads(err)["error"]

    def test_expansion_tables(self, capsys, tmp_path):
        code, out, _ = run(capsys, "fpf", "--out", str(tmp_path), "--particles", "200", "--set", "horizon=0.01",
                           "--set", "check_times=0.01", "--set", "expansion_particles=20000", "--no-plot")
        assert "optimal_slope_vs_j1" in out
        fit = read_csv(tmp_path / "fpf-expansion-fit.csv")
        assert fit[0] == ["phi", "c0", "c1", "c2", "j1_quadrature"]
        assert [r[0] for r in fit[1:]] == ["optimal", "suboptimal"]
        assert float(fit[1][4]) == pytest.approx(-0.5, rel=1e-3)


class TestBimodalIcnn:
    SHORT = ("--particles", "500", "--set", "outer_steps=20", "--set", "inner_steps=2", "--set", "batch_size=64",
             "--set", "units=8", "--set", "eval_pairs=200", "--set", "null_runs=3",
             "--set", "transport_samples=500", "--set", "scatter_points=100")

    def test_short_run_artifacts(self, capsys, tmp_path):
        code, out, err = run(capsys, "bimodal-icnn", "--out", str(tmp_path), *self.SHORT)
        assert code in (0, 1)
        assert "energy_distance" in out
        assert read_csv(tmp_path / "bimodal-icnn-trace.csv")[0] == ["step", "objective", "f_lr", "g_lr"]
        scatter = read_csv(tmp_path / "bimodal-icnn-scatter.csv")
        assert {r[0] for r in scatter[1:]} == {"joint", "product", "pushforward"}
        assert len(scatter) == 301
        post = read_csv(tmp_path / "bimodal-icnn-posterior.csv")
        assert post[0] == ["y", "x", "histogram_density", "oracle_density"]
        assert {r[0] for r in post[1:]} == {"0.0", "1.0"}
        for panel in ("scatter", "posterior-y0", "posterior-y1", "loss"):
            assert (tmp_path / f"bimodal-icnn-{panel}.svg").exists()
        assert (tmp_path / "bimodal-icnn-f.ckpt").exists()

    def test_byte_identical_rerun(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "bimodal-icnn", "--out", str(tmp_path / d), *self.SHORT, "--seed", "3")
        for name in ("bimodal-icnn-trace.csv", "bimodal-icnn-scatter.csv", "bimodal-icnn-posterior.csv",
                     "bimodal-icnn-metrics.csv", "bimodal-icnn-checks.csv", "bimodal-icnn-scatter.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_gaussian_model_rejected(self, capsys, tmp_path):
        code, _, err = run(capsys, "bimodal-icnn", "--out", str(tmp_path), "--set", "model=gauss-1d")
        assert code == 2
        assert "mixture" in json.loads(err)["error"]


class TestSvgPlot:
    def test_deterministic_and_well_formed(self):
        def make():
            fig = Figure("t", "x", "y")
            fig.scatter([0, 1, 2], [1, 0, 1], label="pts")
            fig.line([0, 1, 2], [0, 1, 4], label="curve", dash=True)
            fig.hist(np.linspace(0, 1, 50), 10, (0, 1), label="h")
            return fig.render()

        svg = make()
        assert svg == make()
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert svg.count("<circle") == 3
        assert "pts" in svg and "curve" in svg

    def test_degenerate_range(self, tmp_path):
        fig = Figure("flat", "x", "y").line([1.0, 1.0], [2.0, 2.0])
        fig.save(tmp_path / "flat.svg")
        assert not re.search(r"\b(nan|inf)\b", (tmp_path / "flat.svg").read_text().lower())
