import os
import re

import numpy as np
import pytest

from spectral_embed.cli import ConfigError, RunConfig, main


CIRCLE_CFG = """
# circle test configuration
manifold.kind = circle
manifold.length = 6.283185307179586
manifold.samples = 2048
spectrum.count = 60
embed.map = G
embed.delta = 0.3
embed.t = 0.1
embed.h_near = 0.05
embed.h_far = 1.0
embed.pairs = 80
bounds.iota = 3.141592653589793
bounds.a = 17.07946844534713
bounds.c = 1.0
bounds.r_h = 1.0
seed = 0
"""

SUMMARY_RE = re.compile(r"^[a-z0-9_]+=[^=]+$")


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRunConfig:
    def test_round_trip_equality(self):
        cfg = RunConfig.parse(CIRCLE_CFG)
        again = RunConfig.parse(cfg.dump())
        assert cfg == again

    def test_comments_and_blanks_ignored(self):
        cfg = RunConfig.parse("a.b = 1 # trailing\n\n# full line\nc = x\n")
        assert cfg.entries == {"a.b": "1", "c": "x"}

    def test_parse_error_carries_line_number(self):
        with pytest.raises(ConfigError, match=":3"):
            RunConfig.parse("a = 1\nb = 2\nnot a pair\n", origin="f")

    def test_typed_getters(self):
        cfg = RunConfig.parse("x = 1.5\nn = 7\nlist = 1,2,3\n")
        assert cfg.get_float("x") == 1.5
        assert cfg.get_int("n") == 7
        assert cfg.get_floats("list") == [1.0, 2.0, 3.0]
        with pytest.raises(ConfigError, match="missing"):
            cfg.get_float("absent")
        with pytest.raises(ConfigError, match="bad float"):
            cfg.get_float("list")


class TestExitCodes:
    def test_unknown_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        assert main(["bogus", "--config", cfg]) == 2

    def test_unknown_verify_target(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        assert main(["verify", "bogus", "--config", cfg]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["spectrum", "--config",
                     str(tmp_path / "absent.cfg")]) == 2

    def test_config_parse_error(self, tmp_path):
        cfg = write_cfg(tmp_path, "broken line without equals\n")
        assert main(["spectrum", "--config", cfg]) == 2

    def test_missing_mesh_input(self, tmp_path):
        cfg = write_cfg(tmp_path,
                        "manifold.kind = mesh\nmanifold.path = nope.off\n")
        assert main(["spectrum", "--config", cfg]) == 2


class TestSubcommands:
    def test_spectrum_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        out = str(tmp_path / "out")
        assert main(["spectrum", "--config", cfg, "--out", out]) == 0
        eig = np.loadtxt(os.path.join(out, "spectrum", "eigenvalues.csv"),
                         delimiter=",", skiprows=1)
        assert np.allclose(eig[:5, 1], [0, 1, 1, 4, 4], atol=1e-12)

    def test_embed_with_fixed_t(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        out = str(tmp_path / "out")
        assert main(["embed", "--config", cfg, "--out", out]) == 0
        report = (tmp_path / "out" / "embed_report.txt").read_text()
        for line in report.strip().splitlines():
            assert SUMMARY_RE.match(line), line
        header = (tmp_path / "out" / "embedding.csv").read_text().splitlines()[0]
        assert header.startswith("point,coord_1,")

    def test_embed_deterministic(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["embed", "--config", cfg, "--out", out1]) == 0
        assert main(["embed", "--config", cfg, "--out", out2]) == 0
        for name in ("embed_report.txt", "embedding.csv", "ratios.csv"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name

    def test_constants_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, "constants.n = 2\nconstants.lambda = 1.0\n"
                        "constants.iota = 1.0\nconstants.steps = 8\n")
        out = str(tmp_path / "out")
        assert main(["constants", "--config", cfg, "--out", out]) == 0
        lines = (tmp_path / "out" / "constants.csv").read_text().splitlines()
        assert lines[0] == "n,Lambda,iota,r,volratio,c,F,C,cond_dist,cond_harm"
        assert len(lines) == 9

    def test_verify_growth(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        out = str(tmp_path / "out")
        assert main(["verify", "growth", "--config", cfg, "--out", out]) == 0
        text = (tmp_path / "out" / "growth_report.txt").read_text()
        assert "pass_flag=1" in text

    def test_verify_decay(self, tmp_path):
        # the decay bound needs a genuine (generous) Faber-Krahn constant,
        # not the growth-calibrated one; drop the overrides
        text = "\n".join(line for line in CIRCLE_CFG.splitlines()
                         if not line.startswith(("bounds.a", "bounds.c")))
        cfg = write_cfg(tmp_path, text + "\nspectrum.count = 120\n")
        out = str(tmp_path / "out")
        assert main(["verify", "decay", "--config", cfg, "--out", out]) == 0
        header = (tmp_path / "out" / "decay.csv").read_text().splitlines()[0]
        assert header == "p,q,t,value,bound,flag"

    def test_verify_counterexample(self, tmp_path):
        text = ("manifold.kind = torus\n"
                "manifold.periods = 6.283185307179586,0.6283185307179586\n"
                "spectrum.count = 40\nembed.t = 0.01\n")
        cfg = write_cfg(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["verify", "counterexample", "--config", cfg,
                     "--out", out]) == 0

    def test_verify_truncation(self, tmp_path):
        text = CIRCLE_CFG + "spectrum.count = 200\nverify.samples = 6\n" \
            + "bounds.a = 17.07946844534713\n"
        cfg = write_cfg(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["verify", "truncation", "--config", cfg,
                     "--out", out]) == 0

    def test_reports_embed_config(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG)
        out = str(tmp_path / "out")
        main(["embed", "--config", cfg, "--out", out])
        text = (tmp_path / "out" / "embed_report.txt").read_text()
        assert "config_manifold_kind=circle" in text
        assert "config_embed_delta=0.3" in text


class TestExportSurfaces:
    def test_distance_field_csv(self, tmp_path):
        from spectral_embed.manifold import export_distance_field, make_sphere
        mesh = make_sphere(1.0, 1)
        field = mesh.graph_distance_from(0)
        path = tmp_path / "dist.csv"
        export_distance_field(field, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "vertex,distance"
        assert len(lines) == len(mesh.vertices) + 1
        assert float(lines[1].split(",")[1]) == 0.0

    def test_grid_kernel_csv(self, tmp_path):
        from spectral_embed.charts import export_grid_kernel, \
            identity_chart, solve_fd_kernel
        gk = solve_fd_kernel(identity_chart(1), 3.0, 31, 0.0, 0.1,
                             steps=16, store_every=8)
        path = tmp_path / "kernel.csv"
        export_grid_kernel(gk, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "x,t,value"
        assert len(lines) == 1 + 31 * len(gk.times)

    def test_spectrum_eigenfunction_files(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG + "spectrum.count = 4\n")
        out = str(tmp_path / "out")
        assert main(["spectrum", "--config", cfg, "--out", out]) == 0
        func = tmp_path / "out" / "spectrum" / "eigenfunction_0001.csv"
        assert func.exists()
        assert func.read_text().splitlines()[0] == "vertex,value"

    def test_verify_isometry_and_injectivity(self, tmp_path):
        cfg = write_cfg(tmp_path, CIRCLE_CFG + "spectrum.count = 120\n"
                        "embed.t_max = 0.8\nembed.levels = 5\n")
        out = str(tmp_path / "iso")
        assert main(["verify", "isometry", "--config", cfg,
                     "--out", out]) == 0
        assert main(["verify", "injectivity", "--config", cfg,
                     "--out", str(tmp_path / "inj")]) == 0

    def test_charts_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path, "charts.nodes = 41,81,161\n"
                        "charts.sweep_nodes = 401\ncharts.sweep_steps = 512\n")
        out = str(tmp_path / "out")
        assert main(["charts", "--config", cfg, "--out", out]) == 0
        report = (tmp_path / "out" / "charts_report.txt").read_text()
        assert "ratios_ok=1" in report and "slope_ok=1" in report
        kernel = (tmp_path / "out" / "kernel.csv").read_text().splitlines()
        assert kernel[0] == "x,t,value"

    def test_all_outputs_well_formed(self, tmp_path):
        # every summary line matches the key=value grammar and every CSV
        # carries a header, across several subcommands
        cfg = write_cfg(tmp_path, CIRCLE_CFG + "spectrum.count = 400\n")
        out = tmp_path / "sweep"
        assert main(["embed", "--config", cfg, "--out", str(out / "e")]) == 0
        assert main(["verify", "growth", "--config", cfg,
                     "--out", str(out / "g")]) == 0
        assert main(["verify", "varadhan", "--config", cfg,
                     "--out", str(out / "v")]) == 0
        assert main(["constants", "--config", cfg,
                     "--out", str(out / "c")]) == 0
        reports = list(out.rglob("*.txt"))
        csvs = list(out.rglob("*.csv"))
        assert reports and csvs
        for rep in reports:
            for line in rep.read_text().strip().splitlines():
                assert SUMMARY_RE.match(line), (rep, line)
        for path in csvs:
            header = path.read_text().splitlines()[0]
            assert header and not header[0].isdigit(), path

    def test_verify_decay_on_mesh(self, tmp_path):
        text = ("manifold.kind = icosphere\nmanifold.radius = 1.0\n"
                "manifold.subdivisions = 2\nspectrum.count = 12\n"
                "bounds.iota = 3.141592653589793\nbounds.r_h = 1.0\n"
                "heat.t_grid = 0.1,0.5,1.0\nverify.distances = 0.5,1.5\n")
        cfg = write_cfg(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["verify", "decay", "--config", cfg, "--out", out]) == 0


def test_shipped_configs_run(tmp_path):
    import pathlib
    root = pathlib.Path(__file__).resolve().parent.parent
    cfg = root / "configs" / "counterexample.cfg"
    assert cfg.exists()
    assert main(["verify", "counterexample", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 0
