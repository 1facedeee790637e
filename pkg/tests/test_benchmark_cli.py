import json
import os

import numpy as np
import pytest

from rtaccel import cli
from rtaccel.benchmark import (BenchmarkConfig, DEFAULT_CELL_MAP,
                               build_checkerboard, expand_tuples, run_suite)
from rtaccel.plotting import plot_histories


def tiny_config(out, **kw):
    base = dict(g=[0.4], K=[0, 2], spaces=["wc"], meshes=[(7, 0)],
                tol=1e-5, out=str(out))
    base.update(kw)
    return BenchmarkConfig(**base)


def test_config_roundtrip_identity():
    cfg = BenchmarkConfig()
    text = cfg.to_json()
    again = BenchmarkConfig.from_json(text)
    assert again.to_json() == text
    assert again.cell_map == list(DEFAULT_CELL_MAP)


def test_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig(cell_map=["..", "..."])
    with pytest.raises(ValueError):
        BenchmarkConfig(cell_map=["X"])
    with pytest.raises(ValueError):
        BenchmarkConfig(materials={"scatter": {"sigma_s": 1, "sigma_a": 1}})
    with pytest.raises(ValueError):
        BenchmarkConfig(angular="torus")


def test_default_checkerboard_optics():
    cfg = BenchmarkConfig()
    system = build_checkerboard(cfg, 7, 0, 0.7)
    assert abs(system.rho - 10.0 / 10.01) < 1e-12
    sig_s = system.optics.sigma_s
    sig_a = system.optics.sigma_a
    cent = system.spatial_mesh.centroids
    # absorber cell (1,1) and scatter cell (0,0), one element each
    in_abs = (cent[:, 0] > 1) & (cent[:, 0] < 2) & (cent[:, 1] > 1) \
        & (cent[:, 1] < 2)
    assert np.all(sig_s[in_abs] == 0.0) and np.all(sig_a[in_abs] == 1.0)
    in_sc = (cent[:, 0] < 1) & (cent[:, 1] < 1)
    assert np.all(sig_s[in_sc] == 10.0) and np.all(sig_a[in_sc] == 0.01)
    # the load is supported only on vertices of source-cell elements
    hit = (cent[:, 0] > 3) & (cent[:, 0] < 4) & (cent[:, 1] > 3) \
        & (cent[:, 1] < 4)
    support = np.unique(system.spatial_mesh.triangles[hit])
    per_vertex = system.load.even.reshape(system.shape_even).sum(axis=0)
    outside = np.setdiff1d(np.arange(len(per_vertex)), support)
    assert np.abs(per_vertex[outside]).max() == 0.0
    assert per_vertex[support].min() > 0.0
    assert len(DEFAULT_CELL_MAP) == 7
    assert "".join(DEFAULT_CELL_MAP).count("A") == 11
    assert "".join(DEFAULT_CELL_MAP).count("Q") == 1


def test_misaligned_mesh_rejected():
    cfg = BenchmarkConfig()
    with pytest.raises(ValueError):
        build_checkerboard(cfg, 10, 0, 0.5)


def test_all_scatter_map_is_homogeneous():
    cfg = BenchmarkConfig(cell_map=["Q" * 7] * 7)
    system = build_checkerboard(cfg, 7, 0, 0.3)
    assert np.all(system.optics.sigma_s == 10.0)
    assert np.all(system.optics.sigma_a == 0.01)


def test_expand_tuples_canonicalizes():
    cfg = tiny_config("x", K=[0, 2, 2], spaces=["wc", "none"])
    tuples = expand_tuples(cfg)
    assert tuples == [(7, 0, 0.4, "none", 0), (7, 0, 0.4, "wc", 2)]
    empty = tiny_config("x", g=[])
    assert expand_tuples(empty) == []


def test_run_suite_outputs(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    report = run_suite(cfg)
    assert report.ok
    assert len(report.rows) == 2
    assert report.summary_path.exists()
    lines = report.summary_path.read_text().strip().splitlines()
    assert lines[0].startswith("cells,level,g,K,space,m,iterations")
    assert len(lines) == 3
    for p in report.history_paths:
        assert p.exists()
    assert len(report.svg_paths) == 1
    assert report.svg_paths[0].read_text().startswith("<?xml")
    # every summary row respects the contraction ceiling
    rho = 10.0 / 10.01
    for line in lines[1:]:
        max_factor = float(line.split(",")[8])
        assert max_factor <= rho + 1e-6


def test_run_suite_deterministic_reruns(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    first = run_suite(cfg)
    blobs = {p.name: p.read_bytes() for p in
             [first.summary_path, *first.history_paths, *first.svg_paths]}
    second = run_suite(cfg)
    for p in [second.summary_path, *second.history_paths, *second.svg_paths]:
        assert p.read_bytes() == blobs[p.name], p.name


def test_run_suite_empty_and_failures(tmp_path):
    empty = tiny_config(tmp_path / "empty", g=[])
    rep = run_suite(empty)
    assert rep.ok and rep.rows == []
    assert rep.summary_path.read_text().strip().splitlines() == [
        rep.summary_path.read_text().strip().splitlines()[0]]
    # misaligned mesh: failure recorded, the suite still completes
    bad = tiny_config(tmp_path / "bad", meshes=[(7, 0), (10, 0)])
    rep2 = run_suite(bad)
    assert not rep2.ok
    assert rep2.failures == 2
    text = rep2.summary_path.read_text()
    assert "error: ValueError" in text
    assert len([r for r in rep2.rows]) == 4


def test_worker_env_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("RTACCEL_THREADS", "1")
    cfg = tiny_config(tmp_path / "out", g=[0.3, 0.5])
    report = run_suite(cfg)
    assert report.ok
    assert len(report.rows) == 4


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "out")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    assert cli.main(["run", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "summary:" in out and "plot:" in out
    # overrides narrow the sweep
    assert cli.main(["run", str(cfg_path), "--K", "2", "--g", "0.3",
                     "--out", str(tmp_path / "out2")]) == 0
    summary = (tmp_path / "out2" / "summary.csv").read_text()
    assert summary.count("\n") == 2  # header + one row
    # a failing tuple turns the exit code to 2
    bad_path = tmp_path / "bad.json"
    bad = tiny_config(tmp_path / "out3", meshes=[(10, 0)])
    bad_path.write_text(bad.to_json())
    assert cli.main(["run", str(bad_path)]) == 2


def test_cli_oracle(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "out")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    assert cli.main(["oracle", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "oracle check: ok" in out
    # too-large instances are refused rather than silently truncated
    assert cli.main(["oracle", str(cfg_path), "--cells", "28",
                     "--level", "1"]) == 2


def test_cli_plot(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "out")
    report = run_suite(cfg)
    csv = str(report.history_paths[0])
    out_svg = tmp_path / "re.svg"
    assert cli.main(["plot", csv, "--out", str(out_svg)]) == 0
    assert out_svg.exists()
    assert cli.main(["plot", str(tmp_path / "missing.csv")]) == 2


def test_plot_is_pure_function_of_csv(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    report = run_suite(cfg)
    a = tmp_path / "a.svg"
    b = tmp_path / "b.svg"
    plot_histories(report.history_paths, a)
    plot_histories(report.history_paths, b)
    assert a.read_bytes() == b.read_bytes()
