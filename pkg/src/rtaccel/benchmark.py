"""Checkerboard benchmark problems and the config-driven suite runner.

The default problem is a 7x7 lattice of unit cells: scattering background,
a grid of pure absorbers, and a unit source in the center cell.  The cell
map is data (a list of strings, one character per cell, first row = top of
the domain), so alternative layouts are plain config edits.

Suite runs expand the cross product of g values, eigen counts, subspace
configurations and meshes, write one history CSV per run plus a summary
CSV, and render one residual-decay SVG per (mesh, g) family.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .assembly import OpticalField, SourceSpec
from .geometry import (build_circle_mesh, build_octahedral_sphere_mesh,
                       build_rect_mesh)
from .operators import TransportSystem, build_system
from .solver import ConvergenceHistory, IterationConfig, run

__all__ = ["BenchmarkConfig", "Material", "build_checkerboard", "run_suite",
           "SuiteReport", "expand_tuples", "DEFAULT_CELL_MAP"]

DEFAULT_CELL_MAP = [
    ".......",
    ".A...A.",
    "..A.A..",
    ".A.Q.A.",
    "..A.A..",
    ".A.A.A.",
    ".......",
]

CODE_NAMES = {".": "scatter", "A": "absorber", "Q": "source"}


@dataclass
class Material:
    sigma_s: float
    sigma_a: float
    q: float = 0.0


DEFAULT_MATERIALS = {
    "scatter": Material(10.0, 0.01, 0.0),
    "absorber": Material(0.0, 1.0, 0.0),
    "source": Material(10.0, 0.01, 1.0),
}


@dataclass
class BenchmarkConfig:
    """Suite description; serializes to/from JSON.

    meshes entries are [spatial cells per side, angular refinement level].
    K = 0 always means plain source iteration regardless of the space list.
    With timings off (default) reruns produce byte-identical outputs.
    """

    domain: tuple = (7.0, 7.0)
    cell_map: list = field(default_factory=lambda: list(DEFAULT_CELL_MAP))
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))
    g: list = field(default_factory=lambda: [0.7])
    K: list = field(default_factory=lambda: [0, 6])
    spaces: list = field(default_factory=lambda: ["wc"])
    m: int = 2
    meshes: list = field(default_factory=lambda: [(28, 1)])
    angular: str = "sphere"
    tol: float = 1e-6
    max_iters: int = 5000
    inner_tol: float = 1e-10
    timings: bool = False
    out: str = "bench-out"

    def __post_init__(self):
        rows = self.cell_map
        if len(rows) == 0 or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("cell_map rows must be non-empty and equal length")
        for r in rows:
            for ch in r:
                if ch not in CODE_NAMES:
                    raise ValueError(f"unknown cell code {ch!r}")
        for name in set(CODE_NAMES.values()):
            if name not in self.materials:
                raise ValueError(f"missing material {name!r}")
        if self.angular not in ("sphere", "circle"):
            raise ValueError(f"unknown angular domain {self.angular!r}")
        self.materials = {k: v if isinstance(v, Material) else Material(**v)
                          for k, v in self.materials.items()}
        self.meshes = [tuple(mesh) for mesh in self.meshes]
        self.domain = tuple(self.domain)

    def to_json(self) -> str:
        d = asdict(self)
        d["domain"] = list(self.domain)
        d["meshes"] = [list(mesh) for mesh in self.meshes]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "BenchmarkConfig":
        return cls.from_json(Path(path).read_text())


def build_checkerboard(cfg: BenchmarkConfig, cells: int, level: int,
                       g: float) -> TransportSystem:
    """Assemble the lattice problem on a cells x cells grid.

    The mesh must resolve the unit-cell interfaces exactly, so the cell
    count per side has to be divisible by the map dimensions.
    """
    rows = cfg.cell_map
    nrows, ncols = len(rows), len(rows[0])
    if cells % ncols != 0 or cells % nrows != 0:
        raise ValueError(f"{cells} mesh cells per side cannot align with a "
                         f"{nrows}x{ncols} cell map; counts must be divisible")
    lx, ly = cfg.domain
    smesh = build_rect_mesh(cells, cells, lx, ly)
    hx, hy = lx / ncols, ly / nrows
    ix = np.minimum((smesh.centroids[:, 0] / hx).astype(int), ncols - 1)
    iy = np.minimum((smesh.centroids[:, 1] / hy).astype(int), nrows - 1)

    nt = smesh.triangles.shape[0]
    sig_s = np.empty(nt)
    sig_a = np.empty(nt)
    q = np.zeros(nt)
    for e in range(nt):
        mat = cfg.materials[CODE_NAMES[rows[nrows - 1 - iy[e]][ix[e]]]]
        sig_s[e] = mat.sigma_s
        sig_a[e] = mat.sigma_a
        q[e] = mat.q

    if cfg.angular == "sphere":
        amesh = build_octahedral_sphere_mesh(level)
    else:
        amesh = build_circle_mesh(2 ** (level + 3))
    optics = OpticalField(sigma_s=sig_s, sigma_a=sig_a)
    return build_system(smesh, amesh, optics, g,
                        source=SourceSpec(interior=q),
                        inner_tol=cfg.inner_tol)


def expand_tuples(cfg: BenchmarkConfig) -> list:
    """Cross product of the sweep lists, canonicalized and deduplicated.

    K = 0 collapses to the "none" configuration; "none" ignores K.
    Returns (cells, level, g, space, K) tuples in deterministic order.
    """
    seen = []
    for cells, level in cfg.meshes:
        for g in cfg.g:
            for K in cfg.K:
                for space in cfg.spaces:
                    if K == 0 or space == "none":
                        tup = (cells, level, float(g), "none", 0)
                    else:
                        tup = (cells, level, float(g), space, K)
                    if tup not in seen:
                        seen.append(tup)
    return seen


def run_label(space: str, K: int, m: int) -> str:
    if space == "none":
        return "none"
    if space == "tw1m":
        return f"{space}-K{K}-m{m}"
    return f"{space}-K{K}"


@dataclass
class SuiteReport:
    summary_path: Path
    rows: list
    history_paths: list
    svg_paths: list
    failures: int

    @property
    def ok(self) -> bool:
        return self.failures == 0


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("RTACCEL_THREADS")
    if env:
        cap = max(1, int(env))
    else:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


SUMMARY_HEADER = ("cells,level,g,K,space,m,iterations,converged,"
                  "max_factor,final_residual,total_solves,seconds,status")


def _summary_row(tup, m: int, hist: ConvergenceHistory | None,
                 seconds: float, timings: bool, error: str = "") -> str:
    cells, level, g, space, K = tup
    mm = m if space == "tw1m" else 0
    if hist is None:
        return (f"{cells},{level},{g:g},{K},{space},{mm},0,False,"
                f"nan,nan,0,{0.0:.3f},error: {error}")
    final = hist.residuals[-1] if hist.residuals else hist.r0_norm
    sec = seconds if timings else 0.0
    status = "ok" if hist.converged else "not-converged"
    return (f"{cells},{level},{g:g},{K},{space},{mm},{hist.iterations},"
            f"{hist.converged},{hist.max_contraction:.12e},{final:.12e},"
            f"{hist.total_solves},{sec:.3f},{status}")


def run_suite(cfg: BenchmarkConfig) -> SuiteReport:
    """Run every tuple, write histories, summary and decay plots.

    Tuples sharing (cells, level, g) run sequentially inside one worker so
    the assembled system is built once; families run concurrently, capped
    by RTACCEL_THREADS.  Failures are recorded and do not stop the suite.
    """
    from . import plotting

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tuples = expand_tuples(cfg)

    families: dict = {}
    for tup in tuples:
        families.setdefault(tup[:3], []).append(tup)

    results: dict = {}

    def run_family(key):
        cells, level, g = key
        local = {}
        try:
            system = build_checkerboard(cfg, cells, level, g)
        except Exception as exc:  # noqa: BLE001 - suite must continue
            for tup in families[key]:
                local[tup] = (None, 0.0, f"{type(exc).__name__}: {exc}")
            return local
        for tup in families[key]:
            space, K = tup[3], tup[4]
            icfg = IterationConfig(space=space, K=K, m=cfg.m, tol=cfg.tol,
                                   max_iters=cfg.max_iters,
                                   inner_tol=cfg.inner_tol)
            t0 = time.perf_counter()
            try:
                hist = run(system, icfg)
                local[tup] = (hist, time.perf_counter() - t0, "")
            except Exception as exc:  # noqa: BLE001
                local[tup] = (None, 0.0, f"{type(exc).__name__}: {exc}")
        return local

    keys = sorted(families.keys())
    with ThreadPoolExecutor(max_workers=_worker_count(len(keys))) as pool:
        for local in pool.map(run_family, keys):
            results.update(local)

    path_of: dict = {}
    rows = []
    failures = 0
    for tup in tuples:
        hist, seconds, error = results[tup]
        cells, level, g, space, K = tup
        rows.append(_summary_row(tup, cfg.m, hist, seconds, cfg.timings,
                                 error))
        if hist is None:
            failures += 1
            continue
        if not hist.converged:
            failures += 1
        label = run_label(space, K, cfg.m)
        path = out / f"history_c{cells}_l{level}_g{g:g}_{label}.csv"
        _atomic_write(path, hist.to_csv(include_timings=cfg.timings))
        path_of[tup] = path

    summary_path = out / "summary.csv"
    _atomic_write(summary_path, "\n".join([SUMMARY_HEADER] + rows) + "\n")

    svg_paths = []
    for key in keys:
        cells, level, g = key
        fam_paths = [path_of[t] for t in tuples if t[:3] == key and t in path_of]
        if not fam_paths:
            continue
        svg = out / f"decay_c{cells}_l{level}_g{g:g}.svg"
        plotting.plot_histories(fam_paths, svg,
                                title=f"{cells}x{cells} cells, level {level}, "
                                      f"g={g:g}")
        svg_paths.append(svg)
    history_paths = [path_of[t] for t in tuples if t in path_of]

    return SuiteReport(summary_path=summary_path, rows=rows,
                       history_paths=history_paths, svg_paths=svg_paths,
                       failures=failures)
