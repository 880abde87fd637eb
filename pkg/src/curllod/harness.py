"""Experiment driver and command-line interface.

Provides reference solves on the resolving fine mesh, relative energy-norm
errors, least-squares convergence-rate fits, four ready-made convergence
studies over checkerboard coefficients (natural/essential boundary
conditions crossed with a divergence-compatible or a constant source),
CSV and plot-script emission, and an invariant validation suite covering
the discrete complex, the commuting projection, and the corrector
machinery.
"""

import argparse
import dataclasses
import math
import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, identity

from .assembly import Checkerboard, assemble_B, assemble_load
from .falk_winther import build_projection, zero_boundary_rows
from .linsolve import solve_spd
from .lod import (LodConfig, assemble_global_corrector, build_corrector_basis,
                  build_forms, solve_lod)
from .mesh import (ancestor_cells, build_structured_mesh, extended_edge_patch,
                   uniform_refine)
from .spaces import (coarse_to_fine, curl_incidence, divergence_incidence,
                     gradient_incidence)

_DIAG = {2: math.sqrt(2.0), 3: math.sqrt(3.0)}
_M_SCHEDULE = (1, 1, 2, 2, 3, 4)
CSV_COLUMNS = ("example", "dim", "j", "H", "m", "dof_coarse", "dof_fine",
               "err_lod", "err_fem", "seconds")


# ---------------------------------------------------------------------------
# configuration


def default_levels(dim):
    return tuple(range(6)) if dim == 2 else (0, 1, 2)


def default_ref_level(dim):
    return 6 if dim == 2 else 3


def schedule_m(levels):
    """Default patch-size schedule: grows slowly as the mesh is refined."""
    last = len(_M_SCHEDULE) - 1
    return tuple(_M_SCHEDULE[j] if j <= last
                 else _M_SCHEDULE[last] + (j - last) for j in levels)


@dataclass
class ExperimentConfig:
    example: int
    dim: int = 2
    levels: tuple = None
    m_values: tuple = None
    ref_level: int = None
    source_correction: str = "none"
    pi_variant: str = "standard"
    ideal: bool = False
    out: str = None

    def __post_init__(self):
        if self.example not in (1, 2, 3, 4):
            raise ValueError(f"example must be 1..4, got {self.example!r}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim!r}")
        if self.levels is None:
            self.levels = default_levels(self.dim)
        self.levels = tuple(int(j) for j in self.levels)
        if any(j < 0 for j in self.levels):
            raise ValueError("coarse levels must be non-negative")
        if self.ref_level is None:
            self.ref_level = default_ref_level(self.dim)
        self.ref_level = int(self.ref_level)
        if self.m_values is None:
            self.m_values = schedule_m(self.levels)
        self.m_values = tuple(
            math.inf if math.isinf(m) else int(m) for m in self.m_values)
        if len(self.m_values) != len(self.levels):
            raise ValueError(
                f"m-list length {len(self.m_values)} does not match "
                f"level-list length {len(self.levels)}")
        if any(m < 1 for m in self.m_values):
            raise ValueError("patch sizes must be at least 1")
        if any(j >= self.ref_level for j in self.levels):
            raise ValueError("reference level must exceed every coarse level")
        if self.source_correction not in ("none", "boundary", "all"):
            raise ValueError(
                f"unknown source-correction mode {self.source_correction!r}")
        if self.pi_variant not in ("standard", "zeroed"):
            raise ValueError(f"unknown pi variant {self.pi_variant!r}")
        # report rows are ordered coarse-to-fine (H descending)
        order = np.argsort(self.levels, kind="stable")
        self.levels = tuple(self.levels[i] for i in order)
        self.m_values = tuple(self.m_values[i] for i in order)

    @property
    def bc_variant(self):
        return "natural" if self.example in (1, 2) else "essential"

    @property
    def source(self):
        if self.example in (2, 4):
            return constant_source
        return smooth_source_2d if self.dim == 2 else smooth_source_3d


def smooth_source_2d(x):
    return np.stack([np.sin(2 * np.pi * x[:, 0]),
                     np.sin(2 * np.pi * x[:, 1])], axis=1)


def smooth_source_3d(x):
    return np.stack([-x[:, 0] * (x[:, 0] - 1) * (2 * x[:, 2] - 1),
                     np.zeros(len(x)),
                     x[:, 2] * (x[:, 2] - 1) * (2 * x[:, 0] - 1)], axis=1)


def constant_source(x):
    return np.ones_like(x)


@dataclass
class ExperimentRow:
    example: int
    dim: int
    j: int
    H: float
    m: object
    dof_coarse: int
    dof_fine: int
    err_lod: float
    err_fem: float
    seconds: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    slopes: dict


# ---------------------------------------------------------------------------
# reference solves and error measures


def reference_solve(fine, mu, kappa, f, bc_variant="natural"):
    """Edge-element Galerkin solution on the resolving mesh."""
    bmat = assemble_B(fine, mu, kappa).mat
    load = assemble_load(fine, f)
    return _reference_from(bmat, load, fine, bc_variant)


def _reference_from(bmat, load, fine, bc_variant):
    if bc_variant == "natural":
        return solve_spd(bmat, load, rtol=1e-10, label="reference solve")
    if bc_variant != "essential":
        raise ValueError(f"unknown bc variant {bc_variant!r}")
    free = np.setdiff1d(np.arange(fine.num_edges), fine.boundary_edges)
    u = np.zeros(fine.num_edges)
    u[free] = solve_spd(bmat[free][:, free].tocsr(), load[free], rtol=1e-10,
                        label="reference solve")
    return u


def energy_error(u_ms, u_ref, bmat):
    """Relative error in the energy norm induced by the bilinear form."""
    denom = float(u_ref @ (bmat @ u_ref))
    if denom <= 0:
        raise ValueError("reference solution has zero energy")
    e = np.asarray(u_ms) - np.asarray(u_ref)
    return float(np.sqrt(max(e @ (bmat @ e), 0.0) / denom))


def fit_rate(Hs, errors):
    """Least-squares slope of log(error) against log(H)."""
    Hs = np.asarray(Hs, float)
    errors = np.asarray(errors, float)
    if Hs.shape != errors.shape or Hs.size < 2:
        raise ValueError("rate fit needs at least two matching points")
    if np.any(Hs <= 0) or np.any(errors <= 0) or np.unique(Hs).size < 2:
        raise ValueError("rate fit needs positive values and distinct H")
    return float(np.polyfit(np.log(Hs), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# experiment driver


class ProjectionCache:
    """Memoizes projection builds across experiment rows and examples."""

    def __init__(self):
        self._built = {}

    def get(self, coarse, fine, pi_variant="standard"):
        key = (coarse.key, fine.key)
        ps = self._built.get(key)
        if ps is None:
            ps = build_projection(coarse, fine)
            self._built[key] = ps
        if pi_variant == "standard":
            return ps
        zkey = key + ("zeroed",)
        zps = self._built.get(zkey)
        if zps is None:
            zps = zero_boundary_rows(ps)
            self._built[zkey] = zps
        return zps


def coarse_fem_error(coarse, fine, bmat, load, u_ref, bc_variant):
    """Relative energy error of the plain coarse Galerkin solution."""
    emb = coarse_to_fine(coarse, fine, "N").mat.tocsc()
    if bc_variant == "essential":
        keep = np.setdiff1d(np.arange(coarse.num_edges), coarse.boundary_edges)
        emb = emb[:, keep]
    amat = csr_matrix(emb.T @ bmat @ emb)
    u = solve_spd(amat, emb.T @ load, rtol=1e-10, label="coarse fem")
    return energy_error(emb @ u, u_ref, bmat)


def run_example(cfg, projections=None, log=None, cache_dir=None):
    """Run one convergence study and return its report.

    cache_dir, when given, stores per-level corrector bases on disk so that
    repeated studies over the same meshes/coefficients (e.g. the same table
    with different source-correction modes) skip the corrector solves.
    """
    say = log if log is not None else (lambda msg: None)
    projections = projections if projections is not None else ProjectionCache()
    fine = build_structured_mesh(cfg.dim, 2 ** cfg.ref_level)
    blocks = 2 ** (cfg.ref_level - 1)
    mu = Checkerboard(cfg.dim, blocks)
    kappa = Checkerboard(cfg.dim, blocks)
    f = cfg.source
    bc = cfg.bc_variant
    bmat = assemble_B(fine, mu, kappa).mat
    load = assemble_load(fine, f)
    u_ref = _reference_from(bmat, load, fine, bc)
    rows = []
    for j, m in zip(cfg.levels, cfg.m_values):
        start = time.perf_counter()
        try:
            coarse = build_structured_mesh(cfg.dim, 2 ** j)
            ps = projections.get(coarse, fine, cfg.pi_variant)
            m_eff = math.inf if cfg.ideal else m
            sol = solve_lod(LodConfig(
                coarse, fine, mu, kappa, f, m_eff, ps, bc_variant=bc,
                source_correction=cfg.source_correction,
                cache_dir=cache_dir))
            err_lod = energy_error(sol.reconstruction, u_ref, bmat)
            err_fem = coarse_fem_error(coarse, fine, bmat, load, u_ref, bc)
        except Exception as exc:
            raise RuntimeError(
                f"example {cfg.example} ({cfg.dim}D) failed at "
                f"(j={j}, m={m}): {exc}") from exc
        seconds = time.perf_counter() - start
        row = ExperimentRow(cfg.example, cfg.dim, j,
                            _DIAG[cfg.dim] * 2.0 ** -j,
                            math.inf if cfg.ideal else m,
                            len(sol.coarse_edge_ids), fine.num_edges,
                            err_lod, err_fem, seconds)
        rows.append(row)
        say(f"example {cfg.example} {cfg.dim}D j={j} m={row.m}: "
            f"lod {err_lod:.4e} fem {err_fem:.4e} ({seconds:.1f}s)")
    slopes = {}
    if len(rows) >= 2 and all(r.err_lod > 0 and r.err_fem > 0 for r in rows):
        Hs = [r.H for r in rows]
        slopes["lod"] = fit_rate(Hs, [r.err_lod for r in rows])
        slopes["fem"] = fit_rate(Hs, [r.err_fem for r in rows])
        say(f"fitted slopes: lod {slopes['lod']:.3f} fem {slopes['fem']:.3f}")
    report = ExperimentReport(cfg, rows, slopes)
    if cfg.out:
        paths = write_report(report, cfg.out)
        say("wrote " + " and ".join(paths))
    return report


# ---------------------------------------------------------------------------
# CSV and plot-script emission


def _format_m(m):
    return "inf" if (isinstance(m, float) and math.isinf(m)) else str(m)


def csv_lines(report):
    lines = [",".join(CSV_COLUMNS)]
    for r in report.rows:
        lines.append(",".join([
            str(r.example), str(r.dim), str(r.j), repr(r.H), _format_m(r.m),
            str(r.dof_coarse), str(r.dof_fine), repr(r.err_lod),
            repr(r.err_fem), f"{r.seconds:.3f}"]))
    return lines


_PLOT_TEMPLATE = """\
\"\"\"Render the convergence plot for {csv_name}.\"\"\"
import csv
import math

import matplotlib.pyplot as plt

with open({csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))
H = [float(r["H"]) for r in rows]
lod = [float(r["err_lod"]) for r in rows]
fem = [float(r["err_fem"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog(H, lod, "b*-", label="LOD")
ax.loglog(H, fem, "ro--", label="FEM")
if min(lod) > 0:
    ax.loglog(H, [lod[0] / H[0] * x for x in H], "k--", label="c H")
    ax.loglog(H, [lod[0] / math.sqrt(H[0]) * math.sqrt(x) for x in H],
              "k:", label="c sqrt(H)")
ax.set_xlabel("H")
ax.set_ylabel("relative energy error")
ax.legend()
ax.grid(True, which="both", alpha=0.3)
fig.savefig({png_name!r}, dpi=150, bbox_inches="tight")
print("wrote", {png_name!r})
"""


def write_report(report, path):
    """Write the CSV and a matplotlib script that renders it."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(csv_lines(report)) + "\n")
    stem = os.path.splitext(path)[0]
    script = stem + "_plot.py"
    with open(script, "w") as fh:
        fh.write(_PLOT_TEMPLATE.format(
            csv_name=os.path.basename(path),
            png_name=os.path.basename(stem) + ".png"))
    return [path, script]


# ---------------------------------------------------------------------------
# validation suite


def _refine_to(mesh, n):
    while mesh.n < n:
        mesh = uniform_refine(mesh)
    return mesh


def _sparse_absmax(mat):
    mat = csr_matrix(mat)
    return float(np.abs(mat.data).max()) if mat.nnz else 0.0


def projection_residuals(coarse, fine, ps):
    """Named residuals of the projection invariants."""
    emb = coarse_to_fine(coarse, fine, "N").mat
    eye = identity(coarse.num_edges, format="csr")
    out = {
        "reproduces coarse space": _sparse_absmax(ps.P.mat @ emb - eye),
        "commutes with gradients": _sparse_absmax(
            ps.P.mat @ gradient_incidence(fine).mat
            - gradient_incidence(coarse).mat @ ps.PV.mat),
    }
    anc = ancestor_cells(fine, coarse)
    pmat = csr_matrix(ps.P.mat)
    leak = 0.0
    for edge in range(coarse.num_edges):
        patch = extended_edge_patch(coarse, edge)
        inside = np.zeros(fine.num_edges, bool)
        fc = np.flatnonzero(np.isin(anc, patch.cells))
        inside[np.unique(fine.cell_edges[fc])] = True
        row = pmat[edge]
        outside = ~inside[row.indices]
        if outside.any():
            leak = max(leak, float(np.abs(row.data[outside]).max()))
    out["row support local to edge patch"] = leak
    return out


def _lifting_residual(coarse, ps):
    """Divergence identity of the flux liftings, worst edge."""
    from .falk_winther import vertex_indicator

    inc = (divergence_incidence(coarse) if coarse.dim == 3
           else curl_incidence(coarse)).mat
    worst = 0.0
    for edge in range(coarse.num_edges):
        tail, head = coarse.edges[edge]
        rhs = vertex_indicator(coarse, tail) - vertex_indicator(coarse, head)
        z = ps.liftings[:, edge].toarray().ravel()
        resid = np.abs(inc @ z - rhs).max() / np.abs(rhs).max()
        worst = max(worst, float(resid))
    return worst


def validate(log=print):
    """Run the invariant suite on fixed small meshes; True if all pass."""
    checks = []

    def record(name, residual, threshold):
        ok = residual <= threshold
        checks.append((name, residual, threshold, ok))
        log(f"{'PASS' if ok else 'FAIL'}  {name}: residual {residual:.3e} "
            f"(allowed {threshold:.1e})")

    for dim, sizes in ((2, (1, 4, 8)), (3, (1, 2))):
        for n in sizes:
            mesh = build_structured_mesh(dim, n)
            grad = gradient_incidence(mesh).mat
            curl = curl_incidence(mesh).mat
            record(f"{dim}D n={n}: curl of gradient vanishes",
                   _sparse_absmax(curl @ grad), 0.0)
            if dim == 3:
                div = divergence_incidence(mesh).mat
                record(f"{dim}D n={n}: divergence of curl vanishes",
                       _sparse_absmax(div @ curl), 0.0)
                euler = (mesh.num_vertices - mesh.num_edges
                         + mesh.num_faces - mesh.num_cells)
            else:
                euler = mesh.num_vertices - mesh.num_edges + mesh.num_cells
            record(f"{dim}D n={n}: Euler characteristic equals 1",
                   float(abs(euler - 1)), 0.0)

    for dim, nc, nf in ((2, 4, 16), (3, 2, 4)):
        coarse = build_structured_mesh(dim, nc)
        fine = _refine_to(build_structured_mesh(dim, nc), nf)
        ps = build_projection(coarse, fine)
        for name, resid in projection_residuals(coarse, fine, ps).items():
            threshold = 1e-12 if "local" in name else 1e-9
            record(f"{dim}D projection: {name}", resid, threshold)
        record(f"{dim}D flux lifting: divergence identity",
               _lifting_residual(coarse, ps), 1e-10)

    coarse = build_structured_mesh(2, 4)
    fine = _refine_to(build_structured_mesh(2, 4), 16)
    ps = build_projection(coarse, fine)
    mu, kappa = Checkerboard(2, 8), Checkerboard(2, 8)
    forms = build_forms(coarse, fine, mu, kappa)
    basis = build_corrector_basis(forms, ps, 1, "natural")
    corr = assemble_global_corrector(basis).mat
    record("2D correctors: detail-space constraints hold",
           _sparse_absmax(ps.P.mat @ corr), 1e-8)
    for variant in ("natural", "essential"):
        sol = solve_lod(LodConfig(coarse, fine, mu, kappa, smooth_source_2d,
                                  1, ps, bc_variant=variant))
        dense = sol.coarse_matrix.toarray()
        sym = abs(dense - dense.T).max() / abs(dense).max()
        eig = float(np.linalg.eigvalsh(0.5 * (dense + dense.T)).min())
        record(f"2D {variant} coarse matrix: symmetric", sym, 1e-12)
        record(f"2D {variant} coarse matrix: positive definite",
               max(0.0, -eig), 0.0)

    ok = all(c[3] for c in checks)
    log("all checks passed" if ok else "VALIDATION FAILED")
    return ok


# ---------------------------------------------------------------------------
# command line


def parse_levels(text):
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(tok) for tok in text.split(",") if tok)


def parse_m_list(text):
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(math.inf if tok == "inf" else int(tok))
    return tuple(out)


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path):
    """Plain key=value settings; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


_CONVERTERS = {
    "example": int,
    "dim": int,
    "levels": parse_levels,
    "m": parse_m_list,
    "ref_level": int,
    "source_correction": str,
    "pi_variant": str,
    "ideal": _parse_bool,
    "out": str,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="curllod",
        description="Multiscale edge-element solver for heterogeneous "
                    "curl-curl problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", help="run the invariant validation suite")
    run = sub.add_parser("run", help="run a convergence study")
    run.add_argument("--config", help="key=value settings file; "
                                      "command-line flags win")
    run.add_argument("--example", type=int, choices=(1, 2, 3, 4))
    run.add_argument("--dim", type=int, choices=(2, 3))
    run.add_argument("--levels", help="coarse levels, e.g. 1:5 or 1,3,5")
    run.add_argument("--m", help="patch sizes aligned with levels, "
                                 "e.g. 1,2,2,3,4 (inf allowed)")
    run.add_argument("--ref-level", type=int, dest="ref_level")
    run.add_argument("--source-correction",
                     choices=("none", "boundary", "all"),
                     dest="source_correction")
    run.add_argument("--pi-variant", choices=("standard", "zeroed"),
                     dest="pi_variant")
    run.add_argument("--ideal", action="store_true", default=None,
                     help="solve on whole-domain patches (no localization)")
    run.add_argument("--out", help="CSV output path (a plot script is "
                                   "written next to it)")
    return parser


def config_from_settings(settings):
    converted = {}
    for key, value in settings.items():
        if key not in _CONVERTERS:
            raise ValueError(f"unknown setting {key!r}")
        converted[key] = (_CONVERTERS[key](value)
                          if isinstance(value, str) else value)
    if "example" not in converted:
        raise ValueError("an example number (1..4) is required")
    return ExperimentConfig(
        example=converted["example"],
        dim=converted.get("dim", 2),
        levels=converted.get("levels"),
        m_values=converted.get("m"),
        ref_level=converted.get("ref_level"),
        source_correction=converted.get("source_correction", "none"),
        pi_variant=converted.get("pi_variant", "standard"),
        ideal=bool(converted.get("ideal", False)),
        out=converted.get("out"))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        return 0 if validate() else 1
    settings = {}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in _CONVERTERS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    try:
        cfg = config_from_settings(settings)
    except ValueError as exc:
        parser.error(str(exc))
    run_example(cfg, log=print)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
