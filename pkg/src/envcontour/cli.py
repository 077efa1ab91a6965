"""Command-line front end: ``envcontour contour | existence | reproduce``.

Exit status: 0 when the simple contour is proper (or the existence verdict
admits), 2 when it is not (artifacts, including the corrected contour, are
still written), 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import analytic
from .contour import (
    corrected_contour,
    direct_contour_2d,
    validate_contour,
    voronoi_contour,
)
from .errors import ConfigError, EnvContourError
from .geometry import fibonacci_directions_3d, grid_directions_2d, sample_directions_uniform
from .io import atomic_write_text, format_csv, write_json
from .model import (
    GaussianMixture,
    MultivariateNormal,
    ellipse_fig7,
    load_model,
    mixture_fig7,
    model_from_dict,
    model_to_dict,
    sample,
    table1_model,
    table2_model,
)
from .percentile import bootstrap_spread, estimate_table

log = logging.getLogger("envcontour")

EXIT_OK, EXIT_ERROR, EXIT_IMPROPER = 0, 1, 2
CONFIG_SCHEMA_VERSION = 1
CONFIG_KEYS = {
    "schema_version", "model", "pe", "directions", "n", "seed", "origin", "output", "toggles",
    "conservative", "refine_rounds", "bootstrap", "style", "resolution",
}
TOGGLES = ("corrected", "analytic", "existence_scan", "direct_baseline")


@dataclass
class RunConfig:
    model: object
    pe: float = 0.05
    directions: str = "grid2d:360"
    n: int = 100_000
    seed: int = 1
    origin: object = "median"
    output: Path = Path("envcontour-out")
    corrected: bool = True
    analytic: bool = False
    existence_scan: bool = False
    direct_baseline: bool = True
    conservative: int = 0
    refine_rounds: int = 3
    bootstrap: int = 0
    resolution: int | None = None
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < float(self.pe) < 0.5:
            raise ConfigError(f"pe: must lie in (0, 0.5), got {self.pe}")
        if int(self.n) < 1:
            raise ConfigError(f"n: must be >= 1, got {self.n}")
        if int(self.refine_rounds) < 0 or int(self.bootstrap) < 0:
            raise ConfigError("refine_rounds and bootstrap must be non-negative")

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "model": model_to_dict(self.model),
            "pe": self.pe,
            "directions": self.directions,
            "n": self.n,
            "seed": self.seed,
            "origin": self.origin if isinstance(self.origin, str) else list(map(float, self.origin)),
            "conservative": self.conservative,
            "refine_rounds": self.refine_rounds,
            "bootstrap": self.bootstrap,
            "resolution": self.resolution,
            "toggles": {t: getattr(self, t) for t in TOGGLES},
        }


# -- configuration ---------------------------------------------------------------


def preset_path(name: str) -> Path:
    """Path of a bundled preset (``table1_2d.json`` etc.)."""
    ref = resources.files("envcontour.presets").joinpath(name)
    if not ref.is_file():
        raise ConfigError(f"no such config file or preset: {name}")
    return Path(str(ref))


def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.exists() else preset_path(p.name)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON run config; ``overrides`` (already typed) take precedence."""
    path = _resolve(str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version {version!r} is not supported")
    if "model" not in data:
        raise ConfigError(f"{path}: missing field 'model'")
    spec = data["model"]
    if isinstance(spec, str):
        model = load_model(_resolve(str(path.parent / spec)) if not Path(spec).is_absolute() else spec)
    else:
        model = model_from_dict(spec, "model")
    kw = {"model": model}
    for key, typ in (("pe", float), ("directions", str), ("n", int), ("seed", int), ("conservative", int),
                     ("refine_rounds", int), ("bootstrap", int)):
        if key in data:
            try:
                kw[key] = typ(data[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: field {key!r} has invalid value {data[key]!r}") from None
    if "resolution" in data and data["resolution"] is not None:
        kw["resolution"] = int(data["resolution"])
    if "origin" in data:
        kw["origin"] = parse_origin(data["origin"])
    if "output" in data:
        kw["output"] = Path(data["output"])
    if "style" in data:
        if not isinstance(data["style"], dict):
            raise ConfigError(f"{path}: field 'style' must be an object")
        kw["style"] = dict(data["style"])
    toggles = data.get("toggles", {})
    if not isinstance(toggles, dict) or set(toggles) - set(TOGGLES):
        raise ConfigError(f"{path}: field 'toggles' accepts only {', '.join(TOGGLES)}")
    kw.update({k: bool(v) for k, v in toggles.items()})
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**kw)


def parse_origin(spec):
    if isinstance(spec, (list, tuple)):
        return np.asarray(spec, dtype=float)
    spec = str(spec)
    if spec in ("median", "lp"):
        return spec
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise ConfigError(f"origin: expected 'median', 'lp' or comma-separated coordinates, got {spec!r}") from None


def parse_directions(spec: str, dim: int) -> np.ndarray:
    """``grid2d:M``, ``uniform:M:seed``, ``fibonacci:M`` (3D) or ``file:PATH`` (CSV with header)."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "grid2d":
            if dim != 2:
                raise ConfigError(f"directions: grid2d needs a 2D model (model has dim {dim})")
            return grid_directions_2d(int(rest))
        if kind == "uniform":
            m, _, seed = rest.partition(":")
            return sample_directions_uniform(int(m), dim, int(seed or 0))
        if kind == "fibonacci":
            if dim != 3:
                raise ConfigError(f"directions: fibonacci needs a 3D model (model has dim {dim})")
            return fibonacci_directions_3d(int(rest))
        if kind == "file":
            U = np.loadtxt(rest, delimiter=",", skiprows=1, ndmin=2)
            if U.shape[1] != dim:
                raise ConfigError(f"directions: {rest} has {U.shape[1]} columns, model has dim {dim}")
            return U / np.linalg.norm(U, axis=1, keepdims=True)
    except ValueError as exc:
        raise ConfigError(f"directions: cannot parse {spec!r} ({exc})") from None
    raise ConfigError(f"directions: unknown scheme {spec!r} (use grid2d:M, uniform:M:seed or file:PATH)")


# -- field selection for the continuous diagnostics ------------------------------------


def exact_field(model, pe):
    if isinstance(model, MultivariateNormal):
        return analytic.GaussianField(model.mean, model.cov, pe)
    if isinstance(model, GaussianMixture):
        return analytic.MixtureField.from_model(model, pe)
    return None


def make_field(cfg: RunConfig, table=None, kind: str = "auto"):
    """Closed-form field when available (``auto``/``exact``), else a table interpolant."""
    if kind in ("auto", "exact"):
        fld = exact_field(cfg.model, cfg.pe)
        if fld is not None:
            return fld
        if kind == "exact":
            raise ConfigError(f"no closed-form percentile function for model kind {cfg.model.tag!r}")
    if table is None:
        spec = cfg.directions if cfg.model.dim != 2 or cfg.directions.startswith("grid2d") else "grid2d:720"
        table = estimate_table(sample(cfg.model, cfg.n, cfg.seed), parse_directions(spec, cfg.model.dim), cfg.pe)
    return analytic.field_from_table(table)


# -- commands --------------------------------------------------------------------------


def _angles(U):
    return np.mod(np.arctan2(U[:, 1], U[:, 0]), 2 * np.pi)


def run_contour(cfg: RunConfig, out: Path, prefix: str = "", samples=None, plot: bool = True) -> dict:
    """Build simple (and corrected) contours and write every artifact. Returns a summary."""
    model = cfg.model
    U = parse_directions(cfg.directions, model.dim)
    if samples is None:
        samples = sample(model, cfg.n, cfg.seed)
    res = voronoi_contour(
        model, cfg.pe, U, cfg.n, cfg.seed, origin=cfg.origin, conservative=cfg.conservative,
        refine_rounds=cfg.refine_rounds, samples=samples,
    )
    table = res.table
    simple_val = validate_contour(res.cell, table)
    out = Path(out)

    def p(name):
        return out / f"{prefix}{name}"

    table.write(p("table.csv"), p("table.json"))
    atomic_write_text(p("contour_simple.csv"), res.cell.vertices_csv(model.names or None))

    summary = {
        "n": cfg.n,
        "directions": len(table),
        "status": res.status,
        "classification": simple_val.classification,
        "disconnected": [int(j) for j in res.connectivity.offending],
        "max_gap_simple": simple_val.max_gap,
    }
    h_simple = res.cell.support(table.directions)
    gap_cols = [table.directions, table.values[:, None], simple_val.gaps[:, None]]
    gap_header = [f"u_{i + 1}" for i in range(model.dim)] + ["C_value", "gap_simple"]
    corr = None
    payload = {"config": cfg.to_dict(), "simple": res.to_dict(), "validity_simple": simple_val.to_dict()}
    if cfg.corrected or res.status != "proper-candidate":
        corr = corrected_contour(res)
        corr_val = validate_contour(corr, table)
        atomic_write_text(p("contour_corrected.csv"), corr.vertices_csv(model.names or None))
        diff = corr.support(table.directions) - h_simple
        gap_cols += [corr_val.gaps[:, None], diff[:, None]]
        gap_header += ["gap_corrected", "correction"]
        payload["corrected"] = corr.to_dict()
        payload["validity_corrected"] = corr_val.to_dict()
        summary.update(
            classification_corrected=corr_val.classification,
            max_gap_corrected=corr_val.max_gap,
            max_correction=float(diff.max()),
        )
    atomic_write_text(p("gaps.csv"), format_csv(gap_header, np.column_stack(gap_cols)))

    direct = None
    if cfg.direct_baseline and model.dim == 2:
        direct = direct_contour_2d(table)
        atomic_write_text(p("contour_direct.csv"), format_csv(["x1", "x2"], direct.points))
        payload["direct"] = {"n_crossings": direct.n_crossings, "crossings": direct.crossings}
        summary["direct_crossings"] = direct.n_crossings

    b = None
    if cfg.analytic or cfg.existence_scan:
        fld = make_field(cfg, table)
        pc = analytic.parametric_contour(fld, cfg.resolution, scan=cfg.existence_scan)
        if cfg.analytic:
            atomic_write_text(p("contour_analytic.csv"), pc.csv())
            b = pc.points
        if pc.report is not None:
            write_json(p("existence.json"), pc.report.to_dict())
            summary["existence"] = pc.report.verdict

    write_json(p("contour.json"), payload)
    write_json(p("validity.json"), {"simple": simple_val.to_dict(), **(
        {"corrected": payload["validity_corrected"]} if corr is not None else {})})

    if model.dim == 2 and plot:
        from . import plotting

        fig, axes = plotting.new_figure()
        plotting.draw_panel(
            axes[0, 0],
            samples=samples.points,
            direct=None if direct is None else direct.points,
            simple=res.cell.ordered_vertices_2d(),
            corrected=None if corr is None else corr.ordered_vertices_2d(),
            analytic=b,
            gaps=(_angles(table.directions), simple_val.gaps),
            style=cfg.style,
            title=f"n={cfg.n}, M={len(table)}",
        )
        plotting.save_svg(fig, p("contour.svg"))
    elif model.dim == 3:
        atomic_write_text(p("simple.obj"), res.cell.to_obj())
        if corr is not None:
            atomic_write_text(p("corrected.obj"), corr.to_obj())
            # distance of each corrected vertex outside the simple contour
            out_dist = np.maximum(corr.vertices @ res.cell.normals.T - res.cell.offsets, 0).max(axis=1)
            atomic_write_text(p("difference.obj"), corr.to_obj(out_dist))
    summary["_result"] = res
    summary["_corrected"] = corr
    summary["_direct"] = direct
    return summary


def _public(summary):
    return {k: v for k, v in summary.items() if not k.startswith("_")}


def cmd_contour(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    summary = run_contour(cfg, out)
    if cfg.bootstrap:
        U = parse_directions(cfg.directions, cfg.model.dim)
        spread = bootstrap_spread(sample(cfg.model, cfg.n, cfg.seed), U, cfg.pe, n_boot=cfg.bootstrap, seed=cfg.seed)
        atomic_write_text(out / "bootstrap.csv", format_csv(
            [f"u_{i + 1}" for i in range(cfg.model.dim)] + ["bootstrap_sd"], np.column_stack([U, spread])))
    pub = _public(summary)
    write_json(out / "summary.json", pub)
    print(f"status: {pub['status']} ({pub['classification']})")
    if pub["disconnected"]:
        shown = ", ".join(map(str, pub["disconnected"][:20]))
        more = "" if len(pub["disconnected"]) <= 20 else f" ... ({len(pub['disconnected'])} total)"
        print(f"disconnected directions: {shown}{more}")
    if "max_gap_corrected" in pub:
        print(f"corrected: {pub['classification_corrected']}, max gap {pub['max_gap_corrected']:.3e}, "
              f"max correction {pub['max_correction']:.3e}")
    print(f"artifacts written to {out}")
    return EXIT_OK if pub["classification"] == "proper" else EXIT_IMPROPER


def cmd_existence(cfg: RunConfig, field_kind: str = "auto") -> int:
    if cfg.model.dim not in (2, 3):
        raise ConfigError(f"existence scan supports 2D and 3D models, got dim {cfg.model.dim}")
    fld = make_field(cfg, kind=field_kind)
    pc = analytic.parametric_contour(fld, cfg.resolution, scan=True)
    out = Path(cfg.output)
    rep = pc.report.to_dict()
    rep["field"] = type(fld).__name__
    write_json(out / "existence.json", rep)
    atomic_write_text(out / "contour_analytic.csv", pc.csv())
    print(f"verdict: {pc.report.verdict} (kappa min {pc.report.kappa_min:.3e}, "
          f"hessian min {pc.report.hessian_min:.3e})")
    return EXIT_OK if pc.report.verdict == "admits" else EXIT_IMPROPER


# -- reproduction bundles -----------------------------------------------------------------

FIG6_SIZES = (10_000, 100_000, 1_000_000)
FIG6_DIRECTIONS = (90, 360, 1440)
FIG7_SIZES = (1_000, 10_000, 100_000, 1_000_000)
FIG7_DIRECTIONS = 90


def reproduce_fig6(out: Path, sizes=FIG6_SIZES, directions=FIG6_DIRECTIONS, seed: int = 1, refine_rounds: int = 0):
    """Table 1 model at pe = 0.05; rows share one sample, columns vary the direction count."""
    from . import plotting

    model = table1_model()
    fig, axes = plotting.new_figure(len(sizes), len(directions))
    rows = []
    for r, n in enumerate(sizes):
        samples = sample(model, n, seed)
        for c, m in enumerate(directions):
            cfg = RunConfig(model=model, pe=0.05, directions=f"grid2d:{m}", n=n, seed=seed,
                            refine_rounds=refine_rounds, corrected=True, direct_baseline=True)
            s = run_contour(cfg, out, prefix=f"n{n}_M{m}_", samples=samples, plot=False)
            res, corr, direct = s["_result"], s["_corrected"], s["_direct"]
            gaps = res.table.values - res.cell.support(res.table.directions)
            panel = (samples.points, direct.points, res.cell.ordered_vertices_2d(), corr.ordered_vertices_2d(),
                     None, (_angles(res.table.directions), gaps))
            plotting.draw_panel(axes[r, c], *panel, title=f"n={n}, M={m}")
            single, ax1 = plotting.new_figure()
            plotting.draw_panel(ax1[0, 0], *panel, title=f"n={n}, M={m}")
            plotting.save_svg(single, out / f"fig6_n{n}_M{m}.svg")
            rows.append([n, m, len(s["disconnected"]), s["max_gap_simple"], s["max_correction"],
                         s["max_gap_corrected"], s["direct_crossings"]])
    plotting.save_svg(fig, out / "fig6_grid.svg")
    header = ["n", "M", "n_disconnected", "max_gap_simple", "max_correction", "max_gap_corrected", "direct_crossings"]
    atomic_write_text(out / "fig6_summary.csv", format_csv(header, rows))
    return rows


def reproduce_fig7(out: Path, sizes=FIG7_SIZES, m: int = FIG7_DIRECTIONS, seed: int = 1):
    """Gaussian ellipse and mixture at pe = 0.15; loop counts of the direct contour versus n.

    Sample sizes are nested prefixes of one stream per model.
    """
    from . import plotting

    U = grid_directions_2d(m)
    cases = (("gaussian", ellipse_fig7()), ("mixture", mixture_fig7()))
    fig, axes = plotting.new_figure(2, len(sizes))
    rows, loops = [], {}
    for r, (name, model) in enumerate(cases):
        full = sample(model, max(sizes), seed)
        loops[name] = []
        for c, n in enumerate(sizes):
            pts = full.points[:n]
            table = estimate_table(pts, U, 0.15)
            direct = direct_contour_2d(table)
            loops[name].append(direct.n_crossings)
            plotting.draw_panel(axes[r, c], samples=pts, direct=direct.points, title=f"{name}, n={n}")
            atomic_write_text(out / f"fig7_{name}_n{n}_direct.csv", format_csv(["x1", "x2"], direct.points))
            rows.append([r, n, m, direct.n_crossings])
    plotting.save_svg(fig, out / "fig7.svg")
    atomic_write_text(out / "fig7_summary.csv", format_csv(["row", "n", "M", "direct_crossings"], rows))
    trend = {
        "sizes": list(sizes),
        "loops": loops,
        "gaussian_loops_vanish": loops["gaussian"][-1] == 0 and loops["gaussian"][-1] < loops["gaussian"][0],
        "mixture_loops_persist": loops["mixture"][-1] > 0,
    }
    write_json(out / "fig7_trend.json", trend)
    return trend


def reproduce_fig9(out: Path, n: int = 1_000_000, directions: str = "uniform:2000:7", seed: int = 1,
                   refine_rounds: int = 0):
    """Table 2 model at pe = 0.1: simple, corrected and difference meshes."""
    cfg = RunConfig(model=table2_model(), pe=0.1, directions=directions, n=n, seed=seed,
                    refine_rounds=refine_rounds, corrected=True, direct_baseline=False)
    s = run_contour(cfg, out, prefix="fig9_")
    pub = _public(s)
    write_json(out / "fig9_summary.json", pub)
    return pub


STUDIES = {"fig6-grid": reproduce_fig6, "fig7": reproduce_fig7, "fig9": reproduce_fig9}


def cmd_reproduce(study: str, out: Path, **kw) -> int:
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = STUDIES[study](out, **{k: v for k, v in kw.items() if v is not None})
    if study == "fig7":
        print(f"loops: {result['loops']}")
    print(f"{study}: artifacts written to {out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------


def _ints(text):
    return tuple(int(float(v)) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="envcontour", description="Environmental contours as Voronoi cells.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", required=True, help="JSON run config or bundled preset name")
        p.add_argument("--pe", type=float)
        p.add_argument("--directions", help="grid2d:M | uniform:M:seed | file:PATH")
        p.add_argument("--n", type=lambda s: int(float(s)))
        p.add_argument("--seed", type=int)
        p.add_argument("--origin", help="median | lp | x1,x2,...")
        p.add_argument("--out", help="output directory")
        p.add_argument("--resolution", type=int, help="existence grid points per angle")

    c = sub.add_parser("contour", help="simple and corrected Voronoi contours")
    run_options(c)
    c.add_argument("--corrected", action="store_true", default=None)
    c.add_argument("--no-corrected", dest="corrected", action="store_false")
    c.add_argument("--conservative", type=int)
    c.add_argument("--refine-rounds", type=int)
    c.add_argument("--bootstrap", type=int, help="bootstrap replicates for percentile spread")
    c.add_argument("--analytic", action="store_true", default=None)
    c.add_argument("--existence-scan", action="store_true", default=None)
    c.add_argument("--no-direct", dest="direct_baseline", action="store_false", default=None)

    e = sub.add_parser("existence", help="kappa scan and Hessian criterion")
    run_options(e)
    e.add_argument("--field", choices=("auto", "exact", "table"), default="auto")

    r = sub.add_parser("reproduce", help="regenerate a study bundle")
    r.add_argument("study", choices=sorted(STUDIES))
    r.add_argument("--out", default="reproduce-out")
    r.add_argument("--sizes", type=_ints, help="comma-separated sample sizes")
    r.add_argument("--directions", help="direction counts (fig6-grid: comma list, fig7: M, fig9: scheme)")
    r.add_argument("--seed", type=int)
    return ap


def _config_from_args(args) -> RunConfig:
    over = {
        "pe": args.pe,
        "directions": args.directions,
        "n": args.n,
        "seed": args.seed,
        "origin": None if args.origin is None else parse_origin(args.origin),
        "output": None if args.out is None else Path(args.out),
        "resolution": args.resolution,
    }
    for key in ("corrected", "conservative", "refine_rounds", "bootstrap", "analytic", "existence_scan",
                "direct_baseline"):
        over[key] = getattr(args, key, None)
    return load_config(args.config, over)


def _reproduce_kwargs(args):
    kw = {"seed": args.seed}
    if args.study == "fig6-grid":
        kw["sizes"] = args.sizes
        kw["directions"] = None if args.directions is None else _ints(args.directions)
    elif args.study == "fig7":
        kw["sizes"] = args.sizes
        kw["m"] = None if args.directions is None else int(args.directions)
    else:
        kw["n"] = None if args.sizes is None else args.sizes[0]
        kw["directions"] = args.directions
    return kw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args.study, Path(args.out), **_reproduce_kwargs(args))
        cfg = _config_from_args(args)
        if args.command == "contour":
            return cmd_contour(cfg)
        return cmd_existence(cfg, args.field)
    except EnvContourError as exc:
        print(f"envcontour: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"envcontour: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["RunConfig", "load_config", "parse_directions", "cmd_contour", "cmd_existence", "cmd_reproduce", "main"]
