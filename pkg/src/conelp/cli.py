"""Command-line front end: analyze | pencil-scan | kernel-verify | phi-table.

JSON is canonical (sorted keys, fixed float repr, no timestamps) so identical
configs give byte-identical files. Every report carries the resolved config
and a sha256 of its own canonical form.

Exit codes: 0 pass, 1 verification FAIL, 2 usage error, 3 internal error.
CONELP_THREADS caps the BLAS/OpenMP pool; it is read before numpy loads.
"""
from __future__ import annotations

import os

_threads = os.environ.get("CONELP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import dataclasses  # noqa: E402
import hashlib  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .errors import ConelpError  # noqa: E402

COMMANDS = ("analyze", "pencil-scan", "kernel-verify", "phi-table")
MESH_DEFAULT = {"analyze": 128, "pencil-scan": 128, "kernel-verify": 32, "phi-table": 128}


class UsageError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    dim: int = 3
    cap_angle: float = math.pi / 2
    nu: float = 0.5
    p: float | None = None
    seed: int = 42
    mesh: int = 128
    levels: int = 3
    out_path: str | None = None
    format: str = "json"
    # command-specific knobs
    M: float | None = None
    max_mode: int | None = None
    grid_re: int = 21
    grid_im: int = 21
    threshold: float = 1e-4
    im_max: float = 4.0
    suite_size: int = 10
    lemmas: tuple = (1, 2, 3, 4)
    samples: int = 101

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["lemmas"] = list(self.lemmas)
        d.pop("out_path")  # where the file goes does not change its content
        return d


# ------------------------------------------------------------------ parsing

def _lemma_list(text):
    try:
        ids = tuple(sorted({int(t) for t in text.split(",") if t.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lemma list {text!r}")
    if not ids or any(i not in (1, 2, 3, 4) for i in ids):
        raise argparse.ArgumentTypeError("lemmas must be drawn from 1,2,3,4")
    return ids


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dim", type=int, default=3, help="ambient dimension n (default 3)")
    common.add_argument("--cap-angle", type=float, default=math.pi / 2, help="cap half-angle theta0 (default pi/2)")
    common.add_argument("--nu", type=float, default=0.5, help="Poisson ratio, <= 1/2 (default 0.5)")
    common.add_argument("--p", type=float, default=None, help="integrability exponent (kernel-verify)")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--mesh", type=int, default=None,
                        help="colatitude grid points; azimuthal sectors for kernel-verify")
    common.add_argument("--levels", type=int, default=3, help="Richardson or refinement levels")
    common.add_argument("--out", dest="out_path", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None)

    ap = argparse.ArgumentParser(prog="conelp", description="Cone-vertex spectral and maximal-function checks.")
    ap.add_argument("--version", action="version", version=f"conelp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="eigenvalue, M, Theta, t(M), strip, p_min")
    a.add_argument("--max-mode", type=int, default=None, help="azimuthal modes searched for Theta (default 8)")

    s = sub.add_parser("pencil-scan", parents=[common], help="relative sigma_min over the strip")
    s.add_argument("--max-mode", type=int, default=None, help="highest azimuthal mode (default 4)")
    s.add_argument("--grid-re", type=int, default=21)
    s.add_argument("--grid-im", type=int, default=21)
    s.add_argument("--threshold", type=float, default=1e-4)
    s.add_argument("--im-max", type=float, default=4.0)

    k = sub.add_parser("kernel-verify", parents=[common], help="maximal-function lemma checks on a 3-d cone")
    k.add_argument("--suite-size", type=int, default=10, help="number of seeded random data")
    k.add_argument("--lemmas", type=_lemma_list, default=(1, 2, 3, 4), help="comma list, e.g. 1,2,3")

    f = sub.add_parser("phi-table", parents=[common], help="samples of phi(t) and the critical root")
    f.add_argument("--M", type=float, default=None, help="exponent M (default: from the cap)")
    f.add_argument("--samples", type=int, default=101)
    return ap


def resolve_config(args) -> RunConfig:
    """Fill per-command defaults and re-check every downstream precondition."""
    from .pencil import MaterialParams, PhiContext
    from .sphere_spectra import CapDomain, DiscretizationConfig

    cmd = args.command
    fmt = args.format or ("csv" if cmd == "phi-table" else "json")
    mesh = args.mesh if args.mesh is not None else MESH_DEFAULT[cmd]
    kw = dict(command=cmd, dim=args.dim, cap_angle=args.cap_angle, nu=args.nu, p=args.p, seed=args.seed,
              mesh=mesh, levels=args.levels, out_path=args.out_path, format=fmt)
    if cmd in ("analyze", "pencil-scan"):
        kw["max_mode"] = args.max_mode if args.max_mode is not None else (8 if cmd == "analyze" else 4)
    if cmd == "pencil-scan":
        kw.update(grid_re=args.grid_re, grid_im=args.grid_im, threshold=args.threshold, im_max=args.im_max)
    if cmd == "kernel-verify":
        kw.update(suite_size=args.suite_size, lemmas=tuple(args.lemmas))
    if cmd == "phi-table":
        kw.update(M=args.M, samples=args.samples)
    cfg = RunConfig(**kw)

    try:
        if not (math.isfinite(cfg.cap_angle) and math.isfinite(cfg.nu)):
            raise UsageError("cap-angle and nu must be finite")
        CapDomain(cfg.dim, cfg.cap_angle)
        MaterialParams(cfg.nu)
        if cfg.seed < 0:
            raise UsageError("seed must be nonnegative")
        if cfg.p is not None and not (cfg.p > 1 and math.isfinite(cfg.p)):
            raise UsageError("p must be a finite number > 1")
        if cfg.levels < 1:
            raise UsageError("levels must be >= 1")
        if cmd in ("analyze", "pencil-scan"):
            DiscretizationConfig(grid_points=cfg.mesh, max_azimuthal_mode=max(cfg.max_mode, 1),
                                 richardson_levels=cfg.levels)
            if cfg.max_mode < (1 if cmd == "analyze" else 0):
                raise UsageError("max-mode out of range")
        if cmd == "pencil-scan":
            if cfg.grid_re < 1 or cfg.grid_im < 1:
                raise UsageError("grid sizes must be >= 1")
            if not (cfg.threshold > 0 and cfg.im_max >= 0):
                raise UsageError("threshold must be positive and im-max nonnegative")
        if cmd == "kernel-verify":
            if cfg.dim != 3:
                raise UsageError("kernel-verify runs on three-dimensional cones only")
            if cfg.levels < 2:
                raise UsageError("kernel-verify needs at least two refinement levels")
            if cfg.mesh < 4 or cfg.suite_size < 0:
                raise UsageError("mesh must be >= 4 and suite-size >= 0")
        if cmd == "phi-table":
            DiscretizationConfig(grid_points=cfg.mesh, richardson_levels=cfg.levels)
            if cfg.samples < 2:
                raise UsageError("samples must be >= 2")
            if cfg.M is not None:
                PhiContext(cfg.dim, cfg.nu, cfg.M)
    except (ConelpError, ValueError, UsageError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# ----------------------------------------------------------------- commands

def _strip_dict(st):
    return {"t_of_M": st.t_of_M, "alpha": st.alpha, "halfwidth": st.halfwidth, "p_min": st.p_min,
            "center": st.center}


def run_analyze(cfg: RunConfig) -> dict:
    from .pencil import MaterialParams, PhiContext, strip_report
    from .sphere_spectra import CapDomain, DiscretizationConfig, dirichlet_eigenvalue_cap, theta_omega

    cap = CapDomain(cfg.dim, cfg.cap_angle)
    dc = DiscretizationConfig(grid_points=cfg.mesh, richardson_levels=cfg.levels, max_azimuthal_mode=cfg.max_mode)
    ev = dirichlet_eigenvalue_cap(cap, 0, dc)
    spec = dirichlet_eigenvalue_cap(cap, 0, dataclasses.replace(dc, scheme="spectral", grid_points=64))
    th = theta_omega(cap, dc)
    MaterialParams(cfg.nu)
    st = strip_report(PhiContext(cfg.dim, cfg.nu, ev.M_exponent))
    gap = abs(ev.eigenvalue - spec.eigenvalue) / max(1.0, abs(ev.eigenvalue))
    ok = gap <= 1e-6
    return {
        "n": cfg.dim, "theta0": cfg.cap_angle, "nu": cfg.nu,
        "eigenvalue": ev.eigenvalue, "M": ev.M_exponent,
        "Theta_Omega": th.theta_omega, "Theta_mode": th.attaining_mode,
        "t_of_M": st.t_of_M, "alpha": st.alpha, "strip_halfwidth": st.halfwidth, "strip_center": st.center,
        "p_min": st.p_min, "solvability_interval": [st.p_min, None],
        "tolerances": {
            "eigen_residual": ev.residual, "richardson_levels": cfg.levels, "mesh": cfg.mesh,
            "observed_order": ev.observed_order, "level_values": list(ev.levels),
            "spectral_eigenvalue": spec.eigenvalue, "route_gap": gap, "route_tol": 1e-6,
        },
        "verdict": "PASS" if ok else "FAIL",
    }


def run_pencil_scan(cfg: RunConfig) -> dict:
    from .pencil import MaterialParams, cap_strip, strip_scan
    from .sphere_spectra import CapDomain, DiscretizationConfig

    cap = CapDomain(cfg.dim, cfg.cap_angle)
    mat = MaterialParams(cfg.nu)
    st, ev = cap_strip(cap, mat)
    dc = DiscretizationConfig(grid_points=cfg.mesh, max_azimuthal_mode=max(cfg.max_mode, 1))
    rep = strip_scan(cap, mat, cfg.grid_re, cfg.grid_im, dc, cfg.threshold, cfg.im_max, st)
    pts = [{"re": g.real, "im": g.imag, "sigma": float(s), "mode": m}
           for g, s, m in zip(rep.grid, rep.sigma_min, rep.argmin_mode)]
    i = int(np.argmin(rep.sigma_min))
    return {
        "n": cfg.dim, "theta0": cfg.cap_angle, "nu": cfg.nu, "M": ev.M_exponent,
        "strip": _strip_dict(st), "threshold": cfg.threshold,
        "lattice": {"re": rep.re_values.tolist(), "im": rep.im_values.tolist()},
        "points": pts, "flagged": [{"re": g.real, "im": g.imag} for g in rep.flagged],
        "sigma_min": {"value": pts[i]["sigma"], "re": pts[i]["re"], "im": pts[i]["im"], "mode": pts[i]["mode"]},
        "control": rep.control,
        "verdict": "PASS" if not rep.flagged else "FAIL",
    }


def run_kernel_verify(cfg: RunConfig) -> dict:
    from . import dirichlet_harness as dh
    from .green_model import KernelBoundModel
    from .pencil import MaterialParams, cap_strip
    from .sphere_spectra import CapDomain

    cap = CapDomain(3, cfg.cap_angle)
    st, _ = cap_strip(cap, MaterialParams(cfg.nu))
    model = KernelBoundModel.from_strip(st, 3)
    p = cfg.p if cfg.p is not None else 2.0
    hc = dh.HarnessConfig(azimuth=cfg.mesh)
    cone = dh.NontangentialCone()
    cache = {}

    def operators(level):
        if level not in cache:
            cache[level] = dh.ConeOperator(dh.ConeBoundary.from_config(cfg.cap_angle, hc, level), cone, model, hc)
        return cache[level]

    suite = [lambda b, i=i: dh.data_random(b, cfg.seed, i) for i in range(cfg.suite_size)]
    suite.append(dh.data_constant)
    singular = [lambda b: dh.data_vertex_singular(b, p)]
    sharp = p <= dh.p_threshold(model.alpha)

    lemmas, ok = [], True
    for lid in cfg.lemmas:
        if lid == 2:
            data = singular if sharp else suite + singular
        else:
            data = suite
        v = dh.verify_lemma(lid, data, p, cfg.cap_angle, cone, model, cfg.levels, hc, operators)
        expected = "DIVERGES" if v.branch == "sharpness" else "PASS"
        ok &= v.verdict == expected
        lemmas.append({
            "lemma": v.lemma, "p": v.p, "branch": v.branch, "verdict": v.verdict, "expected": expected,
            "levels": v.levels, "constants": v.constants, "diagnostics": v.diagnostics,
            "assumptions": v.assumptions,
        })
    finest = operators(cfg.levels - 1).bnd
    acc = dh.dyadic_band_accounting(finest)
    return {
        "n": 3, "theta0": cfg.cap_angle, "nu": cfg.nu, "p": p, "alpha": st.alpha, "p_min": st.p_min,
        "harness": dataclasses.asdict(hc), "cone": dataclasses.asdict(cone),
        "lemmas": lemmas,
        "band_accounting": {"rescale_exact": acc["rescale_exact"], "max_overlap": acc["max_overlap"],
                            "overlap_ok": acc["overlap_ok"]},
        "verdict": "PASS" if ok and acc["overlap_ok"] else "FAIL",
    }


def run_phi_table(cfg: RunConfig) -> dict:
    from .pencil import PhiContext, cap_strip, MaterialParams, phi_eval, strip_report
    from .sphere_spectra import CapDomain, DiscretizationConfig

    if cfg.M is None:
        dc = DiscretizationConfig(grid_points=cfg.mesh, richardson_levels=cfg.levels)
        _, ev = cap_strip(CapDomain(cfg.dim, cfg.cap_angle), MaterialParams(cfg.nu), dc)
        M = ev.M_exponent
    else:
        M = cfg.M
    ctx = PhiContext(cfg.dim, cfg.nu, M)
    lo = -(cfg.dim - 2) / 2
    ts = np.union1d(np.linspace(lo, M, cfg.samples), [0.0])
    rows = []
    for t in ts:
        t = float(t)
        ph = float(phi_eval(t, ctx))
        rhs = (cfg.dim - 1) * (2 * t + cfg.dim - 2)
        rows.append({"t": t, "phi": ph, "rhs": rhs, "gap": ph - rhs})
    st = strip_report(ctx)
    return {"n": cfg.dim, "nu": cfg.nu, "M": M, "rows": rows, "strip": _strip_dict(st), "verdict": "PASS"}


RUNNERS = {"analyze": run_analyze, "pencil-scan": run_pencil_scan,
           "kernel-verify": run_kernel_verify, "phi-table": run_phi_table}


# ------------------------------------------------------------------ output

def _plain(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    return obj


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(report):
    body = {k: v for k, v in report.items() if k != "content_hash"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def build_report(cfg: RunConfig, result: dict) -> dict:
    rep = _plain(dict(result))
    rep.update(command=cfg.command, version=__version__, seed=cfg.seed, config=_plain(cfg.as_dict()))
    rep["content_hash"] = content_hash(rep)
    return rep


def render_json(rep):
    return json.dumps(rep, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _table(rep):
    cmd = rep["command"]
    if cmd == "phi-table":
        return ["t", "phi", "rhs", "gap"], rep["rows"]
    if cmd == "pencil-scan":
        flagged = {(f["re"], f["im"]) for f in rep["flagged"]}
        rows = [dict(pt, flagged=(pt["re"], pt["im"]) in flagged) for pt in rep["points"]]
        return ["re", "im", "sigma", "mode", "flagged"], rows
    if cmd == "kernel-verify":
        rows = []
        for lem in rep["lemmas"]:
            for d in lem["diagnostics"]:
                for lev, val in zip(lem["levels"], d["values"]):
                    rows.append({"lemma": lem["lemma"], "branch": lem["branch"], "verdict": lem["verdict"],
                                 "f": d["f"], "ratio": d["ratio"], "bands": lev, "value": val})
        return ["lemma", "branch", "verdict", "f", "ratio", "bands", "value"], rows
    flat = {k: v for k, v in rep.items() if not isinstance(v, (dict, list)) and k != "content_hash"}
    return sorted(flat), [flat]


def render_csv(rep):
    buf = io.StringIO()
    buf.write(f"# content_hash={rep['content_hash']}\n")
    buf.write(f"# config={canonical_json(rep['config'])}\n")
    cols, rows = _table(rep)
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in cols})
    return buf.getvalue()


def _provenance(exc):
    tb = exc.__traceback__
    mod = None
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("conelp."):
            mod = name
        tb = tb.tb_next
    return mod or type(exc).__module__


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"conelp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        rep = build_report(cfg, RUNNERS[cfg.command](cfg))
        text = render_json(rep) if cfg.format == "json" else render_csv(rep)
    except Exception as exc:  # surfaced with the module it came from
        print(f"conelp {cfg.command}: {type(exc).__name__} in {_provenance(exc)}: {exc}", file=sys.stderr)
        return 3
    if cfg.out_path:
        with open(cfg.out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if rep["verdict"] == "PASS" else 1


if __name__ == "__main__":
    sys.exit(main())
