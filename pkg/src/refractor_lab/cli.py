"""Command line entry point.

Exit codes: 0 success, 1 verification failure (counterexample, failed
hypothesis, no convergence), 2 usage or configuration error.  Diagnostics go
to stderr; results go to files, each run also writing ``manifest.json``.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .analysis import (
    LEMMAS,
    estimate_holder_gradient,
    estimate_holder_map,
    holder_refinement_stability,
    measure_condition_check,
    run_lemma_suite,
    solved_example,
)
from .errors import HypothesisNotSatisfied, InfeasibleRadialBounds, NotConverged, RefractorError
from .hypotheses import build_example_scene, check_all
from .raytrace import irradiance_histogram
from .refractor_solver import DiscreteRefractor, SolverConfig, solve
from .scene import DiscretePoints, Scene, discretize_target, with_weights

log = logging.getLogger("refractor_lab")

SCHEMA_DIR = Path(__file__).resolve().parents[2] / "schemas"
VERSION = "0.1.0"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: str | None
    config_hash: str
    seed: int | None
    versions: dict
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)

    def to_dict(self):
        return {"command": self.command, "argv": self.argv, "config_path": self.config_path,
                "config_hash": self.config_hash, "seed": self.seed, "versions": self.versions,
                "wall_time_s": self.wall_time_s, "outputs": self.outputs}


def _versions():
    import scipy
    return {"refractor_lab": VERSION, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _validate(obj, schema_name):
    path = SCHEMA_DIR / f"{schema_name}.schema.json"
    if path.exists():
        try:
            jsonschema.validate(obj, io.read_json(path))
        except jsonschema.ValidationError as e:
            raise UsageError(f"{schema_name} does not match its schema: {e.message}") from e


def _load(path, schema_name):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {path}")
    try:
        d = io.read_json(p)
    except ValueError as e:
        raise UsageError(f"{path} is not valid JSON: {e}") from e
    _validate(d, schema_name)
    return d


def load_scene(path) -> Scene:
    try:
        return Scene.from_dict(_load(path, "scene"))
    except (KeyError, TypeError) as e:
        raise UsageError(f"bad scene file {path}: {e}") from e


def load_refractor(path) -> DiscreteRefractor:
    try:
        return DiscreteRefractor.from_dict(_load(path, "refractor"))
    except (KeyError, TypeError) as e:
        raise UsageError(f"bad refractor file {path}: {e}") from e


def resolve_threads(flag):
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("REFRACTOR_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise UsageError(f"REFRACTOR_LAB_THREADS must be an integer, got {env!r}") from e
    return os.cpu_count() or 1


class Run:
    """Collects outputs and writes the manifest next to them."""

    def __init__(self, args, argv):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        inputs = [getattr(args, k) for k in ("scene", "refractor") if getattr(args, k, None)]
        h = io.text_sha256(" ".join(argv) + "".join(io.file_sha256(p) for p in inputs if Path(p).exists()))
        self.manifest = RunManifest(args.command, list(argv), getattr(args, "scene", None), h,
                                    getattr(args, "seed", None), _versions())
        self.t0 = time.perf_counter()

    def path(self, name):
        return self.out_dir / name

    def json(self, name, obj):
        p = io.write_json(self.path(name), obj)
        self.manifest.outputs.append(str(p))
        return p

    def add(self, p):
        self.manifest.outputs.append(str(p))
        return p

    def close(self):
        self.manifest.wall_time_s = time.perf_counter() - self.t0
        io.write_json(self.path("manifest.json"), self.manifest)


# ------------------------------------------------------------- subcommands


def cmd_example_scene(args, run):
    scene = build_example_scene(args.kappa, args.c2, args.C, args.R_fraction, args.n, seed=args.seed)
    if args.targets:
        scene = discretize_target(scene, args.targets, args.layout)
    emit = Path(args.emit) if args.emit else run.path("scene.json")
    io.write_json(emit, scene)
    run.add(emit)
    log.info("scene written to %s", emit)
    return 0


def _design_scene(args):
    scene = load_scene(args.scene)
    if not isinstance(scene.target, DiscretePoints):
        if not args.targets:
            raise UsageError("the scene has a continuous target; pass --targets N")
        scene = discretize_target(scene, args.targets, args.layout)
    elif args.targets and args.targets != scene.target.size:
        scene = discretize_target(scene, args.targets, args.layout)
    if args.weights:
        w = [float(v) for v in args.weights.split(",")]
        if len(w) != scene.target.size:
            raise UsageError(f"{len(w)} weights for {scene.target.size} targets")
        scene = with_weights(scene, w)
    return scene


def cmd_design(args, run):
    scene = _design_scene(args)
    cfg = SolverConfig(tol_energy=args.tol, method=args.method, polish_tol=args.polish_tol,
                       max_outer_iterations=args.max_iterations)
    header = ["sweep", "max_rel_residual", "wall_time_s"]
    try:
        res = solve(scene, cfg)
    except NotConverged as e:
        # keep the residual history for diagnosis before reporting the failure
        run.add(io.write_csv(run.path("convergence.csv"), header, e.trace))
        raise
    u = res.refractor
    out = {**u.to_dict(), "residuals": res.residuals, "iterations": res.iterations, "energies": res.energies}
    run.json("refractor.json", out)
    run.json("design_scene.json", scene)
    run.add(io.write_mesh(run.path("refractor_mesh"), u, scene))
    run.add(io.write_csv(run.path("convergence.csv"), header, res.trace))
    log.info("converged: max relative residual %.3g after %d iterations", np.max(np.abs(res.residuals)),
             res.iterations)
    return 0


def cmd_trace(args, run):
    scene = load_scene(args.scene)
    u = load_refractor(args.refractor)
    if not isinstance(scene.target, DiscretePoints) or scene.target.size != u.size:
        raise UsageError("the scene must hold the refractor's discrete target")
    dump = [] if args.dump else None
    hist = irradiance_histogram(u, scene, args.rays, seed=args.seed, threads=args.threads, dump=dump)
    w = scene.target.weights / scene.target.weights.sum()
    rows = [(i, float(hist.fractions[i]), float(w[i]), float(hist.stderr[i])) for i in range(u.size)]
    run.add(io.write_csv(run.path("histogram.csv"),
                         ["target_index", "estimated_fraction", "target_weight_fraction", "stderr"], rows))
    z = np.abs(hist.fractions - w) / np.maximum(hist.stderr, 1e-300)
    report = {"num_rays": hist.num_rays, "seed": hist.seed, "assigned_fraction": hist.assigned_fraction,
              "boundary": hist.boundary, "missed": hist.missed, "tir": hist.tir, "fractions": hist.fractions,
              "stderr": hist.stderr, "target_fractions": w, "max_z": float(np.max(z))}
    run.json("trace_report.json", report)
    if args.dump:
        drows = []
        for x, res in dump:
            for k in range(len(x)):
                drows.append((*x[k], *res["X"][k], *res["direction"][k], int(res["assigned"][k]),
                              float(res["focus_distance"][k])))
        n = scene.n
        head = ([f"x{i}" for i in range(n)] + [f"X{i}" for i in range(n)] + [f"t{i}" for i in range(n)]
                + ["assigned", "focus_distance"])
        run.add(io.write_csv(args.dump, head, drows))
    return 0


def text_table(reports):
    lines = [f"{'suite':<6} {'kind':<12} {'samples':>8} {'viol':>5} {'constant':>14} {'drift':>8}  pass"]
    for r in reports:
        c = "-" if r.empirical_constant is None else f"{r.empirical_constant:.6g}"
        d = "-" if r.drift is None else f"{r.drift:.3%}"
        lines.append(f"{r.lemma_id:<6} {r.kind:<12} {r.samples_tested:>8} {r.violations:>5} {c:>14} {d:>8}  "
                     f"{'yes' if r.passes else 'NO'}")
    return "\n".join(lines) + "\n"


def cmd_verify_lemmas(args, run):
    scene = load_scene(args.scene)
    u = load_refractor(args.refractor) if args.refractor else None
    ids = LEMMAS if "all" in args.suite else args.suite
    for lid in ids:
        if lid not in LEMMAS:
            raise UsageError(f"unknown suite {lid!r}; choose from {', '.join(LEMMAS)} or all")
    reports = [run_lemma_suite(lid, scene, args.samples, args.seed, refractor=u) for lid in ids]
    run.json("lemma_report.json", {"seed": args.seed, "samples": args.samples,
                                   "suites": [r.to_dict() for r in reports],
                                   "passes": all(r.passes for r in reports)})
    table = text_table(reports)
    run.path("lemma_report.txt").write_text(table)
    run.add(run.path("lemma_report.txt"))
    sys.stderr.write(table)
    return 0 if all(r.passes for r in reports) else 1


def cmd_check_hypotheses(args, run):
    scene = load_scene(args.scene)
    rep = check_all(scene, args.samples, args.seed, args.mu, args.hd_samples)
    run.json("hypothesis_report.json", rep)
    for k, v in rep.parts.items():
        log.info("%-8s %s", k, "pass" if v.passes else "FAIL")
    return 0 if rep.passes else 1


def cmd_estimate_holder(args, run):
    scene = load_scene(args.scene)
    kinds = ("map", "gradient") if args.kind == "both" else (args.kind,)
    kw = dict(scales=args.scales, budget=args.budget, seed=args.seed)
    out, ok = {}, True
    if args.refractor:
        u = load_refractor(args.refractor)
        if not isinstance(scene.target, DiscretePoints):
            raise UsageError("a refractor needs the scene holding its discrete target")
        sols = None
    else:
        if not args.targets:
            raise UsageError("pass --refractor or --targets N")
        sols = [solved_example(scene, args.targets, args.tol)]
        if args.refine_factor > 1:
            sols.append(solved_example(scene, args.refine_factor * args.targets, args.tol))
        scene, u = sols[-1]
    mc = measure_condition_check(u, scene, seed=args.seed)
    out["measure_condition"] = mc.to_dict()
    ok &= mc.passes
    for kind in kinds:
        if sols is not None and len(sols) == 2:
            rep, _ = holder_refinement_stability(None, None, kind=kind, solutions=sols, **kw)
        else:
            est = estimate_holder_map if kind == "map" else estimate_holder_gradient
            rep = est(u, scene, **kw)
        out[kind] = rep.to_dict()
        ok &= rep.passes
        run.add(io.write_csv(run.path(f"holder_{kind}.csv"), ["scale", "modulus", "ratio"], rep.rows()))
    out["passes"] = bool(ok)
    run.json("holder_report.json", out)
    return 0 if ok else 1


def cmd_export(args, run):
    if not (args.scene or args.refractor):
        raise UsageError("pass --scene and/or --refractor")
    scene = load_scene(args.scene) if args.scene else None
    u = load_refractor(args.refractor) if args.refractor else None
    if scene is not None:
        run.json("scene.json", scene)
    if u is not None:
        run.json("refractor.json", u)
        if scene is not None:
            run.add(io.write_mesh(run.path("refractor_mesh"), u, scene))
    return 0


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="refractor-lab", description="Near-field refractor design and verification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: REFRACTOR_LAB_THREADS or all cores)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("example-scene", help="emit the disk-target example scene")
    s.add_argument("--kappa", type=float, default=0.5)
    s.add_argument("--c2", type=float, default=2.0)
    s.add_argument("--C", type=float, default=None, help="target distance constant (default: smallest valid)")
    s.add_argument("--R-fraction", dest="R_fraction", type=float, default=1.0)
    s.add_argument("--n", type=int, default=3, choices=(2, 3))
    s.add_argument("--targets", type=int, default=0, help="discretize the disk into N points")
    s.add_argument("--layout", default="auto", choices=("auto", "intervals", "sunflower", "ring"))
    s.add_argument("--emit", default=None)
    common(s)

    s = sub.add_parser("design", help="solve for a refractor")
    s.add_argument("--scene", required=True)
    s.add_argument("--targets", type=int, default=0)
    s.add_argument("--layout", default="auto", choices=("auto", "intervals", "sunflower", "ring"))
    s.add_argument("--weights", default=None, help="comma separated target weights (normalised)")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--method", default="newton", choices=("sweep", "newton", "hybrid"))
    s.add_argument("--polish-tol", type=float, default=None)
    s.add_argument("--max-iterations", type=int, default=200)
    common(s, seed=False)

    s = sub.add_parser("trace", help="Monte Carlo irradiance histogram")
    s.add_argument("--scene", required=True)
    s.add_argument("--refractor", required=True)
    s.add_argument("--rays", type=int, default=1_000_000)
    s.add_argument("--dump", default=None, help="per-ray CSV")
    common(s)

    s = sub.add_parser("verify-lemmas", help="run lemma verification suites")
    s.add_argument("--scene", required=True)
    s.add_argument("--suite", nargs="+", default=["all"])
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--refractor", default=None)
    common(s)

    s = sub.add_parser("check-hypotheses", help="check the structural hypotheses of a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--hd-samples", type=int, default=200)
    common(s)

    s = sub.add_parser("estimate-holder", help="Holder diagnostics and measure condition")
    s.add_argument("--scene", required=True)
    s.add_argument("--refractor", default=None)
    s.add_argument("--targets", type=int, default=0, help="solve with N and refine-factor x N targets")
    s.add_argument("--refine-factor", type=int, default=4)
    s.add_argument("--tol", type=float, default=None, help="solver tolerance (default 1e-3 for n=2, 1e-2 for n=3)")
    s.add_argument("--kind", default="both", choices=("map", "gradient", "both"))
    s.add_argument("--scales", type=int, default=6)
    s.add_argument("--budget", type=int, default=2000)
    common(s)

    s = sub.add_parser("export", help="re-emit scene / refractor JSON and the surface mesh")
    s.add_argument("--scene", default=None)
    s.add_argument("--refractor", default=None)
    common(s, seed=False)
    return p


COMMANDS = {"example-scene": cmd_example_scene, "design": cmd_design, "trace": cmd_trace,
            "verify-lemmas": cmd_verify_lemmas, "check-hypotheses": cmd_check_hypotheses,
            "estimate-holder": cmd_estimate_holder, "export": cmd_export}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        run = Run(args, argv)
    except (UsageError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    try:
        code = COMMANDS[args.command](args, run)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        code = 2
    except (NotConverged, InfeasibleRadialBounds, HypothesisNotSatisfied) as e:
        sys.stderr.write(f"failed: {type(e).__name__}: {e}\n")
        code = 1
    except (RefractorError, ValueError) as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        code = 2
    run.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
