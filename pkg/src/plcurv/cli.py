"""Command-line front door: curvature reports, flows, solves, Delaunay tools.

Every run is described by a RunManifest; ``plcurv replay manifest.json``
re-executes the recorded command through the same code path, so outputs
are byte-identical.  All floats are printed with 17 significant digits
and files are written atomically (temp file + rename).

Exit codes: 0 success/converged, 1 Delaunay violations found (--check),
2 parse error, 3 validation error, 4 flow hit max-steps, 5 runtime
failure, 6 unsupported curvature target.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import flows, geometry, mesh, solver
from .errors import (
    DegenerateFace,
    Disconnected,
    NonConvexQuad,
    NonManifold,
    NonPositiveLength,
    OrientationConflict,
    ParseError,
    PLCurvError,
    UnsupportedTarget,
)

log = logging.getLogger(__name__)

_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}

# Structural and metric problems found after a file parsed cleanly.
_VALIDATION_ERRORS = (NonManifold, Disconnected, OrientationConflict,
                      NonPositiveLength, DegenerateFace, NonConvexQuad,
                      ValueError)


def _setup_logging() -> None:
    name = os.environ.get("PLCURV_LOG", "").strip().lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# --- serialization helpers ------------------------------------------------

def _json_text(obj, _indent: int = 0) -> str:
    """json.dumps lookalike that prints floats with 17 significant digits.

    The stdlib encoder uses repr() for floats; both round-trip, but the
    fixed format keeps every emitted digit count stable for replay
    byte-comparisons.
    """
    pad = "  " * _indent
    inner = "  " * (_indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [f"{inner}{json.dumps(str(k))}: {_json_text(v, _indent + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [inner + _json_text(v, _indent + 1) for v in obj]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite float {x!r}")
        return format(x, ".17g")
    return json.dumps(obj)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".plcurv-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# --- run manifests ---------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Everything needed to repeat a run: command, input, knobs, outputs."""

    command: str
    input_path: str
    input_format: str
    alpha: float
    seed: int
    config: dict
    outputs: dict

    def to_doc(self) -> dict:
        return {"command": self.command,
                "input": {"path": self.input_path,
                          "format": self.input_format},
                "alpha": self.alpha,
                "seed": self.seed,
                "config": self.config,
                "outputs": self.outputs}

    @classmethod
    def from_doc(cls, doc: dict) -> "RunManifest":
        try:
            return cls(command=str(doc["command"]),
                       input_path=str(doc["input"]["path"]),
                       input_format=str(doc["input"]["format"]),
                       alpha=float(doc["alpha"]),
                       seed=int(doc["seed"]),
                       config=dict(doc["config"]),
                       outputs=dict(doc["outputs"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed manifest: {exc}") from exc


def _resolve_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    lower = path.lower()
    for suffix, fmt in ((".off", "off"), (".obj", "obj"), (".json", "lengths")):
        if lower.endswith(suffix):
            return fmt
    raise ParseError(f"cannot infer format of {path!r}; pass --format")


def _load_input(man: RunManifest):
    try:
        return mesh.load_mesh(man.input_path, fmt=man.input_format)
    except OSError as exc:
        raise ParseError(f"cannot read {man.input_path!r}: {exc}") from exc


def _read_json_file(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path!r}: {exc}") from exc


def _read_vector_file(path: str, n: int, key: str) -> np.ndarray:
    """Load n reals from a JSON file: a list, a scalar, or {key: list}."""
    doc = _read_json_file(path)
    if isinstance(doc, dict):
        if key not in doc:
            raise ParseError(f"{path!r} has no {key!r} entry")
        doc = doc[key]
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        return np.full(n, float(doc))
    try:
        vec = np.asarray(doc, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path!r} is not a list of numbers: {exc}") from exc
    if vec.shape != (n,):
        raise ValueError(
            f"{path!r} has {vec.shape} entries, mesh has {n} vertices")
    return vec


def _edge_records(tri, edges) -> list[dict]:
    return [{"edge": int(e), "vertices": list(tri.edge_vertices(e))}
            for e in edges]


# --- command bodies (shared by direct invocation and replay) ---------------

def _execute(man: RunManifest) -> int:
    runner = {"curvature": _exec_curvature, "flow": _exec_flow,
              "solve": _exec_solve, "delaunay": _exec_delaunay}.get(man.command)
    if runner is None:
        raise ParseError(f"manifest names unknown command {man.command!r}")
    return runner(man)


def _exec_curvature(man: RunManifest) -> int:
    tri, lengths = _load_input(man)
    n = tri.vertex_count
    u = np.zeros(n)
    if man.config.get("u_file"):
        u = _read_vector_file(man.config["u_file"], n, "u")
    scaled = geometry.scale_metric(tri, lengths, u) if np.any(u) else lengths
    K = geometry.curvature(tri, scaled)
    rep = geometry.alpha_curvature(K, u, man.alpha, chi=tri.chi)
    doc = {
        "alpha": man.alpha,
        "chi": tri.chi,
        "vertices": n,
        "K": [float(x) for x in rep.K],
        "R_alpha": [float(x) for x in rep.R_alpha],
        "R_av": rep.R_av,
        "max_dev": rep.max_dev,
        "gauss_bonnet_residual": rep.sum_K - 2.0 * math.pi * tri.chi,
        "delaunay_violations": _edge_records(
            tri, geometry.is_delaunay_all(tri, scaled)),
    }
    print(_json_text(doc))
    return 0


def _exec_flow(man: RunManifest) -> int:
    tri, lengths = _load_input(man)
    cfg = flows.FlowConfig(kind=man.config["kind"],
                           dt=float(man.config["dt"]),
                           tol=float(man.config["tol"]),
                           max_steps=int(man.config["max_steps"]),
                           surgery=bool(man.config["surgery"]),
                           integrator=man.config.get("integrator", "euler"))
    state, history = flows.run_flow(tri, lengths,
                                    np.zeros(tri.vertex_count),
                                    man.alpha, cfg)
    if man.outputs.get("history"):
        _atomic_write(man.outputs["history"], history.to_csv())
    if man.outputs.get("state"):
        doc = mesh.lengths_json_doc(state.tri, state.base)
        doc["u"] = [float(x) for x in state.u]
        doc["alpha"] = man.alpha
        doc["t"] = state.t
        _atomic_write(man.outputs["state"], _json_text(doc) + "\n")
    last = history.rows[-1]
    print(_json_text({
        "status": history.status,
        "steps": state.step_count,
        "t": state.t,
        "max_dev": last.max_dev,
        "conserved": last.conserved,
        "flips": len(state.flips),
        "unsupported_regime": history.unsupported_regime,
    }))
    return 0 if history.status == "converged" else 4


def _exec_solve(man: RunManifest) -> int:
    tri, lengths = _load_input(man)
    n = tri.vertex_count
    spec = man.config.get("target", "const")
    if spec == "const":
        target = solver.Target.constant()
    else:
        target = solver.Target.prescribed(
            _read_vector_file(spec, n, "target"))
    tol = float(man.config.get("tol", 1e-10))
    max_iter = int(man.config.get("max_iter", 100))
    starts = int(man.config.get("starts", 1))

    res = solver.newton_solve(tri, lengths, np.zeros(n), man.alpha, target,
                              tol=tol, max_iter=max_iter)
    doc = {
        "alpha": man.alpha,
        "target": spec,
        "kind": res.kind,
        "converged": res.converged,
        "iterations": res.iterations,
        "grad_inf": res.trace[-1].grad_inf,
        "flips": res.flips,
        "u": [float(x) for x in res.u],
        "K": [float(x) for x in res.curvature.K],
        "R_alpha": [float(x) for x in res.curvature.R_alpha],
        "R_av": res.curvature.R_av,
        "max_dev": res.curvature.max_dev,
    }
    if starts > 1:
        rig = solver.rigidity_check(tri, lengths, man.alpha, target,
                                    trials=starts, tol=tol, seed=man.seed)
        doc["starts"] = starts
        doc["seed"] = man.seed
        doc["spread"] = rig.spread
        doc["rigidity_pass"] = rig.passed
        log.info("%s", rig)
    if man.outputs.get("report"):
        _atomic_write(man.outputs["report"], _json_text(doc) + "\n")
    if man.outputs.get("trace"):
        _atomic_write(man.outputs["trace"], solver.trace_csv(res.trace))
    print(_json_text(doc))
    return 0


def _exec_delaunay(man: RunManifest) -> int:
    tri, lengths = _load_input(man)
    if man.config["mode"] == "check":
        bad = geometry.is_delaunay_all(tri, lengths)
        print(_json_text({"violations": _edge_records(tri, bad),
                          "count": len(bad)}))
        return 1 if bad else 0
    tri2, lengths2, infos = geometry.make_delaunay(tri, lengths)
    out = man.outputs["lengths"]
    _atomic_write(out, _json_text(mesh.lengths_json_doc(tri2, lengths2)) + "\n")
    print(_json_text({"flips": len(infos), "out": out}))
    return 0


# --- argument parsing -------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", help="mesh file (OFF, OBJ or lengths JSON)")
    p.add_argument("--format", choices=("off", "obj", "lengths"),
                   help="input format (default: inferred from extension)")
    p.add_argument("--manifest", metavar="PATH",
                   help="also write a replayable run manifest")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for randomized starts (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plcurv",
        description="Combinatorial curvature tools for PL surfaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curvature",
                       help="per-vertex curvature report (JSON to stdout)")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--u-file", dest="u_file", metavar="PATH",
                   help="JSON list of per-vertex log conformal factors")
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("flow", help="run a curvature flow from u = 0")
    _add_common(p)
    p.add_argument("--flow", choices=("yamabe", "calabi"), default="yamabe")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-steps", type=int, default=20000)
    p.add_argument("--surgery", choices=("on", "off"), default="on")
    p.add_argument("--integrator", choices=("euler", "rk4"), default="euler")
    p.add_argument("--out-history", metavar="PATH", help="history CSV")
    p.add_argument("--out-state", metavar="PATH", help="final state JSON")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("solve",
                       help="Newton solve for a constant or prescribed target")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--target", default="const", metavar="const|PATH",
                   help="'const' or a JSON file with per-vertex values")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--starts", type=int, default=1,
                   help="extra random starts for a rigidity comparison")
    p.add_argument("--out", metavar="PATH", help="report JSON")
    p.add_argument("--out-trace", metavar="PATH", help="iteration trace CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("delaunay", help="check or restore the Delaunay property")
    _add_common(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--check", action="store_true",
                      help="list violating edges; exit 1 if any")
    mode.add_argument("--fix", action="store_true",
                      help="flip to Delaunay and write the result")
    p.add_argument("--out", metavar="PATH", help="lengths JSON (with --fix)")
    p.set_defaults(func=cmd_delaunay)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest", help="path to a run manifest JSON")
    p.set_defaults(func=cmd_replay)

    return parser


def _launch(args: argparse.Namespace, man: RunManifest) -> int:
    if getattr(args, "manifest", None):
        _atomic_write(args.manifest, _json_text(man.to_doc()) + "\n")
    return _execute(man)


def cmd_curvature(args: argparse.Namespace) -> int:
    man = RunManifest(command="curvature", input_path=args.input,
                      input_format=_resolve_format(args.input, args.format),
                      alpha=args.alpha, seed=args.seed,
                      config={"u_file": args.u_file}, outputs={})
    return _launch(args, man)


def cmd_flow(args: argparse.Namespace) -> int:
    man = RunManifest(command="flow", input_path=args.input,
                      input_format=_resolve_format(args.input, args.format),
                      alpha=args.alpha, seed=args.seed,
                      config={"kind": args.flow, "dt": args.dt,
                              "tol": args.tol, "max_steps": args.max_steps,
                              "surgery": args.surgery == "on",
                              "integrator": args.integrator},
                      outputs={"history": args.out_history,
                               "state": args.out_state})
    return _launch(args, man)


def cmd_solve(args: argparse.Namespace) -> int:
    man = RunManifest(command="solve", input_path=args.input,
                      input_format=_resolve_format(args.input, args.format),
                      alpha=args.alpha, seed=args.seed,
                      config={"target": args.target, "tol": args.tol,
                              "max_iter": args.max_iter,
                              "starts": args.starts},
                      outputs={"report": args.out, "trace": args.out_trace})
    return _launch(args, man)


def cmd_delaunay(args: argparse.Namespace) -> int:
    if args.fix and not args.out:
        raise ParseError("--fix requires --out")
    man = RunManifest(command="delaunay", input_path=args.input,
                      input_format=_resolve_format(args.input, args.format),
                      alpha=0.0, seed=args.seed,
                      config={"mode": "fix" if args.fix else "check"},
                      outputs={"lengths": args.out})
    return _launch(args, man)


def cmd_replay(args: argparse.Namespace) -> int:
    doc = _read_json_file(args.manifest)
    if not isinstance(doc, dict):
        raise ParseError(f"{args.manifest!r} does not hold a manifest object")
    return _execute(RunManifest.from_doc(doc))


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        log.error("parse error: %s", exc)
        return 2
    except UnsupportedTarget as exc:
        log.error("unsupported target: %s", exc)
        return 6
    except _VALIDATION_ERRORS as exc:
        log.error("validation error: %s", exc)
        return 3
    except PLCurvError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 5
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 5


if __name__ == "__main__":
    sys.exit(main())
