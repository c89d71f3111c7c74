"""Command-line front end: ``sensoropt solve | design | verify``.

Exit codes:
    0  success
    1  verify: at least one check failed
    2  malformed JSON, schema violation or bad arguments
    3  solver failure (stiffness not SPD, linear solve failed)
    4  exhaustive search too large
    5  singular Fisher/Gram matrix and no regularization
    6  other numerical failure (non-differentiable design, no descent, CG not converged)
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from .design import CRITERIA, d_objective, d_objective_and_gradient, fd_design_gradient
from .errors import (
    CombinatorialBlowup,
    NonSPDError,
    SensorOptError,
    SingularFisher,
    SolveFailure,
)
from .model import LoadCase, Mesh1D, ParameterVector, StructuralModel, element_strain
from .placement import (
    CandidatePool,
    DetectabilityConfig,
    SubsetScorer,
    apply_positions,
    average_fisher_scores,
    continuous_descent,
    count_score,
    detectability_threshold,
    exhaustive_select,
    greedy_select,
    tied_best,
    truncated_score,
)
from .sensitivity import assemble_jacobian
from .sensors import SensorConfig, SensorSpec, position_params
from .verification import run_checks

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_SOLVER, EXIT_BLOWUP, EXIT_SINGULAR, EXIT_NUMERIC = range(7)

_pos = {"type": "number", "exclusiveMinimum": 0}
_num_array = {"type": "array", "items": {"type": "number"}}

SENSOR_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["displacement", "strain"]},
        "x": {"type": "number"},
        "element": {"type": "integer", "minimum": 1},
        "weight": _pos,
        "sigma": _pos,
    },
    "required": ["kind"],
    "additionalProperties": False,
    "oneOf": [
        {"properties": {"kind": {"const": "displacement"}}, "required": ["x"], "not": {"required": ["element"]}},
        {"properties": {"kind": {"const": "strain"}}, "required": ["element"], "not": {"required": ["x"]}},
    ],
}

_param_values = {
    "alpha": _num_array,
    "beta": _pos,
    "f_dT": _num_array,
}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "load_cases"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nodes": {**_num_array, "minItems": 2},
                "N_e": {"type": "integer", "minimum": 1},
                "ell": _pos,
                "E": _pos,
                "A": _pos,
                "alpha_min": _pos,
                "fixed_dofs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
            "oneOf": [{"required": ["nodes"]}, {"required": ["N_e"]}],
        },
        "parameters": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **_param_values,
                "f_dT_basis": {"type": "array", "items": _num_array},
                "invert": {
                    "type": "array",
                    "items": {"enum": ["alpha", "beta", "f_dT"]},
                    "uniqueItems": True,
                    "minItems": 1,
                },
            },
        },
        "load_cases": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"id": {"type": ["integer", "string"]}, "forces": _num_array, "tip_load": {"type": "number"}},
                "oneOf": [{"required": ["forces"]}, {"required": ["tip_load"]}],
            },
        },
        "sensors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "candidates": {"type": "array", "items": SENSOR_SCHEMA},
                "fixed": {"type": "array", "items": SENSOR_SCHEMA},
                "initial": {"type": "array", "items": SENSOR_SCHEMA},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"default_sigma": _pos},
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "criterion": {"enum": list(CRITERIA)},
                "eps": {"type": "number", "minimum": 0},
                "m": {"type": "integer", "minimum": 1},
                "convention": {"enum": ["auto", "fisher", "gram"]},
                "scenarios": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {**_param_values, "weight": _pos},
                        "required": ["weight"],
                    },
                },
                "detectability": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"delta_y": {"type": "number", "minimum": 0}, "delta_alpha_min": _pos},
                    "required": ["delta_y", "delta_alpha_min"],
                },
                "steps": {"type": "integer", "minimum": 0},
                "tol": _pos,
            },
        },
    },
}


class InputError(Exception):
    pass


# ---------------------------------------------------------------- problem loading

class Problem:
    """Validated problem file turned into model, reference parameters and sensor lists."""

    def __init__(self, doc: dict, raw: bytes):
        self.doc = doc
        self.sha256 = hashlib.sha256(raw).hexdigest()
        md = doc["model"]
        if "nodes" in md:
            coords = np.asarray(md["nodes"], dtype=float)
        else:
            coords = np.arange(md["N_e"] + 1) * float(md.get("ell", 1.0))
        try:
            self.mesh = Mesh1D(coords, tuple(md.get("fixed_dofs", [0])), md.get("A", 1.0))
        except ValueError as exc:
            raise InputError(f"$.model: {exc}") from None
        n_nodes = self.mesh.n_nodes
        cases = []
        for k, lc in enumerate(doc["load_cases"]):
            lid = lc.get("id", k)
            if "forces" in lc:
                if len(lc["forces"]) != n_nodes:
                    raise InputError(f"$.load_cases[{k}].forces: expected {n_nodes} entries")
                cases.append(LoadCase(lc["forces"], lid))
            else:
                cases.append(LoadCase.tip_load(self.mesh, lc["tip_load"], lid))
        pd = doc.get("parameters", {})
        basis = pd.get("f_dT_basis", [])
        if any(len(b) != n_nodes for b in basis):
            raise InputError(f"$.parameters.f_dT_basis: every basis vector needs {n_nodes} entries")
        self.model = StructuralModel(self.mesh, tuple(cases), np.asarray(basis, dtype=float))
        self.alpha_min = md.get("alpha_min", 1e-3)
        self.E = md.get("E", 1.0)
        self.active = tuple(pd.get("invert", ["alpha"]))
        self.q0 = self.parameters(pd, "$.parameters")
        self.default_sigma = doc.get("noise", {}).get("default_sigma", 1.0)
        sd = doc.get("sensors", {})
        self.candidates = self._sensors(sd.get("candidates", []), "candidates")
        self.fixed = self._sensors(sd.get("fixed", []), "fixed")
        self.initial = self._sensors(sd.get("initial", []), "initial")
        self.design = doc.get("design", {})

    def parameters(self, d: dict, path: str, ref: ParameterVector | None = None) -> ParameterVector:
        n_e = self.mesh.n_elements
        n_basis = self.model.thermal_basis.shape[0]
        alpha = d.get("alpha", ref.alpha if ref is not None else np.ones(n_e))
        f_dT = d.get("f_dT", ref.f_dT if ref is not None else np.zeros(n_basis))
        beta = d.get("beta", ref.beta if ref is not None else self.E)
        if len(alpha) != n_e:
            raise InputError(f"{path}.alpha: expected {n_e} entries")
        if len(f_dT) != n_basis:
            raise InputError(f"{path}.f_dT: expected {n_basis} entries (one per basis vector)")
        try:
            return ParameterVector(alpha, beta, f_dT, self.active, self.alpha_min)
        except (ValueError, KeyError) as exc:
            raise InputError(f"{path}: {exc}") from None

    def _sensors(self, items, key):
        out = []
        for k, d in enumerate(items):
            try:
                s = SensorSpec.from_json(d, self.default_sigma)
                SensorConfig.broadcast([s]).validate(self.mesh)
            except (ValueError, SensorOptError) as exc:
                raise InputError(f"$.sensors.{key}[{k}]: {exc}") from None
            out.append(s)
        return out

    def config(self, sensors) -> SensorConfig:
        return SensorConfig.broadcast(sensors, self.model.n_cases)

    def scenarios(self):
        sc = self.design.get("scenarios")
        if not sc:
            return [(self.q0, 1.0)]
        return [(self.parameters(d, f"$.design.scenarios[{k}]", self.q0), d["weight"]) for k, d in enumerate(sc)]


def _json_path(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_problem(path: str) -> Problem:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text ({exc})") from None
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise InputError(f"{path}: {_json_path(e.absolute_path)}: {e.message}")
    return Problem(doc, raw)


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return json.dumps(str(x))
        return format(x, ".17g")
    return json.dumps(x)


def dumps(obj, indent: int = 0) -> str:
    """Deterministic JSON with floats written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_fmt(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in seq) + "\n" + end + "]"
    return _fmt(obj)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


def _emit(result: dict, out: str | None, tables: dict):
    text = dumps(result) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    out_path = Path(out)
    out_path.write_text(text)
    for suffix, (header, rows) in tables.items():
        _write_csv(out_path.with_name(out_path.stem + suffix + ".csv"), header, rows)


def _sensor_list(sensors):
    return [s.to_json() for s in sensors]


# ---------------------------------------------------------------- commands

def cmd_solve(problem: Problem, args) -> tuple:
    model, q0 = problem.model, problem.q0
    states = model.states(q0)
    cases, rows = [], []
    for lc, u in zip(model.load_cases, states):
        cases.append({"id": lc.id, "u": u, "strain": element_strain(u, model.mesh)})
    for j, x in enumerate(model.mesh.node_coords):
        rows.append([j, float(x)] + [float(u[j]) for u in states])
    header = ["node", "x"] + [f"u_{lc.id}" for lc in model.load_cases]
    result = {"command": "solve", "problem_sha256": problem.sha256, "load_cases": cases}
    return result, {"": (header, rows)}


def _candidate_pool(problem: Problem):
    sensors = problem.fixed + [s for s in problem.candidates if s not in problem.fixed]
    if not sensors:
        raise InputError("$.sensors.candidates: no candidate sensors given")
    return CandidatePool(tuple(sensors), tuple(range(len(problem.fixed))))


def _working_config(problem: Problem) -> SensorConfig:
    sensors = problem.initial or problem.candidates
    if not sensors:
        raise InputError("$.sensors: 'initial' or 'candidates' required for this mode")
    return problem.config(sensors)


def _mode_score(problem, args, result):
    pool = _candidate_pool(problem)
    cfg = problem.config(pool.candidates)
    bundle = assemble_jacobian(cfg, problem.q0, problem.model)
    # rows of one candidate across all load cases
    rows = np.stack(bundle.blocks, axis=1)
    sig = np.array([s.sigma for s in pool.candidates])
    F_elem = np.sum(rows**2, axis=1) / sig[:, None] ** 2
    avg = average_fisher_scores(np.sqrt(F_elem))
    det = problem.design.get("detectability")
    F_min = None
    if det is not None:
        F_min = detectability_threshold(
            DetectabilityConfig(det["delta_y"], det["delta_alpha_min"], problem.default_sigma))
    table = []
    for j, s in enumerate(pool.candidates):
        entry = {"index": j, "sensor": s.to_json(), "avg_fisher": avg[j]}
        if F_min is not None:
            entry["truncated"] = truncated_score(F_elem[j], F_min)
            entry["count"] = count_score(F_elem[j], F_min)
        table.append(entry)
    ties = tied_best(avg)
    result.update({"parameters": problem.q0.labels(), "candidates": table,
                   "best_avg_fisher": ties[0], "ties_avg_fisher": ties})
    if F_min is not None:
        result["F_min"] = F_min
        result["best_truncated"] = tied_best([t["truncated"] for t in table])[0]
        result["best_count"] = tied_best([t["count"] for t in table])[0]
    header = ["index", "sensor", "avg_fisher"] + (["truncated", "count"] if F_min is not None else [])
    csv_rows = [[t["index"], json.dumps(t["sensor"], sort_keys=True), t["avg_fisher"]]
                + ([t["truncated"], t["count"]] if F_min is not None else []) for t in table]
    return {"": (header, csv_rows)}


def _mode_place(problem, args, result, greedy: bool):
    pool = _candidate_pool(problem)
    m = args.m if args.m is not None else problem.design.get("m")
    if m is None:
        raise InputError("$.design.m: sensor budget required (or pass --m)")
    if m > len(pool):
        raise InputError(f"$.design.m: budget {m} exceeds pool size {len(pool)}")
    criterion = args.criterion or problem.design.get("criterion", "D")
    eps = args.eps if args.eps is not None else problem.design.get("eps", 0.0)
    convention = problem.design.get("convention", "auto")
    scenarios = problem.scenarios()
    scorer = SubsetScorer(pool, problem.model, scenarios, criterion, eps, convention)

    def describe(S, value):
        d = {"indices": list(S), "sensors": _sensor_list(pool.candidates[i] for i in S), "score": value}
        if criterion == "D" and value > -math.inf:
            d["determinant"] = scorer.determinant(S)
        return d

    result.update({"criterion": criterion, "eps": eps, "m": m, "convention": scorer.mode(m),
                   "n_scenarios": len(scenarios)})
    if greedy:
        res = greedy_select(pool, m, scorer)
        if res.value == -math.inf and eps == 0:
            raise SingularFisher("every configuration of this size is singular; set eps > 0")
        result["chain"] = [describe(S, v) for S, v in zip(res.chain, res.values)]
        result["selected"] = describe(res.best, res.value)
        rows = [[k + 1, " ".join(map(str, S)), v] for k, (S, v) in enumerate(zip(res.chain, res.values))]
        return {"": (["step", "indices", "score"], rows)}
    res = exhaustive_select(pool, m, scorer)
    if res.value == -math.inf and eps == 0:
        raise SingularFisher("every configuration of this size is singular; set eps > 0")
    result["selected"] = describe(res.best, res.value)
    result["co_optimal"] = [describe(S, res.value) for S in res.co_optimal]
    result["n_evaluated"] = res.n_evaluated
    return {}


def _mode_refine(problem, args, result):
    cfg = _working_config(problem)
    eps = args.eps if args.eps is not None else problem.design.get("eps", 0.0)
    res = continuous_descent(problem.model, problem.q0, cfg, eps=eps,
                             convention=problem.design.get("convention", "auto"),
                             steps=problem.design.get("steps", 200), tol=problem.design.get("tol", 1e-8))
    result.update({
        "eps": eps,
        "converged": res.converged,
        "reason": res.reason,
        "iterations": res.iterations,
        "initial_phi_D": res.trajectory[0][1],
        "final_phi_D": res.trajectory[-1][1],
        "sensors": _sensor_list(res.config.cases[0]),
    })
    rows = [[k, v] + [float(p) for p in x] for k, (x, v) in enumerate(res.trajectory)]
    header = ["step", "phi_D"] + [f"x_{t.case}_{t.index}" for t in res.thetas]
    return {"_trajectory": (header, rows)}


def _mode_gradcheck(problem, args, result):
    cfg = _working_config(problem)
    thetas = position_params(cfg)
    if not thetas:
        raise InputError("$.sensors: gradcheck needs at least one displacement sensor")
    eps = args.eps if args.eps is not None else problem.design.get("eps", 0.0)
    conv = problem.design.get("convention", "auto")
    h = args.fd_step
    phi, g = d_objective_and_gradient(problem.model, problem.q0, cfg, thetas, eps=eps, convention=conv)
    fd = fd_design_gradient(problem.model, problem.q0, cfg, thetas, h, eps=eps, convention=conv)
    scale = max(np.max(np.abs(g)), np.finfo(float).tiny)
    rel = np.abs(g - fd) / np.maximum(np.abs(g), 1e-3 * scale)
    # directional check along a seeded random direction of all coordinates
    rng = np.random.default_rng(args.seed)
    d = rng.standard_normal(len(thetas))
    d /= np.linalg.norm(d)
    x = np.array([cfg.cases[t.case][t.index].x for t in thetas])
    fp = d_objective(problem.model, problem.q0, apply_positions(cfg, thetas, x + h * d), eps=eps, convention=conv)
    fm = d_objective(problem.model, problem.q0, apply_positions(cfg, thetas, x - h * d), eps=eps, convention=conv)
    dir_fd = (fp - fm) / (2 * h)
    dir_an = float(g @ d)
    result.update({
        "phi_D": phi,
        "fd_step": h,
        "seed": args.seed,
        "table": [{"theta": f"x_{t.case}_{t.index}", "analytic": g[k], "fd": fd[k], "rel_error": rel[k]}
                  for k, t in enumerate(thetas)],
        "max_rel_error": float(np.max(rel)),
        "directional": {"analytic": dir_an, "fd": dir_fd,
                        "rel_error": abs(dir_an - dir_fd) / max(abs(dir_an), 1e-3 * scale)},
    })
    rows = [[f"x_{t.case}_{t.index}", g[k], fd[k], rel[k]] for k, t in enumerate(thetas)]
    return {"": (["theta", "analytic", "fd", "rel_error"], rows)}


MODES = ("score", "place-exhaustive", "place-greedy", "refine", "gradcheck")


def cmd_design(problem: Problem, args) -> tuple:
    result = {"command": "design", "mode": args.mode, "problem_sha256": problem.sha256}
    if args.mode == "score":
        tables = _mode_score(problem, args, result)
    elif args.mode == "place-exhaustive":
        tables = _mode_place(problem, args, result, greedy=False)
    elif args.mode == "place-greedy":
        tables = _mode_place(problem, args, result, greedy=True)
    elif args.mode == "refine":
        tables = _mode_refine(problem, args, result)
    else:
        tables = _mode_gradcheck(problem, args, result)
    return result, tables


def cmd_verify(args, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    checks = run_checks(seed=args.seed, n_max=args.n_max, c_perturbation=args.inject_c_error)
    width = max(len(c.name) for c in checks)
    for c in checks:
        stream.write(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}\n")
    ok = all(c.passed for c in checks)
    stream.write(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed\n")
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sensoropt", description=__doc__.split("\n")[0],
                                epilog=__doc__.split("\n", 1)[1], formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", required=True, help="problem JSON file")
        sp.add_argument("--out", default=None, help="result JSON path (CSV tables are written next to it)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--timing", action="store_true", help="add wall-clock timing to the result")

    sp = sub.add_parser("solve", help="solve the state equations")
    common(sp)
    sp = sub.add_parser("design", help="score, place, refine or gradient-check sensors")
    common(sp)
    sp.add_argument("--mode", choices=MODES, required=True)
    sp.add_argument("--m", type=int, default=None, help="sensor budget")
    sp.add_argument("--criterion", choices=CRITERIA, default=None)
    sp.add_argument("--eps", type=float, default=None, help="Fisher regularization")
    sp.add_argument("--fd-step", type=float, default=1e-5)
    sp = sub.add_parser("verify", help="cross-check the FE pipeline against the closed-form bar")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-max", type=int, default=12)
    sp.add_argument("--inject-c-error", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "verify":
        return cmd_verify(args)
    try:
        if getattr(args, "eps", None) is not None and args.eps < 0:
            raise InputError("--eps must be non-negative")
        if getattr(args, "m", None) is not None and args.m < 1:
            raise InputError("--m must be positive")
        t0 = time.perf_counter()
        problem = load_problem(args.problem)
        if args.command == "solve":
            result, tables = cmd_solve(problem, args)
        else:
            result, tables = cmd_design(problem, args)
        if args.timing:
            result["timing_s"] = time.perf_counter() - t0
        _emit(result, args.out, tables)
        return EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonSPDError, SolveFailure) as exc:
        print(f"solver error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CombinatorialBlowup as exc:
        print(f"error (CombinatorialBlowup): {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except SingularFisher as exc:
        print(f"error (SingularFisher): {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except SensorOptError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
