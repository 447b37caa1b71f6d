"""Command-line front end: load a JSON scenario, run one task, write CSV/JSON artifacts.

Exit status is 0 on success, 2 when the problem is infeasible or the VaR
level cannot be reached, and 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .envelope import concavify
from .errors import ConstraintUnreachable, Infeasible, MvutilError, ScenarioError
from .oracle import brute_solve, discretize
from .solver import Problem, g_curve, solve
from .statespace import BenchmarkMap, ExpectationEngine, PricingKernel, StateDistribution, StateModel
from .utility import (
    affine_family,
    custom,
    custom_family,
    digital_family,
    s_shaped_family,
    two_piece_family,
)
from .varapp import VarScenario, solution_curve, var_solve

INF = math.inf

SECTIONS = ("state", "kernel", "utility", "benchmark", "problem", "engine", "outputs")
OUTPUT_KEYS = ("dir", "report", "g_curve", "envelope", "solution_curve")
DEFAULT_OUTPUTS = {
    "report": "report.json",
    "g_curve": "g_curve.csv",
    "envelope": "envelope.csv",
    "solution_curve": "solution_curve.csv",
}
PLAN_KEYS = ("plan", "L1", "L2", "L3", "L4", "w")


# ---------------------------------------------------------------- scenario parsing


def _num(value: Any, path: str) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("+inf", "inf", "infinity"):
            return INF
        if text == "-inf":
            return -INF
        raise ScenarioError(f"{path}: expected a number, got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{path}: expected an integer, got {value!r}")
    return value


def _obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{path}: expected an object")
    return value


def _keys(d: Mapping, path: str, required: tuple[str, ...] = (), optional: tuple[str, ...] = ()) -> None:
    for k in required:
        if k not in d:
            raise ScenarioError(f"{path}.{k}: missing required key" if path else f"{k}: missing required key")
    allowed = set(required) | set(optional)
    for k in d:
        if k not in allowed:
            where = f"{path}.{k}" if path else k
            raise ScenarioError(f"{where}: unknown key")


def _params(section: dict, path: str, required: tuple[str, ...] = (), optional: tuple[str, ...] = ()) -> dict:
    params = _obj(section.get("params", {}), f"{path}.params")
    _keys(params, f"{path}.params", required, optional)
    return params


@dataclass
class Scenario:
    raw: dict
    model: StateModel
    family: Any
    benchmark: BenchmarkMap
    x0: float
    alpha: float | None
    outputs: dict
    var: VarScenario | None

    def problem(self) -> Problem:
        return Problem(self.model, self.family, self.benchmark, self.x0)


def _state(sec: dict) -> StateDistribution:
    kind = sec.get("distribution")
    if kind == "standard-normal":
        _keys(sec, "state", ("distribution",))
        return StateDistribution.standard_normal()
    if kind == "uniform":
        _keys(sec, "state", ("distribution", "lo", "hi"))
        return StateDistribution.uniform(_num(sec["lo"], "state.lo"), _num(sec["hi"], "state.hi"))
    if kind == "discrete":
        _keys(sec, "state", ("distribution", "atoms"))
        atoms = sec["atoms"]
        if not isinstance(atoms, list):
            raise ScenarioError("state.atoms: expected a list of [value, probability] pairs")
        pairs = []
        for i, a in enumerate(atoms):
            if not isinstance(a, list) or len(a) != 2:
                raise ScenarioError(f"state.atoms[{i}]: expected [value, probability]")
            pairs.append((_num(a[0], f"state.atoms[{i}][0]"), _num(a[1], f"state.atoms[{i}][1]")))
        return StateDistribution.discrete(pairs)
    if "distribution" not in sec:
        raise ScenarioError("state.distribution: missing required key")
    raise ScenarioError(f"state.distribution: unknown distribution {kind!r}")


def _kernel(sec: dict) -> PricingKernel:
    _keys(sec, "kernel", ("form",), ("params",))
    form = sec["form"]
    if form == "lognormal":
        ps = _params(sec, "kernel", ("r", "theta", "T"))
        return PricingKernel.lognormal(*(_num(ps[k], f"kernel.params.{k}") for k in ("r", "theta", "T")))
    if form == "identity":
        _params(sec, "kernel")
        return PricingKernel.identity()
    if form == "constant":
        ps = _params(sec, "kernel", ("value",))
        return PricingKernel.constant(_num(ps["value"], "kernel.params.value"))
    if form == "explicit":
        ps = _params(sec, "kernel", ("pieces",))
        pieces = ps["pieces"]
        if not isinstance(pieces, list):
            raise ScenarioError("kernel.params.pieces: expected a list of [lo, hi, a, s]")
        out = []
        for i, pc in enumerate(pieces):
            if not isinstance(pc, list) or len(pc) != 4:
                raise ScenarioError(f"kernel.params.pieces[{i}]: expected [lo, hi, a, s]")
            out.append(tuple(_num(v, f"kernel.params.pieces[{i}][{j}]") for j, v in enumerate(pc)))
        return PricingKernel.explicit(out)
    raise ScenarioError(f"kernel.form: unknown kernel form {form!r}")


def _family(sec: dict):
    _keys(sec, "utility", ("family",), ("params",))
    fam = sec["family"]
    if fam == "s-shaped":
        ps = _params(sec, "utility", ("p", "k"))
        return s_shaped_family(_num(ps["p"], "utility.params.p"), _num(ps["k"], "utility.params.k"))
    if fam == "digital":
        ps = _params(sec, "utility", (), ("height",))
        return digital_family(_num(ps.get("height", 1.0), "utility.params.height"))
    if fam == "affine":
        ps = _params(sec, "utility", ("k", "L"))
        return affine_family(_num(ps["k"], "utility.params.k"), _num(ps["L"], "utility.params.L"))
    if fam == "two-piece-example-5.1":
        _params(sec, "utility")
        return two_piece_family()
    if fam == "custom":
        ps = _params(sec, "utility", ("lower", "pieces"), ("lower_type",))
        pieces = ps["pieces"]
        if not isinstance(pieces, list):
            raise ScenarioError("utility.params.pieces: expected a list of piece objects")
        clean = []
        for i, pc in enumerate(pieces):
            pc = _obj(pc, f"utility.params.pieces[{i}]")
            _keys(pc, f"utility.params.pieces[{i}]", ("form", "lo", "hi"), ("k", "c", "s", "p"))
            clean.append({k: (v if k == "form" else _num(v, f"utility.params.pieces[{i}].{k}")) for k, v in pc.items()})
        u = custom(_num(ps["lower"], "utility.params.lower"), ps.get("lower_type", "attained"), clean)
        return custom_family(u)
    raise ScenarioError(f"utility.family: unknown family {fam!r}")


def _benchmark(sec: dict) -> tuple[BenchmarkMap, dict | None]:
    if "plan" in sec:
        _keys(sec, "benchmark", ("plan",), PLAN_KEYS[1:])
        plan = {"plan": sec["plan"]}
        for k in PLAN_KEYS[1:]:
            if k in sec:
                plan[k] = _num(sec[k], f"benchmark.{k}")
        return None, plan
    if "value" in sec:
        _keys(sec, "benchmark", ("value",))
        v = sec["value"]
        vals = v if isinstance(v, list) else [v]
        return BenchmarkMap.constant(*(_num(x, f"benchmark.value") for x in vals)), None
    _keys(sec, "benchmark", ("breakpoints", "values"))
    bps = [_num(x, "benchmark.breakpoints") for x in sec["breakpoints"]]
    vals = []
    for i, row in enumerate(sec["values"]):
        row = row if isinstance(row, list) else [row]
        vals.append(tuple(_num(x, f"benchmark.values[{i}]") for x in row))
    return BenchmarkMap(tuple(bps), tuple(vals)), None


def _engine(sec: dict, args) -> ExpectationEngine:
    _keys(sec, "engine", (), ("mode", "nodes", "samples", "seed"))
    kw: dict[str, Any] = {}
    if "mode" in sec:
        kw["mode"] = sec["mode"]
    for k in ("nodes", "samples", "seed"):
        if k in sec:
            kw[k] = _int(sec[k], f"engine.{k}")
        flag = getattr(args, k, None) if args is not None else None
        if flag is not None:
            kw[k] = flag
    try:
        return ExpectationEngine(**kw)
    except ValueError as exc:
        raise ScenarioError(f"engine: {exc}") from exc


def load_scenario(doc: Mapping, args=None) -> Scenario:
    doc = _obj(doc, "scenario")
    _keys(doc, "", ("state", "kernel", "utility", "benchmark", "problem"), ("engine", "outputs"))
    sections = {k: _obj(doc.get(k, {}), k) for k in SECTIONS}
    try:
        dist = _state(sections["state"])
        kernel = _kernel(sections["kernel"])
        family = _family(sections["utility"])
        bench, plan = _benchmark(sections["benchmark"])
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"invalid parameter: {exc}") from exc
    prob = sections["problem"]
    _keys(prob, "problem", ("x0",), ("alpha",))
    x0 = _num(prob["x0"], "problem.x0")
    if not math.isfinite(x0):
        raise ScenarioError("problem.x0: must be finite")
    alpha = _num(prob["alpha"], "problem.alpha") if "alpha" in prob else None
    if alpha is not None and not 0 < alpha < 1:
        raise ScenarioError("problem.alpha: must lie in (0, 1)")
    engine = _engine(sections["engine"], args)
    outs = sections["outputs"]
    _keys(outs, "outputs", (), OUTPUT_KEYS)
    outputs = dict(DEFAULT_OUTPUTS)
    outputs.update({k: v for k, v in outs.items() if k != "dir"})
    outputs["dir"] = outs.get("dir", ".")
    var = None
    if plan is not None:
        if kernel.form != "lognormal" or family.name != "s-shaped" or dist.kind != "standard-normal":
            raise ScenarioError("benchmark.plan: needs a standard-normal state, lognormal kernel and s-shaped utility")
        pd = dict(family.params)
        try:
            var = VarScenario(p=pd["p"], k=pd["k"], r=kernel.r, theta=kernel.theta, T=kernel.T, x0=x0,
                              alpha=alpha if alpha is not None else 0.05, **plan)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"benchmark.plan: {exc}") from exc
        bench = var.benchmark()
        family = s_shaped_family(var.p, var.k)
        # the plain problem uses only the first benchmark component
        bench = BenchmarkMap(bench.breakpoints, tuple((v[0],) for v in bench.values))
    model = StateModel(dist, kernel, engine)
    return Scenario(dict(doc), model, family, bench, x0, alpha, outputs, var)


# ---------------------------------------------------------------- output helpers


def fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _curve_states(model: StateModel) -> np.ndarray:
    d = model.dist
    if d.is_discrete:
        return d.atom_values()
    if d.kind == "uniform":
        return np.linspace(d.lo, d.hi, 401)[:-1]
    return np.linspace(-4.0, 4.0, 801)


# ---------------------------------------------------------------- commands


def cmd_solve(scn: Scenario, args, out: str) -> int:
    rep = solve(scn.problem())
    write_json(os.path.join(out, scn.outputs["report"]), rep.to_dict())
    if rep.solution is not None:
        ws = _curve_states(scn.model)
        xi = scn.model.kernel(ws)
        xs = rep.solution(ws)
        order = np.argsort(xi, kind="stable")
        write_csv(os.path.join(out, scn.outputs["solution_curve"]), ["xi", "x_star"],
                  zip(xi[order], np.asarray(xs, dtype=float)[order]))
    return 2 if rep.classification == "infeasible" else 0


def cmd_var_solve(scn: Scenario, args, out: str) -> int:
    if scn.var is None:
        raise ScenarioError("benchmark.plan: var-solve needs a plan benchmark")
    res = var_solve(scn.var, scn.model.engine)
    write_json(os.path.join(out, scn.outputs["report"]), res.to_dict())
    ws = _curve_states(scn.model)
    xi, xs = solution_curve(res, ws)
    order = np.argsort(xi, kind="stable")
    write_csv(os.path.join(out, scn.outputs["solution_curve"]), ["xi", "x_star", "plan"],
              ((a, b, scn.var.plan) for a, b in zip(xi[order], np.asarray(xs, dtype=float)[order])))
    return 0


def cmd_g_curve(scn: Scenario, args, out: str) -> int:
    lo, hi = args.lambda_min, args.lambda_max
    if not 0 < lo < hi:
        raise ScenarioError("--lambda-min/--lambda-max: need 0 < min < max")
    lams = np.linspace(lo, hi, args.points)
    rows = g_curve(scn.problem(), lams)
    write_csv(os.path.join(out, scn.outputs["g_curve"]), ["lambda", "g"], rows)
    return 0


def cmd_envelope_dump(scn: Scenario, args, out: str) -> int:
    rows = []
    for b in scn.benchmark.distinct_values():
        env = concavify(scn.family.utility(b))
        for seg in env.to_rows():
            rows.append([";".join(fmt(float(v)) for v in b), seg["kind"], seg["lo"], seg["hi"], seg.get("piece"),
                         seg.get("slope"), seg.get("intercept")])
    write_csv(os.path.join(out, scn.outputs["envelope"]), ["b", "kind", "lo", "hi", "piece", "slope", "intercept"], rows)
    return 0


def cmd_oracle(scn: Scenario, args, out: str) -> int:
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    inst = discretize(scn.model, scn.family, scn.benchmark, scn.x0, args.atoms, grid)
    plain = brute_solve(inst)
    hull = brute_solve(inst, concavified=True)
    write_json(os.path.join(out, scn.outputs["report"]), _jsonable({"utility": plain.to_dict(), "envelope": hull.to_dict()}))
    return 2 if plain.status == "infeasible" else 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return fmt(obj)
    return obj


COMMANDS = {
    "solve": cmd_solve,
    "var-solve": cmd_var_solve,
    "g-curve": cmd_g_curve,
    "envelope-dump": cmd_envelope_dump,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvutil", description="Expected-utility maximization with benchmarks.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--out", default=None, help="output directory (overrides outputs.dir)")
    ap.add_argument("--nodes", type=int, default=None, help="quadrature nodes per panel")
    ap.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    ap.add_argument("--seed", type=int, default=None, help="Monte Carlo seed")
    ap.add_argument("--lambda-min", type=float, default=0.1)
    ap.add_argument("--lambda-max", type=float, default=10.0)
    ap.add_argument("--points", type=int, default=101, help="g-curve sample count")
    ap.add_argument("--atoms", type=int, default=8, help="oracle: number of state atoms")
    ap.add_argument("--grid-min", type=float, default=0.0)
    ap.add_argument("--grid-max", type=float, default=10.0)
    ap.add_argument("--grid-points", type=int, default=11)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.scenario) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"{args.scenario}: not valid JSON ({exc})") from exc
        scn = load_scenario(doc, args)
        out = args.out or scn.outputs["dir"]
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](scn, args, out)
    except (Infeasible, ConstraintUnreachable) as exc:
        print(f"mvutil: {exc}", file=sys.stderr)
        return 2
    except (MvutilError, ValueError, OSError) as exc:
        print(f"mvutil: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
