"""Command-line front end: ``epcag <command> --problem problem.json --out DIR``.

Commands: simulate, solve-ap, check, stability, sequence, logistic.
Exit status 0 on success, 1 on a problem-file validation error, 2 on a
numerical failure (the report names the failed condition).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import errors
from .apkit import TrigPolynomial
from .errors import EPCAGError, ProblemValidationError

log = logging.getLogger("epcag")

REPORT_SCHEMA_ID = "epcag.report/1"
PROBLEM_SCHEMA_ID = "epcag.problem/1"
COMMANDS = ("simulate", "solve-ap", "check", "stability", "sequence", "logistic")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_arr = {"type": "array"}
_coef = {"anyOf": [_num, {"type": "array", "items": {"anyOf": [_num, {"type": "array", "items": _num}]}}]}
_trig = {
    "anyOf": [
        _coef,
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "const": _coef,
                "terms": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["omega"],
                        "properties": {"omega": {"type": "number", "minimum": 0},
                                       "cos": _coef, "sin": _coef},
                    },
                },
            },
        },
    ]
}
_theta = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["uniform", "perturbed", "explicit"]},
        "gap": _pos,
        "offset": _num,
        "amplitude": _num,
        "omega": _num,
        "values": {"type": "array", "items": _num},
        "base_index": {"type": "integer"},
    },
}
_law = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "c"],
    "properties": {"kind": {"enum": ["affine", "monomial", "saturated"]},
                   "c": _coef, "m": {"type": "integer", "minimum": 1}},
}
_f = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["affine", "saturated", "product_logistic"]},
        "C": {"type": "array", "minItems": 1},
        "g": _trig,
        "scale": _num,
        "h": _law,
    },
}
_seq_source = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["values", "sine"]},
        "values": {"type": "array"},
        "index_offset": {"type": "integer"},
        "freq": _num,
        "window": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    },
}
_range = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}

PROBLEM_SCHEMA = {
    "$id": PROBLEM_SCHEMA_ID,
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "A": _trig,
        "f": _f,
        "deviations": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "theta": _theta,
        "dichotomy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["P"],
            "properties": {"P": _coef, "K1": _num, "sigma1": _pos, "K2": _num, "sigma2": _pos,
                           "one_sided": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        },
        "estimation_grid": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"core": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                           "tol": _pos, "t_cut": {"type": "number", "minimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1}},
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "history": {"type": "object", "patternProperties": {"^-?[0-9]+$": _coef},
                            "additionalProperties": False},
                "constant": _coef,
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t_end": _pos, "rtol": _pos},
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"delta": {"type": "number", "minimum": 0}, "a": _pos,
                           "trials": {"type": "integer", "minimum": 0}, "t_end": _pos,
                           "one_sided": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        },
        "logistic": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a", "f"],
            "properties": {"a": _trig, "f": _law, "H": _pos,
                           "deviations": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                          "minItems": 1},
                           "theta": _theta,
                           "core": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                           "tol": _pos, "N0": _pos, "t_end": _pos},
        },
        "sequence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _seq_source,
                "b": _seq_source,
                "eps": _pos,
                "p_range": _range,
                "equipotential": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["eps", "j_range", "p_range"],
                    "properties": {"eps": _pos, "j_range": _range, "p_range": _range,
                                   "window": _range},
                },
                "max_multiplicity": {"type": ["integer", "null"], "minimum": 1},
            },
        },
    },
}

REPORT_SCHEMA = {
    "$id": REPORT_SCHEMA_ID,
    "type": "object",
    "required": ["schema", "command", "status", "config", "results"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "command": {"enum": list(COMMANDS)},
        "status": {"enum": ["ok", "failed"]},
        "failed_condition": {"type": ["string", "null"]},
        "message": {"type": "string"},
        "config": {
            "type": "object",
            "required": ["command", "problem"],
            "properties": {"problem": PROBLEM_SCHEMA},
        },
        "results": {"type": "object"},
    },
}


def validate_problem(d):
    """Validate against :data:`PROBLEM_SCHEMA`; raises :class:`ProblemValidationError` with the key path."""
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(d))
    if err is not None:
        raise ProblemValidationError(list(err.absolute_path), err.message)
    return d


def _need(d, *keys):
    for k in keys:
        if k not in d:
            raise ProblemValidationError([k], f"required for this command")


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x) or np.isinf(x):
            return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
        return x
    return x


def write_csv(path, t, x, idx):
    n = x.shape[1]
    header = ",".join(["t"] + [f"x_{k + 1}" for k in range(n)] + ["interval_index"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for ti, xi, ii in zip(t, x, idx):
            fh.write(",".join([f"{ti:.16e}"] + [f"{v:.16e}" for v in xi] + [str(int(ii))]) + "\n")


def read_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    t = np.asarray(data["t"], dtype=float)
    x = np.column_stack([data[nm] for nm in names if nm.startswith("x_")])
    return t, x


# ---------------------------------------------------------------------------
# commands


def _core(args, problem_dict, default=(0.0, 20.0)):
    if args.core is not None:
        return tuple(args.core)
    return tuple(problem_dict.get("solver", {}).get("core", default))


def _tol(args, d, default=1e-8):
    if args.tol is not None:
        return args.tol
    return d.get("solver", {}).get("tol", default)


def _epcag(d):
    from .apsolve import EPCAGProblem

    _need(d, "A", "f", "deviations")
    try:
        return EPCAGProblem.from_dict(d)
    except (ValueError, KeyError) as exc:
        raise ProblemValidationError([], str(exc)) from exc


def _initial(d, problem):
    from .ivpsim import InitialData

    init = d.get("initial", {})
    if "history" in init:
        return InitialData({int(k): v for k, v in init["history"].items()})
    value = init.get("constant", 0.0)
    vec = np.broadcast_to(np.asarray(value, dtype=float), (problem.n,))
    return InitialData.constant(vec, [p for p in problem.deviations])


def cmd_simulate(d, args, out):
    from .ivpsim import solve_ivp

    problem = _epcag(d)
    sim = d.get("simulate", {})
    t_end = args.t_end if args.t_end is not None else sim.get("t_end", 20.0)
    traj = solve_ivp(problem, _initial(d, problem), t_end, sim.get("rtol", 1e-10))
    t, x, idx = traj.sample(core_only=True)
    write_csv(out / "trajectory.csv", t, x, idx)
    results = {"t_end": t_end, "samples": int(t.size), "final": x[-1],
               "nodes": {int(i): traj.node_value(i) for i in range(0, traj.cells.theta_hi + 1)}}
    if args.compare:
        ts, xs = read_csv(args.compare)
        key_s = np.round(ts, 9)
        key_t = np.round(t, 9)
        common, i_s, i_t = np.intersect1d(key_s, key_t, return_indices=True)
        if common.size:
            diff = float(np.max(np.linalg.norm(xs[i_s] - x[i_t], axis=1)))
            results["compare"] = {"file": str(args.compare), "points": int(common.size),
                                  "t_range": [float(common[0]), float(common[-1])],
                                  "max_diff": diff}
        else:
            results["compare"] = {"file": str(args.compare), "points": 0}
    return results


def cmd_solve_ap(d, args, out):
    from .apsolve import picard_solve

    problem = _epcag(d)
    core = _core(args, d)
    solver = d.get("solver", {})
    sol, rep = picard_solve(problem, core, _tol(args, d), solver.get("t_cut"),
                            solver.get("max_iter", 500))
    t, x, idx = sol.sample(core_only=True)
    write_csv(out / "solution.csv", t, x, idx)
    return {"solve": rep.to_dict(), "dichotomy": problem.dichotomy.to_dict(),
            "sup_norm": sol.sup_norm()}


def _wexler_flag(problem):
    from .timescale import ThetaSequence, equipotential_diagnostic

    kind = (problem.theta.descriptor or {}).get("kind")
    if kind == "uniform":
        return True, "uniform sequence"
    if kind == "perturbed":
        # a private copy, so the problem's own window is left alone
        seq = ThetaSequence.from_descriptor(problem.theta.descriptor)
        seq.ensure(-400, 400)
        rep = equipotential_diagnostic(seq, 0.1, range(1, 4), range(1, 200))
        dense = (rep.common_periods.relatively_dense_on_window
                 and rep.translation_set.relatively_dense_on_window)
        return bool(dense), "finite-window diagnostic on indices [-400, 400]"
    return None, "not verified for explicit sequences"


def cmd_check(d, args, out):
    from .ivpsim import best_decay_rate, stability_constants, uniqueness_check
    from .timescale import tau_deviation

    problem = _epcag(d)
    flags, notes = {}, {}
    flags["C1"] = True
    flags["C2"] = True
    observed = problem.lipschitz_spot_check(args.seed)
    flags["C3"] = bool(observed <= problem.l * (1 + 1e-9))
    notes["C3"] = {"l": problem.l, "observed_secant": observed}
    try:
        dich = problem.dichotomy
        flags["C4"] = True
        notes["C4"] = dich.to_dict()
    except (errors.NoEnvelopeError, errors.SpectralGapError) as exc:
        raise errors.ConditionError("C4", str(exc)) from exc
    c5, why = _wexler_flag(problem)
    flags["C5"] = c5
    notes["C5"] = why
    margin = problem.margin
    flags["contraction"] = bool(margin < 1)
    results = {"margin": margin, "l": problem.l, "m": problem.m, "flags": flags, "notes": notes}
    if min(problem.deviations) >= 0:
        stab = d.get("stability", {})
        if problem.dichotomy.one_sided_constants() is not None or stab.get("one_sided"):
            a = stab.get("a")
            if a is None:
                # C8 asks for some admissible rate; use the one maximising zeta
                K, sigma = stab.get("one_sided") or problem.dichotomy.one_sided_constants()
                tau = tau_deviation(problem.theta, problem.deviations, (0, 64))
                a = best_decay_rate(K, sigma, problem.l, problem.m, tau) or sigma / 2.0
            rep = stability_constants(problem, stab.get("one_sided"), a, stab.get("delta", 0.01))
            flags.update(rep.flags)
            results["stability"] = rep.to_dict()
        else:
            u = uniqueness_check(problem)
            flags["C9"] = u.passed
            results["uniqueness"] = u.to_dict()
    failed = [k for k, v in flags.items() if v is False]
    results["all_pass"] = not failed
    if not flags["C3"]:
        raise errors.ConditionError("C3", f"secant ratio {observed:.4g} exceeds l = {problem.l:.4g}")
    if not flags["contraction"]:
        raise errors.ConditionError("contraction", f"l m kappa = {margin:.4g} >= 1")
    return results


def cmd_stability(d, args, out):
    from .apsolve import picard_solve
    from .ivpsim import stability_experiment

    problem = _epcag(d)
    stab = d.get("stability", {})
    t_end = args.t_end if args.t_end is not None else stab.get("t_end", 20.0)
    trials = args.trials if args.trials is not None else stab.get("trials", 32)
    pmax = max(problem.deviations)
    core = (problem.theta.theta(-pmax) - 1.0, t_end + 1.0)
    xi, srep = picard_solve(problem, core, _tol(args, d, 1e-10))
    rep = stability_experiment(problem, xi, stab.get("delta", 0.01), stab.get("a"), trials,
                               args.seed, t_end, stab.get("one_sided"))
    if not rep.passed:
        raise errors.ConditionError(
            "envelope", f"trial {rep.worst_trial} exceeds L e^(-a t) (margin {rep.worst_margin:.4g})")
    return {"stability": rep.to_dict(), "solve": srep.to_dict()}


def _sequence_values(src):
    if src["kind"] == "values":
        return np.asarray(src["values"], dtype=float), int(src.get("index_offset", 0))
    lo, hi = src.get("window", [-500, 500])
    i = np.arange(lo, hi + 1)
    return np.sin(2 * np.pi * float(src["freq"]) * i), int(lo)


def cmd_sequence(d, args, out):
    from .timescale import (
        ThetaSequence,
        eps_equivalent_sequences,
        equipotential_diagnostic,
        sequence_almost_periods,
    )

    _need(d, "sequence")
    s = d["sequence"]
    results = {}
    if "a" in s:
        a, off = _sequence_values(s["a"])
        if "b" in s:
            b, _ = _sequence_values(s["b"])
            eq = eps_equivalent_sequences(a, b, s.get("eps", 0.1),
                                          max_multiplicity=s.get("max_multiplicity", 4))
            results["equivalent"] = bool(eq.equivalent)
            results["matching"] = [list(map(int, m)) for m in (eq.matching or [])]
        else:
            _need(s, "eps", "p_range")
            lo, hi = s["p_range"]
            rep = sequence_almost_periods(a, s["eps"], range(lo, hi + 1), off)
            results["almost_periods"] = rep.to_dict()
    if "equipotential" in s:
        _need(d, "theta")
        e = s["equipotential"]
        seq = ThetaSequence.from_descriptor(d["theta"])
        if "window" in e:
            seq.ensure(*e["window"])
        jl, jh = e["j_range"]
        pl, ph = e["p_range"]
        rep = equipotential_diagnostic(seq, e["eps"], range(jl, jh + 1), range(pl, ph + 1))
        results["equipotential"] = rep.to_dict()
    if not results:
        raise ProblemValidationError(["sequence"], "nothing to compute (give 'a' or 'equipotential')")
    return results


def cmd_logistic(d, args, out):
    from .logistic import LogisticProblem, existence_conditions, logistic_fixed_point, simulate_logistic

    _need(d, "logistic")
    ld = d["logistic"]
    try:
        problem = LogisticProblem.from_dict(ld)
    except (ValueError, KeyError) as exc:
        raise ProblemValidationError(["logistic"], str(exc)) from exc
    cond = existence_conditions(problem)
    results = {"conditions": cond.to_dict(), "M_a": cond.mean, "K": cond.K, "sigma": cond.sigma,
               "mu": cond.mu}
    if not cond.passed:
        name = "bound" if not cond.bound_ok else "contraction"
        raise errors.ConditionError(f"logistic-{name}", json.dumps(_jsonable(cond.to_dict())))
    core = tuple(args.core) if args.core is not None else tuple(ld.get("core", (0.0, 20.0)))
    tol = args.tol if args.tol is not None else ld.get("tol", 1e-10)
    sol, rep = logistic_fixed_point(problem, core, tol)
    t, x, idx = sol.sample(core_only=True)
    write_csv(out / "solution.csv", t, x, idx)
    results["fixed_point"] = rep.to_dict()
    results["zero_solution"] = rep.zero_solution
    t_end = args.t_end if args.t_end is not None else ld.get("t_end", 20.0)
    traj = simulate_logistic(problem, ld.get("N0", problem.H / 2), t_end)
    tt, xx, ii = traj.sample(core_only=True)
    write_csv(out / "trajectory.csv", tt, xx, ii)
    results["simulation"] = {"t_end": t_end, "min": float(np.min(xx)), "final": float(xx[-1, 0])}
    return results


HANDLERS = {
    "simulate": cmd_simulate,
    "solve-ap": cmd_solve_ap,
    "check": cmd_check,
    "stability": cmd_stability,
    "sequence": cmd_sequence,
    "logistic": cmd_logistic,
}


def build_parser():
    p = argparse.ArgumentParser(prog="epcag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--problem", required=True, type=Path,
                       help="problem JSON (or a previous report.json to re-run its config)")
        s.add_argument("--out", type=Path, default=Path("."))
        s.add_argument("--tol", type=float)
        s.add_argument("--core", type=float, nargs=2, metavar=("LO", "HI"))
        s.add_argument("--t-end", type=float, dest="t_end")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--trials", type=int)
        if name == "simulate":
            s.add_argument("--compare", type=Path, help="solution.csv to compare against")
    return p


def _load(path):
    """Problem dict plus overrides stored in a previous report, if any."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if isinstance(d, dict) and d.get("schema") == REPORT_SCHEMA_ID:
        cfg = d["config"]
        return cfg["problem"], cfg
    return d, None


def _check_overrides(args):
    for name in ("tol", "t_end"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            raise ProblemValidationError([f"--{name.replace('_', '-')}"], "must be positive")
    if args.trials is not None and args.trials < 0:
        raise ProblemValidationError(["--trials"], "must be non-negative")
    if args.core is not None and not args.core[1] > args.core[0]:
        raise ProblemValidationError(["--core"], "needs lo < hi")


def run(argv=None):
    """Parse ``argv``, execute one command and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema": REPORT_SCHEMA_ID, "command": args.command, "status": "ok",
              "failed_condition": None}
    try:
        problem, stored = _load(args.problem)
        if stored is not None:
            for key in ("tol", "core", "t_end", "seed", "trials"):
                if getattr(args, key) is None and stored.get(key) is not None:
                    setattr(args, key, stored[key])
        _check_overrides(args)
        validate_problem(problem)
    except ProblemValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"validation error: <root>: {exc}", file=sys.stderr)
        return 1
    report["config"] = {"command": args.command, "problem": copy.deepcopy(problem),
                        "tol": args.tol, "core": list(args.core) if args.core else None,
                        "t_end": args.t_end, "seed": args.seed, "trials": args.trials}
    status = 0
    try:
        report["results"] = HANDLERS[args.command](problem, args, out)
    except ProblemValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except EPCAGError as exc:
        status = 2
        cond = getattr(exc, "condition", None) or _condition_for(exc)
        report.update(status="failed", failed_condition=cond, message=str(exc), results={})
        print(f"numerical failure [{cond}]: {exc}", file=sys.stderr)
    report = _jsonable(report)
    jsonschema.validate(report, REPORT_SCHEMA)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return status


def _condition_for(exc):
    if isinstance(exc, (errors.NoEnvelopeError, errors.SpectralGapError)):
        return "C4"
    if isinstance(exc, errors.NonContractiveError):
        return "contraction"
    if isinstance(exc, errors.TruncationBudgetError):
        return "truncation"
    if isinstance(exc, errors.ConvergenceError):
        return "convergence"
    if isinstance(exc, errors.IntegrationError):
        return "integration"
    return type(exc).__name__


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
