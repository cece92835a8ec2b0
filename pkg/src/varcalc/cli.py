"""Command-line front end.

    varcalc subdiff FILE --fn PATH --at NAME [--oracle]
    varcalc normalcone FILE --set lower|upper --at NAME [--oracle]
    varcalc valuefn FILE [--x-range LO HI STEP] [--csv PATH]
    varcalc certify FILE --at NAME --theorem t61|t74|t83
                    [--kappa X | --kappa-sweep] [--override-isc]
                    [--override-calmness]
    varcalc verify [FILE | --builtin-corpus]
    varcalc extremal --builtin halfplanes|boundary|nonextremal

Exit codes: 0 ok, 2 input error, 3 computation refusal (qualification),
4 no certificate, 5 hypothesis failure.  JSON reports (--json) are byte
identical for identical inputs and seed; timing appears only in the
human-readable output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace

import numpy as np

from varcalc import bilevel as bl
from varcalc import corpus as cp
from varcalc import expr as ex
from varcalc import subdiff as sd
from varcalc import valuefn as vf
from varcalc.convgeom import ConeSpec, Polytope, PolytopeUnion, hausdorff_distance
from varcalc.problemfile import ProblemFile, ProblemFileError, parse_problem_file

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REFUSED = 3
EXIT_NO_CERTIFICATE = 4
EXIT_HYPOTHESIS = 5

SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# serialization helpers


def _ser(obj):
    if isinstance(obj, Polytope):
        return {"vertices": obj.vertices.tolist()}
    if isinstance(obj, PolytopeUnion):
        return {"parts": [p.vertices.tolist() for p in obj.parts]}
    if isinstance(obj, ConeSpec):
        return {
            "generators": obj.generators.tolist(),
            "lineality": obj.lineality.tolist(),
        }
    if isinstance(obj, sd.SlicedCone):
        return {"base": _ser(obj.base) if obj.base else None, "recession": _ser(obj.recession)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _ser(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_ser(v) for v in obj]
    return obj


def _report(command: str, digest: str, seed: int, results, ledger=None, warnings=None, caveat=None):
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "inputs": {"file_digest": digest, "seed": seed},
        "results": _ser(results),
        "hypothesis_ledger": _ser(ledger or []),
        "warnings": list(warnings or []),
    }
    if caveat:
        report["caveat"] = caveat
    return report


def _emit(report: dict, as_json: bool, elapsed: float) -> None:
    if as_json:
        sys.stdout.write(json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n")
        return
    print(f"# varcalc {report['command']}  ({elapsed:.2f}s)")
    print(f"input digest: {report['inputs']['file_digest']}")
    print(json.dumps(report["results"], sort_keys=True, indent=2))
    if report["hypothesis_ledger"]:
        print("hypotheses:")
        for entry in report["hypothesis_ledger"]:
            print(f"  [{entry['status']:>10}] {entry['hypothesis']}")
    for w in report["warnings"]:
        print(f"warning: {w}")
    if "caveat" in report:
        print(f"note: {report['caveat']}")


def _load(path: str) -> ProblemFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise CliError(f"cannot read {path}: {err}", EXIT_INPUT) from None
    try:
        return parse_problem_file(text)
    except (ProblemFileError, ex.ExprError) as err:
        raise CliError(f"bad problem file: {err}", EXIT_INPUT) from None


def _params(pf: ProblemFile, args) -> sd.SampleParams:
    params = pf.sample_params
    if args.seed is not None:
        params = replace(params, seed=args.seed)
    return params


def _seed(pf: ProblemFile, args) -> int:
    return args.seed if args.seed is not None else pf.seed


# ---------------------------------------------------------------------------
# subcommands


def cmd_subdiff(args) -> tuple[dict, int]:
    pf = _load(args.file)
    params = _params(pf, args)
    try:
        fn = pf.resolve_function(args.fn)
        cand = pf.candidate(args.at)
    except ProblemFileError as err:
        raise CliError(str(err), EXIT_INPUT) from None
    point = pf.point_for(fn, cand)
    try:
        result = sd.full_subdifferential(fn, point, params, pf.tau_act)
    except sd.QualificationError as err:
        raise CliError(f"refused: {err}", EXIT_REFUSED) from None
    results = {
        "function": args.fn,
        "at": {"name": args.at, "point": point.tolist()},
        "regular": _ser(result.regular) if result.regular is not None else None,
        "basic": _ser(result.basic),
        "singular": _ser(result.singular),
        "method": result.method,
        "pattern_census": result.witnesses["pattern_census"],
    }
    if args.oracle:
        cloud = sd.sampled_subdiff_oracle(fn, point, params, pf.tau_act)
        results["oracle"] = {
            "cluster_centers": cloud.cluster_centers.tolist(),
            "accepted_points": int(cloud.points.shape[0]),
            "hausdorff_vs_basic": hausdorff_distance(result.basic, cloud.as_union()),
        }
    return _report("subdiff", pf.digest, _seed(pf, args), results), EXIT_OK


def cmd_normalcone(args) -> tuple[dict, int]:
    pf = _load(args.file)
    params = _params(pf, args)
    try:
        cand = pf.candidate(args.at)
    except ProblemFileError as err:
        raise CliError(str(err), EXIT_INPUT) from None
    if args.set == "lower":
        if not pf.lower_constraints:
            raise CliError("file has no lower constraints", EXIT_INPUT)
        spec = sd.SetSpec.graph(list(pf.lower_constraints), pf.x_dim, pf.y_dim)
        point = cand
    else:
        if not pf.upper_constraints:
            raise CliError("file has no upper constraints", EXIT_INPUT)
        spec = sd.SetSpec.sublevel(list(pf.upper_constraints))
        point = cand[: pf.x_dim]
    try:
        cone = sd.normal_cone(spec, point, params, pf.tau_act)
    except sd.QualificationError as err:
        report = _report(
            "normalcone",
            pf.digest,
            _seed(pf, args),
            {"refused": str(err), "witness": _ser(err.witness)},
        )
        return report, EXIT_REFUSED
    except sd.SubdiffError as err:
        raise CliError(str(err), EXIT_INPUT) from None
    results = {
        "set": args.set,
        "at": {"name": args.at, "point": np.asarray(point).tolist()},
        "parts": [_ser(c) for c in cone.parts],
        "qualification": cone.qualification,
        "active_constraints": list(cone.active),
    }
    if args.oracle:
        cloud = sd.sampled_normal_cone_oracle(spec, point, params)
        results["oracle"] = {
            "cluster_centers": cloud.cluster_centers.tolist(),
            "accepted_points": int(cloud.points.shape[0]),
        }
    return _report("normalcone", pf.digest, _seed(pf, args), results), EXIT_OK


def cmd_valuefn(args) -> tuple[dict, int]:
    pf = _load(args.file)
    params = _params(pf, args)
    if pf.lower_objective is None:
        raise CliError("valuefn needs a [lower] section", EXIT_INPUT)
    if pf.grid is None:
        raise CliError("valuefn needs a [grid] section", EXIT_INPUT)
    prob = vf.ParametricProblem(
        pf.lower_objective, pf.lower_constraints, pf.x_dim, pf.y_dim
    )
    if args.x_range is not None:
        if pf.x_dim != 1:
            raise CliError("--x-range needs a single upper variable", EXIT_INPUT)
        lo, hi, step = args.x_range
        count = int(round((hi - lo) / step)) + 1
        xs = [np.array([lo + i * step]) for i in range(count)]
    else:
        xs = [c[: pf.x_dim] for c in pf.candidates.values()]
        if not xs:
            raise CliError("no candidates and no --x-range given", EXIT_INPUT)
    rows = []
    for x in xs:
        try:
            sample = vf.evaluate_value(prob, x, pf.grid)
        except vf.InfeasibleOnBox as err:
            raise CliError(str(err), EXIT_INPUT) from None
        rows.append(
            {
                "x": x.tolist(),
                "theta": sample.theta,
                "argmins": [y.tolist() for y in sample.argmins[:16]],
            }
        )
    results = {"samples": rows}
    probes = {}
    for name, cand in pf.candidates.items():
        try:
            report = vf.inner_semicontinuity_probe(prob, cand, pf.grid, params)
        except vf.ValueFnError:
            continue
        probes[name] = {
            "verdict": report.verdict,
            "worst_distance": report.worst_distance,
            "threshold": report.threshold,
        }
    results["isc_probes"] = probes
    if args.csv:
        header = ",".join(f"x_{i}" for i in range(pf.x_dim)) + ",theta"
        lines = [header]
        for row in rows:
            lines.append(",".join(repr(v) for v in row["x"]) + "," + repr(row["theta"]))
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        results["csv"] = args.csv
    return _report("valuefn", pf.digest, _seed(pf, args), results), EXIT_OK


def _certificate_results(out) -> dict:
    if isinstance(out, bl.StationarityCertificate):
        return {
            "outcome": "certificate",
            "theorem": out.theorem_id,
            "multipliers": _ser(out.multipliers),
            "u": _ser(out.u),
            "kappa": out.kappa,
            "branch_choices": _ser(out.branch_choices),
            "residuals": _ser(out.residuals),
        }
    return {
        "outcome": "no-certificate",
        "theorem": out.theorem_id,
        "tightest_infeasibility_margin": out.margin,
    }


def cmd_certify(args) -> tuple[dict, int]:
    pf = _load(args.file)
    params = _params(pf, args)
    try:
        cand = pf.candidate(args.at)
    except ProblemFileError as err:
        raise CliError(str(err), EXIT_INPUT) from None

    if args.theorem == "t61":
        try:
            prog = pf.single_level_program()
            out = bl.check_lipschitz_kkt(prog, cand, params)
        except (ProblemFileError, bl.BilevelError) as err:
            raise CliError(str(err), EXIT_INPUT) from None
        code = EXIT_OK if isinstance(out, bl.StationarityCertificate) else EXIT_NO_CERTIFICATE
        return (
            _report(
                "certify",
                pf.digest,
                _seed(pf, args),
                _certificate_results(out),
                ledger=out.ledger,
                caveat=out.caveat,
            ),
            code,
        )

    if pf.grid is None:
        raise CliError("certify needs a [grid] section", EXIT_INPUT)
    try:
        bp = pf.bilevel_problem()
    except (ProblemFileError, bl.BilevelError) as err:
        raise CliError(str(err), EXIT_INPUT) from None
    certifier = bl.certify_T74 if args.theorem == "t74" else bl.certify_T83
    kwargs = {"override_calmness": args.override_calmness}
    if args.theorem == "t74":
        kwargs["override_isc"] = args.override_isc
    try:
        if args.kappa_sweep:
            out = bl.certify_with_kappa_sweep(
                certifier, bp, cand, pf.kappa_grid, pf.grid, params, **kwargs
            )
        else:
            kappa = args.kappa if args.kappa is not None else pf.kappa_grid[0]
            out = certifier(bp, cand, kappa, pf.grid, params, **kwargs)
    except bl.HypothesisFailure as err:
        report = _report(
            "certify",
            pf.digest,
            _seed(pf, args),
            {"outcome": "hypothesis-failure", "reason": str(err)},
            ledger=err.ledger,
            caveat=bl.CAVEAT,
        )
        return report, EXIT_HYPOTHESIS
    except (bl.BilevelError, vf.ValueFnError) as err:
        raise CliError(str(err), EXIT_INPUT) from None
    code = EXIT_OK if isinstance(out, bl.StationarityCertificate) else EXIT_NO_CERTIFICATE
    return (
        _report(
            "certify",
            pf.digest,
            _seed(pf, args),
            _certificate_results(out),
            ledger=out.ledger,
            caveat=out.caveat,
        ),
        code,
    )


def cmd_verify(args) -> tuple[dict, int]:
    seed = args.seed if args.seed is not None else 0
    params = replace(sd.DEFAULT_PARAMS, seed=seed, dirs_per_radius=args.dirs)
    if args.builtin_corpus:
        entries = cp.CORPUS
        digest_src = "\n".join(f"{e.name} {e.text}" for e in entries)
        digest = "sha256:" + hashlib.sha256(digest_src.encode()).hexdigest()
        report = cp.run_verify_suite(entries, params=params)
    else:
        if not args.file:
            raise CliError("verify needs a file or --builtin-corpus", EXIT_INPUT)
        pf = _load(args.file)
        digest = pf.digest
        report = _verify_file(pf, params)
    results = {
        "checks": [c.as_json() for c in report.checks],
        "passed": sum(1 for c in report.checks if c.passed),
        "failed": [c.as_json() for c in report.failing()],
    }
    code = EXIT_OK if report.all_passed else 1
    return _report("verify", digest, seed, results), code


def _verify_file(pf: ProblemFile, params: sd.SampleParams) -> cp.VerifyReport:
    report = cp.VerifyReport()
    functions: list[tuple[str, ex.FunctionDef]] = []
    if pf.lower_objective is not None:
        functions.append(("lower.objective", pf.lower_objective))
        functions += [
            (f"lower.constraint.{i}", f) for i, f in enumerate(pf.lower_constraints)
        ]
    if pf.upper_objective is not None:
        functions.append(("upper.objective", pf.upper_objective))
    functions += [(f"upper.constraint.{j}", g) for j, g in enumerate(pf.upper_constraints)]
    for cname, cand in pf.candidates.items():
        for fname, fn in functions:
            point = pf.point_for(fn, cand)
            result = sd.full_subdifferential(fn, point, params, pf.tau_act)
            cloud = sd.sampled_subdiff_oracle(fn, point, params, pf.tau_act)
            d = hausdorff_distance(result.basic, cloud.as_union())
            report.checks.append(
                cp.CheckResult(
                    "oracle-consistency", f"{fname}@{cname}", d <= cp.ORACLE_HAUSDORFF_TOL, d
                )
            )
    return report


EXTREMAL_BUILTINS = ("halfplanes", "boundary", "nonextremal")


def cmd_extremal(args) -> tuple[dict, int]:
    seed = args.seed if args.seed is not None else 0
    two = lambda t: ex.parse_function(t, ex.VarSpace.of("x", "y"))
    one = lambda t: ex.parse_function(t, ex.VarSpace.of("x"))
    if args.builtin == "halfplanes":
        sets = [sd.SetSpec.sublevel([two("y")]), sd.SetSpec.sublevel([two("(- y)")])]
        point, shifts = [0.0, 0.0], [np.array([0.0, 1.0]), np.array([0.0, 0.0])]
    elif args.builtin == "boundary":
        sets = [sd.SetSpec.sublevel([one("x")]), sd.SetSpec.singleton([0.0])]
        point, shifts = [0.0], [np.array([1.0]), np.array([0.0])]
    else:
        whole = sd.SetSpec.sublevel([two("-1.0")])
        sets = [whole, whole]
        point, shifts = [0.0, 0.0], [np.array([0.1, 0.1]), np.array([0.0, 0.0])]
    digest = "sha256:" + hashlib.sha256(f"builtin-extremal:{args.builtin}".encode()).hexdigest()
    try:
        trace = sd.extremal_principle_solve(sets, point, shifts)
    except sd.ExtremalityNotWitnessed as err:
        results = {"outcome": "not-witnessed", "diagnostic": str(err), "at_k": err.k}
        return _report("extremal", digest, seed, results), EXIT_OK
    results = {
        "outcome": "trace",
        "ks": trace.ks,
        "euler_residuals": trace.euler_residuals,
        "stationarity_residuals": trace.stationarity_residuals,
        "normalization_errors": trace.normalization_errors,
        "final_normals": [v.tolist() for v in trace.normals[-1]],
    }
    return _report("extremal", digest, seed, results), EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varcalc",
        description="subdifferential calculator and bilevel stationarity certifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_file=True):
        if needs_file:
            p.add_argument("file", help="problem file")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--seed", type=int, default=None, help="sampling seed override")

    p = sub.add_parser("subdiff", help="subdifferentials of a named function")
    common(p)
    p.add_argument("--fn", required=True, help="function path, e.g. lower.objective")
    p.add_argument("--at", required=True, help="candidate point name")
    p.add_argument("--oracle", action="store_true", help="add the sampled cross-check")

    p = sub.add_parser("normalcone", help="normal cone of a constraint system")
    common(p)
    p.add_argument("--set", choices=("lower", "upper"), required=True)
    p.add_argument("--at", required=True)
    p.add_argument("--oracle", action="store_true")

    p = sub.add_parser("valuefn", help="value function samples and probes")
    common(p)
    p.add_argument("--x-range", nargs=3, type=float, metavar=("LO", "HI", "STEP"))
    p.add_argument("--csv", help="write (x, theta) rows to this path")

    p = sub.add_parser("certify", help="stationarity certificates")
    common(p)
    p.add_argument("--at", required=True)
    p.add_argument("--theorem", choices=("t61", "t74", "t83"), required=True)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--kappa-sweep", action="store_true")
    p.add_argument("--override-isc", action="store_true")
    p.add_argument("--override-calmness", action="store_true")

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("file", nargs="?", default=None)
    p.add_argument("--builtin-corpus", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dirs", type=int, default=64, help="sampling directions per radius")

    p = sub.add_parser("extremal", help="extremal-principle traces")
    p.add_argument("--builtin", choices=EXTREMAL_BUILTINS, required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=None)

    return parser


HANDLERS = {
    "subdiff": cmd_subdiff,
    "normalcone": cmd_normalcone,
    "valuefn": cmd_valuefn,
    "certify": cmd_certify,
    "verify": cmd_verify,
    "extremal": cmd_extremal,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.monotonic()
    try:
        report, code = HANDLERS[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    _emit(report, args.json, time.monotonic() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
