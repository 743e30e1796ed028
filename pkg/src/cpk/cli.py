"""Command-line interface: ``cpk check|kraus|evolve|fock|qbm|noptics``.

Exit codes: 0 success (or CP verdict), 1 input error, 3 not completely
positive, 4 numerical-validity failure.
"""
from __future__ import annotations

import os

if "CPK_THREADS" in os.environ:  # must precede the numpy import
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["CPK_THREADS"])

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import fock, lindblad, noptics, qbm, superop
from .operators import DensityMatrix, matrix_from_json, matrix_to_json

EXIT_OK, EXIT_INPUT, EXIT_NOT_CP, EXIT_NUMERICAL = 0, 1, 3, 4


class InputError(Exception):
    pass


def _load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None


def _flatten(report: dict, prefix: str = "") -> dict:
    flat = {}
    for key, val in report.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(_flatten(val, name + "."))
        elif isinstance(val, (list, tuple)):
            flat[name] = json.dumps(val, sort_keys=True)
        else:
            flat[name] = val
    return flat


def _format_value(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_report(report: dict, args):
    if args.format == "csv":
        flat = _flatten(report)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(flat.keys())
        w.writerow(_format_value(v) for v in flat.values())
        _emit(buf.getvalue(), args.out)
    else:
        _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)


def _emit_table(header, rows, args):
    if args.format == "json":
        data = [dict(zip(header, (float(v) for v in row))) for row in rows]
        _emit(json.dumps(data, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(repr(float(v)) for v in row)
        _emit(buf.getvalue(), args.out)


# ---------------------------------------------------------------------------
# subcommands

def cmd_check(args) -> int:
    try:
        m = superop.map_from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    try:
        report = superop.cp_report(m, 1e-10 if args.tol is None else args.tol)
    except superop.NotHermiticityPreservingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _emit_report(report, args)
    return EXIT_OK if report["is_cp"] else EXIT_NOT_CP


def cmd_kraus(args) -> int:
    try:
        m = superop.map_from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    try:
        k = superop.kraus_set_from_map(m, args.rank_tol)
    except superop.NotCompletelyPositiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CP
    except superop.NotHermiticityPreservingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    rebuilt = superop.superop_from_kraus(k)
    target = m if m.picture == "schroedinger" else superop.adjoint_superop(m)
    report = superop.map_to_json(k)
    report["reconstruction_error"] = superop.frobenius_distance(rebuilt, target)
    report["effect"] = matrix_to_json(k.effect)
    _emit_report(report, args)
    return EXIT_OK


def cmd_evolve(args) -> int:
    try:
        spec = lindblad.LindbladSpec.from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    if args.t0 < 0:
        raise InputError("t0 must be >= 0 (semigroup evolution)")
    if args.t1 < args.t0 or args.steps < 1 or (args.steps == 1 and args.t1 != args.t0):
        raise InputError("need t1 >= t0 and steps >= 1 (steps = 1 only with t1 = t0)")
    d = spec.dim
    observables, names = [], None
    if args.observables:
        obj = _load_json(args.observables)
        items = obj.get("observables", []) if isinstance(obj, dict) else obj
        try:
            observables = [matrix_from_json(o) for o in items]
        except ValueError as exc:
            raise InputError(f"{args.observables}: {exc}") from None
        if isinstance(obj, dict) and "names" in obj:
            names = list(obj["names"])
    if args.rho0:
        try:
            rho0 = DensityMatrix(matrix_from_json(_load_json(args.rho0))).matrix
        except ValueError as exc:
            raise InputError(f"{args.rho0}: {exc}") from None
    else:
        rho0 = np.zeros((d, d), dtype=complex)
        rho0[d - 1, d - 1] = 1.0
    if any(o.shape != (d, d) for o in observables) or rho0.shape != (d, d):
        raise InputError("observable or initial-state dimension does not match the Lindblad spec file")
    grid = np.linspace(args.t0, args.t1, args.steps)
    try:
        # rho0 is the state at t0; the generator is time independent
        states = lindblad.evolve_state(spec, rho0, grid - args.t0)
    except lindblad.IntegrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    header = ["t", *(names or [f"observable_{i + 1}" for i in range(len(observables))]), "trace"]
    rows = [[t, *(np.trace(o @ rho).real for o in observables), np.trace(rho).real]
            for t, rho in zip(grid, states)]
    _emit_table(header, rows, args)
    tol = 1e-8 if args.tol is None else args.tol
    if spec.convention == "standard" and any(abs(r[-1] - 1) > tol for r in rows):
        print("error: trace drift exceeds tolerance", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fock(args) -> int:
    try:
        spec = fock.BilinearGeneratorSpec.from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    rng = np.random.default_rng(args.seed)
    m = spec.mode_system.modes
    report = {"number_conserving": spec.number_conserving}
    if args.report in ("all", "number"):
        report["number_conservation_residual"] = fock.number_conservation_check(spec)
    if args.report in ("all", "decomposition"):
        worst = fock.DecompositionResidual(0.0, 0.0)
        for h in range(m):
            for k in range(m):
                r = fock.decomposition_check(spec, h, k, args.dt)
                worst = fock.DecompositionResidual(max(worst.first_order, r.first_order),
                                                   max(worst.full, r.full))
        report["decomposition_first_order_residual"] = worst.first_order
        report["decomposition_full_residual"] = worst.full
    if args.report in ("all", "restricted"):
        report["restricted_cp_min"] = fock.restricted_cp_check(spec, args.dt, args.trials, rng)
    _emit_report(report, args)
    return EXIT_OK


def cmd_qbm(args) -> int:
    try:
        params = qbm.QbmParams.from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    basis = qbm.OscillatorBasis(args.basis_levels, args.omega, params.M, params.hbar)
    d_qq = 0.0 if args.dqq == "zero" else None
    h_extra = basis.harmonic_potential() if args.trap else None
    if args.format is None:
        args.format = "csv" if args.report == "moments" else "json"
    if args.report == "equivalence":
        _emit_report(qbm.equivalence_report(params, basis), args)
        return EXIT_OK
    if args.report == "cp":
        report = {
            "dt": args.dt,
            "dqq": "zero" if d_qq == 0.0 else "full",
            "min_choi_eig": qbm.cp_small_time(params, basis, args.dt, h_extra, d_qq),
            "min_choi_eig_exp": qbm.cp_small_time(params, basis, args.dt, h_extra, d_qq, method="exp"),
        }
        _emit_report(report, args)
        return EXIT_OK
    if args.t1 < args.t0 or args.t0 < 0 or args.steps < 1:
        raise InputError("need 0 <= t0 <= t1 and steps >= 1")
    rho0 = basis.coherent_state(complex(args.alpha[0], args.alpha[1]))
    grid = np.linspace(args.t0, args.t1, args.steps)
    try:
        rows = qbm.moment_trajectory(params, basis, h_extra, rho0, grid - args.t0, d_qq)
    except qbm.TruncationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    rows = [[t, *r[1:]] for t, r in zip(grid, rows)]
    _emit_table(qbm.MOMENT_COLUMNS, rows, args)
    return EXIT_OK


def _structure_from_args(args):
    if args.S:
        try:
            return noptics.read_structure_csv(args.S)
        except OSError as exc:
            raise InputError(f"cannot read {args.S}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if args.isotropic is not None:
        return noptics.StructureFunction.isotropic(args.isotropic)
    return None


def cmd_noptics(args) -> int:
    try:
        medium = noptics.MediumSpec.from_json(_load_json(args.input))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.input}: {exc}") from None
    if args.wavelength <= 0:
        raise InputError("lambda must be positive")
    s = _structure_from_args(args)
    if not args.with_absorption:
        s = None
    elif s is None and medium.b != 0:
        raise InputError("--with-absorption needs a structure function (--S or --isotropic)")
    try:
        report = noptics.optics_report(medium, args.wavelength, s)
    except noptics.ExtrapolationError as exc:
        raise InputError(str(exc)) from None
    _emit_report(report, args)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--in", dest="input", required=True, help="input file")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks (default: 0)")
    common.add_argument("--tol", type=float, default=None,
                        help="tolerance override (check: 1e-10 on the Choi spectrum, evolve: 1e-8 on the trace)")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv")

    parser = argparse.ArgumentParser(prog="cpk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="certify complete positivity of a map")
    p.set_defaults(func=cmd_check, format_default="json")

    p = sub.add_parser("kraus", parents=[common], help="Kraus operators from a CP map")
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_kraus, format_default="json")

    p = sub.add_parser("evolve", parents=[common], help="Lindblad trajectory of observables")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--steps", type=int, default=11, help="number of grid points (default: 11)")
    p.add_argument("--observables", help="JSON list of matrices, or {names, observables}")
    p.add_argument("--rho0", help="initial density matrix (default: top basis state)")
    p.set_defaults(func=cmd_evolve, format_default="csv")

    p = sub.add_parser("fock", parents=[common], help="field-bilinear generator checks")
    p.add_argument("--report", choices=["all", "number", "decomposition", "restricted"], default="all")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--trials", type=int, default=200)
    p.set_defaults(func=cmd_fock, format_default="json")

    p = sub.add_parser("qbm", parents=[common], help="quantum Brownian motion studies")
    p.add_argument("--report", choices=["equivalence", "cp", "moments"], default="moments")
    p.add_argument("--basis-levels", type=int, default=30)
    p.add_argument("--omega", type=float, default=1.0, help="reference oscillator frequency")
    p.add_argument("--dqq", choices=["full", "zero"], default="full",
                   help="'zero' gives the Caldeira-Leggett variant")
    p.add_argument("--trap", action="store_true", help="add a harmonic trap at the basis frequency")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, nargs=2, default=(1.0, 0.0), metavar=("RE", "IM"),
                   help="coherent-state amplitude of the initial state")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=11)
    p.set_defaults(func=cmd_qbm, format_default=None)

    p = sub.add_parser("noptics", parents=[common], help="neutron-optics observables")
    p.add_argument("--lambda", dest="wavelength", type=float, required=True, help="wavelength in m")
    p.add_argument("--S", help="structure-function CSV with header q,S")
    p.add_argument("--isotropic", type=float, nargs="?", const=1.0, default=None,
                   help="constant S(q) (default value 1)")
    p.add_argument("--with-absorption", action="store_true",
                   help="include the diffuse-scattering (imaginary) part of the potential")
    p.set_defaults(func=cmd_noptics, format_default="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.format_default
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
