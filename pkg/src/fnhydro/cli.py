"""Command-line interface: ``fnhydro <command> MANIFEST [flags]``.

Exit codes: 0 when every requested residual is within tolerance, 1 when one
is not, 2 for an invalid manifest, 3 when a computation fails.  A JSON report
is written to ``--out`` in every case.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import grad
from .chains import conservation_pair, covariant_dN_check, export_chain, is_biclosed
from .checks import CheckContext, format_table, run_checks, haantjes_relative
from .errors import FNError, ManifestError
from .fntheory import fn_bracket, nijenhuis_torsion, torsion_components
from .hydro import (
    commutation_experiment,
    conservation_residual,
    pointwise_compatibility,
    refinement_ratios,
    simulate,
)
from .manifest import Manifest, emit_examples
from .sampling import DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, scale_of

EXIT_OK, EXIT_RESIDUAL, EXIT_MANIFEST, EXIT_COMPUTE = 0, 1, 2, 3
CONVERGE_BAND = (3.0, 5.0)
STALL_CHANGE = 0.2
WRONG_PAIR_FLOOR = 0.1


class Settings:
    """seed / tolerance / samples with flag > manifest > default precedence."""

    def __init__(self, args, manifest: Manifest | None):
        data = manifest.data if manifest else {}

        def pick(flag, key, default):
            if flag is not None:
                return flag, "flag"
            if key in data:
                return data[key], "manifest"
            return default, "default"

        self.seed, s_seed = pick(args.seed, "seed", DEFAULT_SEED)
        self.samples, s_samples = pick(args.samples, "samples", DEFAULT_SAMPLES)
        tol = dict(manifest.tolerances) if manifest else {"residual": DEFAULT_TOL, "closed": DEFAULT_TOL}
        if args.tol is not None:
            tol = {k: args.tol for k in tol}
            s_tol = "flag"
        else:
            s_tol = "manifest" if "tolerances" in data else "default"
        self.tolerances = tol
        self.sources = {"seed": s_seed, "samples": s_samples, "tolerances": s_tol}

    @property
    def tol(self) -> float:
        return float(self.tolerances["residual"])

    def chain(self, m: Manifest, name: str):
        return m.chain(name, samples=self.samples, seed=self.seed, tol=self.tol)

    def points(self, m: Manifest, offset: int = 0):
        return m.domain.sample(self.samples, self.seed + offset)

    def to_json(self) -> dict:
        return {"seed": self.seed, "samples": self.samples, "tolerances": self.tolerances,
                "sources": self.sources}


def _entry(label: str, value: float, tol: float, **extra) -> dict:
    value = float(value)
    return {"label": label, "value": value, "tol": tol, "passed": bool(np.isfinite(value) and value <= tol), **extra}


def _tensor_names(m: Manifest, args) -> list:
    names = args.tensor or m.tensor_names()
    for n in names:
        if n not in m.tensor_names():
            raise ManifestError(f"unknown tensor {n!r}")
    return names


def _rel_torsion(N, pts):
    comps = torsion_components(N, pts)
    return float(np.max(np.abs(comps))) / scale_of(N.values(pts)), comps


# -- commands --------------------------------------------------------------


def cmd_torsion(m, s, args):
    pts = s.points(m)
    out = []
    for name in _tensor_names(m, args):
        N = m.tensor(name)
        res, oracle = _rel_torsion(N, pts)
        bracket = nijenhuis_torsion(N).components(pts)
        diff = float(np.max(np.abs(bracket - oracle))) / scale_of(oracle)
        out.append(_entry(f"T({name})", res, s.tol, oracle_difference=diff,
                          expect=m.tensor_expectation(name).get("torsion_free")))
    return out


def cmd_haantjes(m, s, args):
    pts = s.points(m)
    rng = np.random.default_rng(s.seed)
    U, V = rng.standard_normal((2, len(pts), m.dim))
    out = []
    for name in _tensor_names(m, args):
        h, _ = haantjes_relative(m.tensor(name), pts, U, V)
        out.append(_entry(f"H({name})", h, s.tol, expect=m.tensor_expectation(name).get("haantjes_free")))
    if not args.tensor:
        for cname in m.chain_names("lm"):
            c = s.chain(m, cname)
            for k in range(1, c.K + 1):
                h, t = haantjes_relative(c.M[k], pts, U, V)
                out.append(_entry(f"H(M_{k}) [{cname}]", h, s.tol, torsion_max=t))
    return out


def _pairs(m, args, kind):
    if args.pair:
        return [(f"{a},{b}", a, b, "pass") for a, b in args.pair]
    exps = m.experiments(kind)
    if exps:
        return [(name, e["A"], e["B"], e.get("expect", "pass")) for name, e in exps.items()]
    names = m.tensor_names()
    return [(f"{a},{b}", a, b, "pass") for i, a in enumerate(names) for b in names[i:]]


def cmd_fnbracket(m, s, args):
    pts = s.points(m)
    out = []
    for label, a, b, expect in _pairs(m, args, "fnbracket"):
        A, B = m.flow(a).M, m.flow(b).M
        comps = fn_bracket(A, B).components(pts)
        val = float(np.max(np.abs(comps))) / scale_of(A.values(pts), B.values(pts))
        out.append(_entry(f"[{label}]_FN", val, s.tol, expect=expect))
    return out


def cmd_compat(m, s, args):
    pts = s.points(m)
    out = []
    for label, a, b, expect in _pairs(m, args, "compat"):
        r = pointwise_compatibility(m.flow(a).M, m.flow(b).M, pts, s.tol)
        out.append(_entry(f"compat {label}", max(r.commutator, r.bracket), s.tol,
                          commutator=r.commutator, bracket=r.bracket, expect=expect))
    return out


def cmd_biclosed(m, s, args):
    pts = s.points(m, 1)
    out = []
    for cname in args.chain or m.chain_names():
        c = s.chain(m, cname)
        if c.kind == "lenard":
            for k, rho in enumerate(c.rho):
                r = is_biclosed(rho, c.N, pts, s.tolerances["closed"])
                out.append(_entry(f"rho_{k} [{cname}]", max(r.closed_residual, r.n_closed_residual),
                                  s.tolerances["closed"], closed=r.closed_residual, n_closed=r.n_closed_residual))
        else:
            for k in range(1, c.K + 1):
                _, _, cert = conservation_pair(c, k, pts)
                r = is_biclosed(grad(c.a[k]), c.N, pts, s.tolerances["closed"])
                out.append(_entry(f"M_{k}^* da_0 [{cname}]", max(cert, r.closed_residual), s.tolerances["closed"],
                                  closed=r.closed_residual, certificate=cert))
    return out


def cmd_chain(m, s, args):
    names = [args.name] if args.name else m.chain_names(args.kind)
    if not names:
        raise ManifestError(f"manifest declares no {args.kind} chain")
    out = []
    outdir = Path(args.out)
    for cname in names:
        if cname not in m.chain_names(args.kind):
            raise ManifestError(f"no {args.kind} chain named {cname!r}")
        c = s.chain(m, cname)
        doc = export_chain(c, counts=[args.lattice] * m.dim)
        (outdir / f"chain-{cname}.json").write_text(json.dumps(doc, indent=2) + "\n")
        certs = doc["certificates"]
        worst = max([certs.get("torsion", 0.0), certs.get("seed", 0.0)]
                    + list(certs.get("closed", [])) + list(certs.get("biclosed", []))
                    + list(certs.get("conservation", [])))
        entry = _entry(f"chain {cname}", worst, s.tol, kind=c.kind, K=c.K, provenance=list(c.provenance),
                       lattice=doc["lattice"]["points"], a=doc["a"], file=f"chain-{cname}.json")
        if c.kind == "lorenzoni-magri" and c.K >= 1:
            step_r, flat_r = covariant_dN_check(c, s.points(m))
            entry["covariant"] = {"step": step_r, "flatness": flat_r}
        out.append(entry)
    return out


def cmd_simulate(m, s, args):
    sims = m.simulations()
    names = [args.name] if args.name else list(sims)
    out = []
    for name in names:
        if name not in sims:
            raise ManifestError(f"unknown simulation {name!r}")
        spec = sims[name]
        sol = simulate(m.flow(spec["flow"]), spec["initial"], spec["Ny"], spec["L"], spec["T"],
                       spec.get("cfl", 0.4), save_every=spec.get("save_every", 1))
        csv_name = f"{name}-frames.csv"
        sol.to_csv(Path(args.out) / csv_name)
        bound = float(sol.params["cfl_bound"])
        out.append({"label": f"simulate {name}", "value": float(np.max(sol.cfl)), "tol": bound,
                    "passed": bool(np.max(sol.cfl) <= bound), "frames": csv_name, **sol.report()})
    return out


def _selected(m, kind, args):
    exps = m.experiments(kind)
    if args.name:
        if args.name not in exps:
            raise ManifestError(f"no {kind} experiment named {args.name!r}")
        return {args.name: exps[args.name]}
    return exps


def _judge(series, expect, kind):
    ratios = refinement_ratios(series)
    if expect == "pass":
        ok = all(CONVERGE_BAND[0] <= r <= CONVERGE_BAND[1] for r in ratios)
        return ok, ratios, {"criterion": f"ratios in {list(CONVERGE_BAND)}"}
    if kind == "commute":
        change = max(abs(v / series[0] - 1.0) for v in series)
        return change < STALL_CHANGE, ratios, {"criterion": f"relative change < {STALL_CHANGE}", "change": change}
    floor = min(series) / series[0]
    return floor >= WRONG_PAIR_FLOOR, ratios, {"criterion": f"min/coarsest >= {WRONG_PAIR_FLOOR}", "floor": floor}


def cmd_commute(m, s, args):
    out = []
    for name, e in _selected(m, "commute", args).items():
        A, B = m.flow(e["A"]), m.flow(e["B"])
        series = [commutation_experiment(A, B, e["initial"], Ny, e["L"], e["s"], e["t"]).discrepancy
                  for Ny in e["levels"]]
        ok, ratios, info = _judge(series, e.get("expect", "pass"), "commute")
        out.append({"label": f"commute {name}", "passed": ok, "expect": e.get("expect", "pass"),
                    "levels": e["levels"], "discrepancy": series, "ratios": ratios, **info})
    return out


def cmd_conserve(m, s, args):
    out = []
    for name, e in _selected(m, "conserve", args).items():
        flow = m.flow(e["flow"])
        f, h, cert = m.pair(e["pair"])
        series = []
        for Ny in e["levels"]:
            sol = simulate(flow, e["initial"], Ny, e["L"], e["T"])
            series.append(float(np.max(conservation_residual(sol, f, h, cert if cert is not None else None))))
        ok, ratios, info = _judge(series, e.get("expect", "pass"), "conserve")
        out.append({"label": f"conserve {name}", "passed": ok, "expect": e.get("expect", "pass"),
                    "certificate": cert, "levels": e["levels"], "residual": series, "ratios": ratios, **info})
    return out


def manifest_checks(m, s) -> list:
    """Checks derived from a manifest, each judged against its declared expectation."""
    out = []
    pts = s.points(m)
    rng = np.random.default_rng(s.seed)
    U, V = rng.standard_normal((2, len(pts), m.dim))
    for name in m.tensor_names():
        exp = m.tensor_expectation(name)
        if "torsion_free" in exp:
            res, _ = _rel_torsion(m.tensor(name), pts)
            want = exp["torsion_free"]
            out.append({"label": f"T({name}) {'= 0' if want else '!= 0'}", "value": res,
                        "passed": (res <= s.tol) == want})
        if "haantjes_free" in exp:
            h, _ = haantjes_relative(m.tensor(name), pts, U, V)
            out.append(_entry(f"H({name})", h, s.tol) if exp["haantjes_free"]
                       else {"label": f"H({name}) != 0", "value": h, "passed": h > s.tol})
    for cname in m.chain_names("lm"):
        c = s.chain(m, cname)
        for k in range(1, c.K + 1):
            h, _ = haantjes_relative(c.M[k], pts, U, V)
            out.append(_entry(f"H(M_{k}) [{cname}]", h, s.tol))
        for k in range(1, c.K + 1):
            out.append(_entry(f"certificate k={k} [{cname}]", conservation_pair(c, k, pts)[2], s.tol))
        step_r, flat_r = covariant_dN_check(c, pts)
        out.append(_entry(f"da_(k+1) = D_N a_k [{cname}]", step_r, s.tol))
        out.append(_entry(f"D_N^2 a_k = 0 [{cname}]", flat_r, s.tol))
    for cname in m.chain_names("lenard"):
        for e in cmd_biclosed(m, s, argparse.Namespace(chain=[cname])):
            out.append(e)
    for name, e in m.experiments("compat").items():
        r = pointwise_compatibility(m.flow(e["A"]).M, m.flow(e["B"]).M, pts, s.tol)
        val = max(r.commutator, r.bracket)
        want = e.get("expect", "pass") == "pass"
        out.append({"label": f"compat {name}", "value": val, "passed": (val <= s.tol) == want})
    ns = argparse.Namespace(name=None)
    out += cmd_commute(m, s, ns)
    out += cmd_conserve(m, s, ns)
    return out


def cmd_verify(m, s, args):
    results = []
    if m is not None:
        for e in manifest_checks(m, s):
            results.append({"check": e["label"], "passed": bool(e["passed"]), "value": e.get("value"),
                            "group": "manifest", **({"detail": e} if "discrepancy" in e or "residual" in e else {})})
    if not args.manifest_only:
        ctx = CheckContext(samples=s.samples, seed=s.seed, tol=s.tol)
        from .checks import REGISTRY

        names = [n for n in REGISTRY if not args.only or any(p in n for p in args.only)]
        for r in run_checks(names, ctx):
            results.append({"check": r.name, "passed": r.passed, "group": REGISTRY[r.name].group,
                             "error": r.error, "parts": [p.to_json() for p in r.parts]})
    width = max((len(r["check"]) for r in results), default=5)
    print(f"{'check':<{width}}  status")
    for r in results:
        print(f"{r['check']:<{width}}  {'pass' if r['passed'] else 'FAIL'}")
    print(f"{sum(r['passed'] for r in results)}/{len(results)} checks passed")
    return results


COMMANDS = {
    "torsion": cmd_torsion,
    "haantjes": cmd_haantjes,
    "fnbracket": cmd_fnbracket,
    "compat": cmd_compat,
    "biclosed": cmd_biclosed,
    "chain": cmd_chain,
    "simulate": cmd_simulate,
    "commute": cmd_commute,
    "conserve": cmd_conserve,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fnhydro", description="Frolicher-Nijenhuis calculus, conservation-law "
                                "chains and hydrodynamic-type flows.")
    p.add_argument("--version", action="version", version=f"fnhydro {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest_required=True):
        if manifest_required:
            sp.add_argument("manifest", help="JSON manifest (schema 1)")
        sp.add_argument("--seed", type=int, help="RNG seed for sample points")
        sp.add_argument("--tol", type=float, help="residual tolerance (overrides the manifest)")
        sp.add_argument("--samples", type=int, help="number of sample points")
        sp.add_argument("--out", default="fnhydro-out", help="directory for reports and frames")

    for name in ("torsion", "haantjes"):
        sp = sub.add_parser(name, help=f"{name} residuals of the manifest's tensors")
        common(sp)
        sp.add_argument("--tensor", action="append", help="restrict to a named tensor (repeatable)")
    for name in ("fnbracket", "compat"):
        sp = sub.add_parser(name, help=f"{name} residuals for pairs of tensors")
        common(sp)
        sp.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"), help="tensor pair (repeatable)")
    sp = sub.add_parser("biclosed", help="closedness residuals of chain 1-forms")
    common(sp)
    sp.add_argument("--chain", action="append", help="restrict to a named chain (repeatable)")
    sp = sub.add_parser("chain", help="build and export a Lenard or Lorenzoni-Magri chain")
    sp.add_argument("kind", choices=["lenard", "lm"])
    common(sp)
    sp.add_argument("--name", help="chain name in the manifest")
    sp.add_argument("--lattice", type=int, default=5, help="lattice points per axis in the export")
    for name in ("simulate", "commute", "conserve"):
        sp = sub.add_parser(name, help=f"run the manifest's {name} specs")
        common(sp)
        sp.add_argument("--name", help="run only this entry")
    sp = sub.add_parser("verify", help="run manifest checks and the full check registry")
    sp.add_argument("manifest", nargs="?", help="optional JSON manifest")
    common(sp, manifest_required=False)
    sp.add_argument("--only", action="append", help="run registry checks whose name contains this text")
    sp.add_argument("--manifest-only", action="store_true", help="skip the check registry")
    sp = sub.add_parser("emit-examples", help="write the bundled example manifests")
    sp.add_argument("outdir", nargs="?", default="examples-manifests")
    return p


def _write_report(args, doc):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.command}-report.json"
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "emit-examples":
        paths = emit_examples(args.outdir)
        for p in paths:
            print(p)
        return EXIT_OK
    doc = {"command": args.command, "version": __version__, "manifest": getattr(args, "manifest", None)}
    manifest = None
    try:
        if args.manifest is not None:
            manifest = Manifest.load(args.manifest)
    except ManifestError as exc:
        s = Settings(args, None)
        doc.update(s.to_json(), status="manifest-error", error=str(exc), exit_code=EXIT_MANIFEST)
        _write_report(args, doc)
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    s = Settings(args, manifest)
    doc.update(s.to_json())
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        results = COMMANDS[args.command](manifest, s, args)
    except ManifestError as exc:
        doc.update(status="manifest-error", error=str(exc), exit_code=EXIT_MANIFEST)
        _write_report(args, doc)
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (FNError, ValueError, ArithmeticError) as exc:
        doc.update(status="computation-error", error=f"{type(exc).__name__}: {exc}",
                   traceback=traceback.format_exc().splitlines()[-3:], exit_code=EXIT_COMPUTE)
        _write_report(args, doc)
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    passed = all(r["passed"] for r in results)
    code = EXIT_OK if passed else EXIT_RESIDUAL
    doc.update(status="ok" if passed else "residual-failure", results=results, exit_code=code)
    path = _write_report(args, doc)
    if args.command != "verify":
        for r in results:
            val = r.get("value")
            shown = f"{val:.3e}" if isinstance(val, float) else ""
            print(f"{'pass' if r['passed'] else 'FAIL'}  {r['label']}  {shown}")
    print(f"report: {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
