"""JSON manifests: named tensors, scalars, chains, simulations and experiments.

Expressions are strings in the expression language.  A manifest is validated
eagerly on load; chains are built lazily and cached per manifest object.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .calculus import ScalarField, Tensor11
from .chains import MAX_DEPTH, lenard_chain, lm_chain
from .errors import ExprSyntaxError, FNError, ManifestError
from .exprdsl import default_names, parse
from .hydro import FlowSpec, chain_flow
from .sampling import DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, Domain

SCHEMA_VERSION = 1
EXAMPLE_FILES = (
    "identity.json",
    "diagonal-2d.json",
    "diagonal-3d.json",
    "nilpotent-control.json",
    "incompatible-control.json",
)
CHAIN_KINDS = {"lenard": "lenard", "lm": "lm", "lorenzoni-magri": "lm"}
TOP_KEYS = {
    "schema", "name", "description", "dim", "coordinates", "domain", "tensors", "scalars", "chains",
    "simulations", "experiments", "tolerances", "samples", "seed",
}
EXPERIMENT_KINDS = {"compat", "commute", "conserve", "fnbracket"}


def _fail(where: str, msg: str):
    raise ManifestError(f"{where}: {msg}")


def _expect(cond, where, msg):
    if not cond:
        _fail(where, msg)


@dataclass
class Manifest:
    data: dict
    source: str = "<dict>"

    # --- construction -------------------------------------------------
    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, str(path))

    @classmethod
    def from_dict(cls, data: dict, source: str = "<dict>") -> "Manifest":
        return cls(copy.deepcopy(data), source)

    def __post_init__(self):
        self._tensors: dict = {}
        self._scalars: dict = {}
        self._chains: dict = {}
        self.validate()

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    # --- accessors ----------------------------------------------------
    @property
    def dim(self) -> int:
        return int(self.data["dim"])

    @property
    def name(self) -> str:
        return self.data.get("name", Path(self.source).stem)

    @property
    def coordinates(self) -> list:
        return list(self.data.get("coordinates") or default_names(self.dim))

    @property
    def tolerances(self) -> dict:
        tol = {"residual": DEFAULT_TOL, "closed": DEFAULT_TOL}
        tol.update(self.data.get("tolerances", {}))
        return tol

    @property
    def samples(self) -> int:
        return int(self.data.get("samples", DEFAULT_SAMPLES))

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", DEFAULT_SEED))

    @property
    def domain(self) -> Domain:
        d = self.data.get("domain") or {}
        box = d.get("box") or [[-2.0, 2.0]] * self.dim
        base = d.get("basepoint") or [0.0] * self.dim
        excl = tuple((parse(e["expr"], self.dim, self.coordinates), float(e["margin"]))
                     for e in d.get("exclude", []))
        return Domain(tuple(tuple(map(float, b)) for b in box), tuple(map(float, base)), excl)

    def tensor_names(self) -> list:
        return list(self.data.get("tensors", {}))

    def tensor(self, name: str) -> Tensor11:
        if name not in self._tensors:
            spec = self.data["tensors"][name]
            rows = spec["components"] if isinstance(spec, dict) else spec
            self._tensors[name] = Tensor11.from_components(rows, self.coordinates, recipe=name)
        return self._tensors[name]

    def tensor_expectation(self, name: str) -> dict:
        spec = self.data["tensors"][name]
        return dict(spec.get("expect", {})) if isinstance(spec, dict) else {}

    def scalar(self, name: str) -> ScalarField:
        if name not in self._scalars:
            self._scalars[name] = ScalarField.from_expr(self.data["scalars"][name], self.dim, self.coordinates)
        return self._scalars[name]

    def chain_names(self, kind: str | None = None) -> list:
        chains = self.data.get("chains", {})
        if kind is None:
            return list(chains)
        kind = CHAIN_KINDS[kind]
        return [k for k, v in chains.items() if CHAIN_KINDS[v["kind"]] == kind]

    def chain_spec(self, name: str) -> dict:
        return self.data["chains"][name]

    def chain(self, name: str, *, samples: int | None = None, seed: int | None = None,
              tol: float | None = None):
        key = (name, samples, seed, tol)
        if key not in self._chains:
            spec = self.chain_spec(name)
            N = self.tensor(spec["N"])
            a0 = self._scalar_ref(spec["a0"])
            kw = dict(samples=samples or self.samples, seed=self.seed if seed is None else seed,
                      tol=tol or self.tolerances["residual"], tol_closed=self.tolerances["closed"],
                      domain=self.domain)
            if CHAIN_KINDS[spec["kind"]] == "lenard":
                c = lenard_chain(N, a0, int(spec["K"]), **kw)
            else:
                cf = {int(k): v for k, v in spec.get("closed_forms", {}).items()}
                c = lm_chain(N, a0, int(spec["K"]), closed_forms=cf or None, **kw)
            self._chains[key] = c
        return self._chains[key]

    def _scalar_ref(self, ref) -> ScalarField:
        if ref in self.data.get("scalars", {}):
            return self.scalar(ref)
        return ScalarField.from_expr(ref, self.dim, self.coordinates)

    def flow(self, ref) -> FlowSpec:
        if isinstance(ref, str):
            return FlowSpec(self.tensor(ref), ref)
        c = self.chain(ref["chain"])
        return chain_flow(c, int(ref["k"]))

    def pair(self, ref) -> tuple:
        """(f, h, certificate or None) for a conservation experiment."""
        if "chain" in ref:
            from .chains import conservation_pair

            c = self.chain(ref["chain"])
            return conservation_pair(c, int(ref["k"]), self.domain.sample(self.samples, self.seed))
        return self._scalar_ref(ref["f"]), self._scalar_ref(ref["h"]), ref.get("certificate")

    def simulations(self) -> dict:
        return dict(self.data.get("simulations", {}))

    def experiments(self, kind: str | None = None) -> dict:
        exps = self.data.get("experiments", {})
        return {k: v for k, v in exps.items() if kind is None or v["kind"] == kind}

    # --- validation ---------------------------------------------------
    def validate(self) -> None:
        d = self.data
        _expect(isinstance(d, dict), "manifest", "top level must be an object")
        _expect(d.get("schema") == SCHEMA_VERSION, "schema", f"expected schema {SCHEMA_VERSION}")
        unknown = set(d) - TOP_KEYS
        _expect(not unknown, "manifest", f"unknown keys {sorted(unknown)}")
        dim = d.get("dim")
        _expect(isinstance(dim, int) and dim >= 1, "dim", "must be a positive integer")
        names = self.coordinates
        _expect(len(names) == dim and len(set(names)) == dim, "coordinates", f"need {dim} distinct names")
        self._validate_domain(dim)
        for key in ("tensors", "scalars", "chains", "simulations", "experiments", "tolerances"):
            _expect(isinstance(d.get(key, {}), dict), key, "must be an object")
        for name, spec in d.get("tensors", {}).items():
            rows = spec.get("components") if isinstance(spec, dict) else spec
            where = f"tensors.{name}"
            _expect(isinstance(rows, list) and len(rows) == dim
                    and all(isinstance(r, list) and len(r) == dim for r in rows),
                    where, f"needs a {dim}x{dim} component matrix")
            for r in rows:
                for c in r:
                    self._check_expr(c, where)
        for name, src in d.get("scalars", {}).items():
            self._check_expr(src, f"scalars.{name}")
        for name, spec in d.get("chains", {}).items():
            self._validate_chain(name, spec)
        for name, spec in d.get("simulations", {}).items():
            self._validate_sim(f"simulations.{name}", spec)
        for name, spec in d.get("experiments", {}).items():
            self._validate_experiment(f"experiments.{name}", spec)
        for k, v in d.get("tolerances", {}).items():
            _expect(isinstance(v, (int, float)) and v > 0, f"tolerances.{k}", "must be positive")
        _expect(isinstance(d.get("samples", 1), int) and d.get("samples", 1) > 0, "samples", "positive integer")
        _expect(isinstance(d.get("seed", 0), int), "seed", "must be an integer")

    def _validate_domain(self, dim):
        d = self.data.get("domain", {})
        _expect(isinstance(d, dict), "domain", "must be an object")
        box = d.get("box", [[-2.0, 2.0]] * dim)
        _expect(isinstance(box, list) and len(box) == dim
                and all(isinstance(b, list) and len(b) == 2 and b[0] < b[1] for b in box),
                "domain.box", f"need {dim} intervals [lo, hi] with lo < hi")
        base = d.get("basepoint", [0.0] * dim)
        _expect(isinstance(base, list) and len(base) == dim, "domain.basepoint", f"need {dim} numbers")
        _expect(all(lo <= b <= hi for b, (lo, hi) in zip(base, box)), "domain.basepoint",
                "basepoint lies outside the domain box")
        for i, e in enumerate(d.get("exclude", [])):
            _expect(isinstance(e, dict) and "expr" in e and "margin" in e, f"domain.exclude[{i}]",
                    "needs expr and margin")
            self._check_expr(e["expr"], f"domain.exclude[{i}]")

    def _check_expr(self, src, where):
        if isinstance(src, (int, float)) and not isinstance(src, bool):
            return
        _expect(isinstance(src, str), where, "expressions must be strings or numbers")
        try:
            parse(src, self.dim, self.coordinates)
        except ExprSyntaxError as exc:
            raise ManifestError(f"{where}: {exc}") from exc

    def _check_scalar_ref(self, ref, where):
        if isinstance(ref, str) and ref in self.data.get("scalars", {}):
            return
        self._check_expr(ref, where)

    def _check_tensor_ref(self, ref, where):
        _expect(ref in self.data.get("tensors", {}), where, f"unknown tensor {ref!r}")

    def _validate_chain(self, name, spec):
        where = f"chains.{name}"
        _expect(isinstance(spec, dict), where, "must be an object")
        _expect(spec.get("kind") in CHAIN_KINDS, where, f"kind must be one of {sorted(CHAIN_KINDS)}")
        self._check_tensor_ref(spec.get("N"), where + ".N")
        self._check_scalar_ref(spec.get("a0"), where + ".a0")
        K = spec.get("K")
        _expect(isinstance(K, int) and 0 <= K <= MAX_DEPTH, where + ".K", f"integer in 0..{MAX_DEPTH}")
        for k, src in spec.get("closed_forms", {}).items():
            _expect(str(k).isdigit() and 1 <= int(k) <= K, where + ".closed_forms", f"bad index {k!r}")
            self._check_expr(src, f"{where}.closed_forms.{k}")

    def _check_flow_ref(self, ref, where):
        if isinstance(ref, str):
            self._check_tensor_ref(ref, where)
            return
        _expect(isinstance(ref, dict) and "chain" in ref and "k" in ref, where,
                "flow must name a tensor or be {chain, k}")
        _expect(ref["chain"] in self.data.get("chains", {}), where, f"unknown chain {ref['chain']!r}")
        spec = self.data["chains"][ref["chain"]]
        _expect(CHAIN_KINDS[spec["kind"]] == "lm", where, "flows come from Lorenzoni-Magri chains")
        _expect(isinstance(ref["k"], int) and 0 <= ref["k"] <= spec["K"], where, "k out of range")

    def _check_initial(self, init, where):
        _expect(isinstance(init, list) and len(init) == self.dim, where, f"need {self.dim} expressions in y")
        for src in init:
            if isinstance(src, (int, float)):
                continue
            try:
                parse(str(src), 1, ["y"])
            except ExprSyntaxError as exc:
                raise ManifestError(f"{where}: {exc}") from exc

    def _validate_sim(self, where, spec):
        _expect(isinstance(spec, dict), where, "must be an object")
        self._check_flow_ref(spec.get("flow"), where + ".flow")
        self._check_initial(spec.get("initial"), where + ".initial")
        _expect(isinstance(spec.get("Ny"), int) and spec["Ny"] >= 4, where + ".Ny", "integer >= 4")
        for key in ("L", "T"):
            _expect(isinstance(spec.get(key), (int, float)) and spec[key] > 0, f"{where}.{key}", "positive number")
        if "cfl" in spec:
            _expect(0 < spec["cfl"] <= 1.0, where + ".cfl", "must lie in (0, 1]")

    def _validate_experiment(self, where, spec):
        _expect(isinstance(spec, dict) and spec.get("kind") in EXPERIMENT_KINDS, where,
                f"kind must be one of {sorted(EXPERIMENT_KINDS)}")
        kind = spec["kind"]
        _expect(spec.get("expect", "pass") in ("pass", "fail"), where + ".expect", "'pass' or 'fail'")
        if kind in ("compat", "fnbracket"):
            for key in ("A", "B"):
                self._check_flow_ref(spec.get(key), f"{where}.{key}")
            return
        levels = spec.get("levels")
        _expect(isinstance(levels, list) and len(levels) >= 2 and all(isinstance(v, int) and v >= 4 for v in levels),
                where + ".levels", "need at least two grid sizes")
        self._check_initial(spec.get("initial"), where + ".initial")
        _expect(isinstance(spec.get("L"), (int, float)) and spec["L"] > 0, where + ".L", "positive number")
        if kind == "commute":
            for key in ("A", "B"):
                self._check_flow_ref(spec.get(key), f"{where}.{key}")
            for key in ("s", "t"):
                _expect(isinstance(spec.get(key), (int, float)) and spec[key] >= 0, f"{where}.{key}", "non-negative")
        else:
            self._check_flow_ref(spec.get("flow"), where + ".flow")
            pair = spec.get("pair")
            _expect(isinstance(pair, dict), where + ".pair", "must be an object")
            if "chain" in pair:
                self._check_flow_ref(pair, where + ".pair")
            else:
                _expect("f" in pair and "h" in pair, where + ".pair", "needs f and h (or chain and k)")
                self._check_scalar_ref(pair["f"], where + ".pair.f")
                self._check_scalar_ref(pair["h"], where + ".pair.h")
            _expect(isinstance(spec.get("T"), (int, float)) and spec["T"] > 0, where + ".T", "positive number")


def example_manifests() -> dict:
    """The bundled example manifests, keyed by file name."""
    out = {}
    pkg = resources.files("fnhydro") / "data"
    for name in EXAMPLE_FILES:
        out[name] = json.loads((pkg / name).read_text())
    return out


def load_example(name: str) -> Manifest:
    if not name.endswith(".json"):
        name += ".json"
    return Manifest.from_dict(example_manifests()[name], name)


def emit_examples(outdir) -> list:
    """Write the bundled manifests to ``outdir`` and return their paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in example_manifests().items():
        p = outdir / name
        p.write_text(json.dumps(data, indent=2) + "\n")
        paths.append(p)
    return paths


def safe_load(path) -> Manifest:
    """Load a manifest, folding any evaluation failure during validation into ManifestError."""
    try:
        return Manifest.load(path)
    except ManifestError:
        raise
    except (FNError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc

