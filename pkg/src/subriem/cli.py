"""Command-line front end: config parsing, dispatch, and JSON/CSV report emission."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, StructureError, SubriemError
from .htype import PRESET_NAMES, GroupPoint, load_structure, preset
from .reports import InequalityReport, Status, to_jsonable

SCHEMA_VERSION = "1"
COMMANDS = ("dist", "sample", "verify", "iso", "heat", "gibbs", "all")
VERIFY_KINDS = ("cheeger", "l1phi", "lsq", "ubound", "tight_ledoux", "ifi2", "exp_int", "sobolev", "conditions")
STOCHASTIC = {"sample", "verify", "iso", "heat", "gibbs", "all"}
TOLERANCE_KEYS = {"min_corpus"}

EXIT_OK, EXIT_VIOLATIONS, EXIT_INCONCLUSIVE, EXIT_ERROR, EXIT_USAGE = 0, 2, 3, 1, 64


@dataclass
class RunConfig:
    command: str
    spec_path: Optional[str] = None
    corpus_id: Optional[str] = None
    seed: Optional[int] = None
    output_path: Optional[str] = None
    tolerances: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown value {self.command!r}")
        bad = set(self.tolerances) - TOLERANCE_KEYS
        if bad:
            raise ConfigError(f"tolerances: unknown keys {sorted(bad)}")
        if self.command in STOCHASTIC and self.seed is None:
            raise ConfigError(f"seed: required for {self.command}")
        if self.seed is not None and not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed: must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"command", "spec_path", "corpus_id", "seed", "output_path", "tolerances", "options"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown keys in run config: {sorted(extra)}")
        if "command" not in doc:
            raise ConfigError("command: missing")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Report:
    command: dict
    input_digest: str
    results: Any
    wall_time: float = 0.0
    warnings: List[str] = field(default_factory=list)
    status: str = "pass"
    threads: Optional[int] = None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "command": self.command, "input_digest": self.input_digest,
                "status": self.status, "results": self.results, "wall_time": self.wall_time,
                "warnings": list(self.warnings), "threads": self.threads}

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        return cls(doc["command"], doc["input_digest"], doc["results"], doc.get("wall_time", 0.0),
                   list(doc.get("warnings", [])), doc.get("status", "pass"), doc.get("threads"),
                   doc.get("schema_version", SCHEMA_VERSION))


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def results_digest(report: Report) -> str:
    return hashlib.sha256(canonical_json(report.results).encode()).hexdigest()


# -- config loading ------------------------------------------------------------------

def load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digest(cfg: RunConfig) -> str:
    """sha256 over the config (paths replaced by content digests)."""
    doc = cfg.to_dict()
    doc.pop("output_path", None)
    files = {}
    for key in ("spec_path",):
        if doc.get(key):
            files[key] = _file_digest(doc[key])
            doc[key] = None
    opts = dict(doc.get("options") or {})
    for key in ("samples", "config"):
        if opts.get(key):
            files[key] = _file_digest(opts[key])
            opts[key] = None
    opts.pop("table", None)
    opts.pop("samples_out", None)
    doc["options"] = opts
    return hashlib.sha256(canonical_json({"config": doc, "files": files}).encode()).hexdigest()


def _spec(cfg: RunConfig):
    from .measures import spec_from_dict
    if cfg.spec_path:
        try:
            return spec_from_dict(load_json(cfg.spec_path))
        except (DomainError, StructureError) as exc:
            raise ConfigError(f"{cfg.spec_path}: {exc}") from exc
    group = cfg.options.get("group", "heisenberg1")
    return spec_from_dict({"group": group})


def _samples(cfg: RunConfig, spec):
    from .measures import ChainConfig, read_samples_csv, sample_measure
    path = cfg.options.get("samples")
    if path:
        return read_samples_csv(path, spec.structure)
    n = int(cfg.options.get("n", 100_000))
    chains = int(cfg.options.get("chains", 100))
    per = max(-(-n // chains), 32)
    cc = ChainConfig(n_samples=per, burn_in=int(cfg.options.get("burn_in", 300)), n_chains=chains, seed=int(cfg.seed))
    return sample_measure(spec, cc)


def _corpus(cfg: RunConfig, spec, default: str = "builtin:standard"):
    from .functionals import resolve_corpus
    return resolve_corpus(cfg.corpus_id or default, spec)


def _min_corpus(cfg: RunConfig) -> dict:
    return {"min_corpus": int(cfg.tolerances["min_corpus"])} if "min_corpus" in cfg.tolerances else {}


# -- commands ------------------------------------------------------------------------

def _status_of(obj) -> str:
    if isinstance(obj, InequalityReport):
        return obj.status.value
    return "pass"


def cmd_dist(cfg: RunConfig):
    from .distance import TranscriptionConfig, cc_distance, cc_distance_oracle
    S = load_structure(cfg.options.get("group", "heisenberg1"))
    pt = cfg.options.get("point")
    if pt is None:
        raise ConfigError("point: required for dist")
    vals = [float(v) for v in (pt.split(",") if isinstance(pt, str) else pt)]
    if len(vals) != S.dim:
        raise ConfigError(f"point: expected {S.dim} coordinates, got {len(vals)}")
    g = GroupPoint.from_array(S, vals)
    sol = cc_distance(g)
    out = {"distance": sol.distance, "arc_parameter": sol.arc_parameter, "residual": sol.residual,
           "iterations": sol.iterations, "group": S.name or S.to_dict(), "point": vals}
    if cfg.options.get("oracle"):
        tc = TranscriptionConfig(segments=int(cfg.options.get("segments", 128)), seed=int(cfg.seed or 0))
        res = cc_distance_oracle(g, tc, full=True)
        out["oracle"] = asdict(res)
    return out, "pass"


def cmd_sample(cfg: RunConfig):
    from .measures import write_samples_csv
    spec = _spec(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = _samples(cfg, spec)
    dest = cfg.options.get("samples_out")
    if dest:
        write_samples_csv(s, dest)
    meta = {k: v for k, v in s.meta.items() if k not in ("ess_per_chain", "proposal_scales")}
    meta["n"] = len(s)
    meta["spec"] = spec.to_dict()
    meta["csv_sha256"] = _file_digest(dest) if dest else None
    return meta, "pass", [str(w.message) for w in caught]


def _verify_one(kind: str, cfg: RunConfig, spec, s):
    from .functionals import (PhiSpec, verify_cheeger, verify_exp_integrability, verify_ifi2,
                              verify_l1phi_entropy, verify_lsq, verify_sobolev_baseline, verify_tight_ledoux,
                              verify_ubound, bump_corpus)
    mc = _min_corpus(cfg)
    beta = float(cfg.options.get("beta", spec.beta))
    q = float(cfg.options.get("q", 2.0))
    if kind == "cheeger":
        return verify_cheeger(s, _corpus(cfg, spec), **mc)
    if kind == "l1phi":
        return verify_l1phi_entropy(PhiSpec(beta), s, _corpus(cfg, spec), **mc)
    if kind == "lsq":
        return verify_lsq(PhiSpec(1.0 / q), s, _corpus(cfg, spec), **mc)
    if kind == "ubound":
        return verify_ubound(spec, s, _corpus(cfg, spec), **mc)
    if kind == "tight_ledoux":
        return verify_tight_ledoux(PhiSpec(beta), s, _corpus(cfg, spec), **mc)
    if kind == "ifi2":
        return verify_ifi2(s, _corpus(cfg, spec, "builtin:bounded"), **mc)
    if kind == "exp_int":
        lams = cfg.options.get("lambdas", [0.05, 0.1, 0.2, 0.3])
        return verify_exp_integrability(spec, s, [float(x) for x in lams])
    if kind == "sobolev":
        corpus = _corpus(cfg, spec, "builtin:bumps") if cfg.corpus_id else bump_corpus(spec.structure, 1.0)
        return verify_sobolev_baseline(spec.structure, corpus, float(cfg.options.get("box", 3.0)))
    if kind == "conditions":
        from .distance import check_distance_conditions
        rng = np.random.default_rng(int(cfg.seed))
        S = spec.structure
        P = rng.uniform(-3, 3, (1000, S.dim))
        return check_distance_conditions(spec, P)
    raise ConfigError(f"kind: unknown value {kind!r}; known: {', '.join(VERIFY_KINDS)}")


def _worst(statuses: Sequence[str]) -> str:
    order = {"pass": 0, "violations": 1, "inconclusive": 2, "refused": 2}
    return max(statuses, key=lambda s: order.get(s, 0)) if statuses else "pass"


def cmd_verify(cfg: RunConfig):
    kind = cfg.options.get("kind")
    if kind not in VERIFY_KINDS:
        raise ConfigError(f"kind: unknown value {kind!r}; known: {', '.join(VERIFY_KINDS)}")
    spec = _spec(cfg)
    s = None if kind in ("sobolev", "conditions") else _samples(cfg, spec)
    rep = _verify_one(kind, cfg, spec, s)
    out = rep.to_dict()
    out["spec_digest"] = hashlib.sha256(canonical_json(spec.digest_doc()).encode()).hexdigest()
    return out, rep.status.value, rep


def parse_set(S, text: str):
    from .isoperimetry import TestSet
    parts = text.split(":")
    try:
        if parts[0] == "ball":
            comp = len(parts) > 2 and parts[2] == "complement"
            return TestSet.ball(S, float(parts[1]), complement=comp)
        if parts[0] in ("halfspace", "half_space"):
            normal = [float(v) for v in parts[1].split(",")]
            return TestSet.half_space(S, normal, float(parts[2]))
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"set: cannot parse {text!r}: {exc}") from exc
    raise ConfigError(f"set: unknown kind in {text!r}; use ball:r[:complement] or halfspace:n1,..:offset")


def cmd_iso(cfg: RunConfig):
    from .functionals import profile_Uq
    from .isoperimetry import verify_isoperimetry
    spec = _spec(cfg)
    sets = [parse_set(spec.structure, t) for t in cfg.options.get("sets", ["ball:1.0"])]
    q = float(cfg.options.get("profile_q", 2.0))
    s = _samples(cfg, spec)
    rep = verify_isoperimetry(sets, s, profile_Uq(q))
    return rep.to_dict(), rep.status.value, rep


def cmd_heat(cfg: RunConfig):
    from .htype import ScalarField
    from .heat import (PathConfig, gaussian_threshold, heat_semigroup_apply, simulate_horizontal_bm,
                       verify_semigroup_gradient_bound)
    S = load_structure(cfg.options.get("group", "heisenberg1"))
    pc = PathConfig(float(cfg.options.get("t", 1.0)), int(cfg.options.get("steps", 256)),
                    int(cfg.options.get("paths", 100_000)), int(cfg.seed))
    e = GroupPoint.identity(S)
    es = simulate_horizontal_bm(e, pc)
    m = S.m
    one = ScalarField(lambda P: np.ones(P.shape[0]), name="one")
    sq = ScalarField(lambda P: np.sum(P[:, :m] ** 2, axis=1), name="sum_x2")
    out = {"path_config": pc.to_dict(), "group": S.name or S.to_dict(),
           "conservativeness": heat_semigroup_apply(one, e, pc, es),
           "P_t_sum_x2": heat_semigroup_apply(sq, e, pc, es), "expected_sum_x2": 2.0 * m * pc.t}
    if abs(pc.t - 1.0) < 1e-12:
        out["gaussian_threshold"] = gaussian_threshold(es)
    status = "pass"
    corpus_name = cfg.options.get("verify_gradient")
    if corpus_name:
        from .functionals import resolve_corpus
        from .measures import MeasureSpec
        corpus = resolve_corpus(corpus_name, MeasureSpec(S))
        rep = verify_semigroup_gradient_bound(corpus, pc.t, pc, e)
        out["gradient_bound"] = rep.to_dict()
        status = rep.status.value
    return to_jsonable(out), status


def lattice_from_dict(doc: dict):
    from .gibbs import LatticeConfig, PolynomialPotential, cosine_coupling, quadratic_coupling
    from .measures import spec_from_dict
    allowed = {"group", "p", "alpha", "polynomial", "interaction", "coupling_g", "J", "D", "side", "boundary"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown keys in lattice config: {sorted(extra)}")
    if "polynomial" in doc:
        single = PolynomialPotential(tuple(doc["polynomial"]))
    else:
        single = spec_from_dict({k: doc[k] for k in ("group", "p", "alpha") if k in doc})
    S = single.structure
    kind = doc.get("interaction", "cosine")
    if kind == "cosine":
        inter = cosine_coupling(S)
    elif kind == "quadratic":
        inter = quadratic_coupling(float(doc.get("coupling_g", 1.0)))
    else:
        raise ConfigError(f"interaction: unknown value {kind!r}")
    bd = doc.get("boundary")
    boundary = GroupPoint.from_array(S, bd) if bd is not None else None
    return LatticeConfig(single, inter, float(doc.get("J", 0.0)), int(doc.get("D", 2)), int(doc.get("side", 3)),
                         boundary)


def cmd_gibbs(cfg: RunConfig):
    from .functionals import PhiSpec
    from .gibbs import (center_distance, gibbs_corpus, iterate_sweep, sample_gibbs, verify_gibbs_l1phi,
                        verify_gradient_contraction, MERGE_BY)
    from .measures import ChainConfig
    path = cfg.options.get("config")
    lat = lattice_from_dict(load_json(path) if path else {})
    mc = ChainConfig(n_samples=int(cfg.options.get("sweeps", 40)), burn_in=int(cfg.options.get("burn_in", 3)),
                     n_chains=int(cfg.options.get("replicas", 256)), seed=int(cfg.seed))
    what = cfg.options.get("verify", "sweep")
    out = {"lattice": lat.to_dict(), "chain": mc.to_dict()}
    sweep = iterate_sweep(lat, center_distance(lat), MERGE_BY, mc)
    out["sweep"] = sweep.to_dict()
    status = "pass" if sweep.converged else "inconclusive"
    if what == "l1phi":
        beta = float(cfg.options.get("beta", 0.5))
        rep = verify_gibbs_l1phi(lat, gibbs_corpus(lat), mc, PhiSpec(beta), sweep=sweep)
        out["l1phi"] = rep.to_dict()
        status = rep.status.value
    elif what == "contraction":
        rep = verify_gradient_contraction(lat, gibbs_corpus(lat), mc, c0=cfg.options.get("c0"))
        out["contraction"] = rep.to_dict()
        status = rep.status.value
    elif what != "sweep":
        raise ConfigError(f"verify: unknown value {what!r}; use sweep, l1phi or contraction")
    return to_jsonable(out), status


def cmd_all(cfg: RunConfig):
    spec = _spec(cfg)
    s = _samples(cfg, spec)
    out, statuses = {}, []
    for kind in ("ubound", "cheeger", "l1phi", "lsq", "ifi2", "tight_ledoux"):
        rep = _verify_one(kind, cfg, spec, s)
        out[kind] = rep.to_dict()
        statuses.append(rep.status.value)
    from .functionals import profile_Uq
    from .isoperimetry import TestSet, verify_isoperimetry
    sets = [TestSet.ball(spec.structure, r) for r in (0.5, 1.0, 1.5, 2.0)]
    rep = verify_isoperimetry(sets, s, profile_Uq(2.0))
    out["iso"] = rep.to_dict()
    statuses.append(rep.status.value)
    return out, _worst(statuses)


HANDLERS = {"dist": cmd_dist, "sample": cmd_sample, "verify": cmd_verify, "iso": cmd_iso, "heat": cmd_heat,
            "gibbs": cmd_gibbs, "all": cmd_all}


def run_command(cfg: RunConfig) -> Report:
    """Dispatch ``cfg`` and wrap the payload in a :class:`Report`."""
    t0 = time.perf_counter()
    digest = input_digest(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = HANDLERS[cfg.command](cfg)
    payload, status = res[0], res[1]
    extra = res[2] if len(res) > 2 and isinstance(res[2], list) else []
    warns = sorted({str(w.message) for w in caught} | set(extra))
    rep = Report(cfg.to_dict(), digest, to_jsonable(payload), round(time.perf_counter() - t0, 3), warns, status,
                 worker_cap())
    table_path = cfg.options.get("table")
    if table_path and len(res) > 2 and isinstance(res[2], InequalityReport):
        write_table(res[2], table_path)
    return rep


def replay(path: str) -> Tuple[Report, bool]:
    """Re-run the config echoed in a report; the bool says the results payload matches."""
    old = Report.from_dict(load_json(path))
    cfg = RunConfig.from_dict(old.command)
    new = run_command(cfg)
    return new, canonical_json(new.results) == canonical_json(old.results)


def exit_code(status: str) -> int:
    if status == "pass":
        return EXIT_OK
    if status == "violations":
        return EXIT_VIOLATIONS
    return EXIT_INCONCLUSIVE


def emit_report(r: Report, path: Optional[str]) -> None:
    """Pretty JSON with sorted keys; ``path=None`` writes to stdout."""
    text = json.dumps(to_jsonable(r.to_dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w") as fh:
        fh.write(text)


def write_table(rep: InequalityReport, path: str) -> int:
    """Per-function CSV (excluded entries left out); returns the row count."""
    skip = set(rep.excluded)
    rows = [r for r in rep.per_function if r.id not in skip]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "lhs", "lhs_se", "ratio", "ratio_se", "note"])
        for r in rows:
            ratio = (r.ratio.value, r.ratio.se) if r.ratio is not None else ("", "")
            wr.writerow([r.id, repr(float(r.lhs.value)), repr(float(r.lhs.se)), *ratio, r.note])
    return len(rows)


def worker_cap() -> Optional[int]:
    """SUBRIEM_THREADS, if set; internals are single-threaded so any cap is honored."""
    v = os.environ.get("SUBRIEM_THREADS")
    if v is None:
        return None
    try:
        n = int(v)
    except ValueError as exc:
        raise ConfigError(f"SUBRIEM_THREADS: not an integer: {v!r}") from exc
    if n < 1:
        raise ConfigError("SUBRIEM_THREADS: must be >= 1")
    return n


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subriem", description="Sub-Riemannian measures and functional inequalities.")
    p.add_argument("--version", action="version", version=f"subriem {__version__}")
    p.add_argument("--list-presets", action="store_true", help="print group presets and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp, stochastic=True, out_flag="--out"):
        sp.add_argument(out_flag, dest="output_path")
        sp.add_argument("--seed", type=int, required=stochastic)
        sp.add_argument("--tolerance", action="append", default=[], metavar="KEY=VALUE")

    d = sub.add_parser("dist", help="CC distance of one point")
    d.add_argument("--group", default="heisenberg1")
    d.add_argument("--point", required=True)
    d.add_argument("--oracle", action="store_true")
    d.add_argument("--segments", type=int, default=128)
    common(d, stochastic=False)

    s = sub.add_parser("sample", help="Metropolis samples of a measure")
    s.add_argument("--spec")
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--chains", type=int, default=100)
    s.add_argument("--burn-in", type=int, default=300)
    s.add_argument("--out", dest="samples_out", help="samples CSV")
    common(s, out_flag="--report")

    v = sub.add_parser("verify", help="fit constants of one inequality")
    v.add_argument("--kind", required=True, choices=VERIFY_KINDS)
    v.add_argument("--spec")
    v.add_argument("--corpus")
    v.add_argument("--samples")
    v.add_argument("--n", type=int, default=100_000)
    v.add_argument("--beta", type=float)
    v.add_argument("--q", type=float)
    v.add_argument("--table", help="per-function CSV side file")
    common(v)

    i = sub.add_parser("iso", help="isoperimetric ratios over a set family")
    i.add_argument("--set", dest="sets", action="append")
    i.add_argument("--spec")
    i.add_argument("--samples")
    i.add_argument("--n", type=int, default=100_000)
    i.add_argument("--profile", default="q=2")
    common(i)

    h = sub.add_parser("heat", help="horizontal Brownian motion and the heat semigroup")
    h.add_argument("--group", default="heisenberg1")
    h.add_argument("--t", type=float, default=1.0)
    h.add_argument("--paths", type=int, default=100_000)
    h.add_argument("--steps", type=int, default=256)
    h.add_argument("--verify-gradient", dest="verify_gradient", metavar="CORPUS")
    common(h)

    g = sub.add_parser("gibbs", help="lattice spin system diagnostics")
    g.add_argument("--config")
    g.add_argument("--sweeps", type=int, default=40)
    g.add_argument("--replicas", type=int, default=256)
    g.add_argument("--burn-in", type=int, default=3)
    g.add_argument("--verify", default="sweep", choices=("sweep", "l1phi", "contraction"))
    g.add_argument("--beta", type=float, default=0.5)
    g.add_argument("--c0", type=float)
    common(g)

    a = sub.add_parser("all", help="sample once and run the inequality battery plus CC balls")
    a.add_argument("--spec")
    a.add_argument("--samples")
    a.add_argument("--n", type=int, default=100_000)
    common(a)

    r = sub.add_parser("replay", help="re-run the config embedded in a report and compare results")
    r.add_argument("report")
    r.add_argument("--out", dest="output_path")
    return p


def _tolerances(items) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigError(f"tolerance: expected KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        out[k] = float(v) if "." in v or "e" in v else int(v)
    return out


def config_from_args(ns) -> RunConfig:
    opts = {k: v for k, v in vars(ns).items()
            if k not in ("command", "output_path", "seed", "tolerance", "spec", "corpus", "list_presets")
            and v is not None}
    if ns.command == "iso":
        prof = opts.pop("profile", "q=2")
        if not prof.startswith("q="):
            raise ConfigError(f"profile: expected q=<value>, got {prof!r}")
        opts["profile_q"] = float(prof[2:])
    return RunConfig(ns.command, getattr(ns, "spec", None), getattr(ns, "corpus", None), ns.seed, ns.output_path,
                     _tolerances(ns.tolerance), opts)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if ns.list_presets:
        for name in PRESET_NAMES:
            print(name)
        return EXIT_OK
    if not ns.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        worker_cap()
        if ns.command == "replay":
            rep, same = replay(ns.report)
            emit_report(rep, ns.output_path)
            print(f"subriem: results {'identical' if same else 'DIFFER'}", file=sys.stderr)
            return exit_code(rep.status) if same else EXIT_ERROR
        cfg = config_from_args(ns)
        rep = run_command(cfg)
        emit_report(rep, cfg.output_path)
    except ConfigError as exc:
        print(f"subriem: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SubriemError as exc:
        print(f"subriem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return exit_code(rep.status)


if __name__ == "__main__":
    sys.exit(main())
