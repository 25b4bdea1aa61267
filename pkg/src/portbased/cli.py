"""``portbased`` command-line front end.

Exit codes: 0 success, 2 invalid arguments, 3 a numerical cross-check failed,
4 the report could not be written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__, generalized, multi, pbt, recycling, schur
from ._parallel import default_threads

SUBCOMMANDS = ("pgm", "bounds", "recycle", "simultaneous", "generalized", "compare")
CROSS_CHECK_RTOL = 1e-9

EXIT_ARGS = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


class InvariantError(RuntimeError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    N: str | None = None
    k: str | None = None
    d: int = 2
    epsilon: float = 0.0
    delta: float = 0.05
    seed: int | None = None
    samples: int = 1
    ensemble: str = "pauli"
    ensemble_path: str | None = None
    protocols: str = "rec,sim,par"
    brute_force: bool = False
    out: str | None = None
    format: str = "json"
    dense_cap: int = pbt.DEFAULT_DENSE_CAP
    threads: int | None = None


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "subcommand")


@dataclass
class Report:
    subcommand: str
    input: dict[str, Any]
    results: list[dict[str, Any]] = field(default_factory=list)
    tables: dict[str, dict[str, list]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    version: str = __version__

    def add(self, name: str, value: Any, origin: str) -> None:
        self.results.append({"name": name, "value": value, "origin": origin})

    def table(self, name: str, columns: Sequence[str], rows: list[list]) -> None:
        self.tables[name] = {"columns": list(columns), "rows": rows}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="portbased", description="Port-based teleportation simulations and bounds.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option values; flags take precedence")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--dense-cap", dest="dense_cap", type=int)
    specs = {
        "pgm": ["N"],
        "bounds": ["N", "k", "d", "protocols"],
        "recycle": ["N", "k", "seed", "samples"],
        "simultaneous": ["N", "k", "d", "brute_force"],
        "generalized": ["N", "d", "ensemble", "ensemble_path", "epsilon"],
        "compare": ["N", "d", "delta", "protocols"],
    }
    for name, opts in specs.items():
        p = sub.add_parser(name, parents=[common])
        for opt in opts:
            flag = "--" + opt.replace("_", "-")
            if opt == "brute_force":
                p.add_argument(flag, dest=opt, action="store_const", const=True)
            elif opt in ("d", "seed", "samples"):
                p.add_argument(flag, dest=opt, type=int)
            elif opt in ("epsilon", "delta"):
                p.add_argument(flag, dest=opt, type=float)
            else:
                p.add_argument(flag, dest=opt)
    return parser


def parse_grid(spec: str) -> list[int]:
    """``"a..b"`` (every integer), ``"a..b:m"`` (m log-spaced) or ``"a,b,c"``."""
    spec = str(spec).strip()
    try:
        if ".." in spec:
            span, _, count = spec.partition(":")
            lo, hi = (int(x) for x in span.split(".."))
            if lo < 1 or hi < lo:
                raise ValueError
            if count:
                return multi.geometric_grid(lo, hi, int(count))
            return list(range(lo, hi + 1))
        values = [int(x) for x in spec.split(",")]
    except ValueError:
        raise ValueError(f"bad grid spec {spec!r}") from None
    if any(v < 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"grid {spec!r} must be non-negative and increasing")
    return values


def _load_config_file(path: str) -> dict[str, Any]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _single_int(value: str | None, name: str, minimum: int = 0) -> int:
    if value is None:
        raise ValueError(f"--{name} is required")
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ValueError(f"--{name} must be an integer, got {value!r}") from None
    if out < minimum:
        raise ValueError(f"--{name} must be at least {minimum}")
    return out


def parse_config(argv: Sequence[str] | None = None) -> RunConfig:
    """Parse flags (and an optional config file); exits with code 2 on bad input."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    values: dict[str, Any] = {}
    try:
        if ns.config:
            values.update(_load_config_file(ns.config))
    except (OSError, ValueError) as exc:
        parser.exit(EXIT_ARGS, f"portbased: error: config: {exc}\n")
    for key in CONFIG_KEYS:
        flag = getattr(ns, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("N", "k"):
        if key in values and values[key] is not None:
            values[key] = str(values[key])
    cfg = RunConfig(subcommand=ns.subcommand, **values)
    try:
        _validate(cfg)
    except ValueError as exc:
        parser.exit(EXIT_ARGS, f"portbased: error: {exc}\n")
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.format not in ("json", "csv"):
        raise ValueError("format must be json or csv")
    if cfg.d < 2:
        raise ValueError("--d must be at least 2")
    if cfg.samples < 1:
        raise ValueError("--samples must be positive")
    if cfg.dense_cap < 1:
        raise ValueError("--dense-cap must be positive")
    if cfg.threads is not None and cfg.threads < 1:
        raise ValueError("--threads must be positive")
    if not 0 < cfg.delta < 1:
        raise ValueError("--delta must lie in (0, 1)")
    if not 0 <= cfg.epsilon < 1:
        raise ValueError("--epsilon must lie in [0, 1)")
    for p in cfg.protocols.split(","):
        if p not in multi.PROTOCOLS:
            raise ValueError(f"unknown protocol {p!r}")
    sub = cfg.subcommand
    if sub in ("pgm", "recycle", "simultaneous", "generalized"):
        _single_int(cfg.N, "N", 1)
    if sub in ("bounds", "compare"):
        if cfg.N is None:
            raise ValueError("--N is required")
        if not all(n >= 1 for n in parse_grid(cfg.N)):
            raise ValueError("N values must be positive")
    if sub == "bounds" and cfg.k is not None:
        parse_grid(cfg.k)
    if sub == "recycle":
        N, k = _single_int(cfg.N, "N", 1), _single_int(cfg.k, "k", 0)
        if k >= N:
            raise ValueError(f"recycle needs k < N (got k={k}, N={N})")
        if cfg.seed is None:
            raise ValueError("recycle needs an explicit --seed")
    if sub == "simultaneous":
        N, k = _single_int(cfg.N, "N", 1), _single_int(cfg.k, "k", 1)
        if k > N:
            raise ValueError("simultaneous needs k <= N")
    if sub == "generalized" and cfg.ensemble not in generalized.ENSEMBLE_KINDS:
        raise ValueError(f"unknown ensemble {cfg.ensemble!r}")
    if sub == "generalized" and cfg.ensemble == "user-supplied" and not cfg.ensemble_path:
        raise ValueError("user-supplied ensembles need --ensemble-path")


def _check_close(name: str, a: float, b: float, rtol: float = CROSS_CHECK_RTOL) -> float:
    rel = abs(a - b) / max(abs(b), 1e-300)
    if rel > rtol:
        raise InvariantError(f"{name}: {a!r} vs {b!r} (relative difference {rel:.3e} > {rtol})")
    return rel


def _run_pgm(cfg: RunConfig, rep: Report) -> None:
    N = int(cfg.N)
    outcomes = pbt.enumerate_outcomes(N, cfg.dense_cap, threads=cfg.threads)
    root = sum(o.probability * o.ideal_overlap for o in outcomes if o.port)
    squared = sum(o.probability * o.ideal_fidelity for o in outcomes if o.port)
    tr_dense = pbt.dense_trace_pi1(N)
    tr_exact = float(schur.trace_pi1_exact_sum(N))
    ts_dense = pbt.dense_trace_sigma_sqrt_pi1(N)
    ts_sum = float(schur.trace_sigma_sqrtpi1_sum(N))
    bound = schur.recycle_fidelity_bound(N)
    rep.add("fidelity_dense", root, "pbt.exact_protocol_fidelity")
    rep.add("fidelity_dense_squared", squared, "pbt.exact_protocol_fidelity")
    rep.add("failure_probability", outcomes[0].probability, "pbt.post_measurement_state")
    rep.add("entanglement_fidelity_dense", pbt.exact_entanglement_fidelity(N, cfg.dense_cap),
            "pbt.exact_entanglement_fidelity")
    rep.add("trace_pi1_dense", tr_dense, "pbt.build_pgm")
    rep.add("trace_pi1_analytic", tr_exact, "schur.trace_pi1_exact_sum")
    rep.add("trace_pi1_rel_diff", _check_close("Tr Pi_1 dense vs analytic", tr_dense, tr_exact),
            "schur.trace_pi1_exact_sum")
    rep.add("trace_sigma_sqrt_pi1_dense", ts_dense, "pbt.build_pgm")
    rep.add("trace_sigma_sqrt_pi1_analytic", ts_sum, "schur.trace_sigma_sqrtpi1_sum")
    rep.add("trace_sigma_sqrt_pi1_rel_diff",
            _check_close("Tr(sigma sqrt Pi_1) dense vs analytic", ts_dense, ts_sum),
            "schur.trace_sigma_sqrtpi1_sum")
    rep.add("recycle_bound", bound, "schur.recycle_fidelity_bound")
    if root < bound - 1e-10:
        raise InvariantError(f"dense fidelity {root!r} below the closed-form bound {bound!r}")
    rep.table("outcomes", ["port", "probability", "fidelity", "root_fidelity"],
              [[o.port, o.probability, o.ideal_fidelity, o.ideal_overlap] for o in outcomes])


BOUNDS_COLUMNS = ["protocol", "N", "k", "d", "bound", "ns_cap", "warnings"]


def _run_bounds(cfg: RunConfig, rep: Report) -> None:
    rows = []
    for N in parse_grid(cfg.N):
        ks = parse_grid(cfg.k) if cfg.k is not None else range(1, multi.no_signalling_max(N) + 1)
        for k in ks:
            if not 1 <= k <= N:
                continue
            for protocol in cfg.protocols.split(","):
                if protocol == "par" and cfg.d != 2:
                    continue
                r = multi.bound_report(protocol, N, k, cfg.d)
                rows.append([protocol, N, k, cfg.d, r.bound, multi.no_signalling_max(N), ";".join(r.warnings)])
    rep.table("bounds", BOUNDS_COLUMNS, rows)


def _run_recycle(cfg: RunConfig, rep: Report) -> None:
    N, k = int(cfg.N), int(cfg.k)
    seeds = list(range(cfg.seed, cfg.seed + cfg.samples))
    traces = recycling.run_many(N, k, seeds, cfg.dense_cap, cfg.threads)
    rows = [list(row) for t in traces for row in t.csv_rows()]
    rep.table("rounds", list(recycling.CSV_COLUMNS), rows)
    detail = [[t.seed, r.round, r.z, int(r.success), r.fid_teleported, r.fid_resource_est,
               r.trace_distance_est, r.port_marginal_mean, r.lemma2_bound, r.povm_count]
              for t in traces for r in t.rounds]
    rep.table("rounds_detail", ["seed", "round", "z", "success", "fid_teleported", "fid_resource_est",
                                "trace_distance_est", "port_marginal_mean", "lemma2_bound", "povm_count"], detail)
    for metric in ("fid_teleported", "trace_distance_est"):
        for s in recycling.round_statistics(traces, metric):
            rep.add(f"{metric}_mean_round_{s.round}", s.mean, "recycling.recycle_protocol_run")
            rep.add(f"{metric}_stderr_round_{s.round}", s.stderr, "recycling.recycle_protocol_run")


def _run_simultaneous(cfg: RunConfig, rep: Report) -> None:
    N, k, d = int(cfg.N), int(cfg.k), cfg.d
    rep.add("injection_count", multi.injection_count(N, k), "multi.injection_count")
    rep.add("bound_closed_form", float(multi.simultaneous_fidelity_bound(N, k, d, exact=True)),
            "multi.simultaneous_fidelity_bound")
    cf = multi.avg_signal_purity(N, k, d, "closed-form")
    rep.add("purity_closed_form", float(cf), "multi.avg_signal_purity")
    if N <= multi.BRUTE_FORCE_MAX_N:
        exact = multi.avg_signal_purity(N, k, d, "exact")
        rep.add("purity_exact", float(exact), "multi.avg_signal_purity")
        rep.add("bound_from_exact_purity", float(multi.fidelity_from_purity(exact, N, k, d)),
                "multi.fidelity_from_purity")
    if cfg.brute_force:
        bf = multi.avg_signal_purity(N, k, d, "brute-force", cfg.threads)
        rep.add("purity_brute_force", bf, "multi.avg_signal_purity")
        rep.add("bound_from_brute_force", float(multi.fidelity_from_purity(bf, N, k, d)),
                "multi.fidelity_from_purity")
    rows = []
    for t in range(1, k + 1):
        m = multi.overlap_multiplicity(N, k, t)
        rows.append([t, m.printed, m.position_count, m.cycle_count, m.formula_mismatch])
        if m.formula_mismatch:
            rep.warnings.append(f"formula_mismatch: L_{{{N},{k},{t}}} printed {m.printed}, "
                                f"counted {m.position_count}")
    rep.table("multiplicity", ["t", "printed", "position_count", "cycle_count", "formula_mismatch"], rows)


def _run_generalized(cfg: RunConfig, rep: Report) -> None:
    N, d = int(cfg.N), cfg.d
    ens = generalized.make_ensemble(cfg.ensemble, N=N, d=d, path=cfg.ensemble_path)
    sig = generalized.signals_from_ensemble(ens, N, d, cfg.threads)
    holds, margin = generalized.lemma1_condition(sig, cfg.epsilon)
    p_bound = generalized.pgm_success_lower_bound(sig)
    p_exact = generalized.pgm_success_probability(sig)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fid = generalized.fidelity_from_success(ens.K, d, p_bound)
        fid_exact = generalized.fidelity_from_success(ens.K, d, min(1.0, p_exact))
    rep.warnings += [f"bound-clamped: {w.message}" for w in caught]
    rep.add("K", ens.K, "generalized.make_ensemble")
    rep.add("avg_purity", sig.avg_purity, "generalized.signals_from_ensemble")
    rep.add("lemma1_holds", holds, "generalized.lemma1_condition")
    rep.add("lemma1_margin", margin, "generalized.lemma1_condition")
    rep.add("success_lower_bound", p_bound, "generalized.pgm_success_lower_bound")
    rep.add("success_probability", p_exact, "generalized.pgm_success_probability")
    rep.add("fidelity", fid, "generalized.fidelity_from_success")
    rep.add("fidelity_exact_pgm", fid_exact, "generalized.fidelity_from_success")
    rep.add("frame_potential", generalized.frame_potential(ens, 2, cfg.threads), "generalized.frame_potential")
    rep.table("signals", ["g", "rank"], [[i, r] for i, r in enumerate(sig.ranks)])


COMPARE_COLUMNS = ["protocol", "N", "Q", "ns_cap"]


def _run_compare(cfg: RunConfig, rep: Report) -> None:
    grid = parse_grid(cfg.N)
    rows = []
    for protocol in cfg.protocols.split(","):
        if protocol == "par" and cfg.d != 2:
            continue
        scan = multi.efficiency_scan(protocol, cfg.delta, grid, cfg.d, cfg.threads)
        for N, q in scan:
            cap = multi.no_signalling_max(N)
            if q > cap:
                raise InvariantError(f"Q={q} exceeds the no-signalling cap {cap} at N={N}")
            rows.append([protocol, N, q, cap])
        try:
            rep.add(f"exponent_{protocol}", multi.scan_exponent(scan), "multi.scan_exponent")
        except ValueError:
            rep.warnings.append(f"exponent_{protocol}: fewer than two points with Q >= 1")
    rep.table("efficiency", COMPARE_COLUMNS, rows)


_DISPATCH = {
    "pgm": _run_pgm,
    "bounds": _run_bounds,
    "recycle": _run_recycle,
    "simultaneous": _run_simultaneous,
    "generalized": _run_generalized,
    "compare": _run_compare,
}


def dispatch(cfg: RunConfig) -> Report:
    echo = {k: v for k, v in asdict(cfg).items() if k not in ("subcommand", "out", "threads")}
    rep = Report(cfg.subcommand, echo)
    _DISPATCH[cfg.subcommand](cfg, rep)
    return rep


def _number(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in report")
    return format(x, ".17g")


def _encode(obj: Any, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _number(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + "  " * indent + "]"
    if hasattr(obj, "item"):
        return _encode(obj.item(), indent)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def render_json(rep: Report) -> str:
    return _encode(asdict(rep)) + "\n"


def _primary_table(rep: Report) -> dict[str, list]:
    preferred = {"bounds": "bounds", "recycle": "rounds", "compare": "efficiency",
                 "pgm": "outcomes", "simultaneous": "multiplicity", "generalized": "signals"}
    return rep.tables[preferred[rep.subcommand]]


def render_csv(rep: Report) -> str:
    table = _primary_table(rep)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table["columns"])
    for row in table["rows"]:
        writer.writerow(["" if v is None else _number(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def emit_report(rep: Report, cfg: RunConfig) -> None:
    text = render_csv(rep) if cfg.format == "csv" else render_json(rep)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if cfg.threads is None:
        cfg.threads = default_threads()
    try:
        rep = dispatch(cfg)
    except InvariantError as exc:
        print(f"portbased: invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, pbt.ResourceLimitError) as exc:
        print(f"portbased: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    try:
        emit_report(rep, cfg)
    except OSError as exc:
        print(f"portbased: cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
