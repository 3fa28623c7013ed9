"""Command-line front end.

Every command writes a report (see ``datareuse.report``) to stdout or
``--out``. Parameters can also come from an INI file given by ``--config``:
one section per command, keys named like the long flags (dashes or
underscores). Flags override the file. Exit codes: 0 success, 1 runtime or
domain error, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from . import capacity as cap
from . import error_calculus as ec
from . import portfolio as pf
from . import power as pw
from . import simulation as sim
from . import subsampling as ss
from .dist_core import hypergeom_pmf, hypergeom_support, hypergeom_tail, poisson_pmf
from .errors import DataReuseError, DomainError
from .report import Report, format_cell, matrix_table

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ValidationError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    parse: Callable = str
    default: object = None
    required: bool = False
    choices: tuple[str, ...] | None = None
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


_SHARED_ALPHA = Param("alpha", float, 0.05, help="per-test level")
_P2G1_DEFAULT = ",".join(f"{i / 20:g}" for i in range(21))

SCHEMAS: dict[str, tuple[Param, ...]] = {
    "error-dist": (
        _SHARED_ALPHA,
        Param("p2", float, None, help="second test's level (default: alpha)"),
        Param("p2g1", _floats, _P2G1_DEFAULT, help="comma list of pr(E2 | E1) values"),
    ),
    "stoploss": (
        _SHARED_ALPHA,
        Param("p2", float, None, help="second test's level (default: alpha)"),
        Param("p2g1", _floats, "0,0.25,0.5,0.75,1", help="comma list of pr(E2 | E1) values"),
    ),
    "capacity": (
        Param("n", int, required=True, help="dataset size"),
        Param("k", int, required=True, help="per-study sample size"),
        Param("ell", _ints, None, help="comma list of overlap thresholds"),
        Param("p_tol", float, 0.05, help="tolerated probability of a large overlap"),
        Param("method", str, "hoeffding", choices=("hoeffding", "exact_tail")),
        Param("lambda", _floats, None, help="comma list of guaranteed overlap fractions"),
        Param("overlap_pmf", _bool, False, help="emit the distribution of one pair's overlap"),
    ),
    "power": (
        Param("kind", str, "t", choices=("t", "z")),
        _SHARED_ALPHA,
        Param("delta", float, required=True, help="true mean difference"),
        Param("sigma", float, 1.0),
        Param("n1", _ints, None, help="comma list of control-arm sizes"),
        Param("n2", _ints, None, help="comma list of treatment-arm sizes"),
        Param("one_sided", _bool, False),
        Param("target_power", float, None, help="also report the required sample size"),
        Param("ratio", float, 1.0, help="treatment/control allocation ratio for --target-power"),
    ),
    "subsample": (
        Param("n", int, required=True, help="dataset size"),
        Param("k", _ints, required=True, help="comma list of draw sizes"),
        Param("strategy", str, "independent_uniform", choices=("independent_uniform", "disjoint_partition")),
        Param("overlap", _bool, True, help="emit the overlap matrix"),
        Param("audit_c", int, None, help="studies per trial for the empirical overlap audit"),
        Param("audit_ell", int, None, help="overlap threshold for the audit"),
        Param("trials", int, 2000),
    ),
    "simulate": (
        Param("design", str, required=True, choices=("shared-control", "survival")),
        _SHARED_ALPHA,
        Param("reps", int, 10_000, help="replications"),
        Param("workers", int, 1),
        Param("m", int, 7),
        Param("n_arm", int, 100),
        Param("n_control", int, 100),
        Param("control_mode", str, "reuse_full", choices=tuple(m.value for m in sim.ControlMode)),
        Param("subsample_k", int, None),
        Param("effect", float, 0.0),
        Param("n_per_group", int, 100),
        Param("shape", float, None, help="Weibull shape (default: reference design)"),
        Param("scale", float, None, help="Weibull scale (default: reference design)"),
        Param("truncation", _floats, "1,5"),
        Param("mode", str, "reuse_same_cohort", choices=tuple(m.value for m in sim.SurvivalMode)),
    ),
    "optimize": (
        Param("portfolio", str, required=True, help="JSON portfolio file"),
        Param("workers", int, 1),
    ),
    "reuse": (Param("rates", _floats, required=True, help="comma list of per-study inclusion rates"),),
}


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    output_path: str | None = None
    fmt: str = "csv"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--format", choices=("csv", "obj"), default=None, dest="fmt")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    common.add_argument("--config", default=None, help="INI file with one section per command")
    parser = argparse.ArgumentParser(prog="datareuse", description="Error propagation and capacity under data reuse.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, params in SCHEMAS.items():
        p = sub.add_parser(name, parents=[common], help=f"{name} report")
        for prm in params:
            p.add_argument(prm.flag, dest=prm.name, default=None, help=prm.help or None)
    return parser


def _read_config(path: str, command: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ValidationError([f"cannot read config {path}: {exc.strerror}"]) from exc
    except configparser.Error as exc:
        raise ValidationError([f"malformed config {path}: {exc}"]) from exc
    if not cp.has_section(command):
        return {}
    return {k.replace("-", "_"): v for k, v in cp.items(command, raw=True) if k not in cp.defaults()}


_GLOBAL_KEYS = ("seed", "format", "out")


def parse_and_validate(argv: Sequence[str]) -> RunConfig:
    """Parse ``argv``; raise ValidationError listing every problem found."""
    ns = build_parser().parse_args(list(argv))
    schema = {p.name: p for p in SCHEMAS[ns.command]}
    problems: list[str] = []
    file_vals = _read_config(ns.config, ns.command) if ns.config else {}
    for key in file_vals:
        if key not in schema and key not in _GLOBAL_KEYS:
            problems.append(f"unknown key {key!r} in [{ns.command}] of {ns.config}")

    params = {}
    for name, prm in schema.items():
        raw = getattr(ns, name)
        if raw is None:
            raw = file_vals.get(name)
        if raw is None:
            if prm.required:
                problems.append(f"missing required parameter {name!r} ({prm.flag})")
                continue
            raw = prm.default
        if raw is None:
            params[name] = None
            continue
        if prm.choices and str(raw) not in prm.choices:
            problems.append(f"{name}: {raw!r} is not one of {', '.join(prm.choices)}")
            continue
        try:
            params[name] = prm.parse(raw)
        except (TypeError, ValueError):
            problems.append(f"{name}: cannot parse {raw!r}")

    def global_value(attr, key, parse):
        v = getattr(ns, attr)
        if v is None and key in file_vals:
            try:
                v = parse(file_vals[key])
            except ValueError:
                problems.append(f"{key}: cannot parse {file_vals[key]!r}")
                v = None
        return v

    seed = global_value("seed", "seed", int)
    fmt = global_value("fmt", "format", str) or "csv"
    out = global_value("out", "out", str)
    if seed is None:
        seed = 0
    if not 0 <= seed < 2**64:
        problems.append(f"seed must be an unsigned 64-bit integer, got {seed}")
    if fmt not in ("csv", "obj"):
        problems.append(f"format: {fmt!r} is not one of csv, obj")
    if problems:
        raise ValidationError(problems)
    return RunConfig(ns.command, params, seed, out, fmt)


def _meta(cfg: RunConfig) -> dict:
    meta = {"command": cfg.command, "seed": cfg.seed}
    for k in sorted(cfg.params):
        v = cfg.params[k]
        if v is None:
            continue
        meta[f"param.{k}"] = ",".join(format_cell(x) for x in v) if isinstance(v, list) else format_cell(v)
    return meta


def _pair(alpha: float, p2: float | None, c: float) -> ec.DependentEventPair:
    return ec.DependentEventPair(alpha, alpha if p2 is None else p2, c)


def cmd_error_dist(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    t = rep.table("error_dist", ["p2g1", "pr0", "pr1", "pr2", "pcer", "fwer", "fdr", "corr"])
    for c in p["p2g1"]:
        pair = _pair(p["alpha"], p["p2"], c)
        d = ec.two_event_distribution(pair)
        # Pearson correlation of the two error indicators
        p1, p2 = pair.p1, pair.p2
        denom = math.sqrt(p1 * (1 - p1) * p2 * (1 - p2))
        corr = (p1 * c - p1 * p2) / denom if denom > 0 else math.nan
        t.add(c, *d.probabilities.tolist(), ec.pcer(d), ec.fwer(d), ec.fdr_global_null(d), corr)
    u = rep.table("expected_utility", ["p2g1", "linear", "quadratic"])
    for c in p["p2g1"]:
        d = ec.two_event_distribution(_pair(p["alpha"], p["p2"], c))
        u.add(c, ec.expected_utility(d, ec.UtilityFunction.linear()), ec.expected_utility(d, ec.UtilityFunction.quadratic()))


def cmd_stoploss(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    curves = []
    t = rep.table("stoploss", ["p2g1", "L0", "L1", "L2"])
    for c in p["p2g1"]:
        curve = ec.stop_loss_curve(ec.two_event_distribution(_pair(p["alpha"], p["p2"], c)))
        curves.append(curve)
        t.add(c, *curve.premiums)
    o = rep.table("order", ["p2g1_a", "p2g1_b", "order"])
    for i in range(len(curves) - 1):
        o.add(p["p2g1"][i], p["p2g1"][i + 1], ec.stop_loss_compare(curves[i], curves[i + 1]).value)


def cmd_capacity(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    n, k = p["n"], p["k"]
    if p["ell"]:
        method = cap.TailMethod(p["method"])
        rows = cap.capacity_table(n, k, p["p_tol"], p["ell"], method)
        t = rep.table("capacity", ["ratio", "ell", "c_bound"])
        d = rep.table("capacity_detail", ["ell", "pairwise_tail", "log_pairwise_tail", "log_c_bound", "error"])
        for r in rows:
            ratio = f"{r.ratio:.3f}"
            if r.result is None:
                t.add(ratio, r.ell, None)
                d.add(r.ell, None, None, None, r.error)
            else:
                t.add(ratio, r.ell, r.result.c_bound)
                tail = cap.pairwise_overlap_tail(cap.CapacityQuery(n, k, r.ell, p["p_tol"]), method)
                d.add(r.ell, tail, r.result.log_pairwise_tail, r.result.log_c_bound, None)
    g = rep.table("guarantee", ["n", "k", "min_overlap_two", "pigeonhole_c", "log_binomial", "overflow"])
    ph = cap.pigeonhole_capacity(n, k)
    g.add(n, k, cap.guaranteed_overlap_two(n, k), ph.value, ph.log_binomial, ph.overflow)
    if p["lambda"]:
        m = rep.table("min_k", ["lambda", "k"])
        for lam in p["lambda"]:
            m.add(lam, cap.min_k_for_overlap_fraction(n, lam))
    if p["overlap_pmf"]:
        lo, hi = hypergeom_support(n, k, k)
        o = rep.table("overlap_pmf", ["overlap", "pmf", "tail"])
        for x in range(lo, hi + 1):
            o.add(x, hypergeom_pmf(n, k, k, x), hypergeom_tail(n, k, k, x))


def cmd_power(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    kind = pw.TestKind.Z if p["kind"] == "z" else pw.TestKind.T
    spec = pw.TestSpec(kind, p["alpha"], not p["one_sided"], p["delta"], p["sigma"])
    n1s, n2s = p["n1"] or [], p["n2"] or []
    if len(n1s) != len(n2s):
        raise DomainError(f"--n1 lists {len(n1s)} sizes but --n2 lists {len(n2s)}")
    if n1s:
        vecs = [pw.SampleVector(a, b) for a, b in zip(n1s, n2s)]
        t = rep.table("power", ["n1", "n2", "noncentrality", "type2_error", "power"])
        for v in vecs:
            t.add(v.n1, v.n2, pw.noncentrality(spec, v), pw.type2_error(spec, v), pw.power(spec, v))
        tot = rep.table("portfolio", ["studies", "expected_type2"])
        tot.add(len(vecs), pw.portfolio_expected_type2([spec] * len(vecs), vecs))
    if p["target_power"] is not None:
        v = pw.required_sample_size(spec, p["target_power"], p["ratio"])
        r = rep.table("required", ["target_power", "n1", "n2", "power"])
        r.add(p["target_power"], v.n1, v.n2, pw.power(spec, v))
    if not n1s and p["target_power"] is None:
        raise DomainError("give --n1/--n2 or --target-power")


def cmd_subsample(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    alloc = ss.allocate(p["n"], p["k"], p["strategy"], cfg.seed)
    t = rep.table("allocation", ["draw_id", "k", "indices"])
    for i, d in enumerate(alloc.draws):
        t.add(i, len(d), ",".join(str(x) for x in d.tolist()))
    if p["overlap"]:
        labels = [str(i) for i in range(len(alloc.draws))]
        o = rep.table("overlap", ["row", *labels])
        for lab, row in zip(labels, ss.overlap_matrix(alloc).tolist()):
            o.add(lab, *row)
    if p["audit_c"] is not None or p["audit_ell"] is not None:
        if p["audit_c"] is None or p["audit_ell"] is None:
            raise DomainError("the overlap audit needs both --audit-c and --audit-ell")
        k = p["k"][0]
        freq = ss.empirical_max_overlap(p["n"], k, p["audit_c"], p["audit_ell"], p["trials"], cfg.seed)
        a = rep.table("audit", ["n", "k", "c", "ell", "trials", "frequency"])
        a.add(p["n"], k, p["audit_c"], p["audit_ell"], p["trials"], freq)


def _emit_simulation(rep: Report, r: sim.SimulationReport, labels: list[str]) -> None:
    t = rep.table("error_counts", ["count", "n", "frequency"])
    for i, c in enumerate(r.error_counts):
        t.add(i, c, c / r.rep_count)
    f = rep.table("rejection", ["test", "frequency", "no_test"])
    nt = r.no_test_counts or (0,) * len(labels)
    for lab, freq, miss in zip(labels, r.per_test_rejection_freq, nt):
        f.add(lab, freq, miss)
    matrix_table(rep, "correlation", labels, r.pairwise_stat_correlation)
    s = rep.table("stoploss", ["L", "premium"])
    for L, prem in enumerate(r.stop_loss_curve.premiums):
        s.add(L, prem)
    if r.contingency is not None:
        c = rep.table("contingency", ["row", f"not_{labels[0]}", labels[0]])
        c.add(f"not_{labels[-1]}", *r.contingency[0].tolist())
        c.add(labels[-1], *r.contingency[1].tolist())
        q = rep.table("conditional", ["given", "event", "frequency"])
        q.add(labels[0], labels[-1], sim.conditional_rejection(r))


def cmd_simulate(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    if p["design"] == "shared-control":
        d = sim.SharedControlDesign(
            m=p["m"],
            n_arm=p["n_arm"],
            n_control=p["n_control"],
            control_mode=p["control_mode"],
            subsample_k=p["subsample_k"],
            alpha=p["alpha"],
            effect=p["effect"],
            replications=p["reps"],
            master_seed=cfg.seed,
        )
        # with equal arm and control sizes the t statistics correlate as shared/(2n)
        shared = {sim.ControlMode.REUSE_FULL: d.control_size, sim.ControlMode.DISJOINT_SPLIT: 0}.get(d.control_mode)
        if shared is not None and d.n_arm == d.control_size and d.m > 1:
            rep.meta["theory_correlation"] = ec.shared_control_correlation(d.n_arm, shared)
        _emit_simulation(rep, sim.run_shared_control(d, p["workers"]), [f"T{i + 1}" for i in range(d.m)])
        return
    shape, scale = p["shape"], p["scale"]
    if shape is None or scale is None:
        ref_shape, ref_scale = sim.weibull_from_hazard_scale(2.5, 2.0)
        if shape is None and scale is None:
            shape, scale = ref_shape, ref_scale
        elif shape is None:
            raise DomainError("give --shape with --scale")
        else:
            scale = sim.weibull_scale_for_mean(2.5, shape)
    d = sim.SurvivalReuseDesign(
        n_per_group=p["n_per_group"],
        weibull_shape=shape,
        weibull_scale=scale,
        truncation_times=tuple(p["truncation"]),
        mode=p["mode"],
        alpha=p["alpha"],
        replications=p["reps"],
        master_seed=cfg.seed,
    )
    rep.meta["weibull_shape"] = shape
    rep.meta["weibull_scale"] = scale
    _emit_simulation(rep, sim.run_survival_reuse(d, p["workers"]), [f"R{t:g}" for t in d.truncation_times])


def load_portfolio(path: str, seed: int) -> tuple[pf.PortfolioConfig, dict]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError([f"cannot read portfolio {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ValidationError([f"portfolio {path} is not valid JSON: {exc}"]) from exc
    raw = {k: v for k, v in raw.items() if v is not None}  # null means "not given"
    problems = []
    allowed = {"plans", "utility", "dataset_size", "allocation", "mode", "mc_reps", "grid", "joint_points"}
    problems += [f"unknown portfolio key {k!r}" for k in raw if k not in allowed]
    if "plans" not in raw:
        problems.append("portfolio needs 'plans'")
    if ("grid" in raw) == ("joint_points" in raw):
        problems.append("portfolio needs exactly one of 'grid' or 'joint_points'")
    plan_keys = {"kind", "alpha", "two_sided", "sigma", "n1", "n2", "prior", "data_fraction", "fraction_arms"}
    for i, pl in enumerate(raw.get("plans", [])):
        problems += [f"plan {i}: unknown key {k!r}" for k in pl if k not in plan_keys]
        problems += [f"plan {i}: missing {k!r}" for k in ("n1", "n2") if k not in pl]
    ukind = raw.get("utility", {}).get("kind", "linear")
    if ukind not in ("linear", "quadratic", "qaly", "tabulated"):
        problems.append(f"utility kind {ukind!r} is not one of linear, quadratic, qaly, tabulated")
    elif ukind == "tabulated" and "table" not in raw["utility"]:
        problems.append("tabulated utility needs a 'table' of error count -> utility")
    if problems:
        raise ValidationError(problems)

    u = raw.get("utility", {"kind": "linear"})
    kind = u.get("kind", "linear")
    scale = float(u.get("scale", 1.0))
    if kind == "tabulated":
        utility = ec.UtilityFunction.tabulated({int(k): float(v) for k, v in u["table"].items()}, scale)
    else:
        utility = getattr(ec.UtilityFunction, kind)(scale)
    plans = []
    for pl in raw["plans"]:
        test = pw.TestSpec(
            pw.TestKind.Z if pl.get("kind", "t") in ("z", pw.TestKind.Z.value) else pw.TestKind.T,
            float(pl.get("alpha", 0.05)),
            bool(pl.get("two_sided", True)),
            0.0,
            float(pl.get("sigma", 1.0)),
        )
        plans.append(
            pf.StudyPlan(
                test,
                pw.SampleVector(pl["n1"], pl["n2"]),
                tuple(tuple(x) for x in pl.get("prior", [[0.0, 1.0]])),
                float(pl.get("data_fraction", 1.0)),
                pl.get("fraction_arms", "control"),
            )
        )
    cfg = pf.PortfolioConfig(
        tuple(plans),
        utility,
        raw.get("dataset_size"),
        raw.get("allocation", "independent_uniform"),
        raw.get("mode", "analytic_independent"),
        int(raw.get("mc_reps", 10_000)),
        seed,
    )
    return cfg, raw


def cmd_optimize(cfg: RunConfig, rep: Report) -> None:
    pcfg, raw = load_portfolio(cfg.params["portfolio"], cfg.seed)
    if "grid" in raw:
        res = pf.grid_search(pcfg, grid=raw["grid"], workers=cfg.params["workers"])
    else:
        res = pf.grid_search(pcfg, joint_points=raw["joint_points"], workers=cfg.params["workers"])
    m = len(pcfg.plans)
    cols = [c for i in range(m) for c in (f"alpha_{i + 1}", f"fraction_{i + 1}")]
    b = rep.table("best", ["index", *cols, "utility"])
    b.add("-".join(str(i) for i in res.best_index), *[x for pair in res.best_point for x in pair], res.best_utility)
    s = rep.table("surface", ["index", *cols, "utility", "error"])
    for e in res.surface:
        s.add("-".join(str(i) for i in e.index), *[x for pair in e.point for x in pair], e.utility, e.error)


def cmd_reuse(cfg: RunConfig, rep: Report) -> None:
    r = cap.unit_reuse(cfg.params["rates"])
    s = rep.table("summary", ["lambda", "pr_ge2_exact", "pr_ge2_poisson", "sup_cdf_distance", "lecam_bound"])
    s.add(r.poisson_lambda, r.pr_ge2_exact, r.pr_ge2_poisson, r.sup_cdf_distance, r.lecam_bound)
    t = rep.table("pmf", ["count", "exact", "poisson"])
    for x, pr in enumerate(r.exact_pmf.probabilities.tolist()):
        t.add(x, pr, poisson_pmf(r.poisson_lambda, x))


COMMANDS: dict[str, Callable[[RunConfig, Report], None]] = {
    "error-dist": cmd_error_dist,
    "stoploss": cmd_stoploss,
    "capacity": cmd_capacity,
    "power": cmd_power,
    "subsample": cmd_subsample,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "reuse": cmd_reuse,
}


def execute(cfg: RunConfig) -> str:
    rep = Report(_meta(cfg))
    COMMANDS[cfg.command](cfg, rep)
    return rep.render(cfg.fmt)


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_and_validate(argv)
        text = execute(cfg)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except ValidationError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_USAGE
    except DataReuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if cfg.output_path:
        try:
            Path(cfg.output_path).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot write {cfg.output_path}: {exc.strerror}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
