"""Command-line interface: ``invlab <command> [options]``.

Exit status: 0 pass, 1 fail, 2 inconclusive, 3 configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import CoefficientField, DensityError, DensitySpec
from .criteria import ClassifyOptions, LyapunovSpec, classify
from .expr import ExpressionError
from .fields import ScalarField
from .gallery import CaseInstance, MeasureEntry, instantiate, list_cases
from .report import (EXIT_CONFIG, ConfigError, Report, RunConfig, exit_code, to_jsonable,
                     write_csv, write_plot_spec)
from .sde import SimConfig, simulate, survival_probability
from .semigroup import (GaussianObservable, OUSpec, coexcessive_check,
                        invariance_under_semigroup_check, ou_semigroup)
from .weak_form import default_battery, invariance_residual

__all__ = ["main", "build_parser", "run"]

_SIM_DEFAULTS = {"t": 1.0, "h": 1e-3, "scheme": "tamed", "R_kill": 1e3, "paths": 1000, "drift": "primal"}
_OPTION_KEYS = {f.name for f in dataclasses.fields(ClassifyOptions)} - {"lyapunov", "other_measures"}


def _worst(statuses) -> str:
    s = set(statuses)
    if "fail" in s:
        return "fail"
    if "inconclusive" in s or not s:
        return "inconclusive"
    return "pass"


# -- operator resolution ---------------------------------------------------------------

def _inline_case(spec: dict, criteria: dict) -> CaseInstance:
    d = int(spec["d"])
    consts = spec.get("constants", {})
    kinks = tuple(spec.get("kink_radii", ()))
    cf = CoefficientField.from_expressions(d, spec["A"], spec["G"], consts, name="inline",
                                           kink_radii=kinks)
    measures = []
    for role in ("rho", "rho_tilde"):
        if role in spec:
            dens = DensitySpec.from_expression(spec[role], consts,
                                               finiteness=spec.get("finiteness", "unknown")
                                               if role == "rho" else "unknown",
                                               kink_radii=kinks)
            measures.append(MeasureEntry(dens, True, "user-supplied density",
                                         role="mu" if role == "rho" else "mu_tilde"))
    lyap = [LyapunovSpec(ScalarField.from_expression(v.pop("V"), consts), **v)
            for v in (dict(item) for item in criteria.get("lyapunov", []))]
    opts = ClassifyOptions(lyapunov=lyap, growth={"M": 1.0, "N0": 1.0},
                           other_measures=[m.density for m in measures[1:]])
    return CaseInstance("inline", {"d": d}, cf, measures, {}, {}, opts)


def resolve(config: RunConfig) -> CaseInstance:
    """Build the operator a config names; every failure here is a configuration error."""
    try:
        if config.example is not None:
            inst = instantiate(config.example, **config.params)
        else:
            inst = _inline_case(config.inline, config.criteria)
    except (KeyError, ValueError, TypeError, ExpressionError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    extra = {k: v for k, v in config.criteria.items() if k in _OPTION_KEYS}
    if extra:
        inst.options = dataclasses.replace(inst.options, **extra)
    inst.options = dataclasses.replace(inst.options, seed=config.seed)
    return inst


def _sim_config(config: RunConfig, d: int, **over) -> SimConfig:
    s = {**_SIM_DEFAULTS, **over, **{k: v for k, v in config.sim.items() if k in _SIM_DEFAULTS}}
    x = tuple(config.sim.get("x", over.get("x", np.zeros(d))))
    if len(x) != d:
        raise ConfigError(f"sim.x has {len(x)} components, the operator lives in d = {d}")
    try:
        return SimConfig(x=x, seed=config.seed, **s)
    except ValueError as exc:
        raise ConfigError(f"simulation settings: {exc}") from None


def _selected(inst: CaseInstance, which: str) -> list[MeasureEntry]:
    if which in ("both", "all"):
        return list(inst.measures)
    out = [m for m in inst.measures if m.role == which]
    if not out:
        raise ConfigError(f"case {inst.case_id} has no measure {which!r}")
    return out


# -- commands --------------------------------------------------------------------------

def _residuals(inst: CaseInstance, config: RunConfig, report: Report, compare: bool) -> list[str]:
    statuses = []
    battery_opts = {k: config.criteria[k] for k in ("n_bumps", "n_monomial", "region_radius")
                    if k in config.criteria}
    rows = {}
    for m in _selected(inst, config.measure):
        tests = default_battery(inst.cf.d, seed=config.seed, **{**m.battery, **battery_opts})
        res = invariance_residual(inst.cf, m.density, tests, tol=config.tol)
        entry = {"density": m.density.name, "expected_invariant": m.expected_invariant,
                 "residual": res.to_dict()}
        if compare:
            if res.verdict == "inconclusive":
                statuses.append("inconclusive")
            else:
                ok = res.passed == m.expected_invariant
                entry["matches_expectation"] = ok
                statuses.append("pass" if ok else "fail")
            report.cite(m.citation)
        else:
            statuses.append(res.verdict)
        rows[m.role] = entry
    report.results["invariance"] = rows
    return statuses


def run_check_invariance(config: RunConfig, report: Report) -> str:
    inst = resolve(config)
    if not inst.measures:
        raise ConfigError("no density to check")
    return _worst(_residuals(inst, config, report, compare=False))


def _classify_status(inst: CaseInstance, report: Report) -> str:
    v = classify(inst.cf, inst.rho, inst.options)
    vd = v.to_dict()
    report.results["verdict"] = vd
    for item in v.implications:
        report.cite(item.get("citation", ""))
    if v.recurrence == "inconsistent" or v.inconsistencies:
        return "fail"
    if inst.expected:
        mism = {k: {"expected": e, "got": vd.get(k)} for k, e in inst.expected.items() if vd.get(k) != e}
        report.results["expected"] = inst.expected
        report.results["mismatches"] = mism
        report.cite(*inst.citations.values())
        if mism:
            undecided = all(m["got"] in (None, "unknown") for m in mism.values())
            return "inconclusive" if undecided else "fail"
        return "pass"
    return "pass" if v.recurrence in ("recurrent", "transient") else "inconclusive"


def run_classify(config: RunConfig, report: Report) -> str:
    inst = resolve(config)
    if not inst.measures:
        raise ConfigError("classification needs a density rho")
    return _classify_status(inst, report)


def _observable(config: RunConfig):
    src = config.sim.get("observable")
    if src is None:
        return GaussianObservable(1.0), "exp(-norm2(x))"
    try:
        return ScalarField.from_expression(src, (config.inline or {}).get("constants", {})), src
    except ExpressionError as exc:
        raise ConfigError(f"observable: {exc}") from None


def run_simulate(config: RunConfig, report: Report) -> str:
    inst = resolve(config)
    cfg = _sim_config(config, inst.cf.d)
    if cfg.drift == "dual" and not inst.measures:
        raise ConfigError("the dual drift needs a density")
    rho = inst.rho if cfg.drift == "dual" else None
    ens = simulate(inst.cf, cfg, rho=rho)
    f, fsrc = _observable(config)
    alive = ens.alive
    vals = np.zeros(cfg.paths)
    if np.any(alive):
        vals[alive] = f.value(ens.terminal[alive]) if hasattr(f, "value") else f(ens.terminal[alive])
    est, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(cfg.paths)) if cfg.paths > 1 else 0.0
    report.results["simulation"] = {"config": cfg.to_dict(), "alive_fraction": float(alive.mean()),
                                    "exited": ens.n_exited, "stalled": ens.n_stalled,
                                    "min_step": ens.min_step, "provenance": ens.provenance,
                                    "observable": fsrc, "estimate": est, "se": se}
    if config.out:
        p = Path(config.out) / "ensemble.csv"
        p.parent.mkdir(parents=True, exist_ok=True)
        ens.to_csv(p)
        report.artifacts.append(str(p))
    if not config.sim.get("oracle"):
        return "pass"
    if inst.case_id != "ornstein-uhlenbeck" or cfg.drift != "primal":
        raise ConfigError("the closed-form oracle is available for the ornstein-uhlenbeck case only")
    spec = OUSpec(inst.extras["Q"], inst.extras["B"])
    exact = ou_semigroup(spec, f, cfg.x, cfg.t)
    z = (est - exact) / se if se > 0 else 0.0
    ok = abs(est - exact) <= 3.0 * se
    report.results["oracle"] = [{"x": list(cfg.x), "t": cfg.t, "estimate": est, "se": se,
                                 "exact": exact, "z": z, "passed": ok}]
    return "pass" if ok else "fail"


def _coexcessive(inst, config, report) -> str:
    spec = inst.extras["coexcessive"]
    sim = SimConfig(x=spec["points"][0], t=spec["t"], h=config.sim.get("h", 1e-3), scheme="adaptive",
                    R_kill=config.sim.get("R_kill", 10.0), paths=config.sim.get("paths", 10_000),
                    seed=config.seed)
    rows = coexcessive_check(inst.cf, spec["rho"], spec["rho_tilde"], spec["points"], spec["t"], sim,
                             h=spec.get("h"))
    report.results["coexcessive"] = [dataclasses.asdict(r) for r in rows]
    if config.out:
        data = write_csv(Path(config.out) / "coexcessive.csv", ["x", "t", "h", "estimate", "se", "z", "passed"],
                         [[" ".join(map(repr, r.x)), spec["t"], r.h, r.estimate, r.se, r.z, r.passed]
                          for r in rows])
        plot = write_plot_spec(Path(config.out) / "coexcessive.plot.json", data, "h", "estimate", error="se",
                               title="dual semigroup applied to h against h")
        report.artifacts += [str(data), str(plot)]
    return "pass" if all(r.passed for r in rows) else "fail"


def _survival(inst, config, report) -> str:
    spec = inst.extras["survival"]
    cfg = SimConfig(x=spec["x"], t=config.sim.get("t", spec["t"]), h=config.sim.get("h", 1e-3),
                    scheme=spec["scheme"], R_kill=spec["R_kill"], paths=config.sim.get("paths", 10_000),
                    seed=config.seed)
    res = survival_probability(inst.cf, cfg)
    report.results["survival"] = res.to_dict()
    if config.out:
        data = write_csv(Path(config.out) / "survival.csv", ["R_kill", "p_hat", "se", "exited", "stalled"],
                         [[r["R_kill"], r["p_hat"], r["se"], r["exited"], r["stalled"]] for r in res.sensitivity])
        plot = write_plot_spec(Path(config.out) / "survival.plot.json", data, "R_kill", "p_hat", error="se",
                               title="survival fraction against kill radius", xscale="log")
        report.artifacts += [str(data), str(plot)]
    if spec["expect"] == "one":
        return "pass" if all(r["exited"] == 0 and r["stalled"] == 0 for r in res.sensitivity) else "fail"
    return "pass" if all(r["p_hat"] < 1.0 for r in res.sensitivity) else "fail"


def _semigroup_invariance(inst, config, report) -> str:
    spec = inst.extras["semigroup_invariance"]
    if inst.cf.d != 1:
        report.results["semigroup_invariance"] = {"skipped": "run only in d = 1"}
        return "pass"
    tf = spec["test"]
    sim = SimConfig(x=tuple(tf.center), t=spec["t"], h=spec["h"], scheme=spec["scheme"],
                    R_kill=spec["R_kill"], seed=config.seed)
    res = invariance_under_semigroup_check(inst.cf, inst.rho, tf, spec["t"], sim, panels=spec["panels"],
                                           paths_per_node=config.sim.get("paths", spec["paths_per_node"]))
    out = res.to_dict()
    out["expected"] = spec["expected"]
    report.results["semigroup_invariance"] = out
    return "pass" if res.passed == spec["expected"] else "fail"


def run_reproduce(config: RunConfig, report: Report) -> str:
    if config.example is None:
        raise ConfigError("reproduce needs --example")
    inst = resolve(config)
    config = dataclasses.replace(config, measure="all") if config.measure == "mu" else config
    statuses = _residuals(inst, config, report, compare=True)
    statuses.append(_classify_status(inst, report))
    for key, fn in (("coexcessive", _coexcessive), ("survival", _survival),
                    ("semigroup_invariance", _semigroup_invariance)):
        if key in inst.extras:
            statuses.append(fn(inst, config, report))
    report.results["notes"] = inst.notes
    return _worst(statuses)


def run_list_examples(config: RunConfig, report: Report) -> str:
    report.results["examples"] = [{"id": i, "summary": s} for i, s in list_cases()]
    return "pass"


COMMANDS = {"check-invariance": run_check_invariance, "classify": run_classify,
            "simulate": run_simulate, "reproduce": run_reproduce, "list-examples": run_list_examples}


# -- argument handling -----------------------------------------------------------------

def _param(text: str):
    if "=" not in text:
        raise ConfigError(f"--param expects k=v, got {text!r}")
    k, v = text.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        if "," in v:
            try:
                val = [float(p) for p in v.split(",")]
            except ValueError:
                val = v
        else:
            val = v
    return k.strip(), val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invlab", description="Invariant measures of elliptic operators: "
                                     "weak-form checks, criteria and SDE simulation.")
    parser.add_argument("--version", action="version", version=f"invlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--example", help="gallery case id")
        p.add_argument("--param", action="append", default=[], metavar="K=V",
                       help="case parameter (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for report.json and CSV files")
        p.add_argument("--tol", type=float, help="relative residual tolerance")
        p.add_argument("--paths", type=int, help="number of simulated paths")
        p.add_argument("--horizon", type=float, help="simulation horizon t")
        p.add_argument("--measure", choices=["mu", "mu_tilde", "both", "all"])
        p.add_argument("--quiet", action="store_true", help="print only the status line")
    return parser


def config_from_args(args) -> RunConfig:
    doc = {"command": args.command}
    if args.config:
        base = RunConfig.from_file(args.config)
        doc = {**base.to_dict(), "command": args.command}
    if args.example is not None:
        doc["example"] = args.example
        doc["inline"] = None
    if args.param:
        doc["params"] = {**doc.get("params", {}), **dict(_param(p) for p in args.param)}
    for key in ("seed", "out", "tol", "measure"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    sim = dict(doc.get("sim", {}))
    if args.paths is not None:
        sim["paths"] = args.paths
    if args.horizon is not None:
        sim["t"] = args.horizon
    doc["sim"] = sim
    return RunConfig.from_dict(to_jsonable(doc))


def run(config: RunConfig) -> Report:
    report = Report(config)
    status = COMMANDS[config.command](config, report)
    return report.finish(status)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        report = run(config)
    except (ConfigError, DensityError) as exc:
        print(f"invlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.out:
        report.write(config.out)
    if config.command == "list-examples" and not args.quiet:
        for item in report.results["examples"]:
            print(f"{item['id']:<40} {item['summary']}")
    elif not args.quiet and not config.out:
        print(report.to_json())
    print(f"invlab {config.command}: {report.status}" + (f" ({config.out}/report.json)" if config.out else ""))
    return exit_code(report.status)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
