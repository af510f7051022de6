"""
Reachable sets of differential inclusions on a sparse lattice.
Runs the full Euler scheme and the boundary Euler schemes, compares them, and writes CSV/JSON.
"""
import argparse
import json
import logging
import math
import sys
from pathlib import Path

from dotenv import load_dotenv
load_dotenv()

import config
import report
from analysis import UnsupportedScenarioError, compare_runs, convergence_study, topology_report
from exprparser import ExprError
from geometry import Box
from inclusion import DriftEvaluationError, InverseIterationError, estimate_lipschitz
from scenarios import ConfigError, ScenarioConfig, build_scenario, get_builtin, load_config, with_overrides
from scheme import VARIANTS, ParameterError, SchemeError, run, validate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3
EXIT_MISMATCH = 4


def _float_or_inf(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


def _scenario_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", default="linear2d", help="Built-in scenario name")
    src.add_argument("--config", type=Path, help="JSON scenario file")
    p.add_argument("--h", type=float, help="Time step")
    p.add_argument("--T", type=float, help="Final time")
    p.add_argument("--rho", type=float, help="Lattice spacing (default h^2 unless the scenario fixes it)")
    p.add_argument("--L", type=float, help="Lipschitz constant")
    p.add_argument("--beta-star", type=float, help="Overapproximation budget beta*")
    p.add_argument("--kappa-override", type=_float_or_inf, help="Replace the kappa band radius (number or inf)")
    p.add_argument("--unchecked", action="store_true", help="Downgrade h > h* to a warning")
    p.add_argument("--no-strict", action="store_true", help="Allow disconnected initial sets")


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, help="Worker threads (default INCLUSION_REACH_THREADS or 1)")
    p.add_argument("--out", type=Path, help="Output directory (default REACH_OUTPUT_DIR)")
    p.add_argument("--pooled", action="store_true", help="Pooled instead of per-cell kappa-band intersection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inclusion-reach", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="Run one scheme variant")
    _scenario_args(p)
    _run_args(p)
    p.add_argument("--variant", choices=VARIANTS, help="Scheme variant (default from scenario)")
    p.add_argument("--dump", action="store_true", help="Write per-step cell CSVs")

    p = sub.add_parser("compare", help="Full scheme vs a boundary scheme, step by step")
    _scenario_args(p)
    _run_args(p)
    p.add_argument("--variant", choices=VARIANTS[1:], default="boundary")
    p.add_argument("--expect-mismatch", action="store_true", help="Succeed only if some step differs")

    p = sub.add_parser("study", help="Convergence ladder against the closed-form linear reachable set")
    _scenario_args(p)
    _run_args(p)
    p.add_argument("--h-list", default="0.2,0.1,0.05", help="Comma-separated step sizes (rho = h^2)")
    p.add_argument("--no-full", action="store_true", help="Skip the full scheme")

    p = sub.add_parser("topology", help="Boundary components and enclosed voids per step")
    _scenario_args(p)
    _run_args(p)
    p.add_argument("--variant", choices=VARIANTS, default="boundary")

    p = sub.add_parser("validate", help="Echo parameters with derived alpha*, beta bound, kappa, h*")
    _scenario_args(p)
    p.add_argument("--estimate-lipschitz", action="store_true", help="Also sample the drift's Lipschitz constant")
    p.add_argument("--samples", type=int, default=21, help="Samples per axis for --estimate-lipschitz")
    return parser


def _load(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else get_builtin(args.scenario)
    cfg = with_overrides(cfg, h=args.h, T=args.T, rho=args.rho, L=args.L, beta_star=args.beta_star,
                         kappa_override=args.kappa_override)
    if args.no_strict:
        cfg.strict_connectivity = False
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(config.REACH_OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    scenario = build_scenario(cfg, unchecked=args.unchecked)
    variant = args.variant or scenario.variant
    out = _out_dir(args)
    emit = report.make_emitter(out, scenario.name) if args.dump else None
    result = run(variant, scenario, emit=emit, threads=config.get_thread_count(args.threads), pooled=args.pooled)
    report.write_run_report(result, out / f"{scenario.name}_{variant}_report.json")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load(args)
    scenario = build_scenario(cfg, unchecked=args.unchecked)
    threads = config.get_thread_count(args.threads)
    out = _out_dir(args)
    full = run("full", scenario, threads=threads, keep_states=True)
    bnd = run(args.variant, scenario, threads=threads, pooled=args.pooled, keep_states=True)
    comparisons = compare_runs(full.states, bnd.states)  # type: ignore[arg-type]
    path = out / f"{scenario.name}_{args.variant}_compare.json"
    report.write_comparison(comparisons, path, out_dir=out, prefix=f"{scenario.name}_{args.variant}_")
    mismatched = [c.index for c in comparisons if not c.equal]
    if mismatched:
        log.info("Layers differ at steps %s", mismatched)
    else:
        log.info("Layers equal at all %d steps", len(comparisons))
    if args.expect_mismatch:
        if not mismatched:
            log.error("Expected a mismatch but every step agrees")
            return EXIT_MISMATCH
        return EXIT_OK
    return EXIT_MISMATCH if mismatched else EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _load(args)
    h_list = [float(v) for v in args.h_list.split(",") if v.strip()]
    out = _out_dir(args)
    study = convergence_study(h_list, cfg, with_full=not args.no_full, threads=config.get_thread_count(args.threads))
    report.write_study_csv(study, out / f"{cfg.name}_study.csv")
    report.write_study_json(study, out / f"{cfg.name}_study.json")
    log.info("Fitted order in h: %s", study.order_h)
    return EXIT_OK


def cmd_topology(args: argparse.Namespace) -> int:
    cfg = _load(args)
    scenario = build_scenario(cfg, unchecked=args.unchecked)
    out = _out_dir(args)
    result = run(args.variant, scenario, threads=config.get_thread_count(args.threads), pooled=args.pooled,
                 keep_states=True, with_components=False)
    rows = []
    for state, step in zip(result.states, result.steps):
        topo = topology_report(state)
        rows.append({"index": step.index, "t": step.t, "boundary_components": topo.boundary_components,
                     "enclosed_voids": topo.enclosed_voids})
        log.info("step %d t=%.4g components=%d voids=%s", step.index, step.t, topo.boundary_components,
                 topo.enclosed_voids)
    report.write_json(out / f"{scenario.name}_{args.variant}_topology.json",
                      {"scenario": scenario.name, "variant": args.variant, "steps": rows})
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    scenario = build_scenario(cfg, unchecked=args.unchecked)
    params = validate(scenario.params)
    data = {"scenario": scenario.name, "params": params.echo(),
            "lipschitz_certified": scenario.rhs.lipschitz_certified}
    if args.estimate_lipschitz:
        dom = cfg.lipschitz_domain
        domain = Box(tuple(dom.lo), tuple(dom.hi)) if dom else Box((-1.5,) * cfg.dim, (1.5,) * cfg.dim)
        data["lipschitz_estimate"] = estimate_lipschitz(scenario.rhs, domain, args.samples).as_dict()
    print(json.dumps(report.json_safe(data), indent=2, sort_keys=True, allow_nan=False))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "study": cmd_study,
    "topology": cmd_topology,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=config.REACH_LOG_LEVEL, format="%(asctime)s [%(levelname)s] %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ParameterError, ConfigError, ExprError, UnsupportedScenarioError) as e:
        log.error("Invalid input: %s", e)
        return EXIT_INVALID
    except (SchemeError, DriftEvaluationError, InverseIterationError, OSError) as e:
        log.error("Run failed: %s", e)
        return EXIT_RUNTIME
    except ValueError as e:
        log.error("Invalid input: %s", e)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
