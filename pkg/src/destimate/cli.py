"""Command-line front end: analyze, synthesize, simulate, demo.

Exit codes: 0 success (analysis positive / converged), 1 negative result
or synthesis refusal, 2 malformed inputs (parse errors, dimension
mismatches), 3 numeric failures.  Every command pairs its human-readable
output with a machine-parseable JSON report; ``--json`` switches stdout
to the JSON form.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .demo import DEMO_REFERENCE, demo_scenario
from .errors import (
    DestimateError,
    DimensionError,
    InternalInconsistencyError,
    NumericFailure,
    PreconditionError,
    ScenarioError,
    SynthesisFailure,
    TopologyError,
)
from .matnum import STAB_TOL_DEFAULT, eigenvalues
from .netsim import convergence_metrics, simulate, trace_to_csv, write_error_norm_files
from .structan import decompose, is_jointly_partially_detectable, is_partially_detectable_rank
from .synth import (
    estimator_from_dict,
    estimator_to_dict,
    load_estimator,
    save_estimator,
    synth_distributed,
)
from .sysmodel import analyze_topology, load_scenario, parse_scenario, stacked_output

log = logging.getLogger("destimate")

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _configure_logging():
    level_name = os.environ.get("DESTIMATE_LOG", "error")
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ScenarioError(
            f"DESTIMATE_LOG must be one of {sorted(levels)}, got {level_name!r}"
        )
    logging.basicConfig(level=levels[level_name], format="%(levelname)s %(name)s: %(message)s")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", path)


def _complex_pair(z):
    return [float(np.real(z)), float(np.imag(z))]


def _witnesses_json(witnesses):
    return [
        {
            "lambda": _complex_pair(w.lam),
            "rank_with_functional": w.rank_with_k,
            "rank_without": w.rank_without_k,
        }
        for w in witnesses
    ]


def _witness_lines(witnesses):
    lines = []
    for w in witnesses:
        rel = "==" if w.equal else "!="
        lam = complex(w.lam)
        lam_s = f"{lam.real:g}" if lam.imag == 0 else f"{lam.real:g}{lam.imag:+g}j"
        lines.append(
            f"    lambda={lam_s}: rank [stack; functional] = {w.rank_with_k} "
            f"{rel} {w.rank_without_k} = rank stack"
        )
    return lines


def _analysis_report(scenario, stab_tol, rank_tol):
    plant, graph = scenario.plant, scenario.graph
    topo = analyze_topology(graph)
    spec = eigenvalues(plant.A, stab_tol=stab_tol)
    Ct, _ = stacked_output(plant)
    dec = decompose(plant.A, Ct, plant.K, stab_tol=stab_tol, rank_tol=rank_tol)
    sensors = []
    for i, s in enumerate(plant.sensors, start=1):
        verdict = is_partially_detectable_rank(
            plant.A, s.C, plant.K, stab_tol=stab_tol, rank_tol=rank_tol
        )
        sensors.append((i, verdict))
    joint = is_jointly_partially_detectable(plant, stab_tol=stab_tol, rank_tol=rank_tol)
    ok = bool(joint.detectable and topo.satisfies_assumption)
    payload = {
        "topology": {
            "is_undirected": topo.is_undirected,
            "is_balanced": topo.is_balanced,
            "is_strongly_connected": topo.is_strongly_connected,
            "is_connected_undirected": topo.is_connected_undirected,
            "satisfies_assumption": topo.satisfies_assumption,
            "lambda2": topo.lambda2,
        },
        "spectrum": {
            "values": [_complex_pair(v) for v in spec.values],
            "stable": [_complex_pair(v) for v in spec.stable],
            "unstable": [_complex_pair(v) for v in spec.unstable],
            "stab_tol": stab_tol,
        },
        "decomposition": {"n1": dec.n1, "n2": dec.n2, "n3": dec.n3, "q": dec.q},
        "sensors": [
            {
                "index": i,
                "partially_detectable": v.detectable,
                "witnesses": _witnesses_json(v.witnesses),
            }
            for i, v in sensors
        ],
        "joint": {
            "partially_detectable": joint.detectable,
            "witnesses": _witnesses_json(joint.witnesses),
            "k_obar3_norm": joint.k_obar3_norm,
        },
        "ok": ok,
    }
    return payload, topo, spec, dec, sensors, joint, ok


def _print_analysis(topo, spec, dec, sensors, joint, stab_tol):
    kind = "undirected" if topo.is_undirected else "directed"
    props = []
    if topo.is_undirected:
        props.append("connected" if topo.is_connected_undirected else "disconnected")
    else:
        props.append("balanced" if topo.is_balanced else "unbalanced")
        props.append("strongly connected" if topo.is_strongly_connected else "not strongly connected")
    lam2 = "undefined" if topo.lambda2 is None else f"{topo.lambda2:.6g}"
    verdict = "satisfied" if topo.satisfies_assumption else "VIOLATED"
    print(f"topology: {kind}, {', '.join(props)}; connectivity assumption {verdict}; lambda2 = {lam2}")
    print(f"spectrum of A (stab_tol = {stab_tol:g}):")
    for v in sorted(spec.values, key=lambda z: (-z.real, abs(z.imag))):
        cls = "stable" if v.real < -stab_tol else "unstable"
        v_s = f"{v.real:.6g}" if v.imag == 0 else f"{v.real:.6g}{v.imag:+.6g}j"
        print(f"  {v_s:>22s}  ({cls})")
    print(f"decomposition: n1={dec.n1} n2={dec.n2} n3={dec.n3} (estimator order q={dec.q})")
    for i, v in sensors:
        word = "partially detectable" if v.detectable else "NOT partially detectable"
        print(f"sensor {i}: {word}")
        for line in _witness_lines(v.witnesses):
            print(line)
    word = "jointly partially detectable" if joint.detectable else "NOT jointly partially detectable"
    print(f"joint (all sensors stacked): {word}  (||K_obar3|| = {joint.k_obar3_norm:.3g})")


def cmd_analyze(args):
    scenario = load_scenario(args.scenario)
    stab_tol = args.stab_tol if args.stab_tol is not None else (
        scenario.synthesis.stab_tol or STAB_TOL_DEFAULT
    )
    rank_tol = args.rank_tol if args.rank_tol is not None else scenario.synthesis.rank_tol
    payload, topo, spec, dec, sensors, joint, ok = _analysis_report(scenario, stab_tol, rank_tol)
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        _print_analysis(topo, spec, dec, sensors, joint, stab_tol)
    if args.out:
        _write_json(args.out, payload)
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_synthesize(args):
    scenario = load_scenario(args.scenario)
    stab_tol = args.stab_tol if args.stab_tol is not None else (
        scenario.synthesis.stab_tol or STAB_TOL_DEFAULT
    )
    rank_tol = args.rank_tol if args.rank_tol is not None else scenario.synthesis.rank_tol
    gamma = args.gamma if args.gamma is not None else scenario.synthesis.gamma
    est, report = synth_distributed(
        scenario.plant, scenario.graph, gamma=gamma, stab_tol=stab_tol, rank_tol=rank_tol
    )
    save_estimator(args.out, est, report)
    payload = {"estimator_file": str(args.out), "report": report.scalars()}
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(f"synthesis succeeded: {est.l} node estimators of order q={est.q}")
        for key in ("Lambda1", "Lambda2", "Lambda3", "lambda2", "gamma_bound", "gamma_used"):
            val = report.scalars()[key]
            print(f"  {key:<12s} = {'undefined' if val is None else f'{val:.6g}'}")
        print(f"wrote {args.out}")
    return EXIT_OK


def _sim_outputs(scenario, est, trace, stem, render_figures=True):
    from . import plots

    csv_path = f"{stem}.csv"
    trace_to_csv(trace, csv_path)
    metrics = convergence_metrics(trace)
    payload = {
        "completed": trace.completed,
        "t_end": trace.t_end,
        "substeps": trace.substeps,
        "ball_radius": metrics.ball_radius,
        "v_violations": metrics.v_violations,
        "all_converged": metrics.all_converged,
        "nodes": [
            {
                "final_error_norm": nd.final_error_norm,
                "time_to_ball": None if not np.isfinite(nd.time_to_ball) else nd.time_to_ball,
                "in_ball_at_end": nd.in_ball_at_end,
            }
            for nd in metrics.nodes
        ],
    }
    _write_json(f"{stem}_metrics.json", payload)
    write_error_norm_files(trace, stem)
    if render_figures:
        plots.plot_error_norms(trace, f"{stem}_errors.png")
        plots.plot_lyapunov(trace, f"{stem}_lyapunov.png")
    return metrics, payload


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    est = load_estimator(args.estimator)
    if scenario.simulation is None:
        raise ScenarioError("scenario has no simulation section")
    sim = scenario.simulation
    if args.dt is not None or args.t_end is not None:
        from dataclasses import replace

        sim = replace(
            sim,
            dt=args.dt if args.dt is not None else sim.dt,
            t_end=args.t_end if args.t_end is not None else sim.t_end,
        )
    trace = simulate(scenario.plant, scenario.graph, est, sim)
    stem = str(args.out)
    stem = stem[:-4] if stem.endswith(".csv") else stem
    metrics, payload = _sim_outputs(scenario, est, trace, stem)
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(f"simulated to t={trace.t_end:g} ({'completed' if trace.completed else 'ABORTED'}, "
              f"{trace.substeps} substeps/step)")
        for i, nd in enumerate(metrics.nodes, start=1):
            ttb = "never" if not np.isfinite(nd.time_to_ball) else f"{nd.time_to_ball:.3f}s"
            print(f"  node {i}: final ||e|| = {nd.final_error_norm:.3e}, "
                  f"in {metrics.ball_radius:g}-ball from {ttb}")
        print(f"  V violations: {metrics.v_violations}")
        print(f"wrote {stem}.csv")
    return EXIT_OK if metrics.all_converged else EXIT_NEGATIVE


def cmd_demo(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data = demo_scenario()
    if args.dt is not None:
        data["simulation"]["dt"] = args.dt
    if args.t_end is not None:
        data["simulation"]["t_end"] = args.t_end
    _write_json(outdir / "scenario.json", data)
    scenario = parse_scenario(data)
    stab_tol = args.stab_tol if args.stab_tol is not None else STAB_TOL_DEFAULT
    rank_tol = args.rank_tol

    # stage 1: analyze
    payload, topo, spec, dec, sensors, joint, ok = _analysis_report(scenario, stab_tol, rank_tol)
    _write_json(outdir / "analysis.json", payload)
    if not args.json:
        _print_analysis(topo, spec, dec, sensors, joint, stab_tol)
    if not ok:
        print("demo: analysis failed", file=sys.stderr)
        return EXIT_NEGATIVE

    # stage 2: synthesize
    est, report = synth_distributed(
        scenario.plant, scenario.graph, gamma=args.gamma, stab_tol=stab_tol, rank_tol=rank_tol
    )
    save_estimator(outdir / "estimator.json", est, report)

    # stage 3: simulate
    trace = simulate(scenario.plant, scenario.graph, est, scenario.simulation)
    metrics, sim_payload = _sim_outputs(scenario, est, trace, str(outdir / "trace"))

    table = _demo_table(spec, topo, dec, sensors, report, stab_tol)
    if args.json:
        print(json.dumps({"analysis": payload, "report": report.scalars(),
                          "simulation": sim_payload, "comparison": table}, indent=2,
                         sort_keys=True))
    else:
        print()
        print(f"{'quantity':<24s} {'reference':>22s} {'computed':>22s}  note")
        for row in table:
            print(f"{row['quantity']:<24s} {row['reference']:>22s} {row['computed']:>22s}  {row['note']}")
        print()
        for i, nd in enumerate(metrics.nodes, start=1):
            ttb = "never" if not np.isfinite(nd.time_to_ball) else f"{nd.time_to_ball:.3f}s"
            print(f"node {i}: final ||e|| = {nd.final_error_norm:.3e}, in ball from {ttb}")
        print(f"outputs in {outdir}/")
    if not metrics.all_converged:
        print("demo: simulation did not converge", file=sys.stderr)
        return EXIT_NEGATIVE
    return EXIT_OK


def _demo_table(spec, topo, dec, sensors, report, stab_tol):
    ref = DEMO_REFERENCE
    rows = []
    ref_eigs = ref["spectrum"]
    worst = max(
        min(abs(v - mu) for v in spec.values) for mu in ref_eigs
    )
    rows.append(
        {
            "quantity": "plant eigenvalues",
            "reference": "{" + ", ".join(f"{v:g}" for v in ref_eigs) + "}",
            "computed": f"max deviation {worst:.2e}",
            "note": f"each reference value matched within {ref['spectrum_tol']:g}",
        }
    )
    rows.append(
        {
            "quantity": "lambda2",
            "reference": f"{ref['lambda2']:g}",
            "computed": "undefined" if topo.lambda2 is None else f"{topo.lambda2:g}",
            "note": "smallest nonzero eigenvalue of L + L'",
        }
    )
    rows.append(
        {
            "quantity": "estimator order q",
            "reference": f"{ref['estimator_order']}",
            "computed": f"{dec.q}",
            "note": "n1 + n2 of the decomposition",
        }
    )
    for w in ref["sensor_witnesses"]:
        i = w["sensor"]
        verdict = sensors[i - 1][1]
        hit = next(
            (x for x in verdict.witnesses if abs(x.lam - w["lambda"]) < 1e-6), None
        )
        comp = "missing" if hit is None else f"{hit.rank_with_k} vs {hit.rank_without_k}"
        rows.append(
            {
                "quantity": f"sensor {i} ranks at lambda={w['lambda']:g}",
                "reference": f"{w['rank_with_functional']} vs {w['rank_without']}",
                "computed": comp,
                "note": "exact integer match required",
            }
        )
    rows.append(
        {
            "quantity": "coupling gain",
            "reference": f"{ref['coupling_gain']:g}",
            "computed": f"{report.gamma_used:.6g}",
            "note": "any gain above the bound is admissible; entries are method-dependent",
        }
    )
    rows.append(
        {
            "quantity": "Lambda2",
            "reference": f"{ref['reference_Lambda2']:g}",
            "computed": "undefined" if report.Lambda2 is None else f"{report.Lambda2:.6g}",
            "note": "certificate-dependent; only the sign is contractual",
        }
    )
    return rows


def build_parser():
    parser = argparse.ArgumentParser(
        prog="destimate",
        description="Partial-state estimator analysis, synthesis and simulation "
        "for LTI plants observed through a sensor network.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for the randomized system generators (the built-in "
                        "commands themselves are deterministic)")
    tols = argparse.ArgumentParser(add_help=False)
    tols.add_argument("--stab-tol", type=float, default=None,
                      help="stability classification tolerance (default 1e-9)")
    tols.add_argument("--rank-tol", type=float, default=None,
                      help="relative rank tolerance (default max(rows, cols)*eps)")

    p = sub.add_parser("analyze", parents=[common, tols],
                       help="detectability and topology analysis of a scenario")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", parents=[common, tols],
                       help="design the distributed estimator for a scenario")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", default="estimator.json", help="estimator output file")
    p.add_argument("--gamma", type=float, default=None,
                   help="coupling gain override (still verified)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", parents=[common],
                       help="simulate a scenario with a synthesized estimator")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("estimator", help="estimator JSON file from 'synthesize'")
    p.add_argument("--out", default="trace.csv", help="trace CSV path (stem for siblings)")
    p.add_argument("--dt", type=float, default=None, help="override the scenario step size")
    p.add_argument("--t-end", type=float, default=None, help="override the scenario horizon")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demo", parents=[common, tols],
                       help="run the bundled demonstration end to end")
    p.add_argument("--out", default="demo_output", help="output directory")
    p.add_argument("--gamma", type=float, default=None,
                   help="coupling gain override (still verified)")
    p.add_argument("--dt", type=float, default=None, help="override the demo step size")
    p.add_argument("--t-end", type=float, default=None, help="override the demo horizon")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None):
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ScenarioError, DimensionError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TopologyError, SynthesisFailure) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_NEGATIVE
    except (NumericFailure, InternalInconsistencyError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DestimateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
