"""Command-line surface: demand / links / optimize / verify / compare / agent.

Exit codes: 0 success, 2 input error, 3 infeasible, 4 backend error,
5 step-limit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import agent as agent_mod
from . import geodata, optimizer, pipeline, verifier
from .geodata import Region
from .scenario import ScenarioError, load_scenario

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_BACKEND = 4
EXIT_STEP_LIMIT = 5


def _parse_region(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("--region expects lat_min,lat_max,lon_min,lon_max")
    a, b, c, d = (float(p) for p in parts)
    return Region(lat_min=a, lat_max=b, lon_min=c, lon_max=d)


def _load_scenario_or_exit(path):
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


# ---------------------------------------------------------------------------
# figures (report path renders maps alongside the delimited outputs)

def _render_plan_figure(plan_doc, nodes, out_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 6))
    if nodes:
        ax.scatter([n.point.lon for n in nodes], [n.point.lat for n in nodes],
                   s=[max(8, min(80, n.users)) for n in nodes],
                   c="tab:gray", alpha=0.6, label="demand nodes")
    tbs = [s for s in plan_doc.get("opened_sites", []) if s["kind"] == "TBS"]
    hap = [s for s in plan_doc.get("opened_sites", []) if s["kind"] == "HAP"]
    if tbs:
        ax.scatter([s["lon"] for s in tbs], [s["lat"] for s in tbs],
                   marker="^", c="tab:blue", s=60, label=f"TBS ({len(tbs)})")
    if hap:
        ax.scatter([s["lon"] for s in hap], [s["lat"] for s in hap],
                   marker="*", c="tab:red", s=160, label=f"HAP ({len(hap)})")
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    cost = plan_doc.get("total_cost_units", 0)
    ax.set_title(f"deployment plan: {plan_doc.get('status')}, cost {cost:g} units")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _render_comparison_figure(rows, out_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r["label"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.5))
    x = range(len(rows))
    ax1.bar(x, [r["verified_rate_bps"] / 1e6 for r in rows], color="tab:blue",
            label="verified")
    claimed = [(r["claimed_rate_bps"] or 0) / 1e6 for r in rows]
    ax1.plot(x, claimed, "k_", markersize=18, label="claimed")
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(labels, rotation=30, ha="right")
    ax1.set_ylabel("average rate (Mbps)")
    ax1.legend()
    ax2.bar(x, [r["efficiency_bps_per_unit"] for r in rows], color="tab:green")
    ax2.set_xticks(list(x))
    ax2.set_xticklabels(labels, rotation=30, ha="right")
    ax2.set_ylabel("verified efficiency (bps/unit)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands

def cmd_demand(args):
    scenario = _load_scenario_or_exit(args.scenario)
    region = None
    if args.region:
        try:
            region = _parse_region(args.region)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    try:
        nodes, sites = pipeline.run_demand(scenario, args.out, region=region)
    except (geodata.GeodataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"extracted {len(nodes)} demand nodes "
          f"({sum(n.users for n in nodes)} users), "
          f"{len(sites)} candidate sites -> {args.out}")
    return EXIT_OK


def cmd_links(args):
    scenario = _load_scenario_or_exit(args.scenario)
    try:
        links = pipeline.run_links(scenario, args.out)
    except pipeline.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (geodata.GeodataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    feasible = sum(1 for l in links if l.feasible)
    print(f"computed {len(links)} links ({feasible} feasible) "
          f"-> {os.path.join(args.out, pipeline.LINKS_FILE)}")
    return EXIT_OK


def cmd_optimize(args):
    scenario = _load_scenario_or_exit(args.scenario)
    if args.gap is not None:
        scenario.gap_tol = args.gap
    if args.time_limit is not None:
        scenario.time_limit_s = args.time_limit
    try:
        plan = pipeline.run_optimize(scenario, args.out)
    except pipeline.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"status: {plan.status.value}; opened {len(plan.opened_sites)} sites; "
          f"cost {plan.total_cost_units:g} units; "
          f"avg rate {plan.average_claimed_rate_bps / 1e6:.2f} Mbps")
    if plan.status in (optimizer.SolveStatus.OPTIMAL,
                       optimizer.SolveStatus.FEASIBLE):
        if not args.no_figures:
            plan_doc = json.load(open(os.path.join(args.out, pipeline.PLAN_FILE)))
            nodes = pipeline.load_workspace_nodes(args.out)
            _render_plan_figure(plan_doc, nodes,
                                os.path.join(args.out, "plan_map.png"))
        return EXIT_OK
    return EXIT_INFEASIBLE


def cmd_verify(args):
    scenario = _load_scenario_or_exit(args.scenario)
    try:
        report = pipeline.run_verify(scenario, args.out, plan_path=args.plan)
    except pipeline.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (verifier.VerifierError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"verified avg rate {report.average_verified_rate_bps / 1e6:.2f} Mbps; "
          f"coverage {report.coverage_fraction:.0%}; "
          f"cost {report.total_cost_units:g} units; "
          f"efficiency {report.efficiency_bps_per_unit:.1f} bps/unit; "
          f"{len(report.violations)} violations")
    if not args.no_figures:
        plan_path = args.plan or os.path.join(args.out, pipeline.PLAN_FILE)
        plan_doc = json.load(open(plan_path))
        nodes = pipeline.load_workspace_nodes(args.out)
        _render_plan_figure(plan_doc, nodes,
                            os.path.join(args.out, "plan_map.png"))
    return EXIT_OK


def cmd_compare(args):
    scenario = _load_scenario_or_exit(args.scenario)
    try:
        nodes = pipeline.load_workspace_nodes(args.out)
        terrain = geodata.load_grid(scenario.terrain_path)
    except (pipeline.MissingArtifactError, geodata.GeodataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    entries = []
    for path in args.plans:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        label = os.path.splitext(os.path.basename(path))[0]
        report = verifier.verify_plan(doc, nodes, terrain,
                                      scenario.radio_config(),
                                      scenario.site_generation)
        entries.append((label, report, doc.get("average_claimed_rate_bps")))
    rows = verifier.compare_plans(entries)
    csv_path = os.path.join(args.out, "comparison.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(verifier.comparison_csv(rows))
    print(verifier.comparison_text(rows), end="")
    if not args.no_figures:
        _render_comparison_figure(rows, os.path.join(args.out, "comparison.png"))
    return EXIT_OK


def cmd_agent(args):
    scenario = _load_scenario_or_exit(args.scenario)
    cfg = agent_mod.AgentConfig(
        max_steps=args.max_steps or scenario.agent.max_steps,
        backend="scripted" if args.script else "http_endpoint",
        endpoint_url=args.endpoint or scenario.agent.endpoint_url,
        model_name=args.model or scenario.agent.model_name,
        api_key_env_var=scenario.agent.api_key_env_var,
        temperature=scenario.agent.temperature,
        timeout_s=scenario.agent.timeout_s,
        script_path=args.script)
    session = agent_mod.PlanningSession(scenario, args.out)
    registry = agent_mod.register_tools(agent_mod.ToolRegistry(), session)
    try:
        answer, plan, transcript, status = agent_mod.run_react_loop(
            args.task, cfg, registry, args.out)
    except (agent_mod.BackendTransportError, agent_mod.MalformedReplyError,
            agent_mod.ScriptExhaustedError, agent_mod.AgentError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    if status == "step-limit":
        print(f"step limit reached after {len(transcript)} steps; "
              f"transcript retained in {args.out}", file=sys.stderr)
        return EXIT_STEP_LIMIT
    print(answer)
    if plan is None:
        print("no deployment plan was produced", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="netdeploy",
        description="Terrain-aware wireless network deployment planning")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON path")
        p.add_argument("--out", required=True, help="workspace directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip matplotlib figure output")

    p = sub.add_parser("demand", help="extract demand nodes and candidate sites")
    common(p)
    p.add_argument("--region", help="override region: lat_min,lat_max,lon_min,lon_max")
    p.set_defaults(fn=cmd_demand)

    p = sub.add_parser("links", help="build the link matrix CSV")
    common(p)
    p.set_defaults(fn=cmd_links)

    p = sub.add_parser("optimize", help="solve the deployment MILP")
    common(p)
    p.add_argument("--gap", type=float, help="relative optimality gap")
    p.add_argument("--time-limit", type=float, help="solver time limit (s)")
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("verify", help="independently verify a plan")
    common(p)
    p.add_argument("--plan", help="plan JSON (default: workspace plan.json)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("compare", help="verify and rank several plans")
    common(p)
    p.add_argument("plans", nargs="+", help="plan JSON files")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("agent", help="run the tool-calling agent on a task")
    common(p)
    p.add_argument("task", help="natural-language deployment task")
    p.add_argument("--script", help="scripted-backend replies JSON")
    p.add_argument("--endpoint", help="OpenAI-compatible endpoint URL")
    p.add_argument("--model", help="model name for the endpoint")
    p.add_argument("--max-steps", type=int)
    p.set_defaults(fn=cmd_agent)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    sys.exit(args.fn(args))


if __name__ == "__main__":
    main()
