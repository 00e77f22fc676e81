"""Command-line front end.

Every command writes its outputs into ``--out-dir`` together with a
``run_manifest.json`` that records the argv, input and output hashes, so
``reachcore replay`` can rerun it and check the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

from reachcore import __version__, bundled
from reachcore.errors import FormatError, ReachcoreError, UndefinedRatio

OUT_DIR_ENV = "REACHCORE_OUT_DIR"
MANIFEST = "run_manifest.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def resolve_input(path) -> Path:
    """An existing file, else a bundled fixture of that name."""
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled(str(path))
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None


class Run:
    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out_dir)
        self.inputs = {}
        self.outputs = {}

    @property
    def fmt(self):
        return self.args.format

    def input(self, path) -> Path:
        p = resolve_input(path)
        self.inputs[str(path)] = {"path": str(p), "sha256": sha256(p)}
        return p

    def write(self, name, content) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)
        self.outputs[name] = sha256(path)
        return path

    def figure(self, name, draw, *args, **kw) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        draw(*args, path, **kw)
        self.outputs[name] = sha256(path)
        return path

    def finish(self):
        options = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()
                   if k not in ("func", "out_dir")}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "inputs": [self.inputs[k] | {"arg": k} for k in sorted(self.inputs)],
            "config_hash": hashlib.sha256(json.dumps(options, sort_keys=True, default=str).encode()).hexdigest(),
            "seed": self.args.seed,
            "version": __version__,
            "outputs": [{"path": k, "sha256": v} for k, v in sorted(self.outputs.items())],
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / MANIFEST).write_text(dumps(manifest))


def table(rows, columns) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else str(r[c]) for c in columns))
    return "\n".join(lines) + "\n"


# -- commands ------------------------------------------------------------------

def cmd_core(run, args):
    from reachcore.reachgraph import classify_nodes, find_core, load_graph, missing_mutual_edges, prove_membership, \
        strongly_connected_components
    graph = load_graph(run.input(args.graph))
    components = strongly_connected_components(graph)
    verdict = find_core(components)
    classes = classify_nodes(graph, verdict)
    comp_of = {n: i for i, c in enumerate(components) for n in c.members}
    order = {n: i for i, n in enumerate(graph.nodes)}
    members = sorted(verdict.members, key=order.get)
    fraction = verdict.component.weight_fraction if verdict.is_core else max(c.weight_fraction for c in components)
    result = {
        "verdict": str(verdict),
        "fraction": fraction,
        "core": members,
        "components": [sorted(c.members, key=order.get) for c in components],
        "classes": {n: classes[n].value for n in graph.nodes},
        "missing_mutual": missing_mutual_edges(graph, verdict),
    }
    if args.prove:
        result["proofs"] = {}
        for node in args.prove:
            share, majority = prove_membership(graph, node)
            result["proofs"][node] = {"share": share, "majority": majority}
    if run.fmt == "json":
        run.write("core.json", dumps(result))
    else:
        rows = [{"node": n, "class": classes[n].value, "component": comp_of[n]} for n in graph.nodes]
        run.write("core.csv", table(rows, ["node", "class", "component"]))
    print(f"{verdict} {fraction:.3f}")
    print("core " + " ".join(members))
    for node, proof in result.get("proofs", {}).items():
        print(f"prove {node} {proof['share']:.3f} {'majority' if proof['majority'] else 'minority'}")


def _timelines_out(run, matrix, timelines):
    from reachcore.taxonomy import segments_to_json
    segments = segments_to_json(timelines)
    if run.fmt == "json":
        run.write("timelines.json", dumps({"scenario": matrix.meta.get("scenario"), "segments": segments}))
    else:
        run.write("timelines.csv", table(segments, ["block", "start_round", "end_round", "label"]))


def cmd_classify(run, args):
    from reachcore.taxonomy import LocalEvidence, classify_all, load_evidence, load_matrix
    matrix = load_matrix(run.input(args.matrix))
    evidence = load_evidence(run.input(args.evidence)) if args.evidence else LocalEvidence()
    timelines = classify_all(matrix, evidence, args.min_persist, args.min_vps)
    _timelines_out(run, matrix, timelines)
    counts = {}
    for segs in timelines.values():
        for s in segs:
            counts[s.label.value] = counts.get(s.label.value, 0) + 1
    for label in sorted(counts):
        print(f"{label} {counts[label]}")


def _budget(args):
    from reachcore.estimator import ProbeBudget
    return ProbeBudget(max_probes=args.max_probes, negative_confirmations=args.negative_confirmations,
                       exhaustive=args.exhaustive)


def cmd_estimate(run, args):
    from reachcore.estimator import ActiveSetEstimate, mean_probes_per_round, parse_probe_stream, replay
    budget = _budget(args)
    if args.economy is not None:
        mean = mean_probes_per_round(args.economy, n_history=args.history_size, rounds=args.rounds,
                                     budget=budget, seed=args.seed or 0)
        result = {"availability": args.economy, "n_history": args.history_size, "rounds": args.rounds, "mean_probes": mean}
        run.write("economy.json" if run.fmt == "json" else "economy.csv",
                  dumps(result) if run.fmt == "json" else table([result], list(result)))
        print(f"mean_probes {mean:.3f}")
        return
    if not (args.probes and args.histories):
        raise ReachcoreError("estimate needs --probes and --histories (or --economy)")
    with open(run.input(args.probes)) as fh:
        records = parse_probe_stream(fh, args.probes)
    histories = _load_json(run.input(args.histories))
    initial = None
    if args.initial:
        initial = {(s["vp"], s["block"]): ActiveSetEstimate.from_json(s["state"])
                   for s in _load_json(run.input(args.initial))}
    rows, finals = replay(records, histories, budget, initial)
    out = [{"vp": r.vp, "block": r.block, "round": r.round, "active": r.active, "verdict": r.verdict.value} for r in rows]
    if run.fmt == "json":
        run.write("estimates.json", dumps(out))
    else:
        run.write("estimates.csv", table(out, ["vp", "block", "round", "active", "verdict"]))
    states = [{"vp": vp, "block": block, "state": s.to_json()} for (vp, block), s in sorted(finals.items())]
    run.write("states.json", dumps(states))
    print(f"streams {len(finals)} rounds {len(rows)}")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, exc.msg) from None


def cmd_dnsmon(run, args):
    from reachcore.dnsmon import load_dns, loss_report, sensitivity_ratio, tag_fractions, tag_vps, tags_to_csv
    batch = load_dns(run.input(args.input))
    if args.anchors:
        anchors = [l.strip() for l in run.input(args.anchors).read_text().splitlines() if l.strip()]
        batch = batch.restrict_vps(anchors)
    tags = tag_vps(batch, args.window_start, args.min_attempts, args.reach_threshold)
    day = batch.window(tags[0].window_start)
    report = loss_report(day, tags)
    run.write("tags.csv", tags_to_csv(tags))
    summary = {"window_start": tags[0].window_start, "tag_fractions": tag_fractions(tags), "families": {}}
    for fam in report.families():
        summary["families"][fam] = {p: report.pooled(fam, p) for p in ("all", "minus_islands", "clean")}
    try:
        ratios = sensitivity_ratio(report)
    except UndefinedRatio as exc:
        ratios = {}
        summary["ratio_error"] = str(exc)
    for fam, entry in summary["families"].items():
        entry["sensitivity_ratio"] = ratios.get(fam)
    run.write("loss.json", dumps(report.to_json() | {"summary": summary}))
    run.write("loss.csv", report.to_csv())
    for fam, entry in summary["families"].items():
        ratio = "undefined" if entry["sensitivity_ratio"] is None else f"{entry['sensitivity_ratio']:.2f}"
        print(f"{fam} loss all {entry['all']:.4f} minus_islands {entry['minus_islands']:.4f} "
              f"clean {entry['clean']:.4f} ratio {ratio}")


def _allocations(run, args):
    from reachcore.reachgraph import load_allocations
    return load_allocations(run.input(args.allocations))


def cmd_secede(run, args):
    from reachcore.reachgraph import secede
    allocations = _allocations(run, args)
    groups = [args.remove] if args.remove else [[a.actor] for a in allocations]
    rows = []
    for group in groups:
        v = secede(allocations, group, args.field)
        rows.append({"removed": "+".join(group), "verdict": v.kind, "fraction": round(v.fraction, 6)})
        print(("" if args.remove else f"{'+'.join(group)} ") + str(v))
    if run.fmt == "json":
        run.write("secession.json", dumps({"field": args.field, "results": rows}))
    else:
        run.write("secession.csv", table(rows, ["removed", "verdict", "fraction"]))


def cmd_coalitions(run, args):
    from reachcore.reachgraph import minimal_coalitions
    allocations = _allocations(run, args)
    order = {a.actor: i for i, a in enumerate(allocations)}
    rows = []
    for c in minimal_coalitions(allocations, args.field):
        actors = sorted(c.actors, key=order.get)
        rows.append({"actors": "+".join(actors), "size": len(actors), "fraction": round(c.fraction, 6)})
    if args.limit:
        rows = rows[:args.limit]
    for r in rows:
        print(f"{r['actors']} {r['fraction']:.3f}")
    if run.fmt == "json":
        run.write("coalitions.json", dumps({"field": args.field, "coalitions": rows}))
    else:
        run.write("coalitions.csv", table(rows, ["actors", "size", "fraction"]))


def cmd_simulate(run, args):
    from reachcore.dnsmon import write_dns_jsonl
    from reachcore.simnet import bundled_scenarios, generate, load_config, load_scenario
    from reachcore.taxonomy import format_evidence, format_matrix
    import io
    if args.scenario in bundled_scenarios() and not Path(args.scenario).exists():
        config = load_scenario(args.scenario)
        run.inputs[args.scenario] = {"path": f"bundled:{args.scenario}", "sha256": config.digest()}
    else:
        config = load_config(run.input(args.scenario))
    if args.seed is not None:
        config.seed = args.seed
    sc = generate(config)
    run.write("matrix.txt", format_matrix(sc.matrix))
    run.write("evidence.csv", format_evidence(sc.evidence))
    run.write("probes.jsonl", "".join(json.dumps(p.to_json()) + "\n" for p in sc.probes))
    run.write("histories.json", dumps(sc.histories))
    if sc.dns is not None:
        buf = io.StringIO()
        write_dns_jsonl(sc.dns, buf)
        run.write("dns.jsonl", buf.getvalue())
    run.write("truth.json", dumps(sc.truth.to_json()))
    print(f"scenario {config.name} seed {config.seed} events {len(sc.truth.events)} probes {len(sc.probes)}"
          + (f" dns {len(sc.dns)}" if sc.dns is not None else ""))


def load_timelines(path):
    """Timelines from ``classify`` output, JSON or CSV; returns (scenario, {block: [Segment]})."""
    import csv
    from reachcore.taxonomy import Segment, StateLabel
    path = Path(path)
    scenario = None
    if path.suffix == ".json":
        data = _load_json(path)
        scenario, rows = data.get("scenario"), data["segments"]
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    timelines = {}
    for i, r in enumerate(rows, 2):
        try:
            seg = Segment(int(r["start_round"]), int(r["end_round"]), StateLabel(r["label"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(path, i, f"bad segment: {exc}") from None
        timelines.setdefault(r["block"], []).append(seg)
    return scenario, timelines


def cmd_evaluate(run, args):
    from reachcore.dnsmon import load_tags_csv
    from reachcore.simnet import TruthLog, evaluate_tags, evaluate_timelines
    truth = TruthLog.from_json(_load_json(run.input(args.truth)))
    if not (args.timelines or args.tags):
        raise ReachcoreError("evaluate needs --timelines and/or --tags")
    result = {"scenario": truth.scenario}
    if args.timelines:
        scenario, timelines = load_timelines(run.input(args.timelines))
        result["timelines"] = evaluate_timelines(timelines, truth, args.tolerance, scenario)
        t = result["timelines"]
        print(f"timelines precision {t['precision']:.3f} recall {t['recall']:.3f}")
    if args.tags:
        result["tags"] = evaluate_tags(load_tags_csv(run.input(args.tags)), truth)
        for fam, t in sorted(result["tags"].items()):
            print(f"tags {fam} precision {t['precision']:.3f} recall {t['recall']:.3f} exact {t['exact']}")
    if run.fmt == "json":
        run.write("evaluation.json", dumps(result))
    else:
        rows = []
        for e in result.get("timelines", {}).get("events", []):
            rows.append({k: e.get(k) for k in ("block", "kind", "start_round", "end_round", "detected", "start_error", "end_error")})
        run.write("evaluation.csv", table(rows, ["block", "kind", "start_round", "end_round", "detected", "start_error", "end_error"]))


def cmd_report(run, args):
    from reachcore import plotting
    made = 0
    if args.dns:
        from reachcore.dnsmon import load_dns, loss_report, tag_fractions, tag_vps
        batch = load_dns(run.input(args.dns))
        tags = tag_vps(batch, args.window_start)
        report = loss_report(batch.window(tags[0].window_start), tags)
        run.write("loss.csv", report.to_csv())
        run.figure("loss.png", plotting.loss_bars, report)
        rows = []
        for day in batch.day_starts():
            for fam, v in sorted(tag_fractions(tag_vps(batch, day)).items()):
                rows.append({"window_start": day, "family": fam, **v})
        run.write("tag_fractions.csv", table(rows, ["window_start", "family", "n_vps", "island", "peninsula"]))
        run.figure("tag_fractions.png", plotting.tag_fraction_series, rows)
        made += 2
    if args.matrix:
        from reachcore.taxonomy import LocalEvidence, classify_all, load_evidence, load_matrix, segments_to_json
        matrix = load_matrix(run.input(args.matrix))
        evidence = load_evidence(run.input(args.evidence)) if args.evidence else LocalEvidence()
        timelines = classify_all(matrix, evidence)
        run.write("timelines.csv", table(segments_to_json(timelines), ["block", "start_round", "end_round", "label"]))
        run.figure("timelines.png", plotting.timeline_strips, timelines)
        made += 1
    if args.probes:
        from reachcore.estimator import ProbeBudget, parse_probe_stream, replay
        if not args.histories:
            raise ReachcoreError("--probes needs --histories")
        with open(run.input(args.probes)) as fh:
            records = parse_probe_stream(fh, args.probes)
        rows, _ = replay(records, _load_json(run.input(args.histories)), ProbeBudget())
        rows = [r for r in rows if r.round >= 0]
        run.write("estimates.csv", table(
            [{"vp": r.vp, "block": r.block, "round": r.round, "active": r.active, "verdict": r.verdict.value} for r in rows],
            ["vp", "block", "round", "active", "verdict"]))
        run.figure("estimates.png", plotting.estimate_lines, rows, block=args.block)
        made += 1
    if args.allocations:
        from reachcore.reachgraph import load_allocations
        allocations = load_allocations(run.input(args.allocations))
        top = [a for a in allocations if a.parent is None]
        total = sum(a.weight(args.field) for a in top)
        run.write("allocations.csv", table(
            [{"actor": a.actor, "parent": a.parent, "share": round(a.weight(args.field) / total, 6)} for a in allocations],
            ["actor", "parent", "share"]))
        run.figure("allocations.png", plotting.allocation_shares, allocations, args.field)
        made += 1
    if not made:
        raise ReachcoreError("report needs at least one of --dns, --matrix, --probes, --allocations")
    print(f"figures {made} in {run.out}")


@contextlib.contextmanager
def _working_dir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def _strip_out_dir(argv):
    out = []
    skip = False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out-dir":
            skip = True
        elif not a.startswith("--out-dir="):
            out.append(a)
    return out


def replay_manifest(manifest_path, out_dir) -> tuple[bool, list[str]]:
    """Rerun a recorded command into ``out_dir``; returns (identical, differing outputs)."""
    from reachcore.errors import InputError
    manifest = _load_json(manifest_path)
    for entry in manifest["inputs"]:
        if entry["path"].startswith("bundled:"):
            continue
        if not Path(entry["path"]).exists() or sha256(entry["path"]) != entry["sha256"]:
            raise InputError(f"recorded input {entry['path']} is missing or has changed")
    out_dir = Path(out_dir).resolve()
    with _working_dir(manifest["cwd"]):
        code = run(["--out-dir", str(out_dir)] + _strip_out_dir(manifest["argv"]), quiet=True)
    if code:
        return False, ["<rerun failed>"]
    diffs = [o["path"] for o in manifest["outputs"]
             if not (out_dir / o["path"]).exists() or sha256(out_dir / o["path"]) != o["sha256"]]
    return not diffs, diffs


def cmd_replay(run_, args):
    identical, diffs = replay_manifest(run_.input(args.manifest), args.into)
    if identical:
        print("identical")
        return 0
    print("differs " + " ".join(diffs))
    return 1


# -- parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (simulate, estimate --economy)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help=f"output directory (default ${OUT_DIR_ENV} or ./reachcore-out)")
    common.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS, help="report format")

    parser = argparse.ArgumentParser(prog="reachcore", parents=[common],
                                     description="Core, island, peninsula and outage analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = add("core", cmd_core, "find the majority component of a reachability graph and classify nodes")
    p.add_argument("--graph", required=True, help="edge-list file, or a bundled name such as fig1.edges")
    p.add_argument("--prove", action="append", metavar="NODE", help="report the reachable share for NODE")

    p = add("classify", cmd_classify, "label block timelines from an observation matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--evidence", help="block,round,alive CSV from in-block vantage points")
    p.add_argument("--min-persist", type=int, default=2, help="rounds a peninsula must last (default 2)")
    p.add_argument("--min-vps", type=int, default=2, help="reporting vantage points needed per round (default 2)")

    p = add("estimate", cmd_estimate, "replay probe streams through the active-set estimator")
    p.add_argument("--probes", help="probe-stream JSONL")
    p.add_argument("--histories", help="JSON mapping block to its ordered address history")
    p.add_argument("--initial", help="JSON list of starting states")
    p.add_argument("--economy", type=float, metavar="A", help="instead, simulate stable rounds at availability A")
    p.add_argument("--history-size", type=int, default=78)
    p.add_argument("--rounds", type=int, default=10_000)
    p.add_argument("--max-probes", type=int, default=15)
    p.add_argument("--negative-confirmations", type=int, default=4)
    p.add_argument("--exhaustive", action="store_true", help="require every address negative before declaring down")

    p = add("dnsmon", cmd_dnsmon, "tag DNS vantage points and decompose root-query loss")
    p.add_argument("--in", dest="input", required=True, help="DNS measurement JSONL")
    p.add_argument("--window-start", type=int, help="UTC epoch of the day to analyze")
    p.add_argument("--min-attempts", type=int, default=10)
    p.add_argument("--reach-threshold", type=float, default=0.5)
    p.add_argument("--anchors", help="file of vantage-point ids to keep, one per line")

    for name, func, help in (("secede", cmd_secede, "test whether the rest still holds a majority after removal"),
                             ("coalitions", cmd_coalitions, "list minimal majority coalitions")):
        p = add(name, func, help)
        p.add_argument("--allocations", default="table1.csv", help="allocation CSV (default: bundled table1.csv)")
        p.add_argument("--field", default="active_v4", help="active_v4, allocated_v4 or allocated_v6")
        if name == "secede":
            p.add_argument("--remove", action="append", metavar="ACTOR",
                           help="actor to remove; repeat for a group (default: each actor alone)")
        else:
            p.add_argument("--limit", type=int, help="show only the first N coalitions")

    p = add("simulate", cmd_simulate, "generate a scenario with planted ground truth")
    p.add_argument("--scenario", required=True, help="bundled scenario name or config JSON path")

    p = add("evaluate", cmd_evaluate, "score timelines or DNS tags against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--timelines", help="timelines.json or timelines.csv from classify")
    p.add_argument("--tags", help="tags.csv from dnsmon")
    p.add_argument("--tolerance", type=int, default=1, help="rounds of slack on event boundaries")

    p = add("report", cmd_report, "write summary tables and PNG figures")
    p.add_argument("--dns")
    p.add_argument("--window-start", type=int)
    p.add_argument("--matrix")
    p.add_argument("--evidence")
    p.add_argument("--probes")
    p.add_argument("--histories")
    p.add_argument("--block", help="plot estimates for this block only")
    p.add_argument("--allocations")
    p.add_argument("--field", default="active_v4")

    p = add("replay", cmd_replay, "rerun a command from its run manifest and compare outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--into", required=True, help="directory for the rerun's outputs")
    return parser


def run(argv=None, quiet=False) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.seed = getattr(args, "seed", None)
    args.format = getattr(args, "format", "json")
    args.out_dir = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV) or "reachcore-out"
    stdout = sys.stdout
    try:
        if quiet:
            sys.stdout = open(os.devnull, "w")
        r = Run(args, argv)
        code = args.func(r, args)
        if args.command != "replay":
            r.finish()
        return int(code or 0)
    except (ReachcoreError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"reachcore {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        print(f"reachcore {args.command}: internal error", file=sys.stderr)
        return 1
    finally:
        if quiet:
            sys.stdout.close()
            sys.stdout = stdout


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
