"""Command-line entry point: generate, fit, learn, run, export, validate.

Exit codes: 0 success, 1 task failure (failed episodes with --strict), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import bt, pipeline, sim
from .config import ConfigError, PipelineConfig
from .dmp import DMPPolicy
from .logic import LogicError
from .trajectory import DatasetError, DatasetHeader, load_dataset, save_dataset

EXIT_OK, EXIT_TASK, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("btdmp")


class UsageError(Exception):
    pass


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    return cfg.override(
        epsilon=getattr(args, "epsilon", None),
        min_split=getattr(args, "min_split", None),
        dtw_radius=getattr(args, "radius", None),
        max_pruning_level=getattr(args, "max_level", None),
        agreement_threshold=getattr(args, "agreement", None),
    )


def cmd_generate(args) -> int:
    scenario = sim.Scenario.load(args.scenario) if args.scenario else sim.Scenario()
    demos = []
    for op in args.operations:
        demos += sim.generate_synthetic_demos(op, args.seed, scenario, args.noise)
    header = DatasetHeader(sim.DIMS, demos[0].conditions.names, sim.UNITS)
    save_dataset(demos, args.out, header)
    print(f"wrote {len(demos)} demonstrations to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    demos = load_dataset(args.dataset)
    if not demos:
        raise UsageError(f"{args.dataset}: dataset is empty")
    t0 = time.perf_counter()
    result = pipeline.fit(demos, cfg)
    pipeline.write_fit(args.out, result, cfg)
    sys.stdout.write(pipeline.fit_report_text(result))
    print(f"fit time {time.perf_counter() - t0:.1f} s; artifacts in {args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _load_config(args)
    examples, registry, _ = pipeline.read_segments(args.segments)
    if not examples:
        raise UsageError(f"{args.segments}: no segment records")
    result = pipeline.learn(examples, registry, cfg)
    pipeline.write_learn(args.out, result)
    for label, dnf in result.dnfs.items():
        print(f"{label}: {dnf}")
    print(f"pruning level {result.level}, agreement {result.agreement:.3f}; BT in {Path(args.out) / 'bt.xml'}")
    return EXIT_OK


def _registry_for(args, xml_path: Path) -> dict[str, DMPPolicy]:
    if args.dmps:
        return pipeline.load_registry_dir(args.dmps)
    guess = xml_path.parent / "dmps"
    if guess.is_dir():
        return pipeline.load_registry_dir(guess)
    raise UsageError("no DMP registry: pass --dmps DIR")


def _rows(args) -> list[dict]:
    if not args.script:
        return [{"operation": op, "script": sim.DisturbanceScript(), "expect": op} for op in args.operation]
    doc = json.loads(Path(args.script).read_text(encoding="utf-8"))
    items = doc["rows"] if "rows" in doc else [doc]
    rows = []
    for i, item in enumerate(items):
        op = item.get("operation", args.operation[0])
        if op not in sim.OPERATIONS:
            raise UsageError(f"{args.script}: row {i}: unknown operation {op!r}")
        rows.append({"operation": op, "script": sim.DisturbanceScript.from_json(item), "expect": item.get("expect", op)})
    return rows


def _episode(job):
    root_xml, registry_docs, scenario_doc, op, script_doc, seed, trial, steps = job
    root = bt.from_xml(root_xml)
    registry = {k: DMPPolicy.from_json(v) for k, v in registry_docs.items()}
    scenario = sim.Scenario.from_json(scenario_doc).for_operation(op)
    script = sim.trial_script(sim.DisturbanceScript.from_json(script_doc), seed, trial)
    out = sim.run_episode(root, sim.trial_world(scenario, seed, trial), scenario, registry, script,
                          steps_per_tick=steps)
    return out.result, out.achieved_operation, out.ticks, out.trace


def cmd_run(args) -> int:
    xml_path = Path(args.bt)
    root_xml = xml_path.read_text(encoding="utf-8")
    root = bt.from_xml(root_xml)
    registry = _registry_for(args, xml_path)
    scenario = sim.Scenario.load(args.scenario) if args.scenario else sim.Scenario()
    if sim.SWEEP_LABEL in bt.action_labels(root) and sim.SWEEP_LABEL not in registry:
        registry[sim.SWEEP_LABEL] = sim.sweep_policy(scenario)  # built-in recovery primitive
    problems = bt.validate(root, registry, scenario.condition_names)
    if problems:
        raise UsageError("; ".join(problems))
    cfg = _load_config(args)
    rows = _rows(args)
    reg_docs = {k: v.to_json() for k, v in registry.items()}
    jobs = [
        (root_xml, reg_docs, scenario.to_json(), row["operation"], row["script"].to_json(), args.seed, t, cfg.steps_per_tick)
        for row in rows for t in range(args.trials)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_episode, jobs))
    else:
        results = [_episode(j) for j in jobs]

    table = []
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    for r_i, row in enumerate(rows):
        chunk = results[r_i * args.trials : (r_i + 1) * args.trials]
        ok = sum(1 for res, achieved, _, _ in chunk if res == "Success" and achieved == row["expect"])
        table.append({
            "operation": row["operation"],
            "disturbance": row["script"].name,
            "expect": row["expect"],
            "trials": args.trials,
            "successes": ok,
            "success_rate": ok / args.trials if args.trials else 0.0,
            "episodes": [{"trial": t, "result": res, "achieved": ach, "ticks": n}
                         for t, (res, ach, n, _) in enumerate(chunk)],
        })
        if out_dir:
            for t, (_, _, _, trace) in enumerate(chunk):
                bt.write_trace(trace, out_dir / "traces" / f"row{r_i}_trial{t}.jsonl")

    print(f"{'Operation':<10} {'Disturbance':<24} {'New obj.':<9} {'Trials':>6} {'Success rate':>13}")
    for row in table:
        print(f"{row['operation']:<10} {row['disturbance']:<24} {row['expect']:<9} {row['trials']:>6} "
              f"{100 * row['success_rate']:>12.2f}%")
    total = sum(r["trials"] for r in table)
    wins = sum(r["successes"] for r in table)
    print(f"overall {wins}/{total}")
    if out_dir:
        (out_dir / "outcomes.json").write_text(pipeline.dumps({"rows": table, "overall": [wins, total]}), encoding="utf-8")
    return EXIT_TASK if args.strict and wins < total else EXIT_OK


def cmd_export(args) -> int:
    from .synthesis import export_dot

    dot = export_dot(bt.load_xml(args.bt))
    if args.out:
        Path(args.out).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def _kind(path: Path) -> str:
    name = path.name
    if name.endswith(".xml"):
        return "bt"
    if name.endswith(".dmp.json"):
        return "dmp"
    if name.endswith(".jsonl"):
        return "dataset"
    if name.endswith(".json"):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if isinstance(doc, dict):
            if "records" in doc and "registry" in doc:
                return "segments"
            if "stations" in doc or "home" in doc:
                return "scenario"
            if "triggers" in doc or "rows" in doc:
                return "script"
            return "config"
    raise UsageError(f"cannot tell what kind of artifact {path} is; pass --kind")


def cmd_validate(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise FileNotFoundError(path)
    kind = args.kind or _kind(path)
    if kind == "bt":
        root = bt.load_xml(path)
        detail = f"{sum(1 for _ in root.walk())} nodes, actions {bt.action_labels(root)}"
    elif kind == "dmp":
        pol = DMPPolicy.load(path)
        detail = f"{pol.dims} dims, N={pol.hyper.n_basis}, alpha={pol.hyper.alpha:g}"
    elif kind == "dataset":
        detail = f"{len(load_dataset(path))} demonstrations"
    elif kind == "segments":
        examples, registry, _ = pipeline.read_segments(path)
        detail = f"{len(examples)} records, {len(registry)} DMPs"
    elif kind == "scenario":
        sim.Scenario.load(path)
        detail = "scenario"
    elif kind == "script":
        doc = json.loads(path.read_text(encoding="utf-8"))
        for item in doc.get("rows", [doc]):
            sim.DisturbanceScript.from_json(item)
        detail = "disturbance script"
    elif kind == "config":
        PipelineConfig.load(path)
        detail = "config"
    else:
        raise UsageError(f"unknown kind {kind!r}")
    print(f"{path}: valid {kind} ({detail})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btdmp", description="Learn DMP primitives and a behaviour tree from demonstrations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def tunables(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--epsilon", type=float, help="fitness threshold (rate or absolute, see config)")
        sp.add_argument("--min-split", type=int, dest="min_split")
        sp.add_argument("--radius", type=int, help="FastDTW radius")
        sp.add_argument("--max-level", type=int, dest="max_level", help="highest pruning level tried")
        sp.add_argument("--agreement", type=float, help="required training agreement")

    g = sub.add_parser("generate", help="write synthetic demonstrations")
    g.add_argument("--operations", nargs="+", default=["O1", "O2", "O3"], choices=sorted(sim.OPERATIONS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0005)
    g.add_argument("--scenario")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="segment demonstrations and fit DMPs")
    f.add_argument("dataset")
    f.add_argument("--out", required=True)
    tunables(f)
    f.set_defaults(func=cmd_fit)

    lr = sub.add_parser("learn", help="learn the decision tree and synthesise the behaviour tree")
    lr.add_argument("segments")
    lr.add_argument("--out", required=True)
    tunables(lr)
    lr.set_defaults(func=cmd_learn)

    r = sub.add_parser("run", help="run episodes in the simulator")
    r.add_argument("bt")
    r.add_argument("--dmps", help="directory of .dmp.json files (default: dmps/ next to the XML)")
    r.add_argument("--scenario")
    r.add_argument("--script", help="disturbance script JSON (single script or {'rows': [...]})")
    r.add_argument("--operation", nargs="+", default=["O1"], choices=sorted(sim.OPERATIONS))
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.add_argument("--strict", action="store_true", help="exit 1 unless every episode succeeds")
    r.add_argument("--config")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export", help="convert a BT XML file to DOT")
    e.add_argument("bt")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("validate", help="check an artifact file")
    v.add_argument("file")
    v.add_argument("--kind", choices=["bt", "dmp", "dataset", "segments", "scenario", "script", "config"])
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError, ConfigError, sim.ScenarioError, bt.BTError, pipeline.ArtifactError,
            LogicError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
