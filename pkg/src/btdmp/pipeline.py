"""End-to-end orchestration: demonstrations -> segments -> decision tree -> behaviour tree, and artifact I/O.

Each demonstration contributes one training row per segment. The row's label is
the demonstration's behaviour: its merged primitive labels in order, joined by
``>``. The tree therefore chooses a whole chain of primitives from the conditions
and the chain position is carried by the behaviour tree's tick location.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import bt, logic, segmentation, synthesis
from .config import PipelineConfig
from .decision_tree import DecisionTree, LabeledExample, export_dot as tree_dot, learn_tree, tree_to_dnf
from .dmp import DMPPolicy
from .logic import BooleanDNF
from .segmentation import FitAttempt, SegmentRecord
from .trajectory import ConditionVector, Demonstration


@dataclass(frozen=True)
class FitResult:
    records: tuple[SegmentRecord, ...]
    attempts: tuple[FitAttempt, ...]
    registry: Mapping[str, DMPPolicy]

    @property
    def chains(self) -> dict[str, str]:
        return segmentation.behavior_chains(self.records)

    def segments_of(self, demo_id: str) -> list[SegmentRecord]:
        return [r for r in self.records if r.demo_id == demo_id]


@dataclass(frozen=True)
class LearnResult:
    tree: DecisionTree
    dnfs: Mapping[str, BooleanDNF]
    examples: tuple[LabeledExample, ...]
    root: bt.Node
    level: int
    agreement: float
    per_level: tuple[tuple[int, float], ...]


def fit(demos: Sequence[Demonstration], cfg: PipelineConfig | None = None) -> FitResult:
    cfg = cfg or PipelineConfig()
    if not demos:
        raise ValueError("no demonstrations to fit")
    seg_cfg = cfg.segmentation()
    records: list[SegmentRecord] = []
    attempts: list[FitAttempt] = []
    for demo in demos:
        recs, att = segmentation.segment_demo(demo, seg_cfg)
        records += recs
        attempts += att
    if cfg.merge_threshold is not None:
        thr = cfg.merge_threshold
    elif cfg.epsilon_mode == "absolute":
        thr = segmentation.MERGE_FACTOR * cfg.epsilon
    else:
        thr = None  # per pair, from the rate and the longer segment
    merged = segmentation.merge_equivalent_dmps(records, thr, seg_cfg.dtw_fn(), cfg.epsilon)
    return FitResult(tuple(merged), tuple(attempts), segmentation.label_registry(merged))


def examples_from_records(records: Sequence[SegmentRecord]) -> list[LabeledExample]:
    chains = segmentation.behavior_chains(records)
    return [LabeledExample(r.conditions, chains[r.demo_id]) for r in records]


def _dont_care_dnf(universe: Sequence[str], examples: Sequence[LabeledExample]) -> BooleanDNF:
    seen = {tuple(e.conditions[n] for n in universe) for e in examples}
    terms = [tuple(zip(universe, a.values())) for a in logic.assignments(universe)
             if tuple(a.values()) not in seen]
    return BooleanDNF(tuple(universe), tuple(terms))


def learn(
    examples: Sequence[LabeledExample],
    registry: Mapping[str, DMPPolicy] | None,
    cfg: PipelineConfig | None = None,
) -> LearnResult:
    cfg = cfg or PipelineConfig()
    examples = tuple(examples)
    tree = learn_tree(examples, tie_break=cfg.tie_break)
    raw = tree_to_dnf(tree)
    dc = _dont_care_dnf(tree.features, examples) if cfg.dont_cares else None
    dnfs = {label: logic.minimize(d, dc) for label, d in raw.items()}
    choice = synthesis.select_pruning(dnfs, registry, examples, tree, cfg.max_pruning_level, cfg.agreement_threshold)
    return LearnResult(tree, dnfs, examples, choice.root, choice.level, choice.agreement, choice.per_level)


def fit_and_learn(demos: Sequence[Demonstration], cfg: PipelineConfig | None = None):
    f = fit(demos, cfg)
    return f, learn(examples_from_records(f.records), f.registry, cfg)


# artifacts

def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def record_to_json(r: SegmentRecord, chain: str) -> dict:
    return {
        "label": r.label,
        "behavior": chain,
        "demo_id": r.demo_id,
        "range": [r.start, r.end],
        "conditions": r.conditions.as_dict(),
        "condition_names": list(r.conditions.names),
        "dtw_score": r.dtw_score,
        "n_basis": r.policy.hyper.n_basis,
        "alpha": r.policy.hyper.alpha,
    }


def write_fit(out_dir, result: FitResult, cfg: PipelineConfig) -> dict[str, Path]:
    out = Path(out_dir)
    (out / "dmps").mkdir(parents=True, exist_ok=True)
    chains = result.chains
    registry_files = {}
    for label in sorted(result.registry):
        rel = f"dmps/{label}.dmp.json"
        (out / rel).write_text(dumps(result.registry[label].to_json()), encoding="utf-8")
        registry_files[label] = rel
    seg_doc = {
        "records": [record_to_json(r, chains[r.demo_id]) for r in result.records],
        "registry": registry_files,
    }
    (out / "segments.json").write_text(dumps(seg_doc), encoding="utf-8")
    report = {
        "config": cfg.to_json(),
        "grid": {"n_basis": list(cfg.grid_n_basis), "alpha": list(cfg.grid_alpha), "size": len(cfg.grid)},
        "attempts": [asdict(a) for a in result.attempts],
        "segments": [
            {"demo_id": r.demo_id, "range": [r.start, r.end], "label": r.label, "dtw_score": r.dtw_score,
             "n_basis": r.policy.hyper.n_basis, "alpha": r.policy.hyper.alpha}
            for r in result.records
        ],
        "segments_per_demo": {d: len(result.segments_of(d)) for d in dict.fromkeys(r.demo_id for r in result.records)},
    }
    (out / "fit_report.json").write_text(dumps(report), encoding="utf-8")
    (out / "fit_report.txt").write_text(fit_report_text(result), encoding="utf-8")
    return {"segments": out / "segments.json", "report": out / "fit_report.json"}


def fit_report_text(result: FitResult) -> str:
    lines = [f"{'demo':<8} {'range':>12} {'label':<8} {'N':>4} {'alpha':>6} {'dtw':>10}"]
    for r in result.records:
        lines.append(
            f"{r.demo_id:<8} {f'[{r.start},{r.end})':>12} {r.label:<8} {r.policy.hyper.n_basis:>4} "
            f"{r.policy.hyper.alpha:>6g} {r.dtw_score:>10.4f}"
        )
    lines.append(f"segments: {len(result.records)}  labels: {len(result.registry)}  fit attempts: {len(result.attempts)}")
    return "\n".join(lines) + "\n"


class ArtifactError(ValueError):
    pass


def read_segments(path) -> tuple[list[LabeledExample], dict[str, DMPPolicy], dict]:
    """Load a segment dataset: training rows, the policy registry and the raw document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "records" not in doc or "registry" not in doc:
        raise ArtifactError(f"{path}: expected keys 'records' and 'registry'")
    examples = []
    for i, rec in enumerate(doc["records"]):
        try:
            names = rec["condition_names"]
            cv = ConditionVector.from_mapping(rec["conditions"], names)
            examples.append(LabeledExample(cv, rec["behavior"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"{path}: record {i}: {exc}") from None
    registry = load_registry_map(path.parent, doc["registry"])
    return examples, registry, doc


def load_registry_map(base: Path, mapping: Mapping[str, str]) -> dict[str, DMPPolicy]:
    out = {}
    for label, rel in mapping.items():
        try:
            out[label] = DMPPolicy.load(Path(base) / rel)
        except (OSError, KeyError, ValueError) as exc:
            raise ArtifactError(f"cannot load DMP {label!r} from {rel}: {exc}") from None
    return out


def load_registry_dir(directory) -> dict[str, DMPPolicy]:
    """Every ``<label>.dmp.json`` in a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise ArtifactError(f"{d} is not a directory")
    return {p.name[: -len(".dmp.json")]: DMPPolicy.load(p) for p in sorted(d.glob("*.dmp.json"))}


def write_learn(out_dir, result: LearnResult) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bt.save_xml(result.root, out / "bt.xml")
    (out / "bt.dot").write_text(synthesis.export_dot(result.root), encoding="utf-8")
    (out / "tree.dot").write_text(tree_dot(result.tree), encoding="utf-8")
    report = {
        "pruning_level": result.level,
        "agreement": result.agreement,
        "per_level": [[k, a] for k, a in result.per_level],
        "rules": {label: str(d) for label, d in result.dnfs.items()},
        "actions": bt.action_labels(result.root),
        "training_rows": len(result.examples),
    }
    (out / "learn_report.json").write_text(dumps(report), encoding="utf-8")
    return {"bt": out / "bt.xml", "report": out / "learn_report.json"}
