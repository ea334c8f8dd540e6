"""Two-stage relation clean-up: fold rare relations into frequent ones, then merge clustered synonyms."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Triplet, UrbanGraph, name_key, rebuild
from .llm import Gateway, GatewayError
from .prompts import TemplateSet, build_merge_prompt

log = logging.getLogger(__name__)

FREQ_THRESHOLD = 5
SIM_THRESHOLD = 0.85
LINK_THRESHOLD = 0.80


class MergeStage(str, enum.Enum):
    Frequency = "Frequency"
    Cluster = "Cluster"


@dataclass
class MergePlan:
    """Relabel ``mapping`` sources to their targets and delete facts whose relation is in ``dropped``.

    Labels compare case- and whitespace-insensitively. Targets are fixed
    points, so applying a plan twice equals applying it once.
    """
    stage: MergeStage
    mapping: dict[str, str] = field(default_factory=dict)
    dropped: set[str] = field(default_factory=set)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        sources = {name_key(s) for s in self.mapping}
        for src, dst in self.mapping.items():
            if name_key(dst) in sources and name_key(dst) != name_key(src):
                raise ValueError(f"merge target {dst!r} is itself remapped")
        dropped = {name_key(d) for d in self.dropped}
        clash = dropped & {name_key(t) for t in self.mapping.values()}
        if clash:
            raise ValueError(f"labels both dropped and merge targets: {sorted(clash)}")

    @property
    def empty(self) -> bool:
        return not self.mapping and not self.dropped

    def target(self, label: str) -> Optional[str]:
        """New label, the same label if untouched, or None when dropped."""
        key = name_key(label)
        if key in {name_key(d) for d in self.dropped}:
            return None
        for src, dst in self.mapping.items():
            if name_key(src) == key:
                return dst
        return label

    def rows(self) -> list[dict]:
        rows = [{"stage": self.stage.value, "source": s, "target": t} for s, t in self.mapping.items()]
        rows += [{"stage": self.stage.value, "dropped": d} for d in sorted(self.dropped)]
        return rows


def apply_plan(g: UrbanGraph, plan: MergePlan) -> UrbanGraph:
    """New graph with the plan applied; the input graph is left untouched."""
    facts = []
    for t in g.facts.values():
        rel = plan.target(t.relation)
        if rel is None:
            continue
        facts.append(t if rel == t.relation else
                     Triplet(t.head, rel, t.tail, t.view, t.record_id, t.stage, t.self_loop))
    return rebuild(facts, like=g)


def write_plans(plans: Sequence[MergePlan], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for plan in plans:
            for row in plan.rows():
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_plans(path) -> list[MergePlan]:
    """Plans in file order, one per contiguous run of rows sharing a stage."""
    plans: list[MergePlan] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            stage = MergeStage(row["stage"])
            if not plans or plans[-1].stage is not stage:
                plans.append(MergePlan(stage))
            if "dropped" in row:
                plans[-1].dropped.add(row["dropped"])
            else:
                plans[-1].mapping[row["source"]] = row["target"]
    for p in plans:
        p.__post_init__()
    return plans


def _unit_matrix(vectors) -> np.ndarray:
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")
    m = np.asarray(vectors, dtype=float)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def merge_low_frequency(g: UrbanGraph, gw: Gateway, threshold_freq: int = FREQ_THRESHOLD,
                        threshold_sim: float = SIM_THRESHOLD) -> tuple[UrbanGraph, MergePlan]:
    """Fold each relation seen at most ``threshold_freq`` times into its nearest frequent relation.

    Rare relations with no frequent relation at cosine >= ``threshold_sim``
    lose their facts. Embedding failures propagate and nothing is changed.
    """
    rels = sorted(g.relations.values(), key=lambda r: r.key)
    low = [r for r in rels if r.frequency <= threshold_freq]
    high = [r for r in rels if r.frequency > threshold_freq]
    plan = MergePlan(MergeStage.Frequency)
    if not low:
        return g.copy(), plan
    if not high:
        plan.dropped = {r.label for r in low}
        plan.notes.append("no relation exceeds the frequency threshold; every rare relation dropped")
        return apply_plan(g, plan), plan
    vecs = _unit_matrix(gw.embed([r.label for r in low] + [r.label for r in high]))
    sims = vecs[:len(low)] @ vecs[len(low):].T
    for i, r in enumerate(low):
        # argmax picks the first maximum, and ``high`` is in key order, so ties go to the lexicographically first label
        j = int(np.argmax(sims[i]))
        if sims[i, j] >= threshold_sim:
            plan.mapping[r.label] = high[j].label
        else:
            plan.dropped.add(r.label)
    return apply_plan(g, plan), plan


def single_link_clusters(labels: Sequence[str], vectors, link_sim: float) -> list[list[str]]:
    """Connected components of the graph joining labels at cosine >= ``link_sim``.

    Labels are processed in the given order and every cluster lists its
    members in that order; clusters are ordered by their first member.
    """
    n = len(labels)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1:
        m = _unit_matrix(vectors)
        sims = m @ m.T
        for i in range(n):
            for j in range(i + 1, n):
                if sims[i, j] >= link_sim:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[str]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(find(i), []).append(lab)
    return [groups[k] for k in sorted(groups)]


_MERGE_LINE = re.compile(r"^\W*merge\s*:\s*(.+?)\s*->\s*(.+?)\s*\.?\s*$", re.I)


def parse_merge_answer(text: str, members: Sequence[str]) -> Optional[dict[str, str]]:
    """Source label -> canonical label from ``merge: a, b -> c`` lines.

    Returns None when the answer is neither a merge list nor "none".
    Unknown source labels are ignored; a label claimed twice keeps its first
    target.
    """
    known = {name_key(m): m for m in members}
    out: dict[str, str] = {}
    matched = False
    for line in text.splitlines():
        m = _MERGE_LINE.match(line.strip())
        if not m:
            continue
        matched = True
        canonical = " ".join(m.group(2).strip().strip("\"'").split())
        canonical = known.get(name_key(canonical), canonical)
        for src in m.group(1).split(","):
            src = known.get(name_key(src.strip().strip("\"'")))
            if src is not None and src not in out and name_key(src) != name_key(canonical):
                out[src] = canonical
    if not matched:
        return {} if text.strip().lower().rstrip(".") == "none" else None
    # collapse chains such as a -> b, b -> c so every target is a fixed point
    resolved = {}
    for src in out:
        seen, dst = {src}, out[src]
        while dst in out and dst not in seen:
            seen.add(dst)
            dst = out[dst]
        if dst not in seen:
            resolved[src] = dst
    return resolved


def cluster_and_merge(g: UrbanGraph, gw: Gateway, link_sim: float = LINK_THRESHOLD,
                      templates: Optional[TemplateSet] = None) -> tuple[UrbanGraph, MergePlan]:
    """Cluster relation labels by embedding, then let the model pick merges inside each cluster.

    A failed call or an unreadable answer leaves that cluster unmerged and
    adds a note to the plan.
    """
    plan = MergePlan(MergeStage.Cluster)
    labels = [r.label for r in sorted(g.relations.values(), key=lambda r: r.key)]
    if len(labels) < 2:
        return g.copy(), plan
    try:
        vectors = gw.embed(labels)
    except GatewayError as exc:
        plan.notes.append(f"embedding failed, nothing merged: {exc}")
        return g.copy(), plan
    for cluster in single_link_clusters(labels, vectors, link_sim):
        if len(cluster) < 2:
            continue
        try:
            answer = gw.chat(build_merge_prompt(cluster, templates), task="merge").content
        except GatewayError as exc:
            plan.notes.append(f"cluster {cluster}: call failed ({exc})")
            continue
        merges = parse_merge_answer(answer, cluster)
        if merges is None:
            plan.notes.append(f"cluster {cluster}: unreadable answer {answer[:80]!r}")
            log.warning("unreadable merge answer for %s", cluster)
            continue
        sources = {name_key(s) for s in plan.mapping}
        targets = {name_key(t) for t in plan.mapping.values()}
        if any(name_key(t) in sources for t in merges.values()) or any(name_key(s) in targets for s in merges):
            plan.notes.append(f"cluster {cluster}: merge targets clash with another cluster, skipped")
            continue
        plan.mapping.update(merges)
    return apply_plan(g, plan), plan
