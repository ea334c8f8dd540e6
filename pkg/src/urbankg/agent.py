"""RTE and KGC inference pipelines: prompting, tool use, verify/update refinement, parsing."""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .geotools import RCC5_NAMES, Rcc5Relation, ToolName, ToolResult, applicable_tools, invoke_tool, tool_calls_for_pair
from .graph import KgcRecord, RteRecord, Stage, Triplet, UrbanGraph, View, name_key
from .llm import CallRecord, Gateway, GatewayError
from .prompts import (FAITHFUL_SENTINEL, TemplateSet, ViewKind, build_deliberation_prompt, build_kgc_instruction,
                      build_rte_view_turn1, build_rte_view_turn2, build_tool_prompt, build_updater_prompt,
                      build_verifier_prompt, describe_item, load_templates, render_triplets)

log = logging.getLogger(__name__)

SENTINEL_MARK = "faithful trajectory"


class NoTripletsFound(ValueError):
    pass


class NoRelationFound(ValueError):
    pass


class StepKind(str, enum.Enum):
    Instruction = "Instruction"
    ModelResponse = "ModelResponse"
    ToolCall = "ToolCall"
    ToolResult = "ToolResult"
    VerifierFeedback = "VerifierFeedback"
    UpdaterRevision = "UpdaterRevision"


class HaltReason(str, enum.Enum):
    Faithful = "Faithful"
    MaxIterations = "MaxIterations"
    Error = "Error"


@dataclass
class AgentConfig:
    max_iterations: int = 3
    max_in_flight: int = 4
    template_version: str = "v1"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def templates(self) -> TemplateSet:
        return load_templates(self.template_version)


@dataclass
class TrajectoryStep:
    kind: StepKind
    payload: Union[str, ToolResult]
    iteration: int = 0
    view: Optional[str] = None

    def payload_json(self):
        return self.payload.to_dict() if isinstance(self.payload, ToolResult) else self.payload

    def label(self) -> str:
        if self.kind is StepKind.VerifierFeedback:
            return f"Feedback (iteration {self.iteration})"
        if self.kind is StepKind.UpdaterRevision:
            return f"Revision (iteration {self.iteration})"
        if self.kind is StepKind.ToolResult:
            return "Tool result"
        if self.kind is StepKind.ToolCall:
            return "Tool call"
        return f"Response ({self.view} view)" if self.view else "Response"

    def text(self) -> str:
        return self.payload.render() if isinstance(self.payload, ToolResult) else self.payload


@dataclass
class Trajectory:
    record_id: str
    task: Stage
    steps: list[TrajectoryStep] = field(default_factory=list)
    final_answer: Union[list[Triplet], Rcc5Relation, None] = None
    halted_by: Optional[HaltReason] = None
    error: Optional[str] = None

    def add(self, kind: StepKind, payload, iteration: int = 0, view: Optional[str] = None) -> TrajectoryStep:
        step = TrajectoryStep(kind, payload, iteration, view)
        self.steps.append(step)
        return step

    def of_kind(self, kind: StepKind) -> list[TrajectoryStep]:
        return [s for s in self.steps if s.kind is kind]

    def transcript(self, exclude_last_feedback: bool = False) -> str:
        """Everything the model produced or was shown as evidence; prompts are left out."""
        steps = [s for s in self.steps if s.kind is not StepKind.Instruction]
        if exclude_last_feedback and steps and steps[-1].kind is StepKind.VerifierFeedback:
            steps = steps[:-1]
        return "\n\n".join(f"[{s.label()}]\n{s.text().strip()}" for s in steps)

    def rows(self) -> list[dict]:
        base = {"record_id": self.record_id, "task": self.task.value}
        out = [dict(base, index=i, kind=s.kind.value, iteration=s.iteration, view=s.view,
                    payload=s.payload_json()) for i, s in enumerate(self.steps)]
        if isinstance(self.final_answer, Rcc5Relation):
            answer = self.final_answer.value
        elif self.final_answer is None:
            answer = None
        else:
            answer = [t.render() for t in self.final_answer]
        out.append(dict(base, kind="Summary", halted_by=self.halted_by.value if self.halted_by else None,
                        final_answer=answer, error=self.error))
        return out


# --------------------------------------------------------------------------
# response parsers

_BRACKETED = re.compile(r"<([^<>\n]*)>")
_PLACEHOLDER = ("head", "relation", "tail")


def parse_triplets(response: str, *, view: View = View.other, record_id: str = "",
                   stage: Stage = Stage.RTE) -> tuple[list[Triplet], int]:
    """Triplets written as ``<head, relation, tail>``, plus the count of non-blank lines that held none.

    Fields split at the first and last comma, so the relation may contain
    commas but head and tail may not.
    """
    triplets: list[Triplet] = []
    seen = set()
    ignored = 0
    for line in response.splitlines():
        if not line.strip():
            continue
        found = False
        for m in _BRACKETED.finditer(line):
            inner = m.group(1)
            first, last = inner.find(","), inner.rfind(",")
            if first < 0 or first == last:
                continue
            head, rel, tail = inner[:first].strip(), inner[first + 1:last].strip(), inner[last + 1:].strip()
            if tuple(x.lower() for x in (head, rel, tail)) == _PLACEHOLDER:
                continue
            try:
                t = Triplet(head, rel, tail, view, record_id, stage)
            except ValueError:
                continue
            found = True
            if t.key not in seen:
                seen.add(t.key)
                triplets.append(t)
        if not found:
            ignored += 1
    if not triplets:
        raise NoTripletsFound("response contains no <head, relation, tail> lines")
    return triplets, ignored


_CODE = re.compile(r"\b(DC|EC|EQ|PO|IN)\b")
_NAMES = {name: rel for rel, name in RCC5_NAMES.items()}
_FULL_NAME = re.compile(r"\b(" + "|".join(re.escape(n) for n in _NAMES) + r")\b", re.I)
_ANSWER_LINE = re.compile(r"relation\s*:\s*(.*)", re.I)


def _last_relation(text: str) -> Optional[tuple[int, Rcc5Relation]]:
    hits = [(m.start(), Rcc5Relation(m.group(1))) for m in _CODE.finditer(text)]
    hits += [(m.start(), _NAMES[m.group(1).lower()]) for m in _FULL_NAME.finditer(text)]
    return max(hits, key=lambda h: h[0]) if hits else None


def parse_relation(response: str) -> Rcc5Relation:
    """The relation named last; an explicit ``Relation: X`` line takes precedence."""
    for line in reversed(response.splitlines()):
        m = _ANSWER_LINE.search(line)
        if m:
            hit = _last_relation(m.group(1))
            if hit:
                return hit[1]
    hit = _last_relation(response)
    if hit is None:
        raise NoRelationFound(f"no RCC-5 relation in response: {response[:120]!r}")
    return hit[1]


def parse_tool_request(response: str, toolkit: Sequence[ToolName] = tuple(ToolName)) -> list[ToolName]:
    """Tool names mentioned in the response, first-mention order, case-insensitive, deduplicated."""
    hits = []
    for tool in toolkit:
        m = re.search(rf"\b{re.escape(tool.value)}\b", response, re.I)
        if m:
            hits.append((m.start(), tool))
    if not hits:
        log.warning("tool request names no known tool: %r", response[:120])
    return [t for _, t in sorted(hits, key=lambda h: h[0])]


def parse_type_lists(response: str) -> tuple[list[str], list[str]]:
    """Entity and relation type lists from a turn-1 answer; missing lines give empty lists."""
    found = {"entity": [], "relation": []}
    for line in response.splitlines():
        m = re.match(r"\s*[-*]?\s*(entity|relation) types?\s*:\s*(.*)", line, re.I)
        if m:
            items = [x.strip(" .;") for x in m.group(2).split(",")]
            found[m.group(1).lower()] = [x for x in items if x and x.lower() != "none"]
    return found["entity"], found["relation"]


def is_faithful(feedback: str) -> bool:
    return SENTINEL_MARK in feedback.casefold()


# --------------------------------------------------------------------------
# pipelines

def _ask(gw: Gateway, traj: Trajectory, prompt: str, task: str, view: Optional[str] = None) -> str:
    traj.add(StepKind.Instruction, prompt, view=view)
    text = gw.chat(prompt, task=task).content
    traj.add(StepKind.ModelResponse, text, view=view)
    return text


def refine_loop(traj: Trajectory, gw: Gateway, cfg: AgentConfig, item: str) -> str:
    """Alternate verifier and updater until the verifier answers with the sentinel.

    Returns the text the final answer is parsed from. Backend errors
    propagate to the caller, which records them on the trajectory.
    """
    responses = traj.of_kind(StepKind.ModelResponse)
    if not responses:
        raise ValueError("refinement needs at least one model response")
    current = responses[-1].text()
    ts = cfg.templates
    task = f"{traj.task.value}-refine"
    for i in range(1, cfg.max_iterations + 1):
        prompt = build_verifier_prompt(traj.transcript(), item, ts)
        traj.add(StepKind.Instruction, prompt, iteration=i)
        feedback = gw.chat(prompt, task=task).content
        traj.add(StepKind.VerifierFeedback, feedback, iteration=i)
        if is_faithful(feedback):
            traj.halted_by = HaltReason.Faithful
            return current
        prompt = build_updater_prompt(traj.transcript(exclude_last_feedback=True), feedback, item, traj.task, ts)
        traj.add(StepKind.Instruction, prompt, iteration=i)
        current = gw.chat(prompt, task=task).content
        traj.add(StepKind.UpdaterRevision, current, iteration=i)
    traj.halted_by = HaltReason.MaxIterations
    return current


def run_rte(rec: RteRecord, gw: Gateway, cfg: AgentConfig) -> tuple[Trajectory, list[Triplet]]:
    traj = Trajectory(rec.id, Stage.RTE)
    ts = cfg.templates
    union: dict[tuple, Triplet] = {}
    try:
        for view in ViewKind:
            first = _ask(gw, traj, build_rte_view_turn1(view, rec.text, ts), "RTE", view.value)
            ents, rels = parse_type_lists(first)
            second = _ask(gw, traj, build_rte_view_turn2(view, rec.text, ents, rels, ts), "RTE", view.value)
            try:
                found, _ = parse_triplets(second, view=View(view.value), record_id=rec.id)
            except NoTripletsFound:
                found = []
            for t in found:
                union.setdefault(t.key, t)
        # the combined answer is what gets verified
        traj.add(StepKind.ModelResponse, render_triplets(union.values()) or "(no triplets)")
        final_text = refine_loop(traj, gw, cfg, describe_item(rec))
    except GatewayError as exc:
        traj.halted_by, traj.error, traj.final_answer = HaltReason.Error, f"{type(exc).__name__}: {exc}", []
        return traj, []
    if not traj.of_kind(StepKind.UpdaterRevision):
        triplets = list(union.values())
    else:
        try:
            parsed, _ = parse_triplets(final_text, record_id=rec.id)
        except NoTripletsFound:
            parsed = []
        # keep each fact's view when the revision kept it; new facts borrow the relation's view
        rel_view = {t.key[1]: t.view for t in union.values()}
        triplets = [Triplet(t.head, t.relation, t.tail,
                            union[t.key].view if t.key in union else rel_view.get(t.key[1], View.other),
                            rec.id, Stage.RTE) for t in parsed]
    if not triplets:
        traj.halted_by, traj.error = HaltReason.Error, "no triplets in the final answer"
    traj.final_answer = triplets
    return traj, triplets


def run_kgc(rec: KgcRecord, gw: Gateway, cfg: AgentConfig) -> tuple[Trajectory, Optional[Rcc5Relation]]:
    traj = Trajectory(rec.id, Stage.KGC)
    ts = cfg.templates
    head, tail = rec.head_geometry, rec.tail_geometry
    try:
        reasoning = _ask(gw, traj, build_kgc_instruction(rec, ts), "KGC")
        ask = _ask(gw, traj, build_tool_prompt(rec, templates=ts), "KGC")
        tools = parse_tool_request(ask) or applicable_tools(head, tail)
        results: list[ToolResult] = []
        for tool in tools:
            calls = tool_calls_for_pair(tool, head, tail)
            if not calls:
                traj.add(StepKind.ToolCall, f"{tool.value} skipped: needs {head.kind}/{tail.kind}-compatible inputs")
            for args in calls:
                traj.add(StepKind.ToolCall, f"{tool.value}({', '.join(g.kind for g in args)})")
                res = invoke_tool(tool, args)
                results.append(res)
                traj.add(StepKind.ToolResult, res)
        _ask(gw, traj, build_deliberation_prompt(results, reasoning, describe_item(rec), ts), "KGC")
        final_text = refine_loop(traj, gw, cfg, describe_item(rec))
    except GatewayError as exc:
        traj.halted_by, traj.error = HaltReason.Error, f"{type(exc).__name__}: {exc}"
        return traj, None
    try:
        rel = parse_relation(final_text)
    except NoRelationFound as exc:
        traj.halted_by, traj.error = HaltReason.Error, str(exc)
        return traj, None
    traj.final_answer = rel
    return traj, rel


def kgc_triplet(rec: KgcRecord, rel: Rcc5Relation) -> Triplet:
    return Triplet(rec.head_name, RCC5_NAMES[rel], rec.tail_name, View.spatial, rec.id, Stage.KGC,
                   self_loop=name_key(rec.head_name) == name_key(rec.tail_name))


# --------------------------------------------------------------------------
# batches

@dataclass
class BatchResult:
    graph: UrbanGraph
    trajectories: list[Trajectory]
    calls: list[CallRecord]
    failures: list[tuple[str, str]]  # (record id, reason)


def _guarded(fn, rec, gw, cfg, stage: Stage):
    try:
        return fn(rec, gw, cfg)
    except Exception as exc:  # one bad record must not sink the batch
        log.exception("record %s failed", rec.id)
        traj = Trajectory(rec.id, stage, halted_by=HaltReason.Error, error=f"{type(exc).__name__}: {exc}")
        return traj, None


def _map(fn, records, gw: Gateway, cfg: AgentConfig, stage: Stage) -> list:
    # scripted backends answer in call order, so they are driven one record at a time
    if getattr(gw.backend, "sequential", False) or cfg.max_in_flight <= 1 or len(records) <= 1:
        return [_guarded(fn, r, gw, cfg, stage) for r in records]
    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        return list(pool.map(lambda r: _guarded(fn, r, gw, cfg, stage), records))


def run_batch(rte_records: Sequence[RteRecord], kgc_records: Sequence[KgcRecord], gw: Gateway,
              cfg: AgentConfig, graph: Optional[UrbanGraph] = None,
              log_path: Optional[Union[str, Path]] = None) -> BatchResult:
    """RTE records first, then KGC records; facts land in the graph in input order."""
    g = graph.copy() if graph is not None else UrbanGraph()
    trajectories: list[Trajectory] = []
    failures: list[tuple[str, str]] = []
    for traj, triplets in _map(run_rte, list(rte_records), gw, cfg, Stage.RTE):
        trajectories.append(traj)
        for t in triplets or []:
            g.add(t)
        if traj.halted_by is HaltReason.Error:
            failures.append((traj.record_id, traj.error or "error"))
    for rec, (traj, rel) in zip(kgc_records, _map(run_kgc, list(kgc_records), gw, cfg, Stage.KGC)):
        trajectories.append(traj)
        if rel is None:
            failures.append((traj.record_id, traj.error or "error"))
            continue
        g.upsert_entity(rec.head_name, rec.head_geometry)
        g.upsert_entity(rec.tail_name, rec.tail_geometry)
        g.add(kgc_triplet(rec, rel))
    if log_path is not None:
        write_trajectories(trajectories, log_path)
    return BatchResult(g, trajectories, gw.ledger.records, failures)


def write_trajectories(trajectories: Sequence[Trajectory], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for traj in trajectories:
            for row in traj.rows():
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_trajectory_rows(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
