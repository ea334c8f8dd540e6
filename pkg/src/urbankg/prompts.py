"""Prompt rendering for every model call in the pipeline.

Templates are plain-text assets under ``templates/<version>/`` with
``$slot`` placeholders.  The fixed trigger sentences are code constants
injected through the ``$trigger`` slot so an edited template cannot drop or
reword them.
"""

from __future__ import annotations

import enum
import functools
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .geometry import serialize_wkt
from .geotools import TOOLKIT, Rcc5Relation, ToolName, ToolResult, run_toolkit
from .graph import KgcRecord, RteRecord, Stage, Triplet

COT_TRIGGER = "Let's think step by step"
TOOL_ASK = "Which types of tool interface you need"
DELIBERATION_TRIGGER = "Please refine your reasoning process"
VERIFIER_TRIGGER = "Judge whether all extracted triplets are correct and provide improvement suggestion"
UPDATER_TRIGGER = "Follow suggestion to refine the reasoning process"
FAITHFUL_SENTINEL = "This is a faithful trajectory"
TRIPLET_GRAMMAR = "<head, relation, tail>"

CONFIDENCE_MIN, CONFIDENCE_MAX = 1, 5
DEFAULT_VERSION = "v1"

# definition order matters: it is the order the model sees them in
RCC5_DEFINITIONS: tuple[tuple[Rcc5Relation, str, str], ...] = (
    (Rcc5Relation.DC, "disconnected", "the two entities share no point at all."),
    (Rcc5Relation.EC, "externally connected",
     "the entities touch along their boundaries but their interiors do not overlap."),
    (Rcc5Relation.EQ, "equal", "the two entities cover exactly the same region."),
    (Rcc5Relation.PO, "partially overlapping",
     "the interiors overlap but neither entity lies inside the other."),
    (Rcc5Relation.IN, "proper part",
     "one entity lies inside the other, whether or not it touches the other's boundary."),
)


class PromptError(ValueError):
    """A precondition of a prompt builder was violated."""


class ViewKind(str, enum.Enum):
    spatial = "spatial"
    temporal = "temporal"
    functional = "functional"


class Paradigm(str, enum.Enum):
    ZSL = "ZSL"
    ICL = "ICL"


def _identifiers(t: string.Template) -> set[str]:
    # Template.get_identifiers only exists from 3.11
    out = set()
    for m in t.pattern.finditer(t.template):
        name = m.group("named") or m.group("braced")
        if name:
            out.add(name)
    return out


@dataclass(frozen=True)
class TemplateSet:
    version: str
    templates: Mapping[str, string.Template]
    views: Mapping[ViewKind, tuple[str, str]]  # (entity definition, relation definition)

    def slots(self, name: str) -> set[str]:
        return _identifiers(self._get(name))

    def _get(self, name: str) -> string.Template:
        try:
            return self.templates[name]
        except KeyError:
            raise PromptError(f"template set {self.version!r} has no template {name!r}") from None

    def render(self, name: str, **slots: str) -> str:
        tpl = self._get(name)
        missing = sorted(_identifiers(tpl) - slots.keys())
        if missing:
            raise PromptError(f"template {name!r} has unbound slots: {', '.join(missing)}")
        return tpl.substitute(slots).strip() + "\n"


def _parse_view_file(text: str, source: str) -> tuple[str, str]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = re.fullmatch(r"\[(\w+)\]\s*", line)
        if m:
            current = sections.setdefault(m.group(1), [])
        elif current is not None:
            current.append(line)
    try:
        return ("\n".join(sections["entities"]).strip(), "\n".join(sections["relations"]).strip())
    except KeyError as exc:
        raise PromptError(f"{source}: missing [{exc.args[0]}] section") from None


@functools.lru_cache(maxsize=8)
def load_templates(version: str = DEFAULT_VERSION, root: Optional[str] = None) -> TemplateSet:
    """Load a template set from the packaged assets, or from ``root/<version>``."""
    base = Path(root) / version if root else resources.files("urbankg") / "templates" / version
    if not base.is_dir():
        raise PromptError(f"unknown template set {version!r}")
    templates = {p.name[:-4]: string.Template(p.read_text(encoding="utf-8"))
                 for p in base.iterdir() if p.name.endswith(".txt")}
    views = {}
    for v in ViewKind:
        p = base / "views" / f"{v.value}.txt"
        views[v] = _parse_view_file(p.read_text(encoding="utf-8"), f"{version}/views/{p.name}")
    return TemplateSet(version, templates, views)


def _ts(templates: Optional[TemplateSet]) -> TemplateSet:
    return templates if templates is not None else load_templates()


@dataclass
class InstructionBundle:
    """A multi-turn dialog: template names in order plus the slot values they share."""
    view: Optional[ViewKind]
    turns: Sequence[str]
    slots: dict[str, str] = field(default_factory=dict)

    def unbound(self, templates: Optional[TemplateSet] = None) -> list[str]:
        ts = _ts(templates)
        need = set().union(*(ts.slots(t) for t in self.turns)) if self.turns else set()
        return sorted(need - self.slots.keys())

    def render(self, index: int, templates: Optional[TemplateSet] = None) -> str:
        ts = _ts(templates)
        names = ts.slots(self.turns[index])
        return ts.render(self.turns[index], **{k: v for k, v in self.slots.items() if k in names})


# --------------------------------------------------------------------------
# shared renderers

def rcc5_definitions_block() -> str:
    return "\n".join(f"{code.value} ({name}): {text}" for code, name, text in RCC5_DEFINITIONS)


def _entity_slots(rec: KgcRecord) -> dict[str, str]:
    return {"head_name": rec.head_name, "head_wkt": serialize_wkt(rec.head_geometry),
            "tail_name": rec.tail_name, "tail_wkt": serialize_wkt(rec.tail_geometry)}


def describe_item(rec: Union[RteRecord, KgcRecord]) -> str:
    """Short task statement embedded in deliberation, verifier and updater prompts."""
    if isinstance(rec, RteRecord):
        return f"Task: extract relational triplets from the text.\nText:\n{rec.text}"
    s = _entity_slots(rec)
    return ("Task: determine the geospatial relation between two urban entities.\n"
            f"Head entity: {s['head_name']}; geometry: {s['head_wkt']}\n"
            f"Tail entity: {s['tail_name']}; geometry: {s['tail_wkt']}")


def render_triplets(triplets: Iterable[Triplet]) -> str:
    return "\n".join(t.render() for t in triplets)


def _type_list(items: Sequence[str]) -> str:
    items = [" ".join(i.split()) for i in items if i and i.strip()]
    return ", ".join(items) if items else "none identified, so extract without type constraints"


def _require_text(text: str, what: str = "text") -> str:
    if not text or not text.strip():
        raise PromptError(f"{what} is empty")
    return text.strip()


# --------------------------------------------------------------------------
# builders

def rte_bundle(view: ViewKind, text: str, templates: Optional[TemplateSet] = None) -> InstructionBundle:
    ts = _ts(templates)
    view = ViewKind(view)
    ent, rel = ts.views[view]
    return InstructionBundle(view, ("rte_turn1", "rte_turn2"), {
        "view": view.value, "view_title": view.value.capitalize(), "text": _require_text(text),
        "entity_definition": ent, "relation_definition": rel,
        "grammar": TRIPLET_GRAMMAR, "trigger": COT_TRIGGER})


def build_rte_view_turn1(view: ViewKind, text: str, templates: Optional[TemplateSet] = None) -> str:
    return rte_bundle(view, text, templates).render(0, templates)


def build_rte_view_turn2(view: ViewKind, text: str, entity_types: Sequence[str],
                         relation_types: Sequence[str], templates: Optional[TemplateSet] = None) -> str:
    bundle = rte_bundle(view, text, templates)
    bundle.slots["entity_types"] = _type_list(entity_types)
    bundle.slots["relation_types"] = _type_list(relation_types)
    return bundle.render(1, templates)


def build_kgc_instruction(rec: KgcRecord, templates: Optional[TemplateSet] = None) -> str:
    return _ts(templates).render("kgc", **_entity_slots(rec), rcc_definitions=rcc5_definitions_block(),
                                 trigger=COT_TRIGGER)


def default_toolkit() -> list[tuple[ToolName, str]]:
    return [(name, desc) for name, (desc, _, _) in TOOLKIT.items()]


def build_tool_prompt(rec: KgcRecord, toolkit: Optional[Sequence[tuple[ToolName, str]]] = None,
                      templates: Optional[TemplateSet] = None) -> str:
    toolkit = default_toolkit() if toolkit is None else list(toolkit)
    if not toolkit:
        raise PromptError("toolkit is empty")
    lines = []
    for name, desc in toolkit:
        desc = desc.strip().rstrip(".")
        lines.append(f"{ToolName(name).value}: {desc}.")
    return _ts(templates).render("tool", **_entity_slots(rec), tools="\n".join(lines), trigger=TOOL_ASK)


def build_deliberation_prompt(results: Sequence[ToolResult], reasoning: str, item: str,
                              templates: Optional[TemplateSet] = None) -> str:
    shown = "\n".join(r.render() for r in results) or "(no tool results)"
    return _ts(templates).render("deliberation", item=item.strip(), reasoning=_require_text(reasoning, "reasoning"),
                                 tool_results=shown, trigger=DELIBERATION_TRIGGER)


def build_verifier_prompt(trajectory: str, item: str, templates: Optional[TemplateSet] = None) -> str:
    return _ts(templates).render("verifier", item=item.strip(), trajectory=_require_text(trajectory, "trajectory"),
                                 trigger=VERIFIER_TRIGGER, sentinel=FAITHFUL_SENTINEL)


def answer_format(task: Stage) -> str:
    if Stage(task) is Stage.RTE:
        return f"Write the final triplets one per line in the form {TRIPLET_GRAMMAR}."
    return 'Put the final relation code on the last line as "Relation: CODE".'


def build_updater_prompt(trajectory: str, feedback: str, item: str, task: Stage,
                         templates: Optional[TemplateSet] = None) -> str:
    return _ts(templates).render("updater", item=item.strip(), trajectory=_require_text(trajectory, "trajectory"),
                                 feedback=_require_text(feedback, "feedback"), answer_format=answer_format(task),
                                 trigger=UPDATER_TRIGGER)


def render_evidence(rec: KgcRecord, tool_evidence: Optional[Sequence[ToolResult]] = None) -> str:
    """One line per tool, in toolkit order; tools that do not fit the geometry kinds say so."""
    if tool_evidence is None:
        grouped = run_toolkit(rec.head_geometry, rec.tail_geometry)
    else:
        grouped = {t: [] for t in ToolName}
        for r in tool_evidence:
            grouped[r.tool].append(r)
    lines = []
    for tool in ToolName:
        rs = grouped.get(tool) or []
        lines.append("; ".join(r.render() for r in rs) if rs
                     else f"tool({tool.value})=not applicable to these geometry kinds")
    return "\n".join(lines)


def build_eval_prompt(task: Stage, item: Union[RteRecord, KgcRecord],
                      result: Union[Sequence[Triplet], Rcc5Relation],
                      tool_evidence: Optional[Sequence[ToolResult]] = None,
                      templates: Optional[TemplateSet] = None) -> str:
    ts = _ts(templates)
    task = Stage(task)
    if task is Stage.RTE:
        if not isinstance(item, RteRecord):
            raise PromptError("RTE evaluation needs an RteRecord")
        return ts.render("eval_rte", text=item.text, triplets=render_triplets(result) or "(none)")
    if not isinstance(item, KgcRecord):
        raise PromptError("KGC evaluation needs a KgcRecord")
    relation = Rcc5Relation(result)
    return ts.render("eval_kgc", **_entity_slots(item), relation=relation.value,
                     rcc_definitions=rcc5_definitions_block(),
                     evidence=render_evidence(item, tool_evidence))


def build_baseline_prompt(paradigm: Paradigm, task: Stage, item: Union[RteRecord, KgcRecord],
                          demos: Optional[Sequence[tuple[str, str]]] = None,
                          templates: Optional[TemplateSet] = None) -> str:
    """Plain task-definition prompt; ICL adds worked question/answer demonstrations."""
    try:
        paradigm = Paradigm(paradigm)
    except ValueError:
        raise PromptError(f"unknown paradigm {paradigm!r}") from None
    demos = list(demos or [])
    if paradigm is Paradigm.ZSL and demos:
        raise PromptError("zero-shot prompts take no demonstrations")
    if paradigm is Paradigm.ICL and not demos:
        raise PromptError("in-context prompts need at least one demonstration")
    block = "\n".join(f"\nExample {i}:\nQuestion:\n{q.strip()}\nAnswer:\n{a.strip()}"
                      for i, (q, a) in enumerate(demos, 1))
    ts = _ts(templates)
    if Stage(task) is Stage.RTE:
        if not isinstance(item, RteRecord):
            raise PromptError("RTE baseline needs an RteRecord")
        return ts.render("baseline_rte", demos=block, text=item.text)
    if not isinstance(item, KgcRecord):
        raise PromptError("KGC baseline needs a KgcRecord")
    return ts.render("baseline_kgc", demos=block, rcc_definitions=rcc5_definitions_block(),
                     **_entity_slots(item))


def build_merge_prompt(labels: Sequence[str], templates: Optional[TemplateSet] = None) -> str:
    if len(labels) < 2:
        raise PromptError("a merge prompt needs at least two labels")
    return _ts(templates).render("merge_relations", labels="\n".join(f"- {lab}" for lab in labels))
