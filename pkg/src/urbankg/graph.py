"""UrbanKG data model: entities, relations, facts, and the task record schemas."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .geometry import Geometry, parse_wkt, serialize_wkt, validate


class View(str, enum.Enum):
    spatial = "spatial"
    temporal = "temporal"
    functional = "functional"
    other = "other"


class Stage(str, enum.Enum):
    RTE = "RTE"
    KGC = "KGC"


def name_key(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass
class Entity:
    name: str
    geometry: Optional[Geometry] = None
    entity_type: Optional[str] = None
    views: set[View] = field(default_factory=set)

    def __post_init__(self):
        self.name = " ".join(self.name.split())
        if not self.name:
            raise ValueError("entity name is empty")

    @property
    def key(self) -> str:
        return name_key(self.name)


@dataclass
class Relation:
    label: str
    view: View = View.other
    frequency: int = 0

    def __post_init__(self):
        self.label = " ".join(self.label.split())
        if not self.label:
            raise ValueError("relation label is empty")

    @property
    def key(self) -> str:
        return name_key(self.label)


@dataclass(frozen=True)
class Triplet:
    head: str
    relation: str
    tail: str
    view: View = View.other
    record_id: str = ""
    stage: Stage = Stage.RTE
    self_loop: bool = False

    def __post_init__(self):
        for part in (self.head, self.relation, self.tail):
            if not part or not part.strip():
                raise ValueError(f"triplet has an empty field: {self.render()}")
        if name_key(self.head) == name_key(self.tail) and not self.self_loop:
            raise ValueError(f"head equals tail without a self-loop flag: {self.render()}")

    @property
    def key(self) -> tuple[str, str, str]:
        return name_key(self.head), name_key(self.relation), name_key(self.tail)

    def render(self) -> str:
        return f"<{self.head}, {self.relation}, {self.tail}>"


@dataclass(frozen=True)
class GraphStats:
    entities: int
    relations: int
    facts: int


@dataclass
class RteRecord:
    id: str
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"RTE record {self.id!r} has empty text")


@dataclass
class KgcRecord:
    id: str
    head_name: str
    head_geometry: Geometry
    tail_name: str
    tail_geometry: Geometry

    def __post_init__(self):
        for g in (self.head_geometry, self.tail_geometry):
            report = validate(g)
            if not report.ok:
                raise ValueError(f"KGC record {self.id!r}: {'; '.join(report.violations)}")


class UrbanGraph:
    """Entity, relation and fact sets keyed by case-folded names.

    Mutation is single-writer; ``copy`` gives an independent snapshot.
    """

    def __init__(self):
        self.entities: dict[str, Entity] = {}
        self.relations: dict[str, Relation] = {}
        self.facts: dict[tuple[str, str, str], Triplet] = {}

    def __eq__(self, other) -> bool:
        if not isinstance(other, UrbanGraph):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self.facts == other.facts)

    def __repr__(self) -> str:
        s = self.stats()
        return f"UrbanGraph(entities={s.entities}, relations={s.relations}, facts={s.facts})"

    def upsert_entity(self, name: str, geometry: Optional[Geometry] = None,
                      entity_type: Optional[str] = None,
                      views: Iterable[View] = ()) -> Entity:
        ent = Entity(name)
        existing = self.entities.get(ent.key)
        if existing is None:
            existing = self.entities[ent.key] = ent
        if existing.geometry is None and geometry is not None:
            existing.geometry = geometry
        if existing.entity_type is None and entity_type:
            existing.entity_type = entity_type
        existing.views.update(views)
        return existing

    def add(self, t: Triplet) -> "UrbanGraph":
        self.upsert_entity(t.head, views=[t.view])
        self.upsert_entity(t.tail, views=[t.view])
        rel_key = name_key(t.relation)
        rel = self.relations.get(rel_key)
        if rel is None:
            rel = self.relations[rel_key] = Relation(t.relation, t.view, 0)
        if t.key not in self.facts:
            self.facts[t.key] = t
            rel.frequency += 1
        return self

    def copy(self) -> "UrbanGraph":
        g = UrbanGraph()
        for k, e in self.entities.items():
            g.entities[k] = Entity(e.name, e.geometry, e.entity_type, set(e.views))
        for k, r in self.relations.items():
            g.relations[k] = Relation(r.label, r.view, r.frequency)
        g.facts = dict(self.facts)
        return g

    def stats(self) -> GraphStats:
        return GraphStats(len(self.entities), len(self.relations), len(self.facts))

    def integrity_errors(self) -> list[str]:
        errors = []
        for key, t in self.facts.items():
            h, r, tl = key
            if h not in self.entities:
                errors.append(f"fact {t.render()} has unknown head")
            if tl not in self.entities:
                errors.append(f"fact {t.render()} has unknown tail")
            if r not in self.relations:
                errors.append(f"fact {t.render()} has unknown relation")
        counts: dict[str, int] = {}
        for _, r, _ in self.facts:
            counts[r] = counts.get(r, 0) + 1
        for key, rel in self.relations.items():
            if rel.frequency != counts.get(key, 0):
                errors.append(f"relation {rel.label!r} frequency {rel.frequency} != {counts.get(key, 0)}")
        return errors


def add_triplet(g: UrbanGraph, t: Triplet) -> UrbanGraph:
    return g.add(t)


def merge_graphs(g1: UrbanGraph, g2: UrbanGraph) -> UrbanGraph:
    """Union of two graphs; entities dedup by name, frequencies recounted over the union."""
    out = UrbanGraph()
    for g in (g1, g2):
        for e in g.entities.values():
            out.upsert_entity(e.name, e.geometry, e.entity_type, e.views)
        for r in g.relations.values():
            out.relations.setdefault(r.key, Relation(r.label, r.view, 0))
    for g in (g1, g2):
        for t in g.facts.values():
            out.add(t)
    out.relations = {k: r for k, r in out.relations.items() if r.frequency > 0}
    return out


def rebuild(facts: Iterable[Triplet], like: UrbanGraph) -> UrbanGraph:
    """Graph over ``facts`` keeping entity metadata from ``like``; unused relations vanish."""
    out = UrbanGraph()
    for t in facts:
        out.add(t)
    for key, ent in out.entities.items():
        src = like.entities.get(key)
        if src is not None:
            ent.geometry = ent.geometry or src.geometry
            ent.entity_type = ent.entity_type or src.entity_type
            ent.views |= src.views
    for key, rel in out.relations.items():
        src = like.relations.get(key)
        if src is not None:
            rel.view = src.view
    return out


# --------------------------------------------------------------------------
# line-delimited export / import
#
# line 1: {"kind": "stats", "entities": n, "relations": n, "facts": n}
# then one {"kind": "entity"} line per entity, one {"kind": "relation"} per
# relation, one {"kind": "fact"} per fact, each in insertion order.

def _entity_row(e: Entity) -> dict:
    return {"kind": "entity", "name": e.name,
            "geometry": serialize_wkt(e.geometry) if e.geometry is not None else None,
            "entity_type": e.entity_type,
            "views": sorted(v.value for v in e.views)}


def _fact_row(t: Triplet) -> dict:
    return {"kind": "fact", "head": t.head, "relation": t.relation, "tail": t.tail,
            "view": t.view.value, "record_id": t.record_id, "stage": t.stage.value,
            "self_loop": t.self_loop}


def graph_rows(g: UrbanGraph) -> list[dict]:
    s = g.stats()
    rows = [{"kind": "stats", "entities": s.entities, "relations": s.relations, "facts": s.facts}]
    rows += [_entity_row(e) for e in g.entities.values()]
    rows += [{"kind": "relation", "label": r.label, "view": r.view.value, "frequency": r.frequency}
             for r in g.relations.values()]
    rows += [_fact_row(t) for t in g.facts.values()]
    return rows


def export_graph(g: UrbanGraph, path) -> GraphStats:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for row in graph_rows(g):
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write graph to {path}: {exc}") from exc
    return g.stats()


def import_graph(path) -> UrbanGraph:
    path = Path(path)
    g = UrbanGraph()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read graph from {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        row = json.loads(line)
        kind = row.get("kind")
        if kind == "entity":
            geom = parse_wkt(row["geometry"]) if row.get("geometry") else None
            ent = Entity(row["name"], geom, row.get("entity_type"),
                         {View(v) for v in row.get("views", [])})
            g.entities[ent.key] = ent
        elif kind == "relation":
            rel = Relation(row["label"], View(row["view"]), int(row["frequency"]))
            g.relations[rel.key] = rel
        elif kind == "fact":
            t = Triplet(row["head"], row["relation"], row["tail"], View(row["view"]),
                        row.get("record_id", ""), Stage(row["stage"]), bool(row.get("self_loop")))
            g.facts[t.key] = t
        elif kind != "stats":
            raise ValueError(f"{path}:{n}: unknown row kind {kind!r}")
    return g
