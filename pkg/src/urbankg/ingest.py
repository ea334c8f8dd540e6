"""Raw urban record loading, text cleaning, quality filtering, task sampling."""

from __future__ import annotations

import enum
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .geometry import Geometry, WktError, parse_wkt, serialize_wkt
from .graph import KgcRecord, RteRecord

MIN_WORDS = 10


class Source(str, enum.Enum):
    AOI = "AOI"
    Road = "Road"
    POI = "POI"
    Review = "Review"
    WebPage = "WebPage"


# key holding the free text, and keys that must be present, per source kind
_TEXT_KEYS = {
    Source.AOI: ("description",),
    Source.Road: ("description",),
    Source.POI: ("description",),
    Source.Review: ("review", "description"),
    Source.WebPage: ("text", "description"),
}
_REQUIRED = {
    Source.AOI: ("name", "geometry"),
    Source.Road: ("name", "geometry"),
    Source.POI: ("name", "geometry"),
    Source.Review: ("name", "geometry"),
    Source.WebPage: (),
}


@dataclass
class RawRecord:
    source: Source
    id: str
    name: Optional[str] = None
    geometry_wkt: Optional[str] = None
    extra: dict[str, str] = field(default_factory=dict)
    description: Optional[str] = None
    geometry: Optional[Geometry] = None


@dataclass
class LineError:
    line: int
    message: str


@dataclass
class LoadResult:
    records: list[RawRecord]
    errors: list[LineError]


@dataclass(frozen=True)
class FilterDecision:
    kept: bool
    reason: Optional[str] = None  # "null" | "too_short" | "meaningless"


_URL = re.compile(r"(?:\b[a-zA-Z][a-zA-Z0-9+.-]*://|\bwww\.)\S*")
_NON_ASCII = re.compile(r"[^\x00-\x7f]+")
_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")


def clean_text(s: str) -> str:
    s = _URL.sub(" ", s)
    s = _NON_ASCII.sub("", s)
    s = _CONTROL.sub(" ", s)
    return " ".join(s.split())


def word_count(s: str) -> int:
    return len(s.split())


def filter_record(r: RawRecord) -> FilterDecision:
    if r.description is None:
        return FilterDecision(False, "null")
    text = clean_text(r.description)
    if not text:
        return FilterDecision(False, "null")
    if r.name and text.casefold() == clean_text(r.name).casefold():
        return FilterDecision(False, "meaningless")
    if word_count(text) < MIN_WORDS:
        return FilterDecision(False, "too_short")
    return FilterDecision(True)


def _parse_line(obj, source: Source, line_no: int, swap_xy: bool) -> RawRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key in _REQUIRED[source]:
        if obj.get(key) in (None, ""):
            raise ValueError(f"missing required key {key!r}")
    text = None
    text_key = None
    for key in _TEXT_KEYS[source]:
        if key in obj:
            text, text_key = obj[key], key
            break
    if text is not None and not isinstance(text, str):
        raise ValueError(f"{text_key!r} must be a string or null")
    wkt = obj.get("geometry")
    geom = None
    if wkt:
        try:
            geom = parse_wkt(wkt, normalize_ring=True, swap_xy=swap_xy)
        except WktError as exc:
            raise ValueError(f"bad geometry: {exc}") from exc
    skip = {"id", "name", "geometry", text_key}
    extra = {k: str(v) for k, v in obj.items() if k not in skip and v is not None}
    rid = str(obj.get("id") or f"{source.value}-{line_no}")
    return RawRecord(source, rid, obj.get("name"), wkt, extra, text, geom)


def load_records(path, source, *, swap_xy: bool = False) -> LoadResult:
    """Read one JSON object per line; bad lines are reported, not raised.

    ``swap_xy`` reads latitude-first coordinates.
    """
    source = Source(source)
    records: list[RawRecord] = []
    errors: list[LineError] = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_parse_line(json.loads(line), source, n, swap_xy))
            except (ValueError, json.JSONDecodeError) as exc:
                errors.append(LineError(n, str(exc)))
    return LoadResult(records, errors)


def write_error_report(errors: Sequence[LineError], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in errors:
            fh.write(json.dumps({"line": e.line, "error": e.message}) + "\n")


def preprocess(records: Sequence[RawRecord]) -> tuple[list[RawRecord], list[tuple[RawRecord, str]]]:
    """Split into kept records (description cleaned in place) and dropped ones with reasons."""
    kept, dropped = [], []
    for r in records:
        decision = filter_record(r)
        if decision.kept:
            r.description = clean_text(r.description or "")
            kept.append(r)
        else:
            dropped.append((r, decision.reason or ""))
    return kept, dropped


def to_task_records(records: Sequence[RawRecord], *, seed: int = 0,
                    kgc_size: Optional[int] = None) -> tuple[list[RteRecord], list[KgcRecord]]:
    """RTE records for every described record, plus sampled geometry pairs for KGC.

    Pairs are unordered, distinct, drawn without replacement from a generator
    seeded with ``seed``; their number is capped at the RTE count.
    """
    rte = [RteRecord(r.id, r.description) for r in records if r.description]
    geo = [r for r in records if r.geometry is not None and r.name]
    n = len(geo)
    total = n * (n - 1) // 2
    want = len(rte) if kgc_size is None else min(kgc_size, len(rte))
    want = min(want, total)
    rng = random.Random(seed)
    if want * 2 >= total:
        all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        pairs = rng.sample(all_pairs, want)
    else:
        seen: set[tuple[int, int]] = set()
        pairs = []
        while len(pairs) < want:
            i, j = rng.sample(range(n), 2)
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                pairs.append((i, j))
    kgc = [KgcRecord(f"{geo[i].id}|{geo[j].id}", geo[i].name, geo[i].geometry,
                     geo[j].name, geo[j].geometry) for i, j in pairs]
    return rte, kgc


def rte_record_row(r: RteRecord) -> dict:
    return {"id": r.id, "text": r.text}


def kgc_record_row(r: KgcRecord) -> dict:
    return {"id": r.id, "head_name": r.head_name, "head_geometry": serialize_wkt(r.head_geometry),
            "tail_name": r.tail_name, "tail_geometry": serialize_wkt(r.tail_geometry)}


def read_rte_records(path) -> list[RteRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(RteRecord(str(row["id"]), row["text"]))
    return out


def read_kgc_records(path) -> list[KgcRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(KgcRecord(str(row["id"]), row["head_name"], parse_wkt(row["head_geometry"]),
                                     row["tail_name"], parse_wkt(row["tail_geometry"])))
    return out
