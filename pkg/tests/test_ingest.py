import json

from hypothesis import given, settings
from hypothesis import strategies as st

from urbankg.geometry import Polygon, serialize_wkt
from urbankg.ingest import (RawRecord, Source, clean_text, filter_record, load_records, preprocess,
                            read_kgc_records, read_rte_records, to_task_records, kgc_record_row,
                            rte_record_row, write_error_report)

LONG = "Columbia University is a private Ivy league research university in New York City."


def test_clean_text_examples():
    assert clean_text("Visit https://nyc.gov now") == "Visit now"
    assert clean_text("Café ☕ on 5th") == "Caf on 5th"
    assert clean_text("see www.example.com/x today") == "see today"
    assert clean_text("tab\there\x07 bell") == "tab here bell"
    assert clean_text("already clean text") == "already clean text"


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=120))
def test_clean_text_idempotent(s):
    once = clean_text(s)
    assert clean_text(once) == once


def test_filter_reasons():
    assert filter_record(RawRecord(Source.POI, "1", "Cafe", None, {}, None)).reason == "null"
    nine = "one two three four five six seven eight nine"
    assert filter_record(RawRecord(Source.POI, "2", "Cafe", None, {}, nine)).reason == "too_short"
    assert filter_record(RawRecord(Source.POI, "3", "Central Park", None, {}, "central park")).reason == "meaningless"
    assert filter_record(RawRecord(Source.POI, "4", "Columbia", None, {}, LONG)).kept


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=200))
def test_kept_means_ten_words(desc):
    d = filter_record(RawRecord(Source.POI, "x", "name", None, {}, desc))
    if d.kept:
        assert len(clean_text(desc).split()) >= 10


def _write(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))


def test_load_empty(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    res = load_records(tmp_path / "e.jsonl", "AOI")
    assert res.records == [] and res.errors == []


def test_load_collects_bad_lines(tmp_path):
    good = {"id": "a", "name": "Park", "geometry": "POINT (1 2)", "description": LONG}
    _write(tmp_path / "r.jsonl", [good, dict(good, id="b"), "{not json", dict(good, id="c")])
    res = load_records(tmp_path / "r.jsonl", Source.POI)
    assert [r.id for r in res.records] == ["a", "b", "c"]
    assert [e.line for e in res.errors] == [3]
    write_error_report(res.errors, tmp_path / "err.jsonl")
    assert json.loads((tmp_path / "err.jsonl").read_text())["line"] == 3


def test_load_aoi_polygon_round_trips(tmp_path):
    wkt = "POLYGON ((-73.86 40.58, -73.85 40.58, -73.85 40.59, -73.86 40.58))"
    _write(tmp_path / "a.jsonl", [{"id": "x", "name": "Beach", "geometry": wkt, "description": LONG,
                                   "type": "park"}])
    rec = load_records(tmp_path / "a.jsonl", "AOI").records[0]
    assert isinstance(rec.geometry, Polygon)
    assert serialize_wkt(rec.geometry) == wkt
    assert rec.extra == {"type": "park"}


def test_load_rejects_missing_keys_and_bad_geometry(tmp_path):
    _write(tmp_path / "a.jsonl", [{"id": "x", "description": LONG},
                                  {"id": "y", "name": "n", "geometry": "POINT (200 0)", "description": LONG}])
    res = load_records(tmp_path / "a.jsonl", "Road")
    assert res.records == [] and len(res.errors) == 2
    assert "name" in res.errors[0].message


def test_review_and_webpage_text_keys(tmp_path):
    _write(tmp_path / "r.jsonl", [{"name": "Cafe", "geometry": "POINT (0 0)", "review": LONG, "rating": 5}])
    rec = load_records(tmp_path / "r.jsonl", "Review").records[0]
    assert rec.description == LONG and rec.extra == {"rating": "5"}
    _write(tmp_path / "w.jsonl", [{"text": LONG}])
    rec = load_records(tmp_path / "w.jsonl", "WebPage").records[0]
    assert rec.description == LONG and rec.geometry is None


def test_swap_xy(tmp_path):
    _write(tmp_path / "p.jsonl", [{"id": "c", "name": "Columbia", "geometry": "POINT (40.8075 -73.9626)",
                                   "description": LONG}])
    rec = load_records(tmp_path / "p.jsonl", "POI", swap_xy=True).records[0]
    assert rec.geometry.point == (-73.9626, 40.8075)


def _recs(n, with_geometry=True):
    from urbankg.geometry import parse_wkt
    return [RawRecord(Source.POI, f"r{i}", f"Place {i}", None, {}, f"{LONG} ({i})",
                      parse_wkt(f"POINT ({i} {i})") if with_geometry else None) for i in range(n)]


def test_task_records_without_geometry():
    rte, kgc = to_task_records(_recs(4, with_geometry=False))
    assert len(rte) == 4 and kgc == []


def test_task_records_pair_sampling():
    rte, kgc = to_task_records(_recs(2), kgc_size=1)
    assert len(kgc) == 1 and kgc[0].head_name != kgc[0].tail_name
    rte, kgc = to_task_records(_recs(30), seed=5)
    assert len(kgc) == len(rte) == 30
    assert len({frozenset(k.id.split("|")) for k in kgc}) == 30


def test_task_records_seeded():
    a = to_task_records(_recs(20), seed=11)[1]
    b = to_task_records(_recs(20), seed=11)[1]
    c = to_task_records(_recs(20), seed=12)[1]
    assert [k.id for k in a] == [k.id for k in b]
    assert [k.id for k in a] != [k.id for k in c]


def test_preprocess_and_task_files(tmp_path):
    recs = _recs(3) + [RawRecord(Source.POI, "short", "X", None, {}, "too short")]
    kept, dropped = preprocess(recs)
    assert len(kept) == 3 and dropped[0][1] == "too_short"
    rte, kgc = to_task_records(kept, kgc_size=2)
    _write(tmp_path / "rte.jsonl", [rte_record_row(r) for r in rte])
    _write(tmp_path / "kgc.jsonl", [kgc_record_row(r) for r in kgc])
    assert read_rte_records(tmp_path / "rte.jsonl") == rte
    assert read_kgc_records(tmp_path / "kgc.jsonl") == kgc
