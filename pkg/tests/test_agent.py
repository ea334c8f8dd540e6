import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbankg.agent import (AgentConfig, HaltReason, NoRelationFound, NoTripletsFound, StepKind, Trajectory,
                           parse_relation, parse_tool_request, parse_triplets, parse_type_lists, read_trajectory_rows,
                           refine_loop, run_batch, run_kgc, run_rte)
from urbankg.geometry import parse_wkt
from urbankg.geotools import Rcc5Relation, ToolName
from urbankg.graph import KgcRecord, RteRecord, Stage, Triplet, View
from urbankg.llm import Gateway, MockBackend, RetryPolicy, ScriptStep, TransportError
from urbankg.prompts import render_triplets

TEXT = "Columbia University is a private Ivy league research university in New York City."
REC = RteRecord("columbia", TEXT)
KGC = KgcRecord("columbia|empire", "Columbia University", parse_wkt("POINT (-73.9626 40.8075)"),
                "Empire State Building", parse_wkt("POINT (-73.9857 40.7484)"))
FAITHFUL = "This is a faithful trajectory."
TRIPLET = "<Columbia University, locate-in, New York City>"


def gw_for(steps, **kw):
    return Gateway(MockBackend(steps, **kw), retry=RetryPolicy(max_retries=0), sleep=lambda s: None)


def rte_steps(verifier=(FAITHFUL,), updater=(), spatial=TRIPLET, temporal=None):
    steps = [ScriptStep("List the spatial entity types", "Entity types: University, City\nRelation types: locate-in"),
             ScriptStep("Extract every spatial relational triplet", spatial)]
    if temporal:
        steps.append(ScriptStep("Extract every temporal relational triplet", temporal))
    steps += [ScriptStep("List the", "Entity types: none\nRelation types: none", repeat=True),
              ScriptStep("Extract every", "Nothing applies here.", repeat=True)]
    steps += [ScriptStep("Judge whether", v) for v in verifier]
    steps += [ScriptStep("Follow suggestion", u) for u in updater]
    return steps


# --------------------------------------------------------------------------
# parsers

def test_parse_triplets_examples():
    ts, ignored = parse_triplets(TRIPLET)
    assert [(t.head, t.relation, t.tail) for t in ts] == [("Columbia University", "locate-in", "New York City")]
    assert ignored == 0
    with pytest.raises(NoTripletsFound):
        parse_triplets("Columbia is in New York.")
    ts, ignored = parse_triplets("<a, r, b>\n<c, s, d>\n<broken line>")
    assert len(ts) == 2 and ignored == 1


def test_parse_triplets_skips_grammar_placeholder_and_splits_outer_commas():
    ts, _ = parse_triplets("format: <head, relation, tail>\n<Park, next to, near, Road>")
    assert [(t.head, t.relation, t.tail) for t in ts] == [("Park", "next to, near", "Road")]


field_text = st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters=" -'"),
                     min_size=1, max_size=15).map(lambda s: " ".join(s.split())).filter(bool)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(field_text, field_text, field_text), min_size=1, max_size=8))
def test_parse_triplets_inverts_render(rows):
    triplets, seen = [], set()
    for h, r, t in rows:
        try:
            tr = Triplet(h, r, t)
        except ValueError:
            continue
        if tr.key not in seen:
            seen.add(tr.key)
            triplets.append(tr)
    if not triplets:
        return
    parsed, ignored = parse_triplets(render_triplets(triplets))
    assert [(t.head, t.relation, t.tail) for t in parsed] == [(t.head, t.relation, t.tail) for t in triplets]
    assert ignored == 0


def test_parse_relation_examples():
    assert parse_relation("...therefore the relation is DC.") is Rcc5Relation.DC
    assert parse_relation("not EC but PO... final answer: PO") is Rcc5Relation.PO
    assert parse_relation("I first thought PO, but the answer is externally connected") is Rcc5Relation.EC
    assert parse_relation("Relation: IN\nThough one might argue EQ.") is Rcc5Relation.IN
    with pytest.raises(NoRelationFound):
        parse_relation("they are adjacent")
    with pytest.raises(NoRelationFound):
        parse_relation("dc is lowercase")  # codes are case-sensitive


def test_parse_tool_request_examples(caplog):
    assert parse_tool_request("I need Distance and Geohash") == [ToolName.Distance, ToolName.Geohash]
    assert parse_tool_request("distance, DISTANCE, point2polygon") == [ToolName.Distance, ToolName.Point2Polygon]
    with caplog.at_level(logging.WARNING):
        assert parse_tool_request("I need the ruler tool") == []
    assert "no known tool" in caplog.text


def test_parse_type_lists():
    assert parse_type_lists("Entity types: University, City\nRelation types: locate-in") == (
        ["University", "City"], ["locate-in"])
    assert parse_type_lists("nothing") == ([], [])


# --------------------------------------------------------------------------
# refinement loop

def _seeded_traj():
    traj = Trajectory("r", Stage.RTE)
    traj.add(StepKind.ModelResponse, TRIPLET)
    return traj


def test_refine_faithful_first():
    gw = gw_for([ScriptStep("Judge whether", FAITHFUL)])
    traj = _seeded_traj()
    assert refine_loop(traj, gw, AgentConfig(), "item") == TRIPLET
    assert len(traj.of_kind(StepKind.VerifierFeedback)) == 1
    assert traj.of_kind(StepKind.UpdaterRevision) == []
    assert traj.halted_by is HaltReason.Faithful


def test_refine_never_faithful_runs_max():
    gw = gw_for([ScriptStep("Judge whether", "Not yet.", repeat=True),
                 ScriptStep("Follow suggestion", "<a, b, c>", repeat=True)])
    traj = _seeded_traj()
    refine_loop(traj, gw, AgentConfig(max_iterations=3), "item")
    assert len(traj.of_kind(StepKind.VerifierFeedback)) == 3
    assert len(traj.of_kind(StepKind.UpdaterRevision)) == 3
    assert traj.halted_by is HaltReason.MaxIterations
    assert max(s.iteration for s in traj.steps) == 3


def test_refine_feedback_then_sentinel():
    gw = gw_for([ScriptStep("Judge whether", "missing temporal triplet"), ScriptStep("Judge whether", FAITHFUL),
                 ScriptStep("Follow suggestion", "<a, b, c>")])
    traj = _seeded_traj()
    assert refine_loop(traj, gw, AgentConfig(), "item") == "<a, b, c>"
    assert len(traj.of_kind(StepKind.VerifierFeedback)) == 2
    assert len(traj.of_kind(StepKind.UpdaterRevision)) == 1


def test_refine_sentinel_in_prose_is_detected():
    gw = gw_for([ScriptStep("Judge whether", "After checking: this is a Faithful Trajectory, nothing to fix.")])
    traj = _seeded_traj()
    refine_loop(traj, gw, AgentConfig(), "item")
    assert traj.halted_by is HaltReason.Faithful


def test_refine_needs_a_response():
    with pytest.raises(ValueError):
        refine_loop(Trajectory("r", Stage.RTE), gw_for([]), AgentConfig(), "item")


def test_verifier_transcript_excludes_prompts():
    gw = gw_for([ScriptStep("Judge whether", "fix it"), ScriptStep("Judge whether", FAITHFUL),
                 ScriptStep("Follow suggestion", "<a, b, c>")])
    traj = _seeded_traj()
    refine_loop(traj, gw, AgentConfig(), "item")
    second_verifier = gw.backend.transcript[2][0]
    assert "fix it" in second_verifier and "<a, b, c>" in second_verifier
    assert second_verifier.count("Judge whether all extracted triplets") == 1


# --------------------------------------------------------------------------
# pipelines

def test_run_rte_columbia_spatial_only():
    gw = gw_for(rte_steps())
    traj, triplets = run_rte(REC, gw, AgentConfig())
    assert [(t.head, t.relation, t.tail, t.view) for t in triplets] == [
        ("Columbia University", "locate-in", "New York City", View.spatial)]
    assert traj.halted_by is HaltReason.Faithful
    assert len(traj.of_kind(StepKind.VerifierFeedback)) == 1
    assert gw.ledger.totals().calls == 3 * 2 + 1


def test_run_rte_dedups_across_views():
    gw = gw_for(rte_steps(temporal="<columbia university, LOCATE-IN, new york city>"))
    _, triplets = run_rte(REC, gw, AgentConfig())
    assert len(triplets) == 1 and triplets[0].view is View.spatial


def test_run_rte_uses_last_revision():
    gw = gw_for(rte_steps(verifier=("Add the founding year.", FAITHFUL),
                          updater=(TRIPLET + "\n<Columbia University, founded-in, 1754>",)))
    traj, triplets = run_rte(REC, gw, AgentConfig())
    assert [t.relation for t in triplets] == ["locate-in", "founded-in"]
    assert triplets[0].view is View.spatial and triplets[1].view is View.other
    assert traj.final_answer == triplets


def test_run_rte_unparseable_revision_is_error():
    gw = gw_for(rte_steps(verifier=("Not right.",) * 3, updater=("I cannot say.",) * 3))
    traj, triplets = run_rte(REC, gw, AgentConfig())
    assert triplets == [] and traj.halted_by is HaltReason.Error


def test_run_rte_backend_error_keeps_partial_trajectory():
    gw = gw_for(rte_steps(), failures=[None, None, TransportError("boom")])
    traj, triplets = run_rte(REC, gw, AgentConfig())
    assert triplets == [] and traj.halted_by is HaltReason.Error and "boom" in traj.error
    assert len(traj.of_kind(StepKind.ModelResponse)) == 2


def kgc_steps(tools="Distance, Geohash", verifier=(FAITHFUL,), updater=()):
    return ([ScriptStep("Choose exactly one relation code", "They are far apart.\nRelation: DC"),
             ScriptStep("Which types of tool interface you need", tools),
             ScriptStep("Please refine your reasoning process", "About 6.8 km apart.\nRelation: DC")]
            + [ScriptStep(_kgc("Judge whether"), v) for v in verifier]
            + [ScriptStep(_kgc("Follow suggestion"), u) for u in updater])


def _kgc(phrase):
    return lambda req: phrase in req.text and "Head entity:" in req.text


def test_run_kgc_distance_then_dc():
    gw = gw_for(kgc_steps(tools="Distance"))
    traj, rel = run_kgc(KGC, gw, AgentConfig())
    assert rel is Rcc5Relation.DC and traj.halted_by is HaltReason.Faithful
    results = traj.of_kind(StepKind.ToolResult)
    assert [r.payload.tool for r in results] == [ToolName.Distance]
    assert results[0].payload.value == pytest.approx(6.8, abs=0.1)
    deliberation = gw.backend.transcript[2][0]
    assert "tool(Distance)=" in deliberation


def test_run_kgc_fallback_tools():
    gw = gw_for(kgc_steps(tools="I would like a ruler."))
    traj, rel = run_kgc(KGC, gw, AgentConfig())
    assert rel is Rcc5Relation.DC
    assert {r.payload.tool for r in traj.of_kind(StepKind.ToolResult)} == {ToolName.Geohash, ToolName.Distance}


def test_run_kgc_max_iterations_uses_last_revision():
    gw = gw_for(kgc_steps(verifier=("Reconsider.",) * 3,
                          updater=("Relation: EC", "Relation: PO", "Still unsure, but Relation: DC")))
    traj, rel = run_kgc(KGC, gw, AgentConfig())
    assert traj.halted_by is HaltReason.MaxIterations and rel is Rcc5Relation.DC
    assert gw.ledger.totals().calls == 3 + 2 * 3


def test_run_kgc_no_relation_is_error():
    gw = gw_for(kgc_steps(verifier=("No.",) * 3, updater=("unclear",) * 3))
    traj, rel = run_kgc(KGC, gw, AgentConfig())
    assert rel is None and traj.halted_by is HaltReason.Error


def test_call_bounds():
    cfg = AgentConfig(max_iterations=3)
    gw = gw_for(rte_steps(verifier=("no",) * 3, updater=(TRIPLET,) * 3))
    run_rte(REC, gw, cfg)
    assert gw.ledger.totals().calls <= 3 * 2 + 2 * cfg.max_iterations + 2
    gw = gw_for(kgc_steps(verifier=("no",) * 3, updater=("DC",) * 3))
    traj, _ = run_kgc(KGC, gw, cfg)
    assert gw.ledger.totals().calls <= 2 + len(traj.of_kind(StepKind.ToolCall)) + 2 * cfg.max_iterations


# --------------------------------------------------------------------------
# batches

def test_empty_batch():
    res = run_batch([], [], gw_for([]), AgentConfig())
    assert res.graph.stats().facts == 0 and res.trajectories == []


def test_batch_isolates_failures_and_records_provenance(tmp_path):
    other = RteRecord("other", "An unrelated sentence about a museum that opened on the east side of town.")
    steps = rte_steps() + kgc_steps()
    res = run_batch([REC, other], [KGC], gw_for(steps), AgentConfig(), log_path=tmp_path / "t.jsonl")
    assert [f[0] for f in res.failures] == ["other"]
    facts = sorted((f.relation, f.record_id, f.stage) for f in res.graph.facts.values())
    assert facts == [("disconnected", "columbia|empire", Stage.KGC), ("locate-in", "columbia", Stage.RTE)]
    rows = read_trajectory_rows(tmp_path / "t.jsonl")
    summaries = [r for r in rows if r["kind"] == "Summary"]
    assert [s["record_id"] for s in summaries] == ["columbia", "other", "columbia|empire"]
    assert summaries[2]["final_answer"] == "DC"
    assert res.graph.integrity_errors() == []


def test_batch_logs_deterministic(tmp_path):
    for name in ("a", "b"):
        run_batch([REC], [KGC], gw_for(rte_steps() + kgc_steps()), AgentConfig(), log_path=tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_parallel_batch_matches_sequential():
    recs = [RteRecord(f"r{i}", TEXT) for i in range(6)]

    def run(sequential):
        mb = MockBackend(rte_steps(verifier=()) + [ScriptStep("Judge whether", FAITHFUL, repeat=True)])
        mb.sequential = sequential
        # make every step reusable so thread interleaving cannot starve a record
        for s in mb.steps:
            s.repeat = True
        gw = Gateway(mb, retry=RetryPolicy(max_retries=0), max_in_flight=3, sleep=lambda s: None)
        return run_batch(recs, [], gw, AgentConfig(max_in_flight=3))

    seq, par = run(True), run(False)
    assert set(seq.graph.facts) == set(par.graph.facts)
    assert seq.graph.stats() == par.graph.stats()
    assert len(par.calls) == len(seq.calls) == 6 * 7
