"""Command-line entry point. Every command is non-interactive; fatal errors print a JSON summary to stderr."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import agent, evaluation, geotools, ingest, postprocess
from .config import ConfigError, PipelineConfig, load_config
from .geometry import WktError, parse_wkt
from .graph import Stage, UrbanGraph, export_graph, import_graph, merge_graphs
from .llm import CostLedger, Gateway, GatewayError

EXIT_FAILURE, EXIT_CONFIG = 1, 2


def _emit(obj) -> None:
    click.echo(json.dumps(obj, ensure_ascii=False, sort_keys=True))


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.Abort, click.ClickException):
            raise
        except ConfigError as exc:
            self._fail("ConfigError", "invalid config", EXIT_CONFIG, problems=exc.problems)
        except (OSError, ValueError, GatewayError, geotools.ToolError) as exc:
            self._fail(type(exc).__name__, str(exc), EXIT_FAILURE)

    @staticmethod
    def _fail(kind: str, message: str, code: int, **extra):
        click.echo(json.dumps({"error": kind, "message": message, **extra}), err=True)
        sys.exit(code)


config_option = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                             help="Pipeline config file (YAML or JSON).")


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Build and evaluate an urban knowledge graph with tool-augmented LLM agents."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------
# data preparation

@main.command("ingest")
@click.option("--source", required=True, type=click.Choice([s.value for s in ingest.Source]))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--swap-xy", is_flag=True, help="Input coordinates are latitude first.")
@click.option("--kgc-size", type=int, default=None, help="Cap on sampled KGC pairs.")
@click.option("--seed", type=int, default=0, show_default=True)
def ingest_cmd(source, input_path, out_dir, swap_xy, kgc_size, seed):
    """Clean and filter raw records into RTE and KGC task files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = ingest.load_records(input_path, source, swap_xy=swap_xy)
    kept, dropped = ingest.preprocess(loaded.records)
    rte, kgc = ingest.to_task_records(kept, seed=seed, kgc_size=kgc_size)
    _write_rows(out / "rte.jsonl", [ingest.rte_record_row(r) for r in rte])
    _write_rows(out / "kgc.jsonl", [ingest.kgc_record_row(r) for r in kgc])
    _write_rows(out / "dropped.jsonl", [{"id": r.id, "reason": why} for r, why in dropped])
    ingest.write_error_report(loaded.errors, out / "errors.jsonl")
    _emit({"loaded": len(loaded.records), "bad_lines": len(loaded.errors), "kept": len(kept),
           "dropped": len(dropped), "rte_records": len(rte), "kgc_records": len(kgc)})


def _write_rows(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# pipelines

def _finish(cfg: PipelineConfig, gw: Gateway, result: agent.BatchResult, out, log_path, ledger_path) -> dict:
    stats = export_graph(result.graph, out)
    if log_path:
        agent.write_trajectories(result.trajectories, log_path)
    if ledger_path:
        gw.ledger.dump(ledger_path)
    return {"entities": stats.entities, "relations": stats.relations, "facts": stats.facts,
            "records": len(result.trajectories), "failures": [list(f) for f in result.failures],
            "calls": len(result.calls)}


def _pipeline_options(fn):
    fn = click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), help="Write call ledger here.")(fn)
    fn = click.option("--log", "log_path", type=click.Path(dir_okay=False), help="Write trajectory log here.")(fn)
    fn = click.option("--out", required=True, type=click.Path(dir_okay=False), help="Graph export path.")(fn)
    return config_option(fn)


@main.command("rte")
@_pipeline_options
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
def rte_cmd(config_path, out, log_path, ledger_path, input_path):
    """Extract triplets from RTE records."""
    cfg = load_config(config_path)
    gw = cfg.make_gateway()
    result = agent.run_batch(ingest.read_rte_records(input_path), [], gw, cfg.agent_config())
    _emit(_finish(cfg, gw, result, out, log_path, ledger_path))


@main.command("kgc")
@_pipeline_options
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
def kgc_cmd(config_path, out, log_path, ledger_path, input_path):
    """Complete geospatial relations for KGC records."""
    cfg = load_config(config_path)
    gw = cfg.make_gateway()
    result = agent.run_batch([], ingest.read_kgc_records(input_path), gw, cfg.agent_config())
    _emit(_finish(cfg, gw, result, out, log_path, ledger_path))


@main.command("build-kg")
@_pipeline_options
@click.option("--rte", "rte_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kgc", "kgc_path", required=True, type=click.Path(exists=True, dir_okay=False))
def build_kg_cmd(config_path, out, log_path, ledger_path, rte_path, kgc_path):
    """Run RTE, then KGC, and export the union of both graphs."""
    cfg = load_config(config_path)
    gw = cfg.make_gateway()
    acfg = cfg.agent_config()
    first = agent.run_batch(ingest.read_rte_records(rte_path), [], gw, acfg)
    second = agent.run_batch([], ingest.read_kgc_records(kgc_path), gw, acfg)
    combined = agent.BatchResult(merge_graphs(first.graph, second.graph),
                                 first.trajectories + second.trajectories,
                                 gw.ledger.records, first.failures + second.failures)
    _emit(_finish(cfg, gw, combined, out, log_path, ledger_path))


@main.command("merge-relations")
@config_option
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--plan", "plan_path", type=click.Path(dir_okay=False), help="Write the merge audit here.")
@click.option("--stage", type=click.Choice(["both", "frequency", "cluster"]), default="both", show_default=True)
def merge_cmd(config_path, graph_path, out, plan_path, stage):
    """Fold rare relations into frequent ones, then merge clustered synonyms."""
    cfg = load_config(config_path)
    gw = cfg.make_gateway()
    g: UrbanGraph = import_graph(graph_path)
    before = g.stats()
    plans = []
    if stage in ("both", "frequency"):
        g, plan = postprocess.merge_low_frequency(g, gw, cfg.thresholds.frequency, cfg.thresholds.similarity)
        plans.append(plan)
    if stage in ("both", "cluster"):
        g, plan = postprocess.cluster_and_merge(g, gw, cfg.thresholds.link)
        plans.append(plan)
    stats = export_graph(g, out)
    if plan_path:
        postprocess.write_plans(plans, plan_path)
    _emit({"relations_before": before.relations, "relations_after": stats.relations,
           "facts_before": before.facts, "facts_after": stats.facts,
           "merged": sum(len(p.mapping) for p in plans), "dropped": sum(len(p.dropped) for p in plans),
           "notes": [n for p in plans for n in p.notes]})


# --------------------------------------------------------------------------
# evaluation

def _answers_from_log(path, task: Stage) -> dict:
    out = {}
    for row in agent.read_trajectory_rows(path):
        if row.get("kind") == "Summary" and row["task"] == task.value and row.get("final_answer"):
            out[row["record_id"]] = row["final_answer"]
    return out


@main.command("evaluate")
@config_option
@click.option("--task", required=True, type=click.Choice([s.value for s in Stage]))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="RTE or KGC task records.")
@click.option("--trajectories", "traj_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Trajectory log holding the answers to judge.")
@click.option("--repeats", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--group", default="", help="Label stored on every judgment, e.g. the backbone name.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write every judgment here.")
def evaluate_cmd(config_path, task, items_path, traj_path, repeats, group, out_path):
    """Judge pipeline answers with the configured model and report accuracy."""
    cfg = load_config(config_path)
    gw = cfg.make_gateway()
    task = Stage(task)
    answers = _answers_from_log(traj_path, task)
    if task is Stage.RTE:
        records = [r for r in ingest.read_rte_records(items_path) if r.id in answers]
        results = [agent.parse_triplets("\n".join(answers[r.id]), record_id=r.id)[0] for r in records]
    else:
        records = [r for r in ingest.read_kgc_records(items_path) if r.id in answers]
        results = [geotools.Rcc5Relation(answers[r.id]) for r in records]
    outcome = evaluation.model_evaluate(task, records, results, gw, repeats, group=group,
                                        templates=cfg.agent_config().templates)
    if out_path:
        evaluation.write_judgments(outcome.judgments, out_path)
    report = evaluation.make_report(task, outcome, gw.ledger.totals())
    click.echo(report.render())
    _emit(dict(report.to_row(), unevaluated_items=[list(u) for u in outcome.unevaluated]))


@main.command("correlate")
@click.option("--human", "human_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--score", type=click.Choice(["verdict", "confidence"]), default="verdict", show_default=True)
def correlate_cmd(human_path, model_path, score):
    """Spearman agreement between human and model judgments, per group."""
    fn = evaluation.EvalJudgment.score if score == "verdict" else (lambda j: j.confidence)
    rep = evaluation.consistency_report(evaluation.read_judgments(human_path),
                                        evaluation.read_judgments(model_path), fn)
    _emit({"per_group": rep.per_group, "overall": rep.overall, "skipped": rep.skipped})


def _parse_counts(values) -> dict[str, int]:
    out = {}
    for v in values:
        task, _, n = v.partition("=")
        if not n.isdigit() or int(n) == 0:
            raise click.BadParameter(f"expected TASK=COUNT with COUNT > 0, got {v!r}", param_hint="--records")
        out[task] = int(n)
    return out


@main.command("report-costs")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--per-1000", "per_1000", is_flag=True, help="Normalize to 1,000 records per task.")
@click.option("--records", multiple=True, metavar="TASK=COUNT", help="Records processed per task family.")
@click.option("--json", "as_json", is_flag=True, help="Print line-delimited rows instead of a table.")
def report_costs_cmd(ledger_path, per_1000, records, as_json):
    """Token, cost and time totals from a call ledger."""
    rows = evaluation.cost_report(CostLedger.load(ledger_path), per_1000, _parse_counts(records))
    if as_json:
        for r in rows:
            _emit(r.__dict__)
    else:
        click.echo(evaluation.render_cost_report(rows, per_1000))


# --------------------------------------------------------------------------
# ad-hoc geometry

def _geometries(wkts):
    try:
        return [parse_wkt(w) for w in wkts]
    except WktError as exc:
        raise click.BadParameter(str(exc), param_hint="WKT") from None


def _show(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


@main.command("tool")
@click.argument("name")
@click.argument("wkt", nargs=-1, required=True)
def tool_cmd(name, wkt):
    """Run one geospatial tool, e.g. ``tool distance "POINT(0 0)" "POINT(1 0)"``."""
    click.echo(_show(geotools.invoke_tool(name, _geometries(wkt)).value))


@main.command("rcc")
@click.argument("wkt", nargs=2)
@click.option("--eps", type=float, default=geotools.DEFAULT_EPS, show_default=True,
              help="Degrees by which points and lines are thickened.")
def rcc_cmd(wkt, eps):
    """Classify the RCC-5 relation between two geometries."""
    a, b = _geometries(wkt)
    click.echo(geotools.classify_rcc5(a, b, eps).value)


if __name__ == "__main__":
    main()
