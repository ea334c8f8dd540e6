"""Accuracy, model-based judging with repeat voting, Spearman agreement, and cost reports."""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .geotools import Rcc5Relation, ToolResult
from .graph import KgcRecord, RteRecord, Stage, Triplet
from .llm import CallRecord, CostLedger, Gateway, GatewayError, UsageTotals
from .prompts import CONFIDENCE_MAX, CONFIDENCE_MIN, TemplateSet, build_eval_prompt

log = logging.getLogger(__name__)

Verdict = Union[bool, tuple[int, int]]  # KGC: correct or not; RTE: (true count, false count)


class EmptyInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class EvalParseError(ValueError):
    pass


class Evaluator(str, enum.Enum):
    Human = "Human"
    Model = "Model"


@dataclass(frozen=True)
class EvalJudgment:
    item_id: str
    task: Stage
    verdict: Verdict
    confidence: float
    evaluator: Evaluator = Evaluator.Model
    repeat_index: int = 0
    group: str = ""

    def __post_init__(self):
        if Stage(self.task) is Stage.RTE:
            tc, fc = self.verdict
            if tc < 0 or fc < 0:
                raise ValueError(f"{self.item_id}: triplet counts must be >= 0")
        elif not isinstance(self.verdict, bool):
            raise ValueError(f"{self.item_id}: KGC verdict must be True or False")
        if not CONFIDENCE_MIN <= self.confidence <= CONFIDENCE_MAX:
            raise ValueError(f"{self.item_id}: confidence {self.confidence} outside "
                             f"[{CONFIDENCE_MIN}, {CONFIDENCE_MAX}]")

    def score(self) -> float:
        """Per-item correctness: 1/0 for KGC, fraction of true triplets for RTE."""
        if isinstance(self.verdict, bool):
            return float(self.verdict)
        tc, fc = self.verdict
        return tc / (tc + fc) if tc + fc else 0.0

    def to_row(self) -> dict:
        row = {"item_id": self.item_id, "task": Stage(self.task).value, "confidence": self.confidence,
               "evaluator": Evaluator(self.evaluator).value, "repeat_index": self.repeat_index,
               "group": self.group}
        if isinstance(self.verdict, bool):
            row["verdict"] = self.verdict
        else:
            row["true_count"], row["false_count"] = self.verdict
        return row

    @classmethod
    def from_row(cls, row: dict) -> "EvalJudgment":
        task = Stage(row["task"])
        if task is Stage.RTE:
            verdict: Verdict = (int(row["true_count"]), int(row["false_count"]))
        else:
            v = row["verdict"]
            verdict = v if isinstance(v, bool) else str(v).strip().lower() == "true"
        return cls(str(row["item_id"]), task, verdict, float(row["confidence"]),
                   Evaluator(row.get("evaluator", "Human")), int(row.get("repeat_index", 0)),
                   str(row.get("group", "")))


def read_judgments(path) -> list[EvalJudgment]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(EvalJudgment.from_row(json.loads(line)))
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


def write_judgments(judgments: Iterable[EvalJudgment], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for j in judgments:
            fh.write(json.dumps(j.to_row()) + "\n")


# --------------------------------------------------------------------------
# accuracy and voting

def accuracy(judgments: Sequence[EvalJudgment]) -> float:
    if not judgments:
        raise EmptyInput("no judgments")
    tasks = {Stage(j.task) for j in judgments}
    if len(tasks) > 1:
        raise ValueError("judgments mix RTE and KGC")
    if tasks.pop() is Stage.RTE:
        true = sum(j.verdict[0] for j in judgments)
        total = sum(j.verdict[0] + j.verdict[1] for j in judgments)
        if total == 0:
            raise EmptyInput("RTE judgments count zero triplets")
        return true / total
    return sum(1 for j in judgments if j.verdict) / len(judgments)


def _conservativeness(v: Verdict) -> tuple:
    # lower sorts first = closer to "False"
    if isinstance(v, bool):
        return (int(v),)
    tc, fc = v
    return (tc / (tc + fc) if tc + fc else 0.0, tc)


def majority_vote(verdicts: Sequence[Verdict]) -> Verdict:
    """Most frequent verdict; ties go to the most pessimistic of the tied answers."""
    if not verdicts:
        raise EmptyInput("no verdicts to vote on")
    counts = Counter(verdicts)
    top = max(counts.values())
    return min((v for v, c in counts.items() if c == top), key=_conservativeness)


def aggregate(judgments: Sequence[EvalJudgment]) -> list[EvalJudgment]:
    """One judgment per item: majority verdict, mean confidence of the repeats that agree with it."""
    by_item: dict[tuple[str, str], list[EvalJudgment]] = {}
    for j in judgments:
        by_item.setdefault((j.group, j.item_id), []).append(j)
    out = []
    for (group, item_id), js in by_item.items():
        winner = majority_vote([j.verdict for j in js])
        agree = [j.confidence for j in js if j.verdict == winner]
        out.append(EvalJudgment(item_id, js[0].task, winner, sum(agree) / len(agree),
                                js[0].evaluator, 0, group))
    return out


# --------------------------------------------------------------------------
# model-based evaluation

_COUNT = {
    "true": re.compile(r"true\s+triplets?\s*:?\s*(\d+)", re.I),
    "false": re.compile(r"false\s+triplets?\s*:?\s*(\d+)", re.I),
}
_CONFIDENCE = re.compile(r"confidence\s*(?:score)?\s*:?\s*(\d+(?:\.\d+)?)", re.I)
_JUSTIFICATION = re.compile(r"justification\s*:?\s*\**\s*(true|false)\b", re.I)


def parse_eval_response(task: Stage, text: str) -> tuple[Verdict, float]:
    m = _CONFIDENCE.search(text)
    if not m:
        raise EvalParseError("no confidence value")
    conf = float(m.group(1))
    if not CONFIDENCE_MIN <= conf <= CONFIDENCE_MAX:
        raise EvalParseError(f"confidence {conf} outside [{CONFIDENCE_MIN}, {CONFIDENCE_MAX}]")
    if Stage(task) is Stage.RTE:
        t, f = _COUNT["true"].search(text), _COUNT["false"].search(text)
        if not (t and f):
            raise EvalParseError("missing true/false triplet counts")
        return (int(t.group(1)), int(f.group(1))), conf
    m = _JUSTIFICATION.search(text)
    if not m:
        raise EvalParseError("missing True/False justification")
    return m.group(1).lower() == "true", conf


@dataclass
class EvalOutcome:
    judgments: list[EvalJudgment]  # every repeat
    final: list[EvalJudgment]  # one per evaluated item, after voting
    unevaluated: list[tuple[str, str]]  # (item id, reason)


def model_evaluate(task: Stage, items: Sequence[Union[RteRecord, KgcRecord]],
                   results: Sequence[Union[Sequence[Triplet], Rcc5Relation]], gw: Gateway, repeats: int = 1,
                   tool_evidence: Optional[Sequence[Optional[Sequence[ToolResult]]]] = None,
                   group: str = "", templates: Optional[TemplateSet] = None) -> EvalOutcome:
    """Ask the judge model ``repeats`` times per item and vote.

    Any failed call or unreadable answer leaves the item unevaluated.
    """
    task = Stage(task)
    if len(items) != len(results):
        raise LengthMismatch(f"{len(items)} items but {len(results)} results")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    evidence = list(tool_evidence) if tool_evidence is not None else [None] * len(items)
    outcome = EvalOutcome([], [], [])
    for item, result, ev in zip(items, results, evidence):
        prompt = build_eval_prompt(task, item, result, ev, templates)
        got = []
        try:
            for k in range(repeats):
                verdict, conf = parse_eval_response(task, gw.chat(prompt, task=f"eval-{task.value}").content)
                got.append(EvalJudgment(item.id, task, verdict, conf, Evaluator.Model, k, group))
        except (GatewayError, EvalParseError) as exc:
            outcome.unevaluated.append((item.id, f"{type(exc).__name__}: {exc}"))
            continue
        outcome.judgments.extend(got)
        outcome.final.extend(aggregate(got))
    return outcome


@dataclass
class EvalReport:
    task: Stage
    accuracy: Optional[float]
    mean_confidence: Optional[float]
    items: int
    unevaluated: int
    usage: UsageTotals = field(default_factory=UsageTotals)

    def to_row(self) -> dict:
        return {"task": self.task.value, "accuracy": self.accuracy, "mean_confidence": self.mean_confidence,
                "items": self.items, "unevaluated": self.unevaluated, "usage": asdict(self.usage)}

    def render(self) -> str:
        acc = "n/a" if self.accuracy is None else f"{self.accuracy:.4f}"
        conf = "n/a" if self.mean_confidence is None else f"{self.mean_confidence:.2f}"
        return (f"{self.task.value}: accuracy {acc}, confidence {conf}, {self.items} items evaluated, "
                f"{self.unevaluated} unevaluated, {self.usage.calls} calls, "
                f"{self.usage.prompt_tokens + self.usage.completion_tokens} tokens, cost {self.usage.cost:.4f}")


def make_report(task: Stage, outcome: EvalOutcome, usage: Optional[UsageTotals] = None) -> EvalReport:
    final = outcome.final
    acc = accuracy(final) if final and _has_triplets(final) else None
    conf = sum(j.confidence for j in final) / len(final) if final else None
    return EvalReport(Stage(task), acc, conf, len(final), len(outcome.unevaluated), usage or UsageTotals())


def _has_triplets(js: Sequence[EvalJudgment]) -> bool:
    return Stage(js[0].task) is Stage.KGC or any(sum(j.verdict) for j in js)


# --------------------------------------------------------------------------
# rank correlation

def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise DegenerateInput("need at least two observations")
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = float(np.sqrt((dx * dx).sum() * (dy * dy).sum()))
    if denom == 0.0:
        raise DegenerateInput("a sequence is constant")
    return max(-1.0, min(1.0, float((dx * dy).sum()) / denom))


@dataclass
class ConsistencyReport:
    per_group: dict[str, float]
    overall: Optional[float]
    skipped: dict[str, str]  # group -> reason


def consistency_report(human: Sequence[EvalJudgment], model: Sequence[EvalJudgment],
                       score: Callable[[EvalJudgment], float] = EvalJudgment.score) -> ConsistencyReport:
    """Spearman agreement between human and model scores, per group and pooled.

    Judgments pair up by (group, item id); repeats are voted first.
    """
    h = {(j.group, j.item_id): score(j) for j in aggregate(human)}
    m = {(j.group, j.item_id): score(j) for j in aggregate(model)}
    groups = sorted({g for g, _ in h} | {g for g, _ in m})
    per, skipped = {}, {}
    xs, ys = [], []
    for g in groups:
        keys = sorted(k for k in h.keys() & m.keys() if k[0] == g)
        if not keys:
            skipped[g] = "no overlapping item ids"
            log.warning("group %r has no overlapping items", g)
            continue
        x, y = [h[k] for k in keys], [m[k] for k in keys]
        xs += x
        ys += y
        try:
            per[g] = spearman(x, y)
        except (DegenerateInput, LengthMismatch) as exc:
            skipped[g] = str(exc)
            log.warning("group %r skipped: %s", g, exc)
    try:
        overall = spearman(xs, ys)
    except (DegenerateInput, LengthMismatch):
        overall = None
    return ConsistencyReport(per, overall, skipped)


# --------------------------------------------------------------------------
# cost

@dataclass
class CostRow:
    task: str
    records: Optional[int]
    calls: float
    prompt_tokens: float
    completion_tokens: float
    cost: float
    wall_time: float


def task_family(task: str) -> str:
    return task.split("-", 1)[0] if task else "other"


def cost_report(ledger: Union[CostLedger, Sequence[CallRecord]], per_1000: bool = False,
                record_counts: Optional[dict[str, int]] = None) -> list[CostRow]:
    """Totals per task family (``RTE``, ``KGC``, ``eval``, ``merge``...) plus an ``all`` row.

    With ``per_1000`` every family is scaled to 1,000 records using
    ``record_counts``; the ``all`` row then sums the scaled rows.
    """
    records = ledger.records if isinstance(ledger, CostLedger) else list(ledger)
    counts = record_counts or {}
    fams: dict[str, UsageTotals] = {}
    for r in records:
        fams.setdefault(task_family(r.task), UsageTotals()).add(r)
    rows = []
    for fam in sorted(fams):
        t = fams[fam]
        n = counts.get(fam)
        scale = 1.0
        if per_1000:
            if not n:
                raise ValueError(f"per-1000 scaling needs a record count for task {fam!r}")
            scale = 1000.0 / n
        rows.append(CostRow(fam, n, t.calls * scale, t.prompt_tokens * scale, t.completion_tokens * scale,
                            t.cost * scale, t.wall_time * scale))
    rows.append(CostRow("all", sum(counts.get(r.task) or 0 for r in rows) or None,
                        sum(r.calls for r in rows), sum(r.prompt_tokens for r in rows),
                        sum(r.completion_tokens for r in rows), sum(r.cost for r in rows),
                        sum(r.wall_time for r in rows)))
    return rows


def render_cost_report(rows: Sequence[CostRow], per_1000: bool = False) -> str:
    head = "per 1,000 records" if per_1000 else "totals"
    lines = [f"cost report ({head})",
             f"{'task':<8}{'records':>9}{'calls':>10}{'prompt tok':>12}{'compl tok':>12}{'cost':>12}{'time s':>10}"]
    for r in rows:
        lines.append(f"{r.task:<8}{r.records if r.records is not None else '-':>9}{r.calls:>10.1f}"
                     f"{r.prompt_tokens:>12.0f}{r.completion_tokens:>12.0f}{r.cost:>12.4f}{r.wall_time:>10.2f}")
    return "\n".join(lines)
