"""Dataset records and the metric suite.

Short-form QA uses inclusion matching: an example is correct when a gold
alias appears inside the normalized generation. Accuracy is computed over
answered examples only, N_c / (N_all - N_rej); the trustful rate
(N_c + N_rej) / N_all also credits honest abstentions. List QA adds
recall@5 (capped at five correct answers) and exact-match precision;
reasoning adds exact match and token F1.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .core import TaskKind, normalize_answer, segment_first_sentence
from .errors import ContractViolation, TraceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QARecord:
    """One dataset example. ``gold`` is a list of alias-sets: each alias-set
    holds the acceptable surface forms of one answer."""

    id: str
    question: str
    gold: tuple[tuple[str, ...], ...]
    topic: str = ""
    docs: tuple[dict, ...] = ()
    answer_kind: str = "single"

    def __post_init__(self):
        if not self.gold or any(not alias_set for alias_set in self.gold):
            raise ContractViolation(f"record {self.id}: gold must be non-empty")


def load_dataset(path: str | Path, answer_kind: str = "single") -> list[QARecord]:
    """Read a JSON-lines dataset: {id, question, gold: [[alias,...],...], topic?, docs?}."""
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        gold = tuple(tuple(str(a) for a in alias_set) for alias_set in raw["gold"])
        records.append(
            QARecord(
                id=str(raw["id"]),
                question=raw["question"],
                gold=gold,
                topic=raw.get("topic", ""),
                docs=tuple(raw.get("docs") or ()),
                answer_kind=raw.get("answer_kind", answer_kind),
            )
        )
    return records


def answer_included(generation: str, aliases: tuple[str, ...] | list[str]) -> bool:
    """True iff some normalized alias occurs inside the normalized generation.

    Substring semantics are deliberately loose ("Parisian" contains "Paris");
    that is the documented sharp edge of inclusion matching.
    """
    haystack = normalize_answer(generation)
    return any(alias_norm and alias_norm in haystack
               for alias_norm in (normalize_answer(a) for a in aliases))


@dataclass
class MetricsReport:
    """Counters and derived metrics for one run. Fields that do not apply to
    the task stay None and are omitted from the JSON form."""

    task: str
    n_all: int
    n_correct: int = 0
    n_rejected: int = 0
    n_errored: int = 0
    accuracy: float | None = None
    trustful: float | None = None
    abstention: float | None = None
    recall_at_5: float | None = None
    precision: float | None = None
    recall_at_5_over_all: float | None = None
    precision_over_all: float | None = None
    em: float | None = None
    f1: float | None = None
    runtime: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        if self.n_correct + self.n_rejected > self.n_all:
            raise ContractViolation("N_c + N_rej exceeds N_all")
        answered = self.n_all - self.n_rejected
        if self.accuracy is not None:
            # integer-exact counter identity before division
            incorrect = answered - self.n_correct
            assert self.n_correct + incorrect == answered
            assert self.trustful is not None
            assert self.trustful >= self.accuracy * answered / self.n_all - 1e-12

    def to_dict(self) -> dict:
        out: dict = {
            "task": self.task,
            "N_all": self.n_all,
            "N_c": self.n_correct,
            "N_rej": self.n_rejected,
            "N_errored": self.n_errored,
        }
        for name in (
            "accuracy", "trustful", "abstention", "recall_at_5", "precision",
            "recall_at_5_over_all", "precision_over_all", "em", "f1",
        ):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.runtime:
            out["runtime"] = self.runtime
        return out


@dataclass(frozen=True)
class ShortFormOutcome:
    abstained: bool
    correct: bool


def score_shortform(outcomes: list[ShortFormOutcome], task: str = "shortqa") -> MetricsReport:
    """Accuracy over answered examples, trustful rate, abstention rate."""
    if not outcomes:
        raise ContractViolation("score_shortform requires at least one outcome")
    n_all = len(outcomes)
    n_rej = sum(1 for o in outcomes if o.abstained)
    n_c = sum(1 for o in outcomes if not o.abstained and o.correct)
    report = MetricsReport(task=task, n_all=n_all, n_correct=n_c, n_rejected=n_rej)
    report.trustful = (n_c + n_rej) / n_all
    report.abstention = n_rej / n_all
    if n_all > n_rej:
        report.accuracy = n_c / (n_all - n_rej)
    report.validate()
    return report


def _matches(prediction: str, alias_set: tuple[str, ...]) -> bool:
    pred = normalize_answer(prediction)
    return any(pred == normalize_answer(a) for a in alias_set)


def recall_at_5(predicted: list[str], gold: tuple[tuple[str, ...], ...]) -> float:
    """Recall capped at five: full credit once five gold answers are matched."""
    if not gold:
        raise ContractViolation("recall_at_5 requires non-empty gold")
    matched = sum(1 for alias_set in gold if any(_matches(p, alias_set) for p in predicted))
    return min(matched, 5) / min(len(gold), 5)


def precision_list(predicted: list[str], gold: tuple[tuple[str, ...], ...]) -> float:
    """Fraction of predictions exactly matching some gold answer (normalized)."""
    if not predicted:
        logger.info("empty prediction list scored as precision 0.0")
        return 0.0
    matched = sum(1 for p in predicted if any(_matches(p, alias_set) for alias_set in gold))
    return matched / len(predicted)


def em_f1(prediction: str, alias_set: tuple[str, ...] | list[str]) -> tuple[int, float]:
    """Exact match and best token-level F1 against an alias-set."""
    em = int(any(normalize_answer(prediction) == normalize_answer(a) for a in alias_set))
    best_f1 = 0.0
    pred_tokens = normalize_answer(prediction).split()
    for alias in alias_set:
        gold_tokens = normalize_answer(alias).split()
        if not pred_tokens or not gold_tokens:
            best_f1 = max(best_f1, float(pred_tokens == gold_tokens))
            continue
        overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_tokens)
        recall = overlap / len(gold_tokens)
        best_f1 = max(best_f1, 2 * precision * recall / (precision + recall))
    return em, best_f1


_ANSWER_IS_RE = re.compile(r"the answer is", re.IGNORECASE)


def extract_reasoning_answer(text: str) -> str:
    """Final-answer span: text after the last "the answer is"; otherwise the
    last sentence of the response."""
    matches = list(_ANSWER_IS_RE.finditer(text))
    if matches:
        return text[matches[-1].end():].strip().strip(":").strip()
    tail, rest = "", text.strip()
    while rest:
        tail, rest = segment_first_sentence(rest)
        rest = rest.lstrip()
    return tail


def split_list_answers(text: str) -> list[str]:
    return [part.strip() for part in text.split(";") if part.strip()]


def aggregate(
    trace_records: list[dict],
    records: list[QARecord],
    task: TaskKind,
) -> MetricsReport:
    """Macro-average per-example metrics over a completed run.

    For list QA, recall/precision are averaged over answered examples with
    the all-examples denominator also reported. Errored examples count as
    answered-and-incorrect.
    """
    if not trace_records:
        raise ContractViolation("aggregate requires at least one result")
    by_id = {r.id: r for r in records}
    for result in trace_records:
        if result["id"] not in by_id:
            raise TraceError(f"trace example {result['id']!r} not present in dataset")

    n_all = len(trace_records)
    n_errored = sum(1 for r in trace_records if r.get("error"))
    abstained = [r for r in trace_records if r["status"] == "abstained"]
    answered = [r for r in trace_records if r["status"] != "abstained"]
    report = MetricsReport(task=task.value, n_all=n_all, n_rejected=len(abstained),
                           n_errored=n_errored)
    report.abstention = len(abstained) / n_all

    if task in (TaskKind.SHORT_FORM_QA, TaskKind.BIOGRAPHY):
        if task is TaskKind.SHORT_FORM_QA:
            n_c = sum(
                1 for r in answered
                if answer_included(r.get("final_text", ""), by_id[r["id"]].gold[0])
            )
            report.n_correct = n_c
            report.trustful = (n_c + len(abstained)) / n_all
            if answered:
                report.accuracy = n_c / len(answered)
    elif task is TaskKind.LIST_QA:
        recalls, precisions = [], []
        for r in answered:
            predicted = split_list_answers(r.get("answer") or r.get("final_text", ""))
            gold = by_id[r["id"]].gold
            recalls.append(recall_at_5(predicted, gold))
            precisions.append(precision_list(predicted, gold))
        if answered:
            report.recall_at_5 = sum(recalls) / len(recalls)
            report.precision = sum(precisions) / len(precisions)
        report.recall_at_5_over_all = sum(recalls) / n_all
        report.precision_over_all = sum(precisions) / n_all
    elif task is TaskKind.MULTI_HOP_REASONING:
        ems, f1s = [], []
        for r in answered:
            prediction = r.get("answer") or extract_reasoning_answer(r.get("final_text", ""))
            em, f1 = em_f1(prediction, by_id[r["id"]].gold[0])
            ems.append(em)
            f1s.append(f1)
        if answered:
            report.em = sum(ems) / len(ems)
            report.f1 = sum(f1s) / len(f1s)

    stage_totals: dict[str, float] = {}
    for r in trace_records:
        for stage, seconds in (r.get("timings") or {}).items():
            stage_totals[stage] = stage_totals.get(stage, 0.0) + seconds
    report.runtime = {stage: total / n_all for stage, total in sorted(stage_totals.items())}
    report.validate()
    return report


def format_report(report: MetricsReport) -> str:
    """Plain-text table for standard output."""
    rows = [("task", report.task)]
    for key, value in report.to_dict().items():
        if key in ("task", "runtime"):
            continue
        rows.append((key, f"{value:.4f}" if isinstance(value, float) else str(value)))
    for stage, seconds in report.runtime.items():
        rows.append((f"runtime.{stage}", f"{seconds:.3f}s"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


class FactJudge:
    """Interface point for an external long-form fact judge. Not implemented
    here; plug one in to score biography runs."""

    def score(self, topic: str, text: str) -> float | None:
        raise NotImplementedError


class NullFactJudge(FactJudge):
    """Placeholder judge: reports no score."""

    def score(self, topic: str, text: str) -> float | None:
        return None
