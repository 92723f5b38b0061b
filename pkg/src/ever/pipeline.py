"""The generate / validate / rectify / finalize loop.

One example runs as: draft the next sentence, extract its factual concepts,
check each concept concurrently (self-query or against retrieved evidence),
revise contradicted content or rewrite unverifiable content, revalidate up
to the round budget, then finalize by task: biographies keep flagged
sentences with a " [not sure]" warning, QA tasks abstain when the answer
itself cannot be verified, reasoning chains abstain on an unverifiable final
answer. Everything is recorded in a per-example trace.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock

from .backends.base import Backend, DecodeSettings, make_request
from .core import (
    ABSTENTION_TEXT,
    ANSWER_PATTERN,
    Concept,
    ConceptCheck,
    Flag,
    FlagDecision,
    GenerationMode,
    RectificationAction,
    RoundRecord,
    SentenceState,
    SentenceStatus,
    TaskKind,
    ValidationMode,
    annotate_not_sure,
    decide_action,
    normalize_answer,
    parse_concept_list,
    parse_flag_decision,
    segment_first_sentence,
)
from .errors import BackendError, ConfigError
from .evaluation import extract_reasoning_answer, split_list_answers
from .prompting import PromptRegistry, default_registry
from .retrieval import Document, EvidenceSource, format_evidence

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "ever-trace/1"


@dataclass
class PipelineConfig:
    """Run settings. One round of rectification is the default; more rounds
    buy little in practice."""

    task: TaskKind
    generation_mode: GenerationMode = GenerationMode.NON_RETRIEVAL
    validation_mode: ValidationMode = ValidationMode.SELF_QUERY
    max_rounds: int = 1
    k_docs: int = 5
    max_sentences: int = 15
    validation_parallelism: int = 4
    seed: int = 0
    abstain_prompting: bool = False  # baseline-only prompt variant
    zero_shot_validation_question: bool = False
    max_tokens: int = 512

    def __post_init__(self):
        if isinstance(self.task, str):
            self.task = TaskKind(self.task)
        if isinstance(self.generation_mode, str):
            self.generation_mode = GenerationMode(self.generation_mode)
        if isinstance(self.validation_mode, str):
            self.validation_mode = ValidationMode(self.validation_mode)
        for name in ("max_rounds", "k_docs", "max_sentences", "validation_parallelism"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class ExampleResult:
    id: str
    query: str
    topic: str
    task: TaskKind
    status: str = "answered"  # answered | abstained
    final_text: str = ""
    answer: str = ""
    sentences: list[SentenceState] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    backend_calls: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "id": self.id,
            "query": self.query,
            "topic": self.topic,
            "task": self.task.value,
            "status": self.status,
            "final_text": self.final_text,
            "answer": self.answer,
            "error": self.error,
            "backend_calls": self.backend_calls,
            "timings": {k: round(v, 6) for k, v in sorted(self.timings.items())},
            "sentences": [
                {
                    "text": s.text,
                    "status": s.status.value,
                    "validation_skipped": s.validation_skipped,
                    "history": [
                        {
                            "round": r.round,
                            "action": r.action.value,
                            "prior_text": r.prior_text,
                            "checks": [
                                {
                                    "concept": c.concept.surface,
                                    "index": c.concept.index,
                                    "question": c.question,
                                    "evidence": list(c.evidence),
                                    "flag": c.flag.value,
                                    "reasoning": c.decision.reasoning,
                                    "latency_ms": round(c.latency_ms, 3),
                                }
                                for c in r.checks
                            ],
                        }
                        for r in s.history
                    ],
                }
                for s in self.sentences
            ],
        }


GENERATION_TEMPLATES = {
    (TaskKind.SHORT_FORM_QA, GenerationMode.NON_RETRIEVAL, False): "qa_zero_shot_trivia",
    (TaskKind.SHORT_FORM_QA, GenerationMode.NON_RETRIEVAL, True): "qa_zero_shot_abstain_trivia",
    (TaskKind.SHORT_FORM_QA, GenerationMode.RETRIEVAL_AUGMENTED, False): "qa_rag_trivia",
    (TaskKind.SHORT_FORM_QA, GenerationMode.RETRIEVAL_AUGMENTED, True): "qa_rag_abstain_trivia",
    (TaskKind.LIST_QA, GenerationMode.NON_RETRIEVAL, False): "qa_zero_shot_qampari",
    (TaskKind.LIST_QA, GenerationMode.NON_RETRIEVAL, True): "qa_zero_shot_abstain_qampari",
    (TaskKind.LIST_QA, GenerationMode.RETRIEVAL_AUGMENTED, False): "qa_rag_qampari",
    (TaskKind.LIST_QA, GenerationMode.RETRIEVAL_AUGMENTED, True): "qa_rag_abstain_qampari",
}


def generation_template(task: TaskKind, mode: GenerationMode, abstain: bool) -> str:
    if task is TaskKind.BIOGRAPHY:
        return "bio_generate"
    if task is TaskKind.MULTI_HOP_REASONING:
        return "reasoning_cot"
    return GENERATION_TEMPLATES[(task, mode, abstain)]


@dataclass(frozen=True)
class ModeSpec:
    """What a mode string means: pipeline vs plain pass, and which modes."""

    name: str
    ever: bool
    generation_mode: GenerationMode
    validation_mode: ValidationMode
    abstain_prompting: bool = False


MODES = {
    "nrg+sq": ModeSpec("nrg+sq", True, GenerationMode.NON_RETRIEVAL, ValidationMode.SELF_QUERY),
    "nrg+er": ModeSpec("nrg+er", True, GenerationMode.NON_RETRIEVAL,
                       ValidationMode.EVIDENCE_RETRIEVAL),
    "rag+er": ModeSpec("rag+er", True, GenerationMode.RETRIEVAL_AUGMENTED,
                       ValidationMode.EVIDENCE_RETRIEVAL),
    "zero-shot": ModeSpec("zero-shot", False, GenerationMode.NON_RETRIEVAL,
                          ValidationMode.SELF_QUERY),
    "zero-shot-abstain": ModeSpec("zero-shot-abstain", False, GenerationMode.NON_RETRIEVAL,
                                  ValidationMode.SELF_QUERY, abstain_prompting=True),
    "rag": ModeSpec("rag", False, GenerationMode.RETRIEVAL_AUGMENTED,
                    ValidationMode.SELF_QUERY),
    "rag-abstain": ModeSpec("rag-abstain", False, GenerationMode.RETRIEVAL_AUGMENTED,
                            ValidationMode.SELF_QUERY, abstain_prompting=True),
}


def parse_mode(mode: str) -> ModeSpec:
    try:
        return MODES[mode]
    except KeyError:
        raise ConfigError(
            f"unknown mode {mode!r}; choose from {', '.join(sorted(MODES))}"
        ) from None


class Pipeline:
    """Runs examples against a backend and optional evidence source.

    Deterministic backends get a constant clock so repeated seeded runs
    produce byte-identical traces; live backends get the wall clock.
    """

    def __init__(
        self,
        config: PipelineConfig,
        backend: Backend,
        registry: PromptRegistry | None = None,
        evidence: EvidenceSource | None = None,
        clock=None,
    ):
        self.config = config
        self.backend = backend
        self.registry = registry or default_registry()
        self.evidence = evidence
        if clock is None:
            clock = (lambda: 0.0) if getattr(backend, "deterministic", False) else time.monotonic
        self.clock = clock
        # resolves evidence ids recorded on checks back to text for the
        # rectification prompts; idempotent writes, safe under the GIL
        self._doc_cache: dict[str, Document] = {}
        needs_retrieval = (
            config.generation_mode is GenerationMode.RETRIEVAL_AUGMENTED
            or config.validation_mode is ValidationMode.EVIDENCE_RETRIEVAL
        )
        if needs_retrieval and evidence is None:
            raise ConfigError(
                "retrieval-augmented generation and evidence-retrieval validation "
                "need a configured evidence source"
            )

    # -- plumbing -----------------------------------------------------------

    def _complete(
        self, result: ExampleResult, stage: str, template_id: str,
        variables: dict[str, str], decode: DecodeSettings | None = None,
        few_shot: bool = True,
    ) -> str:
        request = make_request(self.registry, template_id, variables,
                               decode=decode, few_shot=few_shot)
        started = self.clock()
        try:
            return self.backend.complete(request)
        finally:
            result.timings[stage] = result.timings.get(stage, 0.0) + (self.clock() - started)
            result.backend_calls += 1

    def _context_inner(self, docs: list[Document]) -> str:
        return format_evidence(docs)

    def _generation_vars(self, query: str, topic: str, so_far: str,
                         context_docs: list[Document]) -> dict[str, str]:
        template = generation_template(self.config.task, self.config.generation_mode,
                                       self.config.abstain_prompting)
        variables = {"question": query, "topic": topic, "so_far": so_far}
        if template in ("bio_generate", "reasoning_cot"):
            if self.config.generation_mode is GenerationMode.RETRIEVAL_AUGMENTED:
                variables["context"] = f"Context: {self._context_inner(context_docs)}\n"
            else:
                variables["context"] = ""
        elif "rag" in template:
            variables["context"] = self._context_inner(context_docs)
        return variables

    # -- validation ---------------------------------------------------------

    def validate_sentence(self, result: ExampleResult, sentence: str, topic: str) -> list[ConceptCheck]:
        """Extract concepts and check each one; results come back in concept
        order no matter how the concurrent checks finish."""
        extraction = self._complete(
            result, "extraction", "concept_extract",
            {"sentence": sentence, "topic": topic},
            DecodeSettings(max_tokens=256, stop=("\n",)),
        )
        concepts = parse_concept_list(extraction)
        if not concepts:
            logger.info("validation skipped (no concepts): %.60r", sentence)
            return []
        workers = min(self.config.validation_parallelism, len(concepts))
        timing_lock = Lock()

        def check_one(concept: Concept) -> ConceptCheck:
            question = self._check_question(result, sentence, topic, concept, timing_lock)
            return self._support_check(result, sentence, topic, concept, question, timing_lock)

        if workers == 1:
            return [check_one(c) for c in concepts]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(check_one, c) for c in concepts]
            return [f.result() for f in futures]

    def _timed_complete(self, result: ExampleResult, stage: str, template_id: str,
                        variables: dict[str, str], decode: DecodeSettings,
                        timing_lock: Lock, few_shot: bool = True) -> tuple[str, float]:
        request = make_request(self.registry, template_id, variables,
                               decode=decode, few_shot=few_shot)
        started = self.clock()
        try:
            response = self.backend.complete(request)
        finally:
            elapsed = self.clock() - started
            with timing_lock:
                result.timings[stage] = result.timings.get(stage, 0.0) + elapsed
                result.backend_calls += 1
        return response, elapsed

    def _check_question(self, result: ExampleResult, sentence: str, topic: str,
                        concept: Concept, timing_lock: Lock) -> str:
        response, _ = self._timed_complete(
            result, "questioning", "validation_question",
            {"sentence": sentence, "topic": topic, "concept": concept.surface},
            DecodeSettings(max_tokens=64, stop=("\n",)),
            timing_lock,
            few_shot=not self.config.zero_shot_validation_question,
        )
        return response.strip()

    def _support_check(self, result: ExampleResult, sentence: str, topic: str,
                       concept: Concept, question: str, timing_lock: Lock) -> ConceptCheck:
        evidence_docs: list[Document] = []
        if self.config.validation_mode is ValidationMode.EVIDENCE_RETRIEVAL:
            started = self.clock()
            evidence_docs = self.evidence.gather(question, sentence, self.config.k_docs)
            with timing_lock:
                result.timings["retrieval"] = (
                    result.timings.get("retrieval", 0.0) + (self.clock() - started)
                )
            for doc in evidence_docs:
                self._doc_cache[doc.id] = doc
            if not evidence_docs:
                return ConceptCheck(
                    concept=concept, question=question, evidence=(),
                    decision=FlagDecision(Flag.NEI, "no evidence retrieved"),
                )
            template_id = "support_check_er"
            variables = {
                "evidence": format_evidence(evidence_docs),
                "question": question,
                "concept": concept.surface,
                "topic": topic,
            }
        else:
            template_id = "support_check_sq"
            variables = {"question": question, "concept": concept.surface, "topic": topic}
        try:
            response, elapsed = self._timed_complete(
                result, "checking", template_id, variables,
                DecodeSettings(max_tokens=256), timing_lock,
            )
            decision = parse_flag_decision(response)
        except BackendError as exc:
            logger.warning("support check failed for %r: %s", concept.surface, exc)
            decision, elapsed = FlagDecision(Flag.NEI, "backend-failure"), 0.0
        return ConceptCheck(
            concept=concept,
            question=question,
            evidence=tuple(d.id for d in evidence_docs),
            decision=decision,
            latency_ms=elapsed * 1000.0,
        )

    # -- rectification ------------------------------------------------------

    def _rectification_inputs(self, checks: list[ConceptCheck], flags: set[Flag]) -> tuple[str, str]:
        flagged = [c for c in checks if c.flag in flags]
        feedback = "; ".join(
            f'"{c.concept.surface}" ({"contradicted by" if c.flag is Flag.FALSE else "unsupported by"} the evidence)'
            for c in flagged
        )
        doc_ids = list(dict.fromkeys(i for check in checks for i in check.evidence))
        if doc_ids:
            resolved = [self._doc_cache[i] for i in doc_ids if i in self._doc_cache]
            evidence = format_evidence(resolved) if resolved else "; ".join(doc_ids)
        else:
            # self-query mode: the checker's own reasoning is the reference
            evidence = "; ".join(c.decision.reasoning.strip() for c in flagged if c.decision.reasoning)
        return feedback, evidence or "(none)"

    def rectify(self, result: ExampleResult, state: SentenceState, topic: str) -> SentenceState:
        """Revise/rewrite and revalidate until clean, stagnant, or out of rounds."""
        rounds = 0
        stagnant_streak = 0
        action = state.history[-1].action
        while rounds < self.config.max_rounds and action is not RectificationAction.NO_ACTION:
            checks = state.history[-1].checks
            if action is RectificationAction.INTRINSIC_REVISION:
                template_id = "revise_intrinsic"
                feedback, evidence = self._rectification_inputs(list(checks), {Flag.FALSE})
            else:
                template_id = "rewrite_extrinsic"
                feedback, evidence = self._rectification_inputs(list(checks), {Flag.NEI})
            response = self._complete(
                result, "rectification", template_id,
                {"sentence": state.text, "feedback": feedback, "evidence": evidence,
                 "topic": topic},
                DecodeSettings(max_tokens=self.config.max_tokens),
            )
            new_text = response.strip()
            if new_text:
                new_text = segment_first_sentence(new_text)[0].strip()
            rounds += 1
            if not new_text:
                logger.warning("empty rectification output; stopping early")
                break
            new_checks = self.validate_sentence(result, new_text, topic)
            new_action = (
                decide_action(new_checks) if new_checks else RectificationAction.NO_ACTION
            )
            same = new_text == state.text and [c.flag for c in new_checks] == [
                c.flag for c in checks
            ]
            state.text = new_text
            state.history.append(
                RoundRecord(round=rounds, action=new_action, prior_text=new_text,
                            checks=tuple(new_checks))
            )
            action = new_action
            stagnant_streak = stagnant_streak + 1 if same else 0
            if stagnant_streak >= 2:
                logger.info("rectification stagnated; proceeding to finalize")
                break
        return state

    # -- finalization -------------------------------------------------------

    def finalize_sentence(self, state: SentenceState) -> tuple[SentenceState, bool]:
        """Resolve the sentence's terminal status. Returns (state, abstain) where
        abstain means the whole example must abstain."""
        task = self.config.task
        if state.validation_skipped or not state.history:
            state.status = SentenceStatus.ACCEPTED
            return state, False
        checks = state.history[-1].checks
        if any(c.flag is Flag.FALSE for c in checks):
            # could not repair a contradiction within budget; treat as unverifiable
            logger.info("unresolved-intrinsic after %d rounds: %.60r",
                        len(state.history) - 1, state.text)
        residual = [c for c in checks if c.flag is not Flag.TRUE]
        if not residual:
            state.status = SentenceStatus.ACCEPTED
            return state, False

        if task is TaskKind.BIOGRAPHY:
            state.text = annotate_not_sure(state.text)
            state.status = SentenceStatus.FLAGGED_NOT_SURE
            return state, False

        if task is TaskKind.MULTI_HOP_REASONING:
            if ANSWER_PATTERN.search(state.text):
                state.status = SentenceStatus.ABSTAINED
                return state, True
            state.text = annotate_not_sure(state.text)
            state.status = SentenceStatus.FLAGGED_NOT_SURE
            return state, False

        if task is TaskKind.LIST_QA:
            flagged = {normalize_answer(c.concept.surface) for c in residual}
            kept = [
                item for item in split_list_answers(state.text)
                if normalize_answer(item) not in flagged
            ]
            if not kept:
                state.status = SentenceStatus.ABSTAINED
                return state, True
            state.text = "; ".join(kept)
            state.status = SentenceStatus.ACCEPTED
            return state, False

        # short-form QA: abstain only when the flagged concept carries the answer
        bearing = self._answer_bearing_concept(state.text, checks)
        if bearing is not None and any(c.concept.index == bearing for c in residual):
            state.status = SentenceStatus.ABSTAINED
            return state, True
        state.status = SentenceStatus.ACCEPTED
        return state, False

    @staticmethod
    def _answer_bearing_concept(sentence: str, checks: tuple[ConceptCheck, ...]) -> int | None:
        """The concept carrying the answer: maximal normalized-token overlap
        with the candidate answer span (the "the answer is" tail, or the whole
        sentence for single-sentence answers)."""
        span = extract_reasoning_answer(sentence) or sentence
        span_tokens = set(normalize_answer(span).split())
        best_index, best_overlap = None, 0
        for check in checks:
            tokens = set(normalize_answer(check.concept.surface).split())
            overlap = len(tokens & span_tokens)
            if overlap > best_overlap:
                best_index, best_overlap = check.concept.index, overlap
        return best_index

    # -- example loops ------------------------------------------------------

    def run_example(self, query: str, topic: str, record_id: str = "") -> ExampleResult:
        result = ExampleResult(id=record_id, query=query, topic=topic, task=self.config.task)
        try:
            self._run_checked(result, query, topic)
        except BackendError as exc:
            result.error = str(exc)
            logger.error("example %s errored: %s", record_id, exc)
        return result

    def _retrieve_context(self, result: ExampleResult, query: str) -> list[Document]:
        if self.config.generation_mode is not GenerationMode.RETRIEVAL_AUGMENTED:
            return []
        started = self.clock()
        docs = self.evidence.gather(query, "", self.config.k_docs)
        result.timings["retrieval"] = result.timings.get("retrieval", 0.0) + (
            self.clock() - started
        )
        return docs

    def _run_checked(self, result: ExampleResult, query: str, topic: str) -> None:
        config = self.config
        context_docs = self._retrieve_context(result, query)
        abstained = False
        while len(result.sentences) < config.max_sentences:
            so_far = ""
            if result.sentences:
                so_far = " " + " ".join(s.text for s in result.sentences)
            continuation = self._complete(
                result, "generation",
                generation_template(config.task, config.generation_mode,
                                    config.abstain_prompting),
                self._generation_vars(query, topic, so_far, context_docs),
                DecodeSettings(max_tokens=config.max_tokens),
            )
            if not continuation.strip():
                break
            sentence = segment_first_sentence(continuation.strip())[0].strip()
            if not sentence:
                break

            state = SentenceState(text=sentence)
            checks = self.validate_sentence(result, sentence, topic)
            if not checks:
                state.validation_skipped = True
            else:
                state.history.append(
                    RoundRecord(round=0, action=decide_action(checks),
                                prior_text=sentence, checks=tuple(checks))
                )
                if state.history[-1].action is not RectificationAction.NO_ACTION:
                    state = self.rectify(result, state, topic)
            state, abstained = self.finalize_sentence(state)
            result.sentences.append(state)
            if abstained:
                break
            if config.task in (TaskKind.SHORT_FORM_QA, TaskKind.LIST_QA):
                break  # the answer sentence has finalized
            if config.task is TaskKind.MULTI_HOP_REASONING and ANSWER_PATTERN.search(state.text):
                break

        if abstained:
            result.status = "abstained"
            result.final_text = ABSTENTION_TEXT
            result.answer = ""
            return
        result.status = "answered"
        result.final_text = " ".join(s.text for s in result.sentences)
        result.answer = self._extract_answer(result.final_text)

    def _extract_answer(self, final_text: str) -> str:
        if self.config.task is TaskKind.MULTI_HOP_REASONING:
            return extract_reasoning_answer(final_text)
        return final_text

    def run_baseline(self, query: str, topic: str, record_id: str = "") -> ExampleResult:
        """Plain generation pass: no validation, no rectification. Abstention
        is detected from the text for the abstain-prompting variants."""
        result = ExampleResult(id=record_id, query=query, topic=topic, task=self.config.task)
        try:
            context_docs = self._retrieve_context(result, query)
            texts: list[str] = []
            while len(texts) < self.config.max_sentences:
                so_far = " " + " ".join(texts) if texts else ""
                continuation = self._complete(
                    result, "generation",
                    generation_template(self.config.task, self.config.generation_mode,
                                        self.config.abstain_prompting),
                    self._generation_vars(query, topic, so_far, context_docs),
                    DecodeSettings(max_tokens=self.config.max_tokens),
                )
                if not continuation.strip():
                    break
                sentence = segment_first_sentence(continuation.strip())[0].strip()
                if not sentence:
                    break
                texts.append(sentence)
                result.sentences.append(
                    SentenceState(text=sentence, status=SentenceStatus.ACCEPTED,
                                  validation_skipped=True)
                )
                if self.config.task in (TaskKind.SHORT_FORM_QA, TaskKind.LIST_QA):
                    break
                if (self.config.task is TaskKind.MULTI_HOP_REASONING
                        and ANSWER_PATTERN.search(sentence)):
                    break
            result.final_text = " ".join(texts)
            if self.config.abstain_prompting and _looks_like_refusal(result.final_text):
                result.status = "abstained"
                result.final_text = ABSTENTION_TEXT
                result.answer = ""
            else:
                result.status = "answered"
                result.answer = self._extract_answer(result.final_text)
        except BackendError as exc:
            result.error = str(exc)
        return result


def _looks_like_refusal(text: str) -> bool:
    normalized = normalize_answer(text)
    return "sorry i dont know" in normalized or "i dont know" in normalized
