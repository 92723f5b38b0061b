"""Deterministic fact-world simulator.

The world holds a ground-truth fact table per topic. Generation emits facts
in order as templated sentences, corrupting them at configured rates:
``p_intrinsic`` swaps the value for a known-but-wrong decoy (a contradiction)
and ``p_extrinsic`` swaps in a fabricated value absent from the world (an
unverifiable claim). After a sentence whose latest form still contains an
error, both rates are multiplied by ``snowball_gain`` for the next sentence,
which is how early uncorrected errors compound.

The simulator answers every template: concept extraction returns the values
planted in the sentence, support checks are a perfect oracle over the fact
table (True when the value matches, False when it is a known value that
mismatches, NEI when the world has never heard of it), revision restores the
true value, and a rewrite drops fabricated content but, like any fresh
generation, can fabricate again at ``p_extrinsic``.

Determinism: every topic has its own RNG stream seeded from (seed, topic),
so runs are reproducible at any example parallelism. Support checks draw no
randomness at all, which keeps transcripts independent of check concurrency
within a sentence.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass, field
from random import Random

from ..errors import ContractViolation
from ..evaluation import QARecord
from ..retrieval import Corpus, Document
from .base import CompletionRequest

DEFAULT_KINDS = (
    "birth year", "birthplace", "occupation", "alma mater", "first award",
    "residence", "debut work", "main instrument", "team", "field of study",
    "mentor", "signature work",
)

# Value words chosen so no normalized value is a substring of another.
VALUE_WORDS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")

FABRICATED_WORD = "apocrypha"  # never part of any true value


@dataclass(frozen=True)
class FactSpec:
    kind: str
    value: str


@dataclass
class SimEvent:
    """Transcript entry for one sentence-producing call; the oracle record."""

    topic: str
    call: str  # generate | revise | rewrite
    sentence: str
    values: tuple[str, ...]
    intrinsic: bool
    extrinsic: bool
    erroneous: bool


@dataclass
class SimWorld:
    """Ground-truth fact table plus corruption parameters."""

    facts: dict[str, list[FactSpec]]
    p_intrinsic: float = 0.0
    p_extrinsic: float = 0.0
    snowball_gain: float = 1.0
    seed: int = 0
    values_per_kind: int = 6

    def __post_init__(self):
        for name, p in (("p_intrinsic", self.p_intrinsic), ("p_extrinsic", self.p_extrinsic)):
            if not 0.0 <= p <= 1.0:
                raise ContractViolation(f"{name} must be in [0, 1]")
        if self.snowball_gain < 1.0:
            raise ContractViolation("snowball_gain must be >= 1")
        self.vocab: dict[str, list[str]] = {}
        self.value_kind: dict[str, str] = {}
        self.topic_values: dict[tuple[str, str], set[str]] = {}
        for topic, specs in self.facts.items():
            for spec in specs:
                if spec.kind not in self.vocab:
                    values = [f"{spec.kind} {w}" for w in VALUE_WORDS[: self.values_per_kind]]
                    self.vocab[spec.kind] = values
                    for v in values:
                        self.value_kind[v] = spec.kind
                self.topic_values.setdefault((topic, spec.kind), set()).add(spec.value)
        self.transcript: list[SimEvent] = []
        self.sentence_values: dict[str, tuple[str, ...]] = {}
        # snowball state: an erroneous sentence left uncorrected stays in the
        # context, so every sentence after it generates at amplified rates
        self.context_error: dict[str, bool] = {}
        self.last_sentence_error: dict[str, bool] = {}
        self._cursor: dict[str, int] = {}
        self._fab_count: dict[str, int] = {}
        self._rngs: dict[str, Random] = {}
        self._lock = threading.Lock()

    def _rng(self, topic: str) -> Random:
        if topic not in self._rngs:
            self._rngs[topic] = Random((self.seed << 32) ^ zlib.crc32(topic.encode()))
        return self._rngs[topic]

    # -- oracle views -------------------------------------------------------

    def prior_error(self, topic: str) -> bool:
        """Whether the next sentence of a topic follows an uncorrected error."""
        return self.context_error.get(topic, False) or self.last_sentence_error.get(topic, False)

    def value_is_true(self, topic: str, value: str) -> bool:
        kind = self.value_kind.get(value) or self._fabricated_kind(value)
        return value in self.topic_values.get((topic, kind), set()) if kind else False

    def value_is_known(self, value: str) -> bool:
        return value in self.value_kind

    def _fabricated_kind(self, value: str) -> str | None:
        if FABRICATED_WORD not in value:
            return None
        return value.split(f" {FABRICATED_WORD} ")[0] or None

    def kind_of(self, value: str) -> str:
        return self.value_kind.get(value) or self._fabricated_kind(value) or "fact"

    def register_sentence(self, sentence: str, values: tuple[str, ...]) -> None:
        self.sentence_values[sentence.strip()] = values

    def sentence_is_erroneous(self, topic: str, sentence: str) -> bool:
        values = self.sentence_values.get(sentence.strip())
        if values is None:
            raise ContractViolation(f"unknown simulated sentence: {sentence!r}")
        return any(not self.value_is_true(topic, v) for v in values)

    # -- mutation -----------------------------------------------------------

    def _effective(self, p: float, prior_error: bool) -> float:
        return min(1.0, p * self.snowball_gain) if prior_error else p

    def _decoy(self, rng: Random, topic: str, kind: str) -> str:
        truths = self.topic_values[(topic, kind)]
        pool = [v for v in self.vocab[kind] if v not in truths]
        if not pool:  # everything true for this topic; cannot contradict
            return next(iter(truths))
        return pool[rng.randrange(len(pool))]

    def _fabricate(self, topic: str, kind: str) -> str:
        n = self._fab_count.get(topic, 0) + 1
        self._fab_count[topic] = n
        value = f"{kind} {FABRICATED_WORD} {zlib.crc32(topic.encode()) & 0xFFFF}-{n}"
        return value

    def _corrupt(self, rng: Random, topic: str, spec: FactSpec,
                 prior_error: bool, fresh_extrinsic_only: bool = False) -> tuple[str, bool, bool]:
        """Value for one emission plus (intrinsic, extrinsic) corruption flags.

        Both uniforms are always drawn so outcomes never shift the stream.
        Intrinsic corruption takes priority when both fire.
        """
        u_int, u_ext = rng.random(), rng.random()
        if fresh_extrinsic_only:
            if u_ext < self.p_extrinsic:
                return self._fabricate(topic, spec.kind), False, True
            return spec.value, False, False
        intrinsic = u_int < self._effective(self.p_intrinsic, prior_error)
        extrinsic = not intrinsic and u_ext < self._effective(self.p_extrinsic, prior_error)
        if intrinsic:
            return self._decoy(rng, topic, spec.kind), True, False
        if extrinsic:
            return self._fabricate(topic, spec.kind), False, True
        return spec.value, False, False


def sim_generate(world: SimWorld, topic: str, prior_error: bool) -> str | None:
    """Emit the next fact of a topic as a sentence; None once exhausted."""
    if topic not in world.facts:
        raise ContractViolation(f"unknown topic {topic!r}")
    with world._lock:
        cursor = world._cursor.get(topic, 0)
        specs = world.facts[topic]
        if cursor >= len(specs):
            return None
        world._cursor[topic] = cursor + 1
        spec = specs[cursor]
        rng = world._rng(topic)
        # the previous sentence, in whatever final form it was left, joins the
        # context now; an uncorrected error keeps amplifying from here on
        if world.last_sentence_error.get(topic, False):
            world.context_error[topic] = True
        value, intrinsic, extrinsic = world._corrupt(rng, topic, spec, prior_error)
        if cursor == len(specs) - 1 and spec.kind == "answer":
            sentence = f"So the answer is {value}."
        else:
            sentence = f"The {spec.kind} of {topic} is {value}."
        world.register_sentence(sentence, (value,))
        erroneous = intrinsic or extrinsic
        world.last_sentence_error[topic] = erroneous
        world.transcript.append(
            SimEvent(topic, "generate", sentence, (value,), intrinsic, extrinsic, erroneous)
        )
        return sentence


def _emit_list(world: SimWorld, topic: str, prior_error: bool) -> str | None:
    """List-answer emission: every remaining fact in one semicolon line."""
    with world._lock:
        cursor = world._cursor.get(topic, 0)
        specs = world.facts[topic]
        if cursor >= len(specs):
            return None
        world._cursor[topic] = len(specs)
        rng = world._rng(topic)
        if world.last_sentence_error.get(topic, False):
            world.context_error[topic] = True
        values, any_int, any_ext = [], False, False
        for spec in specs[cursor:]:
            value, intrinsic, extrinsic = world._corrupt(rng, topic, spec, prior_error)
            values.append(value)
            any_int, any_ext = any_int or intrinsic, any_ext or extrinsic
        sentence = "; ".join(values)
        world.register_sentence(sentence, tuple(values))
        erroneous = any_int or any_ext
        world.last_sentence_error[topic] = erroneous
        world.transcript.append(
            SimEvent(topic, "generate", sentence, tuple(values), any_int, any_ext, erroneous)
        )
        return sentence


class SimBackend:
    """Answers every pipeline template from the fact world."""

    deterministic = True

    def __init__(self, world: SimWorld):
        self.world = world

    def complete(self, request: CompletionRequest) -> str:
        variables = request.variables
        template_id = request.template_id
        topic = variables.get("topic", "")
        if template_id in ("qa_zero_shot_qampari", "qa_zero_shot_abstain_qampari",
                           "qa_rag_qampari", "qa_rag_abstain_qampari"):
            return _emit_list(self.world, topic, self.world.prior_error(topic)) or ""
        if template_id.startswith("qa_") or template_id in ("bio_generate", "reasoning_cot"):
            return sim_generate(self.world, topic, self.world.prior_error(topic)) or ""
        if template_id == "concept_extract":
            values = self.world.sentence_values.get(variables["sentence"].strip(), ())
            return "; ".join(values)
        if template_id == "validation_question":
            concept = variables["concept"]
            return f"Is the {self.world.kind_of(concept)} of {topic} {concept}?"
        if template_id in ("support_check_er", "support_check_sq"):
            return self._support_check(topic, variables["concept"])
        if template_id == "revise_intrinsic":
            return self._revise(topic, variables["sentence"])
        if template_id == "rewrite_extrinsic":
            return self._rewrite(topic, variables["sentence"])
        raise ContractViolation(f"simulator cannot answer template {template_id!r}")

    # -- handlers -----------------------------------------------------------

    def _support_check(self, topic: str, concept: str) -> str:
        world = self.world
        kind = world.kind_of(concept)
        if world.value_is_true(topic, concept):
            return (
                f"The record for {topic} lists {concept} as its {kind}. "
                "The claim matches the record. Therefore, the decision is True."
            )
        if world.value_is_known(concept):
            truths = world.topic_values.get((topic, kind))
            shown = sorted(truths)[0] if truths else "something else"
            return (
                f"The record shows the {kind} of {topic} is {shown}, "
                f"which contradicts {concept}. Therefore, the decision is False."
            )
        return (
            f"No record mentions {concept} in connection with {topic}. "
            "Therefore, the decision is Not Enough Information."
        )

    def _current_values(self, sentence: str) -> tuple[str, ...]:
        values = self.world.sentence_values.get(sentence.strip())
        if values is None:
            raise ContractViolation(f"simulator never produced sentence {sentence!r}")
        return values

    def _true_value_for(self, topic: str, wrong: str) -> str:
        kind = self.world.kind_of(wrong)
        truths = self.world.topic_values.get((topic, kind), set())
        return sorted(truths)[0] if truths else wrong

    def _revise(self, topic: str, sentence: str) -> str:
        """Evidence-grounded repair: contradicted values come back true."""
        world = self.world
        with world._lock:
            old_values = self._current_values(sentence)
            new_values = tuple(
                self._true_value_for(topic, v)
                if world.value_is_known(v) and not world.value_is_true(topic, v)
                else v
                for v in old_values
            )
            revised = self._replace_values(sentence, old_values, new_values)
            world.register_sentence(revised, new_values)
            erroneous = any(not world.value_is_true(topic, v) for v in new_values)
            world.last_sentence_error[topic] = erroneous
            world.transcript.append(
                SimEvent(topic, "revise", revised, new_values, False, False, erroneous)
            )
            return revised

    def _rewrite(self, topic: str, sentence: str) -> str:
        """Drops fabricated content; a single restated fact can fabricate anew."""
        world = self.world
        with world._lock:
            old_values = self._current_values(sentence)
            rng = world._rng(topic)
            if len(old_values) > 1:  # list answer: drop the unverifiable items
                new_values = tuple(v for v in old_values if world.value_is_known(v))
                rewritten = "; ".join(new_values)
                any_ext = False
            else:
                wrong = old_values[0]
                kind = world.kind_of(wrong)
                spec = FactSpec(kind, self._true_value_for(topic, wrong))
                value, _, any_ext = world._corrupt(rng, topic, spec, False,
                                                   fresh_extrinsic_only=True)
                new_values = (value,)
                rewritten = self._replace_values(sentence, old_values, new_values)
            world.register_sentence(rewritten, new_values)
            erroneous = any(not world.value_is_true(topic, v) for v in new_values)
            world.last_sentence_error[topic] = erroneous
            world.transcript.append(
                SimEvent(topic, "rewrite", rewritten, new_values, False, any_ext, erroneous)
            )
            return rewritten

    @staticmethod
    def _replace_values(sentence: str, old: tuple[str, ...], new: tuple[str, ...]) -> str:
        out = sentence
        for before, after in zip(old, new):
            out = out.replace(before, after)
        return out


# ---------------------------------------------------------------------------
# World and dataset construction
# ---------------------------------------------------------------------------


def _true_value(topic: str, kind: str, values_per_kind: int) -> str:
    word = VALUE_WORDS[zlib.crc32(f"{topic}|{kind}".encode()) % values_per_kind]
    return f"{kind} {word}"


def make_world(
    topics: list[str],
    facts_per_topic: int = 1,
    p_intrinsic: float = 0.0,
    p_extrinsic: float = 0.0,
    snowball_gain: float = 1.0,
    seed: int = 0,
    kinds: tuple[str, ...] = DEFAULT_KINDS,
    values_per_kind: int = 6,
    final_answer_fact: bool = False,
) -> SimWorld:
    """Build a world with ``facts_per_topic`` facts per topic, assigned
    deterministically from (topic, kind). ``final_answer_fact`` relabels the
    last fact of each topic as the reasoning chain's answer."""
    if facts_per_topic > len(kinds):
        raise ContractViolation("facts_per_topic exceeds the number of fact kinds")
    facts: dict[str, list[FactSpec]] = {}
    for topic in topics:
        specs = []
        for i in range(facts_per_topic):
            kind = "answer" if final_answer_fact and i == facts_per_topic - 1 else kinds[i]
            specs.append(FactSpec(kind, _true_value(topic, kind, values_per_kind)))
        facts[topic] = specs
    return SimWorld(
        facts=facts,
        p_intrinsic=p_intrinsic,
        p_extrinsic=p_extrinsic,
        snowball_gain=snowball_gain,
        seed=seed,
        values_per_kind=values_per_kind,
    )


def world_dataset(world: SimWorld, task: str) -> list[QARecord]:
    """Dataset records matching a world, one example per topic."""
    records = []
    for index, (topic, specs) in enumerate(world.facts.items()):
        if task == "listqa":
            question = f"List every known {specs[0].kind} of {topic}."
            gold = tuple((s.value,) for s in specs)
        elif task == "reasoning":
            question = f"What is the {specs[-1].kind} of {topic}?"
            gold = ((specs[-1].value,),)
        elif task == "bio":
            question = f"Tell me a bio of {topic}."
            gold = ((topic,),)
        else:
            question = f"What is the {specs[0].kind} of {topic}?"
            gold = ((specs[0].value,),)
        records.append(
            QARecord(id=f"sim-{index:05d}", question=question, gold=gold, topic=topic,
                     answer_kind="list" if task == "listqa" else "single")
        )
    return records


def world_corpus(world: SimWorld) -> Corpus:
    """One evidence document per fact, for retrieval-augmented runs."""
    documents = []
    for topic, specs in world.facts.items():
        for i, spec in enumerate(specs):
            documents.append(
                Document(
                    id=f"{topic}-{i}",
                    title=topic,
                    text=f"The {spec.kind} of {topic} is {spec.value}.",
                )
            )
    return Corpus(documents)
