"""Domain types and pure text operations for the verification pipeline.

Everything in this module is immutable values and pure functions: no model
calls, no I/O, no retrieval. Safe for concurrent use.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ContractViolation

logger = logging.getLogger(__name__)


class Flag(str, Enum):
    """Outcome of one support check. NEI marks unverifiable content."""

    TRUE = "True"
    FALSE = "False"
    NEI = "NEI"


class GenerationMode(str, Enum):
    NON_RETRIEVAL = "nrg"
    RETRIEVAL_AUGMENTED = "rag"


class ValidationMode(str, Enum):
    SELF_QUERY = "sq"
    EVIDENCE_RETRIEVAL = "er"


class TaskKind(str, Enum):
    SHORT_FORM_QA = "shortqa"
    LIST_QA = "listqa"
    BIOGRAPHY = "bio"
    MULTI_HOP_REASONING = "reasoning"


class RectificationAction(str, Enum):
    NO_ACTION = "none"
    INTRINSIC_REVISION = "revise"
    EXTRINSIC_REWRITE = "rewrite"


class SentenceStatus(str, Enum):
    ACCEPTED = "accepted"
    FLAGGED_NOT_SURE = "flagged_not_sure"
    ABSTAINED = "abstained"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class Concept:
    """One extracted concept: the verbatim surface span and its 0-based ordinal."""

    surface: str
    index: int


@dataclass(frozen=True)
class FlagDecision:
    flag: Flag
    reasoning: str = ""


@dataclass(frozen=True)
class ConceptCheck:
    """A validated concept: its yes/no question, evidence doc ids, and decision.

    ``evidence`` is empty in self-query mode. In evidence-retrieval mode it is
    empty only when retrieval returned nothing, in which case ``flag`` is NEI.
    """

    concept: Concept
    question: str
    evidence: tuple[str, ...]
    decision: FlagDecision
    latency_ms: float = 0.0

    @property
    def flag(self) -> Flag:
        return self.decision.flag


@dataclass(frozen=True)
class RoundRecord:
    """One validation round: the text it saw, its checks, and the action taken."""

    round: int
    action: RectificationAction
    prior_text: str
    checks: tuple[ConceptCheck, ...]


@dataclass
class SentenceState:
    """A sentence travelling through validate/rectify/finalize."""

    text: str
    history: list[RoundRecord] = field(default_factory=list)
    status: SentenceStatus = SentenceStatus.UNRESOLVED
    validation_skipped: bool = False

    @property
    def last_checks(self) -> tuple[ConceptCheck, ...]:
        return self.history[-1].checks if self.history else ()

    def residual_flags(self) -> list[Flag]:
        return [c.flag for c in self.last_checks if c.flag is not Flag.TRUE]


NOT_SURE_MARKER = " [not sure]"

ABSTENTION_TEXT = "Sorry, I don't know"

# Reasoning-chain convention for the sentence that carries the final answer.
ANSWER_PATTERN = re.compile(r"the answer is", re.IGNORECASE)


def decide_action(checks: list[ConceptCheck] | tuple[ConceptCheck, ...]) -> RectificationAction:
    """Map a sentence's check flags to the rectification category.

    All True -> no action. Any False -> intrinsic revision (takes precedence
    over NEI; the NEI concepts are re-examined on revalidation). Otherwise
    some NEI -> extrinsic rewrite.
    """
    if not checks:
        raise ContractViolation("decide_action requires at least one check")
    flags = {c.flag for c in checks}
    if flags == {Flag.TRUE}:
        return RectificationAction.NO_ACTION
    if Flag.FALSE in flags:
        return RectificationAction.INTRINSIC_REVISION
    return RectificationAction.EXTRINSIC_REWRITE


_DECISION_TOKENS = (
    ("not enough information", Flag.NEI),
    ("true", Flag.TRUE),
    ("false", Flag.FALSE),
)


def parse_flag_decision(response: str) -> FlagDecision:
    """Pull the flag out of a support-check response.

    The flag is the last case-insensitive occurrence of "true", "false" or
    "not enough information"; everything before it is kept as the reasoning.
    A response with no decision token falls back to NEI (unverifiable content
    must never pass as supported) and the whole response becomes the reasoning.
    """
    lowered = response.lower()
    best_pos, best_flag = -1, None
    for token, flag in _DECISION_TOKENS:
        pos = lowered.rfind(token)
        if pos > best_pos:
            best_pos, best_flag = pos, flag
    if best_flag is None:
        logger.info("flag parse fallback to NEI: %.80r", response)
        return FlagDecision(flag=Flag.NEI, reasoning=response)
    return FlagDecision(flag=best_flag, reasoning=response[:best_pos])


def format_flag(flag: Flag) -> str:
    """The wording the decision sentence uses for each flag."""
    return "Not Enough Information" if flag is Flag.NEI else flag.value


def parse_concept_list(response: str) -> list[Concept]:
    """Parse a semicolon-separated concept list.

    Surfaces are trimmed, empties dropped, and duplicates removed
    case-sensitively keeping the first occurrence. An empty result means the
    sentence had nothing checkable; callers accept it unvalidated.
    """
    seen: set[str] = set()
    concepts: list[Concept] = []
    for part in response.split(";"):
        surface = part.strip()
        if not surface or surface in seen:
            continue
        seen.add(surface)
        concepts.append(Concept(surface=surface, index=len(concepts)))
    if not concepts:
        logger.info("no concepts extracted; sentence will be accepted unchecked")
    return concepts


# Dotted abbreviations whose trailing period does not end a sentence.
_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc",
    "e.g", "i.e", "cf", "al", "inc", "ltd", "co", "corp", "fig", "approx",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct",
    "nov", "dec", "a.m", "p.m", "u.s", "u.k",
}
# Only abbreviations when capitalized ("No. 5" vs "I said no.").
_ABBREVIATIONS_CASED = {"No"}

# Initials and letter chains: "A", "J.R", "U.S". The pronoun "I" is excluded
# so "So did I." still terminates.
_INITIALS_RE = re.compile(r"(?:[A-Za-z]\.)*[A-Za-z]")

_CLOSERS = "\"')]}’”"


def _is_abbreviation(text: str, dot: int) -> bool:
    start = dot
    while start > 0 and (text[start - 1].isalpha() or text[start - 1] == "."):
        start -= 1
    word = text[start:dot]
    if not word:
        return False
    if start > 0 and text[start - 1].isdigit():
        return False  # ordinal suffix: "1st.", "2nd."
    if word != "I" and _INITIALS_RE.fullmatch(word) and len(word.replace(".", "")) <= 3:
        return True
    return word in _ABBREVIATIONS_CASED or word.lower() in _ABBREVIATIONS


def segment_first_sentence(text: str) -> tuple[str, str]:
    """Split off the first sentence; returns (sentence, remainder).

    The sentence ends at the first . ! or ? that is not part of an
    abbreviation, an initial, or a number, and that is followed by
    end-of-text, whitespace, or a closing quote/bracket (which is absorbed
    into the sentence). Without such a terminator the whole text is one
    sentence. Concatenating the two parts always reproduces the input.
    """
    if not text:
        raise ContractViolation("segment_first_sentence requires non-empty text")
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch not in ".!?":
            i += 1
            continue
        # absorb a run of terminal punctuation ("?!", "...")
        end = i
        while end + 1 < n and text[end + 1] in ".!?":
            end += 1
        follower = text[end + 1] if end + 1 < n else ""
        if follower and not follower.isspace() and follower not in _CLOSERS:
            i = end + 1
            continue
        if ch == "." and end == i:
            prev = text[i - 1] if i > 0 else ""
            nxt = text[i + 1] if i + 1 < n else ""
            if prev.isdigit() and nxt.isdigit():
                i += 1
                continue  # decimal or date number
            if _is_abbreviation(text, i):
                i += 1
                continue
        while end + 1 < n and text[end + 1] in _CLOSERS:
            end += 1
        return text[: end + 1], text[end + 1 :]
    return text, ""


_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_RE = re.compile(r"[^\w\s]|_")


def normalize_answer(text: str) -> str:
    """Normalize for answer matching: lowercase, drop punctuation and the
    articles a/an/the, collapse whitespace. The usual open-domain QA rule."""
    text = text.lower()
    text = _PUNCT_RE.sub("", text)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def annotate_not_sure(sentence: str) -> str:
    """Append the exact user-visible warning suffix; idempotent."""
    if sentence.endswith(NOT_SURE_MARKER):
        return sentence
    return sentence + NOT_SURE_MARKER


def strip_not_sure(sentence: str) -> str:
    if sentence.endswith(NOT_SURE_MARKER):
        return sentence[: -len(NOT_SURE_MARKER)]
    return sentence
