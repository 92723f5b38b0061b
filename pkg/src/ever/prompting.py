"""Prompt template registry.

Templates live as plain text files in a ``prompts/`` directory (the copy
shipped inside the package by default), one file per id. The file contents
are the source of truth: the instruction wording and every few-shot exemplar
are reproduced in tests byte for byte, so edit them with care.

Placeholders are ``{name}`` slots. Generation templates end with a
``{so_far}`` slot that carries the text accepted so far (empty first time),
which keeps the whole prompt reconstructible from the structured variables.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import RegistryError, RenderError

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

TEMPLATE_IDS = (
    "qa_zero_shot_trivia",
    "qa_zero_shot_abstain_trivia",
    "qa_rag_trivia",
    "qa_rag_abstain_trivia",
    "qa_zero_shot_qampari",
    "qa_zero_shot_abstain_qampari",
    "qa_rag_qampari",
    "qa_rag_abstain_qampari",
    "bio_generate",
    "reasoning_cot",
    "concept_extract",
    "validation_question",
    "support_check_er",
    "support_check_sq",
    "revise_intrinsic",
    "rewrite_extrinsic",
)


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_vars: frozenset[str]

    def render(self, variables: dict[str, str], few_shot: bool = True) -> str:
        """Substitute placeholders; extra variables are ignored.

        ``few_shot=False`` drops the exemplar blocks and renders only the
        final block (the zero-shot form used for stronger backends).
        """
        body = self.body if few_shot else self.body.split("\n\n")[-1]

        def repl(match: re.Match[str]) -> str:
            name = match.group(1)
            if name not in variables:
                raise RenderError(self.id, name)
            return variables[name]

        return _PLACEHOLDER_RE.sub(repl, body)


class PromptRegistry:
    """Immutable id -> template map; the pipeline may only use listed ids."""

    def __init__(self, templates: dict[str, PromptTemplate]):
        missing = set(TEMPLATE_IDS) - set(templates)
        if missing:
            raise RegistryError(f"missing templates: {sorted(missing)}")
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptRegistry":
        """Load every known template from a directory (default: packaged copy)."""
        templates: dict[str, PromptTemplate] = {}
        for template_id in TEMPLATE_IDS:
            if directory is None:
                ref = resources.files("ever.prompts").joinpath(f"{template_id}.txt")
                body = ref.read_text(encoding="utf-8")
            else:
                body = (Path(directory) / f"{template_id}.txt").read_text(encoding="utf-8")
            required = frozenset(_PLACEHOLDER_RE.findall(body))
            templates[template_id] = PromptTemplate(template_id, body, required)
        return cls(templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def revision(self) -> str:
        """Content hash over every template, recorded in run manifests."""
        digest = hashlib.sha256()
        for template_id in sorted(self._templates):
            digest.update(template_id.encode("utf-8"))
            digest.update(b"\0")
            digest.update(self._templates[template_id].body.encode("utf-8"))
            digest.update(b"\0")
        return digest.hexdigest()

    def ids(self) -> tuple[str, ...]:
        return tuple(self._templates)

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise RegistryError(f"unknown template id {template_id!r}") from None

    def render(self, template_id: str, variables: dict[str, str], few_shot: bool = True) -> str:
        return self.get(template_id).render(variables, few_shot=few_shot)


_default_registry: PromptRegistry | None = None


def default_registry() -> PromptRegistry:
    """The packaged templates, loaded once."""
    global _default_registry
    if _default_registry is None:
        _default_registry = PromptRegistry.load()
    return _default_registry
