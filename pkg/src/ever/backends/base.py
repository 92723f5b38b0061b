"""Completion backend interface.

A request carries the template id and the structured variables used to
render it, so deterministic backends dispatch on structure and never have to
parse prompt text. ``rendered`` always equals the registry render of
(template_id, vars); build requests through ``make_request`` to keep that
true.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from ..prompting import PromptRegistry


@dataclass(frozen=True)
class DecodeSettings:
    """Sampling controls. Zero temperature everywhere: single-sample results
    should be reproducible."""

    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    rendered: str
    variables: dict[str, str] = field(default_factory=dict)
    decode: DecodeSettings = DecodeSettings()


def make_request(
    registry: PromptRegistry,
    template_id: str,
    variables: dict[str, str],
    decode: DecodeSettings | None = None,
    few_shot: bool = True,
) -> CompletionRequest:
    rendered = registry.render(template_id, variables, few_shot=few_shot)
    return CompletionRequest(
        template_id=template_id,
        rendered=rendered,
        variables=dict(variables),
        decode=decode or DecodeSettings(),
    )


@runtime_checkable
class Backend(Protocol):
    """Anything that turns a completion request into continuation text."""

    deterministic: bool

    def complete(self, request: CompletionRequest) -> str:
        ...
