"""Fixture-keyed backend for deterministic tests.

Fixtures are registered against a template id plus the variable values they
care about; a request matches when the fixture's variables are a subset of
the request's. The most specific match wins (ties go to the earliest
registration). A miss raises immediately: it is a test-configuration bug,
never something to paper over.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from ..errors import FixtureMissError
from .base import CompletionRequest


@dataclass
class _Fixture:
    template_id: str
    variables: dict[str, str]
    responses: list[str]
    order: int
    cursor: int = 0

    def matches(self, request: CompletionRequest) -> bool:
        if request.template_id != self.template_id:
            return False
        return all(request.variables.get(k) == v for k, v in self.variables.items())

    def next_response(self) -> str:
        response = self.responses[min(self.cursor, len(self.responses) - 1)]
        self.cursor += 1
        return response


@dataclass
class ScriptedBackend:
    """In-memory scripted responses with optional per-template latency."""

    latency_by_template: dict[str, float] = field(default_factory=dict)
    deterministic: bool = True

    def __post_init__(self):
        self._fixtures: list[_Fixture] = []
        self._lock = threading.Lock()
        self.calls: list[CompletionRequest] = []

    def add(
        self,
        template_id: str,
        variables: dict[str, str] | None = None,
        response: str | list[str] = "",
    ) -> "ScriptedBackend":
        responses = [response] if isinstance(response, str) else list(response)
        with self._lock:
            self._fixtures.append(
                _Fixture(template_id, dict(variables or {}), responses, len(self._fixtures))
            )
        return self

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.calls.append(request)
            candidates = [f for f in self._fixtures if f.matches(request)]
            if not candidates:
                raise FixtureMissError(
                    f"no scripted fixture for template {request.template_id!r} "
                    f"with variables {request.variables!r}"
                )
            best = max(candidates, key=lambda f: (len(f.variables), -f.order))
            response = best.next_response()
        latency = self.latency_by_template.get(request.template_id, 0.0)
        if latency:
            time.sleep(latency)
        return response

    def call_count(self, template_id: str | None = None) -> int:
        with self._lock:
            if template_id is None:
                return len(self.calls)
            return sum(1 for c in self.calls if c.template_id == template_id)
