"""Client for chat-completion style HTTP services."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import httpx

from ..errors import BackendError
from .base import CompletionRequest

logger = logging.getLogger(__name__)


@dataclass
class WireSettings:
    """Endpoint configuration; the credential always comes from the environment."""

    base_url: str = ""
    model: str = ""
    api_key_env: str = "EVER_API_KEY"
    base_url_env: str = "EVER_BASE_URL"
    model_env: str = "EVER_MODEL"
    timeout_s: float = 60.0
    retries: int = 3
    backoff_s: float = 1.0

    def resolve(self) -> tuple[str, str, str]:
        base_url = self.base_url or os.environ.get(self.base_url_env, "")
        model = self.model or os.environ.get(self.model_env, "")
        api_key = os.environ.get(self.api_key_env, "")
        if not base_url or not model:
            raise BackendError(
                f"wire backend needs a base URL and model; set {self.base_url_env} "
                f"and {self.model_env} or pass them in the config"
            )
        return base_url, model, api_key


class ChatCompletionClient:
    """Sends the rendered prompt as a single user message and returns the
    assistant text. Transport failures retry with exponential backoff and
    then surface as a hard backend error."""

    deterministic = False

    def __init__(self, settings: WireSettings | None = None, transport=None):
        self.settings = settings or WireSettings()
        self._client = httpx.Client(timeout=self.settings.timeout_s, transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: CompletionRequest) -> str:
        base_url, model, api_key = self.settings.resolve()
        body = {
            "model": model,
            "messages": [{"role": "user", "content": request.rendered}],
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
        }
        if request.decode.stop:
            body["stop"] = list(request.decode.stop)
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = base_url.rstrip("/") + "/chat/completions"

        last_error: Exception | None = None
        for attempt in range(self.settings.retries):
            try:
                response = self._client.post(url, json=body, headers=headers)
                if response.status_code >= 500 or response.status_code == 429:
                    raise httpx.HTTPStatusError(
                        f"status {response.status_code}", request=response.request,
                        response=response,
                    )
                if response.status_code >= 400:
                    raise BackendError(
                        f"completion request rejected ({response.status_code}): "
                        f"{response.text[:200]}"
                    )
                payload = response.json()
                return payload["choices"][0]["message"]["content"]
            except BackendError:
                raise
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.settings.retries:
                    delay = self.settings.backoff_s * 2**attempt
                    logger.warning("backend attempt %d failed (%s); retrying in %.1fs",
                                   attempt + 1, exc, delay)
                    time.sleep(delay)
        raise BackendError(
            f"completion failed after {self.settings.retries} attempts: {last_error}"
        )
