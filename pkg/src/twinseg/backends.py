"""HTTP chat-completion backends for remote policies and judges.

Both talk to any chat-completion-compatible endpoint. Requests retry a
bounded number of times with jittered exponential backoff; auth tokens come
from environment variables so they never land in config files.
"""

from __future__ import annotations

import os
import random
import time
from dataclasses import dataclass
from typing import Any

import requests

from .policies import BackendError, honor_stop
from .rewards import JudgeConfig, JudgeError, load_template

POLICY_TOKEN_ENV = "TWINSEG_POLICY_TOKEN"
JUDGE_TOKEN_ENV = "TWINSEG_JUDGE_TOKEN"

_DEFAULT_TIMEOUT = 60.0


@dataclass
class ChatCompletionClient:
    base_url: str
    model: str
    token_env: str
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    backoff: float = 0.5
    timeout: float = _DEFAULT_TIMEOUT
    session: Any = None

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str, stop: str | None = None) -> tuple[str, str]:
        """Returns (content, finish_reason). Raises on exhausted retries."""
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if stop:
            payload["stop"] = [stop]
        http = self.session or requests
        url = self.base_url.rstrip("/") + "/chat/completions"
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = http.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout
                )
                if response.status_code >= 500:
                    raise requests.RequestException(f"server error {response.status_code}")
                response.raise_for_status()
                body = response.json()
                choice = body["choices"][0]
                return choice["message"]["content"], choice.get("finish_reason", "")
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt) * (1.0 + random.random()))
        raise ConnectionError(f"chat completion failed after {self.retries} attempts: {last}")


class HttpPolicy:
    """Policy backend over a chat-completion endpoint with stop sequences."""

    deterministic = False

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        retries: int = 3,
        session: Any = None,
    ) -> None:
        self.name = f"http:{model}"
        self._client = ChatCompletionClient(
            base_url=base_url,
            model=model,
            token_env=POLICY_TOKEN_ENV,
            temperature=temperature,
            max_tokens=max_tokens,
            retries=retries,
            session=session,
        )

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        try:
            content, finish_reason = self._client.complete(prompt, stop=stop_at)
        except ConnectionError as exc:
            raise BackendError(str(exc)) from exc
        # APIs typically drop the stop sequence; the loop contract includes it.
        if stop_at and stop_at not in content and finish_reason == "stop":
            content += stop_at
        return honor_stop(content, stop_at)


class HttpJudge:
    """Judge backend over a chat-completion endpoint; the prompt comes from
    the versioned template named in the config."""

    def __init__(self, config: JudgeConfig, model: str = "judge", session: Any = None) -> None:
        if config.endpoint in ("", "overlap"):
            raise ValueError("HttpJudge needs an endpoint URL in the judge config")
        self.name = f"http:{config.endpoint}"
        self._template = load_template(config.template_id)
        self._client = ChatCompletionClient(
            base_url=config.endpoint,
            model=model,
            token_env=JUDGE_TOKEN_ENV,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            session=session,
        )

    def score_pair(self, student_reason: str, teacher_reason: str) -> str:
        prompt = self._template.format(student=student_reason, teacher=teacher_reason)
        try:
            content, _ = self._client.complete(prompt)
        except ConnectionError as exc:
            raise JudgeError(str(exc)) from exc
        return content
