"""Generic chat-completion client used by corpus enrichment.

Any OpenAI-style ``/chat/completions`` endpoint works; the concrete model is
deployment configuration, not code.  With ``fixture_dir`` set the client
replays recorded responses keyed by a request hash and performs no network
I/O at all.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests


class LlmError(RuntimeError):
    pass


class FixtureMissingError(LlmError):
    """Replay mode was asked for a request that has no recorded response."""


@dataclass
class LlmEndpointConfig:
    base_url: str = ""
    model_name: str = ""
    api_key_env_var: str = "NEWSRECON_LLM_API_KEY"
    temperature: float = 0.0
    timeout_s: float = 60.0
    fixture_dir: Path | str | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)


class ChatClient:
    """Single-turn completion with deterministic request hashing."""

    def __init__(self, config: LlmEndpointConfig, transport: Callable | None = None):
        self.config = config
        self._post = transport or requests.post

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }

    def request_key(self, prompt: str) -> str:
        canonical = json.dumps(
            self.request_body(prompt), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def complete(self, prompt: str) -> str:
        if self.config.fixture_dir is not None:
            return self._replay(prompt)
        return self._call(prompt)

    def _replay(self, prompt: str) -> str:
        key = self.request_key(prompt)
        path = Path(self.config.fixture_dir) / f"{key}.json"
        if not path.exists():
            raise FixtureMissingError(
                f"no recorded response for request hash {key[:12]}… in {self.config.fixture_dir}"
            )
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)["content"]

    def record_fixture(self, prompt: str, content: str) -> Path:
        """Write a replayable fixture for this prompt; returns its path."""
        if self.config.fixture_dir is None:
            raise ValueError("fixture_dir not configured")
        directory = Path(self.config.fixture_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.request_key(prompt)}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"content": content}, fh, ensure_ascii=False)
        return path

    def _call(self, prompt: str) -> str:
        headers = {}
        api_key = os.environ.get(self.config.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self._post(
                self.config.base_url.rstrip("/") + "/chat/completions",
                json=self.request_body(prompt),
                headers=headers,
                timeout=self.config.timeout_s,
            )
        except requests.exceptions.RequestException as exc:
            raise LlmError(f"chat completion failed: {exc}") from exc
        if response.status_code != 200:
            raise LlmError(f"chat completion returned HTTP {response.status_code}")
        body = response.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LlmError(f"malformed completion response: {exc}") from exc
