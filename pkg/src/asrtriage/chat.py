"""
Minimal OpenAI-compatible chat-completion client.

The networked features (LLM dialogue manager, user simulator, judge) all
speak this one wire contract: POST {model, messages, temperature} to an
endpoint, read choices[0].message.content. The API key comes from an
environment variable; retries back off exponentially. Tests inject a
transport callable instead of going over the network.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

API_KEY_ENV = "ASRTRIAGE_API_KEY"


class ChatTransportError(RuntimeError):
    pass


@dataclass
class ChatConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 1.0


class ChatClient:
    """Send one message list, return the assistant reply text."""

    def __init__(self, cfg: ChatConfig, transport=None, sleep=time.sleep):
        self.cfg = cfg
        self._transport = transport or self._http_transport
        self._sleep = sleep

    def complete(self, messages: list[dict]) -> str:
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries):
            try:
                return self._transport(messages)
            except ChatTransportError as exc:
                last_error = exc
                if attempt + 1 < self.cfg.max_retries:
                    self._sleep(self.cfg.backoff_s * 2**attempt)
        raise ChatTransportError(f"chat transport failed after {self.cfg.max_retries} attempts: {last_error}")

    def _http_transport(self, messages: list[dict]) -> str:
        import requests

        if not self.cfg.endpoint:
            raise ChatTransportError("no chat endpoint configured")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        try:
            resp = requests.post(
                self.cfg.endpoint, headers=headers, data=json.dumps(body), timeout=self.cfg.timeout_s
            )
        except requests.RequestException as exc:
            raise ChatTransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise ChatTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ChatTransportError(f"malformed completion payload: {exc}") from exc
