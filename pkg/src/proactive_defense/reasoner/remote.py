"""Chat-completions client (messages array over JSON/HTTP)."""
from __future__ import annotations

import json
import os
import re
import time
from typing import Any, Mapping, Optional

import httpx

from .base import Completion, ReasonerConfig, ReasonerError, Usage
from .schemas import schema_errors

_FENCE = re.compile(r"^\s*```(?:[\w-]*[ \t]*\n)?(.*?)\n?\s*```\s*$", re.S)


def strip_fences(text: str) -> str:
    m = _FENCE.match(text)
    return m[1] if m else text


def build_request(cfg: ReasonerConfig, role_prompt: str, payload: Mapping[str, Any],
                  schema: Mapping[str, Any]) -> dict:
    user = json.dumps({"stage": schema.get("title"), "context": payload, "response_schema": schema},
                      sort_keys=True, default=str)
    return {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "messages": [{"role": "system", "content": role_prompt}, {"role": "user", "content": user}],
    }


class RemoteReasoner:
    """One chat-completion round trip per attempt; retries on transport, parse or schema failures.

    Every attempt's reported usage is billed, including attempts whose reply
    is later rejected.
    """

    def __init__(self, cfg: ReasonerConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg.validate()
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self.billed: list[Usage] = []

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _log(self, request: dict, reply: Any, error: Optional[str]) -> None:
        if not self.cfg.transcript_path:
            return
        with open(self.cfg.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"request": request, "reply": reply, "error": error}, default=str) + "\n")

    def complete(self, role_prompt: str, payload: Mapping[str, Any], schema: Mapping[str, Any]) -> Completion:
        request = build_request(self.cfg, role_prompt, payload, schema)
        tokens_in = tokens_out = 0
        cost = latency = 0.0
        last = "no attempt made"
        for _ in range(self.cfg.retries + 1):
            start = time.perf_counter()
            try:
                resp = self._client.post(self.cfg.endpoint, json=request, headers=self._headers())
                resp.raise_for_status()
                body = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                latency += time.perf_counter() - start
                last = f"transport: {exc}"
                self._log(request, None, last)
                continue
            latency += time.perf_counter() - start
            usage = body.get("usage") or {}
            i, o = int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
            call_cost = self.cfg.cost(i, o)
            self.billed.append(Usage(i, o, 0.0, call_cost))
            tokens_in, tokens_out, cost = tokens_in + i, tokens_out + o, cost + call_cost
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                last = "reply has no choices[0].message.content"
                self._log(request, body, last)
                continue
            try:
                parsed = json.loads(strip_fences(text))
            except json.JSONDecodeError as exc:
                last = f"unparseable reply: {exc.msg}"
                self._log(request, body, last)
                continue
            errors = schema_errors(parsed, schema)
            if errors:
                last = f"schema violations: {errors[:3]}"
                self._log(request, body, last)
                continue
            self._log(request, body, None)
            return Completion(parsed, Usage(tokens_in, tokens_out, latency, cost), text)
        raise ReasonerError(f"{schema.get('title')} stage failed after {self.cfg.retries + 1} attempts: {last}")
