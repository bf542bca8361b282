"""OpenAI-compatible HTTP clients used by the remote backends."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import httpx


class BackendError(RuntimeError):
    """A backend call failed (network, HTTP status or malformed payload)."""


def _auth_headers(token_env: str | None) -> dict[str, str]:
    token = os.environ.get(token_env) if token_env else None
    return {"Authorization": f"Bearer {token}"} if token else {}


@dataclass
class ChatCompletionClient:
    endpoint: str
    model: str
    token_env: str | None = "MALRAG_LLM_TOKEN"
    timeout: float = 120.0
    temperature: float = 0.0
    client: httpx.Client | None = field(default=None, repr=False)

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        body = _post(self.client, self.endpoint, payload, _auth_headers(self.token_env), self.timeout)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected chat response shape: {exc!r}") from None


@dataclass
class EmbeddingClient:
    endpoint: str
    model: str
    token_env: str | None = "MALRAG_EMBED_TOKEN"
    timeout: float = 120.0
    client: httpx.Client | None = field(default=None, repr=False)

    def embed(self, texts: list[str]) -> list[list[float]]:
        payload = {"model": self.model, "input": texts}
        body = _post(self.client, self.endpoint, payload, _auth_headers(self.token_env), self.timeout)
        try:
            data = sorted(body["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, d["embedding"])) for d in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"unexpected embedding response shape: {exc!r}") from None


def _post(client: httpx.Client | None, url: str, payload: dict, headers: dict, timeout: float) -> dict:
    try:
        if client is not None:
            resp = client.post(url, json=payload, headers=headers, timeout=timeout)
        else:
            resp = httpx.post(url, json=payload, headers=headers, timeout=timeout)
        resp.raise_for_status()
        return resp.json()
    except httpx.HTTPError as exc:
        raise BackendError(f"POST {url} failed: {exc}") from exc
    except ValueError as exc:
        raise BackendError(f"POST {url} returned invalid JSON") from exc
