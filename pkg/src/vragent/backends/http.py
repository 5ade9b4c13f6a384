"""HTTP implementations of the six backend roles.

The chat protocol is one POST endpoint per role: role-tagged messages with
inline base64 image payloads, answered by a single text completion:

    request:  {"model": ..., "temperature": ..., "max_tokens": ...,
               "messages": [{"role": "user", "content": [
                   {"type": "text", "text": ...},
                   {"type": "image", "media_type": ..., "data": <base64>,
                    "bbox": [...] | null, "label": ... | null}]}]}
    response: {"completion": "..."}

Detector, embedder and relevance scorer use equally small JSON bodies
(documented in the README). Transport failures and 5xx responses are
retried up to the configured budget with exponential backoff; anything
that still fails maps to BackendUnavailable with the cause attached.
"""

from __future__ import annotations

import base64
import mimetypes
import os
import time
from pathlib import Path
from typing import Optional

import httpx

from ..errors import BackendUnavailable, DimensionMismatch
from ..types import EntitySet, RoiRegion
from .base import ChatBackend, ChatRequest, DetectorBackend, EmbedderBackend, RelevanceBackend

__all__ = [
    "HttpClientConfig",
    "HttpChatBackend",
    "HttpDetectorBackend",
    "HttpEmbedderBackend",
    "HttpRelevanceBackend",
]

DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = 0.25
DEFAULT_TIMEOUT = 30.0


class HttpClientConfig:
    """Connection settings shared by the role clients."""

    def __init__(self, base_url: str, model: str = "", api_key_env: str = "",
                 retries: int = DEFAULT_RETRIES, backoff: float = DEFAULT_BACKOFF,
                 timeout: float = DEFAULT_TIMEOUT,
                 transport: Optional[httpx.BaseTransport] = None):
        self.base_url = base_url
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.transport = transport

    def headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["authorization"] = f"Bearer {key}"
        return headers


class _HttpRole:
    def __init__(self, cfg: HttpClientConfig):
        self._cfg = cfg
        self._client = httpx.Client(timeout=cfg.timeout, transport=cfg.transport)

    def _post(self, payload: dict) -> dict:
        """POST with bounded retries; every failure becomes BackendUnavailable."""
        cfg = self._cfg
        last_exc: Exception | None = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                time.sleep(cfg.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(cfg.base_url, json=payload, headers=cfg.headers())
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendUnavailable(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"backend rejected request: {resp.status_code} {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendUnavailable("backend reply is not JSON") from exc
        raise BackendUnavailable(f"backend unreachable after {cfg.retries} retries") from last_exc


def _image_payload(ref: str, bbox, label) -> dict:
    """Inline the image bytes when the handle is a readable file; otherwise
    pass the opaque reference through for the server to resolve."""
    path = Path(ref)
    if path.is_file():
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        data = base64.b64encode(path.read_bytes()).decode("ascii")
        return {"type": "image", "media_type": media_type, "data": data,
                "bbox": list(bbox) if bbox else None, "label": label}
    return {"type": "image_ref", "ref": ref,
            "bbox": list(bbox) if bbox else None, "label": label}


class HttpChatBackend(_HttpRole, ChatBackend):
    def complete(self, request: ChatRequest) -> str:
        messages = []
        for msg in request.messages:
            content: list[dict] = [{"type": "text", "text": msg.text}]
            for img in msg.images:
                content.append(_image_payload(img.ref, img.bbox, img.label))
            messages.append({"role": msg.role, "content": content})
        data = self._post({
            "model": self._cfg.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": messages,
        })
        completion = data.get("completion")
        if not isinstance(completion, str):
            raise BackendUnavailable("chat reply carries no text completion")
        return completion


class HttpDetectorBackend(_HttpRole, DetectorBackend):
    def detect(self, image_ref: str, entities: EntitySet) -> list[RoiRegion]:
        data = self._post({
            "model": self._cfg.model,
            "image": _image_payload(image_ref, None, None),
            "entities": list(entities.entities),
        })
        regions = data.get("regions")
        if not isinstance(regions, list):
            raise BackendUnavailable("detector reply carries no region list")
        out = []
        for item in regions:
            try:
                out.append(RoiRegion(
                    bbox=tuple(float(v) for v in item["bbox"]),
                    confidence=float(item["confidence"]),
                    label=str(item.get("label", "")),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendUnavailable(f"detector region malformed: {exc}") from exc
        return out


class HttpEmbedderBackend(_HttpRole, EmbedderBackend):
    def __init__(self, cfg: HttpClientConfig, dimension: int):
        super().__init__(cfg)
        self.dimension = dimension

    def embed(self, content: str, kind: str = "text") -> list[float]:
        if kind == "image":
            body: dict = {"model": self._cfg.model, "image": _image_payload(content, None, None)}
        else:
            body = {"model": self._cfg.model, "content": content}
        data = self._post(body)
        vec = data.get("embedding")
        if not isinstance(vec, list):
            raise BackendUnavailable("embedder reply carries no vector")
        vec = [float(v) for v in vec]
        if len(vec) != self.dimension:
            raise DimensionMismatch(
                f"embedder returned length {len(vec)}, expected {self.dimension}"
            )
        return vec


class HttpRelevanceBackend(_HttpRole, RelevanceBackend):
    def score(self, query: str, passage: str) -> float:
        data = self._post({"model": self._cfg.model, "query": query, "passage": passage})
        value = data.get("score")
        if not isinstance(value, (int, float)):
            raise BackendUnavailable("relevance reply carries no score")
        return min(1.0, max(0.0, float(value)))
