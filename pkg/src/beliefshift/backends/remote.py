"""Backend speaking a chat-completions style JSON protocol over HTTP.

Frames are attached as ``image_url`` content parts, in prompt order: the text
prompt (history included), then the prior-window images, then the observed
image. Local file paths are inlined as base64 data URLs; anything with a URI
scheme (``http://``, ``data:``, ...) is passed through.

Scoring relies on per-token log-probabilities:

* ``score_nll`` sends the hypothesis as a final assistant message with
  ``echo`` and ``logprobs`` set, and expects ``choices[0].logprobs.content`` to
  list exactly the tokens of that message. The NLL is minus their sum.
* ``score_posterior_yes`` asks for one token with ``top_logprobs`` and adds
  up the probability of every candidate spelling "yes".

Servers that do not return log-probabilities raise :class:`CapabilityError`.
"""
from __future__ import annotations

import base64
import logging
import math
import mimetypes
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from beliefshift.backends.base import (
    Context,
    FrameRef,
    GenerationParams,
    PromptTemplateSet,
    count_words,
    require_text,
    truncate_to_budget,
)
from beliefshift.errors import CapabilityError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

_HYPOTHESIS_PREFIX = re.compile(r"^\s*hypothesis\s*:\s*", re.IGNORECASE)
_RETRY_STATUS = {408, 425, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    model: str
    token_env: str = "BELIEFSHIFT_API_KEY"
    timeout: float = 60.0
    retries: int = 2
    backoff: float = 0.5
    embedding_model: str | None = None
    top_logprobs: int = 10

    @classmethod
    def from_dict(cls, d: dict) -> "RemoteConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def image_part(ref: str) -> dict:
    if "://" in ref or ref.startswith("data:"):
        url = ref
    else:
        path = Path(ref)
        mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
        url = f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": url}}


def nll_from_payload(payload: dict) -> float:
    """Minus the summed token log-probabilities reported in a completion payload."""
    try:
        content = payload["choices"][0]["logprobs"]["content"]
    except (KeyError, IndexError, TypeError):
        raise CapabilityError("response carries no token log-probabilities") from None
    if not content:
        raise CapabilityError("response carries an empty log-probability list")
    try:
        return -math.fsum(float(tok["logprob"]) for tok in content)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed logprob entry: {exc}") from exc


def yes_prob_from_payload(payload: dict) -> float:
    try:
        first = payload["choices"][0]["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError):
        raise CapabilityError("response carries no token log-probabilities") from None
    candidates = first.get("top_logprobs") or [first]
    seen: dict[str, float] = {}
    for cand in candidates:
        try:
            seen.setdefault(cand["token"], float(cand["logprob"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed top_logprobs entry: {exc}") from exc
    p = sum(math.exp(lp) for tok, lp in seen.items() if tok.strip().lower() == "yes")
    return min(max(p, 0.0), 1.0)


class RemoteBackend:
    def __init__(
        self,
        config: RemoteConfig,
        templates: PromptTemplateSet | None = None,
        window_size: int = 4,
        client: httpx.Client | None = None,
    ):
        self.config = config
        self.templates = templates or PromptTemplateSet()
        self.window_size = window_size
        headers = {}
        token = os.environ.get(config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=config.timeout)
        self._headers = headers

    def close(self) -> None:
        self._client.close()

    def _post(self, route: str, body: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + route
        attempts = self.config.retries + 1
        last_status = None
        for attempt in range(1, attempts + 1):
            try:
                resp = self._client.post(
                    url, json=body, headers=self._headers, timeout=self.config.timeout
                )
            except httpx.HTTPError as exc:
                err = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProtocolError(f"non-JSON response from {url}") from exc
                last_status = resp.status_code
                err = f"HTTP {resp.status_code}"
                if resp.status_code not in _RETRY_STATUS:
                    raise TransportError(
                        f"{url} failed: {err}", attempts=attempt, status_code=last_status
                    )
            if attempt < attempts:
                delay = self.config.backoff * 2 ** (attempt - 1)
                logger.warning("%s failed (%s), retry %d/%d in %.1fs", url, err, attempt, attempts - 1, delay)
                time.sleep(delay)
        raise TransportError(f"{url} failed after {attempts} attempts: {err}", attempts=attempts, status_code=last_status)

    def _messages(self, prompt: str, ctx: Context | None = None, frames: Sequence[FrameRef] = ()) -> list[dict]:
        parts: list[dict] = [{"type": "text", "text": prompt}]
        if ctx is not None:
            parts += [image_part(f.uri) for f in ctx.prior_window]
            if ctx.observed_frame is not None:
                parts.append(image_part(ctx.observed_frame.uri))
        parts += [image_part(f.uri) for f in frames]
        return [{"role": "user", "content": parts}]

    def _chat(self, messages: list[dict], **extra) -> dict:
        return self._post("/chat/completions", {"model": self.config.model, "messages": messages, **extra})

    @staticmethod
    def _text(payload: dict, i: int = 0) -> str:
        try:
            return payload["choices"][i]["message"]["content"].strip()
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise ProtocolError(f"response has no message text at choice {i}") from exc

    def _render(self, name: str, ctx: Context, **values) -> str:
        return self.templates.render(
            name, memory_text=ctx.history_text, window_size=len(ctx.prior_window) or self.window_size, **values
        )

    def generate_hypotheses(self, ctx: Context, params: GenerationParams) -> list[str]:
        prompt = self._render("generation", ctx.without_observation())
        payload = self._chat(
            self._messages(prompt, ctx.without_observation()),
            n=params.n,
            top_p=params.nucleus_p,
            temperature=1.0,
            seed=params.seed,
            max_tokens=4 * params.max_words + 16,
        )
        choices = payload.get("choices") or []
        if len(choices) != params.n:
            raise ProtocolError(f"asked for {params.n} hypotheses, got {len(choices)}")
        out = [_HYPOTHESIS_PREFIX.sub("", self._text(payload, i)).strip() for i in range(params.n)]
        if any(not h for h in out):
            raise ProtocolError("backend returned an empty hypothesis")
        return out

    def score_nll(self, hypothesis: str, ctx: Context) -> float:
        require_text(hypothesis, "hypothesis")
        # same continuation prompt on both sides; the posterior adds the observed image
        prompt = self._render("prior_score", ctx, hypothesis="").rstrip()
        messages = self._messages(prompt, ctx)
        messages.append({"role": "assistant", "content": hypothesis})
        payload = self._chat(messages, max_tokens=1, echo=True, logprobs=True, temperature=0.0)
        return nll_from_payload(payload)

    def score_posterior_yes(self, hypothesis: str, ctx: Context) -> float:
        require_text(hypothesis, "hypothesis")
        prompt = self._render("posterior_score", ctx, hypothesis=hypothesis)
        payload = self._chat(
            self._messages(prompt, ctx),
            max_tokens=1,
            logprobs=True,
            top_logprobs=self.config.top_logprobs,
            temperature=0.0,
        )
        return yes_prob_from_payload(payload)

    def describe_event(self, ctx: Context) -> str:
        payload = self._chat(self._messages(self._render("caption", ctx), ctx), temperature=0.0, max_tokens=80)
        return self._text(payload)

    def caption_video(self, frames: Sequence[FrameRef]) -> str:
        prompt = self.templates.render("video_caption")
        payload = self._chat(self._messages(prompt, frames=frames), temperature=0.0, max_tokens=256)
        return self._text(payload)

    def summarize(self, text: str, word_budget: int) -> str:
        if count_words(text) <= word_budget:
            return text.strip()
        prompt = self.templates.render("summarize", text=text, word_budget=word_budget)
        try:
            out = self._text(self._chat(self._messages(prompt), temperature=0.0, max_tokens=2 * word_budget + 32))
        except (TransportError, ProtocolError) as exc:
            logger.warning("summarization failed (%s); truncating instead", exc)
            out = text
        return truncate_to_budget(out, word_budget)

    def embed(self, text: str) -> np.ndarray:
        require_text(text)
        model = self.config.embedding_model or self.config.model
        payload = self._post("/embeddings", {"model": model, "input": text})
        try:
            vec = np.asarray(payload["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embedding response: {exc}") from exc
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ProtocolError("embedding is not a finite vector")
        return vec

    def judge(self, reference: str, response: str) -> str:
        prompt = self.templates.render("judge", gt=reference, response=response)
        return self._text(self._chat(self._messages(prompt), temperature=0.0, max_tokens=8))
