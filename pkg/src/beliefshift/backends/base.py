"""Types shared by every model backend, plus the default prompt templates."""
from __future__ import annotations

import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Protocol, Sequence, TypeVar, runtime_checkable

from beliefshift.errors import InvalidInputError, InvalidParameterError


@dataclass(frozen=True)
class FrameRef:
    """One frame of a video: its position in the manifest, time, and location."""

    index: int
    timestamp: float
    uri: str


@dataclass(frozen=True)
class Context:
    """What the model is conditioned on at one step.

    ``observed_frame`` is None for prior-side calls (generation, prior scoring)
    and set for posterior-side calls.
    """

    history_text: str = ""
    prior_window: tuple[FrameRef, ...] = ()
    observed_frame: FrameRef | None = None

    def __post_init__(self):
        object.__setattr__(self, "prior_window", tuple(self.prior_window))

    def without_observation(self) -> "Context":
        return Context(self.history_text, self.prior_window, None)


@dataclass(frozen=True)
class GenerationParams:
    n: int = 3
    nucleus_p: float = 0.9
    max_words: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"n must be >= 1, got {self.n}")
        if not 0 < self.nucleus_p <= 1:
            raise InvalidParameterError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")
        if self.max_words < 1:
            raise InvalidParameterError(f"max_words must be >= 1, got {self.max_words}")


GENERATION_PROMPT = """\
Below is a running account of the video up to now, followed by the latest {window_size} frames.
Guess what the next frame will show.

Story so far:
{memory_text}

Recent frames: the {window_size} images attached after this text.

Reply on one line as
Hypothesis: <a guess of about ten words>"""

PRIOR_SCORE_PROMPT = """\
Story so far:
{memory_text}

Recent frames: the {window_size} images attached after this text.

Next, the video shows: {hypothesis}"""

POSTERIOR_SCORE_PROMPT = """\
Story so far:
{memory_text}

Recent frames: the {window_size} images attached after this text.
New frame: the final attached image, which comes right after them.

Claim about the new frame: {hypothesis}

Does the new frame agree with the claim? Reply with one word, yes or no."""

CAPTION_PROMPT = """\
Story so far:
{memory_text}

Recent frames: the {window_size} images attached after this text.
New frame: the final attached image, which comes right after them.

Write one sentence about what is new in the new frame."""

VIDEO_CAPTION_PROMPT = """\
The attached images come from a single video, in the order they were shot.
Write a few sentences describing what happens in it."""

SUMMARIZE_PROMPT = """\
Shorten this account of a video to {word_budget} words or fewer. Keep the events in order.

{text}"""

JUDGE_PROMPT = """\
Compare a predicted video description with a reference description.
Judge how much of the reference's meaning and event detail the prediction gets right; length does not matter.

Use a number from 0.0 to 1.0:
0.0 to 0.3 means most key details of the reference are missing,
0.4 to 0.6 means some key details are present,
0.7 to 0.9 means most key details are present,
1.0 means every key detail is present and correct.
Reply with the number only.

Reference: {gt}
Prediction: {response}

Score:"""

# placeholders each template must expose
REQUIRED_PLACEHOLDERS = {
    "generation": {"memory_text"},
    "prior_score": {"memory_text", "hypothesis"},
    "posterior_score": {"memory_text", "hypothesis"},
    "caption": {"memory_text"},
    "video_caption": set(),
    "summarize": {"text", "word_budget"},
    "judge": {"gt", "response"},
}


def placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


@dataclass(frozen=True)
class PromptTemplateSet:
    generation: str = GENERATION_PROMPT
    prior_score: str = PRIOR_SCORE_PROMPT
    posterior_score: str = POSTERIOR_SCORE_PROMPT
    caption: str = CAPTION_PROMPT
    video_caption: str = VIDEO_CAPTION_PROMPT
    summarize: str = SUMMARIZE_PROMPT
    judge: str = JUDGE_PROMPT

    def __post_init__(self):
        for f in fields(self):
            missing = REQUIRED_PLACEHOLDERS[f.name] - placeholders(getattr(self, f.name))
            if missing:
                raise InvalidParameterError(
                    f"template {f.name!r} is missing placeholders {sorted(missing)}"
                )

    def render(self, name: str, **values) -> str:
        template = getattr(self, name)
        needed = placeholders(template)
        return template.format(**{k: v for k, v in values.items() if k in needed})


@runtime_checkable
class Backend(Protocol):
    """Everything the engine asks of a generative / scoring model."""

    def generate_hypotheses(self, ctx: Context, params: GenerationParams) -> list[str]: ...

    def score_nll(self, hypothesis: str, ctx: Context) -> float: ...

    def score_posterior_yes(self, hypothesis: str, ctx: Context) -> float: ...

    def describe_event(self, ctx: Context) -> str: ...

    def caption_video(self, frames: Sequence[FrameRef]) -> str: ...

    def summarize(self, text: str, word_budget: int) -> str: ...

    def embed(self, text: str): ...

    def judge(self, reference: str, response: str) -> str: ...


_WORD = re.compile(r"\S+")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def count_words(text: str) -> int:
    return len(_WORD.findall(text))


def truncate_to_budget(text: str, word_budget: int) -> str:
    """Drop the oldest sentences until ``text`` fits in ``word_budget`` words.

    When the newest sentence alone is over budget its trailing words are kept.
    """
    if word_budget < 0:
        raise InvalidParameterError(f"word_budget must be >= 0, got {word_budget}")
    text = text.strip()
    if count_words(text) <= word_budget:
        return text
    sentences = [s for s in _SENTENCE_END.split(text) if s.strip()]
    kept: list[str] = []
    used = 0
    for sentence in reversed(sentences):
        n = count_words(sentence)
        if used + n > word_budget:
            break
        kept.append(sentence)
        used += n
    if kept:
        return " ".join(reversed(kept))
    words = text.split()
    return " ".join(words[len(words) - word_budget:]) if word_budget else ""


def require_text(text: str, name: str = "text") -> str:
    if not isinstance(text, str) or not text.strip():
        raise InvalidInputError(f"{name} must be nonempty text")
    return text


T = TypeVar("T")
R = TypeVar("R")


def map_bounded(fn: Callable[[T], R], items: Iterable[T], max_in_flight: int = 1) -> list[R]:
    """Order-preserving map with at most ``max_in_flight`` concurrent calls."""
    items = list(items)
    if max_in_flight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(max_in_flight, len(items))) as pool:
        return list(pool.map(fn, items))
