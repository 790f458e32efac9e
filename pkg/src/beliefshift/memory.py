"""Rolling narrative of what has happened so far in the video."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from beliefshift.backends.base import Backend, Context, count_words, truncate_to_budget
from beliefshift.errors import InvalidInputError, InvalidParameterError

DEFAULT_WORD_BUDGET = 200

Summarizer = Callable[[str, int], str]


@dataclass(frozen=True)
class RollingMemory:
    text: str = ""
    word_budget: int = DEFAULT_WORD_BUDGET
    step_count: int = 0

    def __post_init__(self):
        if self.word_budget < 1:
            raise InvalidParameterError(f"word_budget must be >= 1, got {self.word_budget}")

    @property
    def word_count(self) -> int:
        return count_words(self.text)


def describe_event(ctx: Context, backend: Backend) -> str:
    """Ask the backend for a one-line caption of the newly observed frame."""
    if ctx.observed_frame is None:
        raise InvalidInputError("describe_event needs an observed frame")
    return backend.describe_event(ctx).strip()


def append_and_compress(
    mem: RollingMemory, caption: str, summarize: Summarizer | None = None
) -> RollingMemory:
    """Append ``caption`` and compress back under the word budget.

    ``summarize`` is typically ``backend.summarize``. Whatever it returns is
    truncated again if it overshoots, so the budget always holds.
    """
    caption = caption.strip()
    text = f"{mem.text} {caption}".strip() if caption else mem.text
    if count_words(text) > mem.word_budget:
        if summarize is not None:
            text = summarize(text, mem.word_budget)
        text = truncate_to_budget(text, mem.word_budget)
    return replace(mem, text=text, step_count=mem.step_count + 1)
