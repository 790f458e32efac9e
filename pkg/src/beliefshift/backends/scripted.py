"""Deterministic, table-driven backend for offline runs and tests.

A *world script* describes what a video "shows" over time as a sequence of
symbols, which hypotheses a model would produce in each symbol's context, and
how plausible each hypothesis is once a given symbol is observed. The
backend answers every model call from those tables, so a full scoring run is
reproducible bit-for-bit and needs no network.

World-script JSON layout::

    {
      "world_id": "bike-fall",
      "timeline": [{"from": 0.0, "symbol": "ride"}, {"from": 4.0, "symbol": "fall"}, ...],
      "hypotheses": {"ride": ["the man keeps riding", ...], "fall": [...]},
      "nll": {"the man keeps riding": {"ride": 0.5, "fall": 5.0}},
      "yes_prob": {"the man keeps riding": {"ride": 0.95, "fall": 0.05}},
      "captions": {"ride": "a man rides a bike", "fall": "the man falls off"},
      "reference_caption": "a man rides a bike and falls off",
      "default_nll": {"match": 0.5, "mismatch": 5.0},
      "default_yes_prob": {"match": 0.95, "mismatch": 0.05}
    }

Timeline entries are left-closed: the symbol at time ``t`` is that of the last
entry with ``from <= t`` (times before the first entry take its symbol). A
symbol change therefore happens *at* a frame, so the frames just before it
still show the old symbol.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from beliefshift.backends.base import (
    Context,
    FrameRef,
    GenerationParams,
    require_text,
    truncate_to_budget,
)
from beliefshift.errors import InvalidInputError, TransportError

EMBED_DIM = 4096
_TOKEN = re.compile(r"[a-z0-9']+")
_STOPWORDS = frozenset(
    "a an the and or of to in on at is are was were be it its this that with then".split()
)


def _stable_int(*parts) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class WorldScript:
    world_id: str
    timeline: list[tuple[float, str]]
    hypotheses: dict[str, list[str]]
    nll: dict[str, dict[str, float]] = field(default_factory=dict)
    yes_prob: dict[str, dict[str, float]] = field(default_factory=dict)
    captions: dict[str, str] = field(default_factory=dict)
    reference_caption: str = ""
    default_nll: tuple[float, float] = (0.5, 5.0)
    default_yes_prob: tuple[float, float] = (0.95, 0.05)

    def __post_init__(self):
        if not self.timeline:
            raise InvalidInputError("world timeline is empty")
        self.timeline = [(float(t), str(s)) for t, s in self.timeline]
        starts = [t for t, _ in self.timeline]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidInputError("world timeline 'from' values must be strictly increasing")
        for symbol in {s for _, s in self.timeline}:
            if not self.hypotheses.get(symbol):
                raise InvalidInputError(f"no hypotheses listed for symbol {symbol!r}")
        self._pool_of = {h: sym for sym, pool in self.hypotheses.items() for h in pool}

    def symbol_at(self, t: float) -> str:
        current = self.timeline[0][1]
        for start, symbol in self.timeline:
            if start > t:
                break
            current = symbol
        return current

    def symbols(self) -> list[str]:
        """Distinct symbols in timeline order."""
        return list(dict.fromkeys(s for _, s in self.timeline))

    def nll_for(self, hypothesis: str, symbol: str) -> float:
        table = self.nll.get(hypothesis, {})
        if symbol in table:
            return float(table[symbol])
        match, mismatch = self.default_nll
        return match if self._pool_of.get(hypothesis) == symbol else mismatch

    def yes_prob_for(self, hypothesis: str, symbol: str) -> float:
        table = self.yes_prob.get(hypothesis, {})
        if symbol in table:
            return float(table[symbol])
        match, mismatch = self.default_yes_prob
        return match if self._pool_of.get(hypothesis) == symbol else mismatch

    def to_dict(self) -> dict:
        return {
            "world_id": self.world_id,
            "timeline": [{"from": t, "symbol": s} for t, s in self.timeline],
            "hypotheses": self.hypotheses,
            "nll": self.nll,
            "yes_prob": self.yes_prob,
            "captions": self.captions,
            "reference_caption": self.reference_caption,
            "default_nll": {"match": self.default_nll[0], "mismatch": self.default_nll[1]},
            "default_yes_prob": {
                "match": self.default_yes_prob[0],
                "mismatch": self.default_yes_prob[1],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldScript":
        dn = d.get("default_nll", {})
        dy = d.get("default_yes_prob", {})
        return cls(
            world_id=d.get("world_id", "world"),
            timeline=[(e["from"], e["symbol"]) for e in d["timeline"]],
            hypotheses={k: list(v) for k, v in d["hypotheses"].items()},
            nll=d.get("nll", {}),
            yes_prob=d.get("yes_prob", {}),
            captions=d.get("captions", {}),
            reference_caption=d.get("reference_caption", ""),
            default_nll=(dn.get("match", 0.5), dn.get("mismatch", 5.0)),
            default_yes_prob=(dy.get("match", 0.95), dy.get("mismatch", 0.05)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "WorldScript":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"malformed world script {path}: {exc}") from exc


class ScriptedBackend:
    """Backend that answers from a :class:`WorldScript`.

    Calls are counted per method in ``calls`` (thread-safe) so tests can check
    how many model evaluations a run costs. ``fail_observed`` lists manifest
    frame indices whose posterior-side calls raise a transport error, to
    exercise failure handling.
    """

    def __init__(self, world: WorldScript, fail_observed: Iterable[int] = ()):
        self.world = world
        self.fail_observed = frozenset(fail_observed)
        self.calls: Counter = Counter()
        self._lock = threading.Lock()

    def _count(self, name: str) -> None:
        with self._lock:
            self.calls[name] += 1

    def reset_calls(self) -> None:
        with self._lock:
            self.calls.clear()

    def context_symbol(self, ctx: Context) -> str:
        if ctx.prior_window:
            return self.world.symbol_at(ctx.prior_window[-1].timestamp)
        return self.world.timeline[0][1]

    def _observed_symbol(self, ctx: Context) -> str:
        if ctx.observed_frame is None:
            raise InvalidInputError("posterior scoring needs an observed frame")
        if ctx.observed_frame.index in self.fail_observed:
            raise TransportError(
                f"scripted failure at frame {ctx.observed_frame.index}", attempts=1
            )
        return self.world.symbol_at(ctx.observed_frame.timestamp)

    def generate_hypotheses(self, ctx: Context, params: GenerationParams) -> list[str]:
        self._count("generate")
        if ctx.observed_frame is not None:
            raise InvalidInputError("hypotheses are generated before the observed frame")
        pool = self.world.hypotheses[self.context_symbol(ctx)]
        window_key = tuple(f.index for f in ctx.prior_window)
        rng = np.random.default_rng([params.seed, _stable_int(ctx.history_text, window_key)])
        picks = rng.choice(len(pool), size=params.n, replace=params.n > len(pool))
        return [pool[i] for i in picks]

    def score_nll(self, hypothesis: str, ctx: Context) -> float:
        self._count("score")
        require_text(hypothesis, "hypothesis")
        if ctx.observed_frame is None:
            symbol = self.context_symbol(ctx)
        else:
            symbol = self._observed_symbol(ctx)
        return self.world.nll_for(hypothesis, symbol)

    def score_posterior_yes(self, hypothesis: str, ctx: Context) -> float:
        self._count("score")
        require_text(hypothesis, "hypothesis")
        return self.world.yes_prob_for(hypothesis, self._observed_symbol(ctx))

    def describe_event(self, ctx: Context) -> str:
        self._count("describe")
        symbol = self._observed_symbol(ctx)
        return self.world.captions.get(symbol, f"{symbol} happens.")

    def caption_video(self, frames: Sequence[FrameRef]) -> str:
        self._count("caption")
        ordered = sorted(frames, key=lambda f: f.timestamp)
        symbols = dict.fromkeys(self.world.symbol_at(f.timestamp) for f in ordered)
        return " ".join(self.world.captions.get(s, f"{s} happens.") for s in symbols)

    def summarize(self, text: str, word_budget: int) -> str:
        self._count("summarize")
        return truncate_to_budget(text, word_budget)

    def embed(self, text: str) -> np.ndarray:
        """Hashed bag-of-words counts; texts sharing no token are orthogonal
        unless two tokens collide in the hash."""
        self._count("embed")
        require_text(text)
        vec = np.zeros(EMBED_DIM)
        toks = tokens(text) or [text.strip()]
        for tok in toks:
            vec[_stable_int("tok", tok) % EMBED_DIM] += 1.0
        return vec

    def judge(self, reference: str, response: str) -> str:
        """Recall of the reference's content words in the response, as a 0-1 score."""
        self._count("judge")
        ref = {t for t in tokens(reference) if t not in _STOPWORDS}
        if not ref:
            return "Score: 0.00"
        got = set(tokens(response))
        return f"Score: {len(ref & got) / len(ref):.2f}"


def deviation_world(
    observed_times: Sequence[float],
    deviation_index: int,
    phases: Sequence[str] = ("routine",),
    n_continue: int = 2,
    n_alert: int = 1,
    noise: float = 0.0,
    seed: int = 0,
    world_id: str | None = None,
) -> WorldScript:
    """Build a world whose segment ``deviation_index`` shows an unexpected event.

    The other segments are split evenly, in order, across the routine
    ``phases``. Each phase's hypothesis pool holds ``n_continue`` predictions
    that the phase continues and ``n_alert`` predictions that something goes
    wrong. Routine phase changes are mildly surprising; the deviation is
    strongly surprising as long as an alert hypothesis was sampled.
    ``noise`` adds Gaussian jitter (in nats) to every NLL entry.
    """
    observed_times = [float(t) for t in observed_times]
    k = len(observed_times)
    if not 0 <= deviation_index < k:
        raise InvalidInputError(f"deviation_index {deviation_index} outside 0..{k - 1}")
    rng = np.random.default_rng(seed)
    others = [i for i in range(k) if i != deviation_index]
    per_phase = np.array_split(np.array(others), len(phases))
    symbol_of = {deviation_index: "deviation"}
    for phase, idxs in zip(phases, per_phase):
        for i in idxs:
            symbol_of[int(i)] = phase
    symbols = [symbol_of[i] for i in range(k)]

    # each symbol starts at its segment's observed frame and lasts until the next one
    first = symbols[0] if deviation_index != 0 else phases[0]
    timeline: list[tuple[float, str]] = [(0.0, first)]
    for t, s in zip(observed_times, symbols):
        if timeline[-1][1] != s:
            timeline.append((t, s))

    hypotheses: dict[str, list[str]] = {}
    kind: dict[str, str] = {}
    for phase in phases:
        pool = [f"the {phase} scene simply continues as before, variant {j + 1}" for j in range(n_continue)]
        pool += [f"during {phase} something goes wrong and someone falls, variant {j + 1}" for j in range(n_alert)]
        hypotheses[phase] = pool
        kind.update({h: "continue" for h in pool[:n_continue]})
        kind.update({h: "alert" for h in pool[n_continue:]})
    dev_pool = [f"after the accident everyone recovers slowly, variant {j + 1}" for j in range(n_continue + n_alert)]
    hypotheses["deviation"] = dev_pool
    kind.update({h: "recover" for h in dev_pool})

    all_symbols = list(phases) + ["deviation"]
    nll: dict[str, dict[str, float]] = {}
    yes: dict[str, dict[str, float]] = {}
    for sym_pool, pool in hypotheses.items():
        for h in pool:
            nll[h], yes[h] = {}, {}
            for s in all_symbols:
                if kind[h] == "continue":
                    base, y = (0.5, 0.95) if s == sym_pool else ((5.0, 0.05) if s == "deviation" else (2.0, 0.6))
                elif kind[h] == "alert":
                    base, y = (0.5, 0.95) if s == "deviation" else (3.0, 0.1)
                else:
                    base, y = (0.5, 0.9) if s == "deviation" else (2.5, 0.2)
                if noise:
                    base = max(base + rng.normal(0.0, noise), 0.0)
                nll[h][s] = float(base)
                yes[h][s] = y

    captions = {p: f"people carry on with the {p} activity." for p in phases}
    captions["deviation"] = "suddenly someone slips and falls to the ground."
    reference = " ".join(captions[s] for s in dict.fromkeys(symbols))
    return WorldScript(
        world_id=world_id or f"deviation-{deviation_index}-of-{k}",
        timeline=timeline,
        hypotheses=hypotheses,
        nll=nll,
        yes_prob=yes,
        captions=captions,
        reference_caption=reference,
    )
