import json
import math

import httpx
import numpy as np
import pytest

from beliefshift.backends import (
    Context,
    FrameRef,
    GenerationParams,
    PromptTemplateSet,
    RemoteBackend,
    RemoteConfig,
    ScriptedBackend,
    WorldScript,
    deviation_world,
)
from beliefshift.backends.base import map_bounded, truncate_to_budget
from beliefshift.backends.remote import image_part, nll_from_payload, yes_prob_from_payload
from beliefshift.errors import (
    CapabilityError,
    InvalidInputError,
    InvalidParameterError,
    ProtocolError,
    TransportError,
)


def frame(i, t=None):
    return FrameRef(i, float(i if t is None else t), f"https://img.test/{i}.jpg")


TOY = WorldScript(
    "toy",
    [(0.0, "walk"), (5.0, "fall")],
    {"walk": ["keeps walking", "stops to rest"], "fall": ["gets back up"]},
    captions={"walk": "a person walks.", "fall": "the person falls."},
)


class TestWorldScript:
    def test_timeline_is_left_closed(self):
        assert TOY.symbol_at(0.0) == "walk"
        assert TOY.symbol_at(4.999) == "walk"
        assert TOY.symbol_at(5.0) == "fall"
        assert TOY.symbol_at(99.0) == "fall"

    def test_default_nll_tables(self):
        assert TOY.nll_for("keeps walking", "walk") == 0.5
        assert TOY.nll_for("keeps walking", "fall") == 5.0
        assert TOY.yes_prob_for("gets back up", "fall") == 0.95

    def test_roundtrip(self, tmp_path):
        TOY.save(tmp_path / "w.json")
        back = WorldScript.load(tmp_path / "w.json")
        assert back.to_dict() == TOY.to_dict()

    def test_validation(self, tmp_path):
        with pytest.raises(InvalidInputError):
            WorldScript("x", [(1.0, "a"), (0.5, "a")], {"a": ["h"]})
        with pytest.raises(InvalidInputError):
            WorldScript("x", [(0.0, "a")], {})
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(InvalidInputError):
            WorldScript.load(tmp_path / "bad.json")


class TestScriptedBackend:
    def test_generation_is_deterministic_and_counted(self):
        b = ScriptedBackend(TOY)
        ctx = Context("", (frame(1), frame(2)))
        first = b.generate_hypotheses(ctx, GenerationParams(n=2, seed=7))
        assert first == b.generate_hypotheses(ctx, GenerationParams(n=2, seed=7))
        assert sorted(first) == ["keeps walking", "stops to rest"]
        assert b.calls["generate"] == 2

    def test_generation_refuses_observed_frame(self):
        with pytest.raises(InvalidInputError):
            ScriptedBackend(TOY).generate_hypotheses(Context("", (frame(1),), frame(2)), GenerationParams())

    def test_prior_uses_window_posterior_uses_observation(self):
        b = ScriptedBackend(TOY)
        window = (frame(3), frame(4))
        assert b.score_nll("keeps walking", Context("", window)) == 0.5
        assert b.score_nll("keeps walking", Context("", window, frame(5))) == 5.0
        assert b.score_posterior_yes("gets back up", Context("", window, frame(5))) == 0.95
        assert b.calls["score"] == 3

    def test_posterior_needs_observation(self):
        with pytest.raises(InvalidInputError):
            ScriptedBackend(TOY).score_posterior_yes("keeps walking", Context("", (frame(1),)))

    def test_failure_injection(self):
        b = ScriptedBackend(TOY, fail_observed=[5])
        with pytest.raises(TransportError):
            b.score_nll("keeps walking", Context("", (frame(4),), frame(5)))

    def test_captions_and_judge(self):
        b = ScriptedBackend(TOY)
        assert b.describe_event(Context("", (), frame(6))) == "the person falls."
        assert b.caption_video([frame(6), frame(1)]) == "a person walks. the person falls."
        assert b.judge("a person walks. the person falls.", "the person falls.") == "Score: 0.67"

    def test_embedding_cosine(self):
        b = ScriptedBackend(TOY)
        u, v = b.embed("red apple"), b.embed("green pear")
        assert np.dot(u, v) == 0
        assert np.allclose(b.embed("Red apple!"), u)


class TestDeviationWorld:
    def test_symbols_per_segment(self):
        times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        w = deviation_world(times, 3, phases=("a", "b"))
        assert [w.symbol_at(t) for t in times] == ["a", "a", "a", "deviation", "b", "b"]
        assert w.symbol_at(0.0) == "a"
        assert w.symbol_at(3.5) == "a"

    def test_deviation_first(self):
        w = deviation_world([1.0, 2.0, 3.0], 0)
        assert w.symbol_at(0.5) == "routine" and w.symbol_at(1.0) == "deviation"

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            deviation_world([1.0, 2.0], 2)


def test_generation_params_validation():
    with pytest.raises(InvalidParameterError):
        GenerationParams(n=0)
    with pytest.raises(InvalidParameterError):
        GenerationParams(nucleus_p=0.0)


class TestPromptTemplates:
    def test_defaults_render(self):
        t = PromptTemplateSet()
        text = t.render("posterior_score", memory_text="so far", window_size=4, hypothesis="it rains")
        assert "it rains" in text and "so far" in text

    def test_missing_placeholder_rejected(self):
        with pytest.raises(InvalidParameterError):
            PromptTemplateSet(judge="no placeholders here")


class TestTruncation:
    def test_drops_oldest_sentences(self):
        text = "One two three. Four five. Six seven eight."
        assert truncate_to_budget(text, 5) == "Four five. Six seven eight."
        assert truncate_to_budget(text, 3) == "Six seven eight."

    def test_keeps_tail_words_of_long_sentence(self):
        assert truncate_to_budget("a b c d e", 2) == "d e"
        assert truncate_to_budget("a b c", 0) == ""

    def test_short_text_unchanged(self):
        assert truncate_to_budget("  a b. ", 10) == "a b."


def test_map_bounded_preserves_order():
    assert map_bounded(lambda x: x * x, range(20), 4) == [x * x for x in range(20)]


# ----- remote backend against an in-process mock server -----

def chat_reply(text="ok", logprobs=None, n=1):
    choice = {"message": {"role": "assistant", "content": text}}
    if logprobs is not None:
        choice["logprobs"] = {"content": logprobs}
    return {"choices": [dict(choice, index=i) for i in range(n)]}


def make_remote(handler, **cfg):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    config = RemoteConfig(endpoint="http://mock.test/v1", model="m", backoff=0.0, **cfg)
    return RemoteBackend(config, client=client)


TOKENS = [("it", -0.25), (" rains", -1.5), (" hard", -0.125)]


class TestRemoteBackend:
    def test_nll_is_minus_token_logprob_sum(self):
        seen = {}

        def handler(request):
            body = json.loads(request.content)
            seen.update(body)
            return httpx.Response(200, json=chat_reply(logprobs=[{"token": t, "logprob": lp} for t, lp in TOKENS]))

        b = make_remote(handler)
        ctx = Context("history", (frame(1), frame(2)), frame(3))
        nll = b.score_nll("it rains hard", ctx)
        assert nll == pytest.approx(1.875, abs=1e-6)
        assert nll == pytest.approx(-sum(lp for _, lp in TOKENS), abs=1e-6)
        assert seen["echo"] is True and seen["logprobs"] is True
        assert seen["messages"][-1] == {"role": "assistant", "content": "it rains hard"}
        images = [p for p in seen["messages"][0]["content"] if p["type"] == "image_url"]
        assert [p["image_url"]["url"] for p in images] == [f"https://img.test/{i}.jpg" for i in (1, 2, 3)]

    def test_prior_side_attaches_no_observed_image(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json=chat_reply(logprobs=[{"token": "x", "logprob": -1.0}]))

        make_remote(handler).score_nll("x", Context("", (frame(1),)))
        assert sum(p["type"] == "image_url" for p in seen["messages"][0]["content"]) == 1

    def test_missing_logprobs_is_capability_error(self):
        b = make_remote(lambda r: httpx.Response(200, json=chat_reply()))
        with pytest.raises(CapabilityError):
            b.score_nll("x", Context("", (frame(1),)))

    def test_yes_probability_sums_spellings(self):
        top = [
            {"token": "Yes", "logprob": math.log(0.5)},
            {"token": " yes", "logprob": math.log(0.2)},
            {"token": "No", "logprob": math.log(0.3)},
        ]
        payload = chat_reply("Yes", logprobs=[{"token": "Yes", "logprob": math.log(0.5), "top_logprobs": top}])
        b = make_remote(lambda r: httpx.Response(200, json=payload))
        assert b.score_posterior_yes("x", Context("", (frame(1),), frame(2))) == pytest.approx(0.7)

    def test_retries_then_succeeds(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) < 3:
                return httpx.Response(503)
            return httpx.Response(200, json=chat_reply(logprobs=[{"token": "x", "logprob": -2.0}]))

        b = make_remote(handler, retries=2)
        assert b.score_nll("x", Context("", (frame(1),))) == 2.0
        assert len(calls) == 3

    def test_gives_up_after_bounded_retries(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(500)

        with pytest.raises(TransportError) as info:
            make_remote(handler, retries=1).score_nll("x", Context("", (frame(1),)))
        assert info.value.attempts == 2 and len(calls) == 2

    def test_client_errors_not_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400)

        with pytest.raises(TransportError):
            make_remote(handler, retries=3).judge("a", "b")
        assert len(calls) == 1

    def test_generation_strips_prefix_and_checks_count(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["top_p"] == 0.9
            return httpx.Response(200, json={"choices": [
                {"message": {"content": "Hypothesis: a dog barks"}},
                {"message": {"content": "the door opens"}},
            ]})

        b = make_remote(handler)
        assert b.generate_hypotheses(Context(), GenerationParams(n=2)) == ["a dog barks", "the door opens"]
        with pytest.raises(ProtocolError):
            b.generate_hypotheses(Context(), GenerationParams(n=3))

    def test_summarize_falls_back_to_truncation(self):
        b = make_remote(lambda r: httpx.Response(404))
        assert b.summarize("One. Two three. Four five six.", 3) == "Four five six."

    def test_embed(self):
        b = make_remote(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0, 0.0]}]}))
        assert b.embed("hi").tolist() == [1.0, 0.0]

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("BELIEFSHIFT_API_KEY", "secret")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=chat_reply("Score: 1"))

        make_remote(handler).judge("a", "b")
        assert seen["auth"] == "Bearer secret"


def test_payload_parsers():
    assert nll_from_payload(chat_reply(logprobs=[{"token": "a", "logprob": -0.5}])) == 0.5
    with pytest.raises(CapabilityError):
        nll_from_payload(chat_reply(logprobs=[]))
    with pytest.raises(ProtocolError):
        nll_from_payload(chat_reply(logprobs=[{"token": "a"}]))
    with pytest.raises(CapabilityError):
        yes_prob_from_payload({"choices": []})


def test_local_image_inlined(tmp_path):
    p = tmp_path / "f.png"
    p.write_bytes(b"\x89PNG")
    assert image_part(str(p))["image_url"]["url"].startswith("data:image/png;base64,")


class TestScriptedTextOps:
    def test_summarize_budget(self):
        b = ScriptedBackend(TOY)
        short = " ".join(["word"] * 49) + "."
        assert b.summarize(short, 200) == short
        long = " ".join(f"Sentence number {i} has six words." for i in range(67))
        assert len(b.summarize(long, 200).split()) <= 200
        assert b.summarize("", 200) == ""

    def test_embed_contract(self):
        b = ScriptedBackend(TOY)
        u = b.embed("the dog barks")
        assert np.array_equal(u, b.embed("the dog barks"))
        assert np.dot(u, u) / np.dot(u, u) == 1.0
        with pytest.raises(InvalidInputError):
            b.embed("   ")

    def test_scores_repeat_exactly(self):
        b = ScriptedBackend(TOY)
        ctx = Context("h", (frame(1),), frame(6))
        assert b.score_nll("gets back up", ctx) == b.score_nll("gets back up", ctx)
        assert b.score_posterior_yes("keeps walking", ctx) == 0.05
