from __future__ import annotations

import itertools
import json

import pytest
import requests

from idiolect.adversary import (
    AttackError,
    AttackRecord,
    ChatAuthError,
    ChatConfigError,
    ChatEndpointError,
    ChatQuotaError,
    ChatTimeoutError,
    DirectoryStubClient,
    EndpointConfig,
    HttpChatClient,
    LexicalStubClient,
    PromptStrategy,
    ScriptedStubClient,
    SourceSelection,
    build_messages,
    exchange_key,
    extract_output,
    parse_vote,
    plurality_winner,
    run_attack,
    select_source,
    vote_messages,
)
from idiolect.corpus import AuthorSplit

from .conftest import make_doc

SOURCE = "Meeting moved to Friday at 10am. Please bring the quarterly numbers."
EXAMPLES = [
    "Hey, can you send me the report by noon?",
    "Thanks for the update. Let's sync tomorrow.",
]


def dump(messages) -> str:
    return json.dumps(messages, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class TestBuildMessages:
    @pytest.mark.parametrize("kind", ["naive", "self_prompt", "role_play", "tree_of_thoughts"])
    def test_golden_fixture_byte_match(self, kind, fixtures_dir):
        messages = build_messages(PromptStrategy(kind=kind), SOURCE, EXAMPLES)
        golden = (fixtures_dir / "prompts" / f"{kind}.golden.json").read_text(encoding="utf-8")
        assert dump(messages) == golden

    def test_role_play_shape(self):
        messages = build_messages(PromptStrategy(kind="role_play"), SOURCE, EXAMPLES)
        assert [m["role"] for m in messages] == ["system", "user"]

    def test_single_user_message_strategies(self):
        for kind in ("naive", "self_prompt", "tree_of_thoughts"):
            messages = build_messages(PromptStrategy(kind=kind), SOURCE, EXAMPLES)
            assert [m["role"] for m in messages] == ["user"]

    def test_empty_examples_rejected(self):
        with pytest.raises(ValueError):
            build_messages(PromptStrategy(kind="naive"), SOURCE, [])

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError):
            PromptStrategy(kind="bribery")


class TestExtractOutput:
    def test_plain(self):
        assert extract_output("  hello there \n") == "hello there"

    def test_fenced(self):
        assert extract_output("```\nthe text\n```") == "the text"
        assert extract_output("```text\nthe text\n```") == "the text"

    def test_quoted(self):
        assert extract_output('"the text"') == "the text"
        assert extract_output("“the text”") == "the text"

    def test_inner_quotes_kept(self):
        assert extract_output('she said "hi" twice') == 'she said "hi" twice'


class TestVotes:
    def test_parse_choice_line(self):
        assert parse_vote("I think...\nChoice: 2", 3) == 1

    def test_parse_bare_number(self):
        assert parse_vote("3", 5) == 2

    def test_out_of_range(self):
        assert parse_vote("Choice: 9", 3) is None

    def test_garbage(self):
        assert parse_vote("no idea", 3) is None

    def test_plurality_all_multisets(self):
        """Documented tie rule checked against an independent enumeration over
        every 5-vote sequence for 3 candidates."""
        for votes in itertools.product(range(3), repeat=5):
            counts = [votes.count(i) for i in range(3)]
            best = max(counts)
            expected = next(i for i in range(3) if counts[i] == best)
            assert plurality_winner(list(votes)) == expected

    def test_majority_example(self):
        assert plurality_winner([1, 1, 1, 0, 2]) == 1

    def test_split_2_2_1(self):
        # 2/2/1 across 5 rounds: exact tie between 0 and 1 -> lowest index
        assert plurality_winner([0, 0, 1, 1, 2]) == 0


class FakeResponse:
    def __init__(self, status_code: int, payload=None):
        self.status_code = status_code
        self._payload = payload or {}

    def json(self):
        return self._payload


def ok_payload(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}]}


@pytest.fixture
def endpoint(monkeypatch):
    monkeypatch.setenv("CHAT_API_KEY", "test-key")
    return EndpointConfig(base_url="https://chat.invalid/v1", model="test-model",
                          backoff=0.0)


class TestHttpChatClient:
    def test_success(self, endpoint):
        client = HttpChatClient(endpoint, transport=lambda *a, **k: FakeResponse(200, ok_payload("ok")),
                                sleep=lambda s: None)
        assert client.complete([{"role": "user", "content": "hi"}]) == "ok"
        assert client.last_attempts == 1

    def test_two_transient_5xx_then_success(self, endpoint):
        responses = iter([FakeResponse(503), FakeResponse(502), FakeResponse(200, ok_payload("ok"))])
        client = HttpChatClient(endpoint, transport=lambda *a, **k: next(responses),
                                sleep=lambda s: None)
        assert client.complete([{"role": "user", "content": "hi"}]) == "ok"
        assert client.last_attempts == 3

    def test_missing_key_no_network(self, endpoint, monkeypatch):
        monkeypatch.delenv("CHAT_API_KEY")
        calls = []

        def transport(*a, **k):
            calls.append(1)
            return FakeResponse(200, ok_payload("ok"))

        client = HttpChatClient(endpoint, transport=transport)
        with pytest.raises(ChatConfigError):
            client.complete([{"role": "user", "content": "hi"}])
        assert calls == []

    def test_auth_error_not_retried(self, endpoint):
        calls = []

        def transport(*a, **k):
            calls.append(1)
            return FakeResponse(401)

        client = HttpChatClient(endpoint, transport=transport, sleep=lambda s: None)
        with pytest.raises(ChatAuthError):
            client.complete([{"role": "user", "content": "hi"}])
        assert len(calls) == 1

    def test_quota_exhausts_retries(self, endpoint):
        client = HttpChatClient(endpoint, transport=lambda *a, **k: FakeResponse(429),
                                sleep=lambda s: None)
        with pytest.raises(ChatQuotaError):
            client.complete([{"role": "user", "content": "hi"}])
        assert client.last_attempts == 5

    def test_timeout_category(self, endpoint):
        def transport(*a, **k):
            raise requests.Timeout("too slow")

        client = HttpChatClient(endpoint, transport=transport, sleep=lambda s: None)
        with pytest.raises(ChatTimeoutError):
            client.complete([{"role": "user", "content": "hi"}])

    def test_decoding_params_omitted(self, endpoint):
        seen = {}

        def transport(url, json=None, headers=None, timeout=None):
            seen.update(json)
            return FakeResponse(200, ok_payload("ok"))

        HttpChatClient(endpoint, transport=transport).complete([{"role": "user", "content": "x"}])
        assert set(seen) == {"model", "messages"}

    def test_malformed_response(self, endpoint):
        client = HttpChatClient(endpoint, transport=lambda *a, **k: FakeResponse(200, {"nope": 1}),
                                sleep=lambda s: None)
        with pytest.raises(ChatEndpointError):
            client.complete([{"role": "user", "content": "hi"}])


class TestStubs:
    def test_scripted_stub(self):
        stub = ScriptedStubClient(["one", "two"])
        assert stub.complete([{"role": "user", "content": "a"}]) == "one"
        assert stub.complete([{"role": "user", "content": "b"}]) == "two"
        with pytest.raises(ChatEndpointError):
            stub.complete([{"role": "user", "content": "c"}])

    def test_directory_stub(self, tmp_path):
        messages = [{"role": "user", "content": "hello"}]
        (tmp_path / f"{exchange_key(messages)}.txt").write_text("canned", encoding="utf-8")
        (tmp_path / "default.txt").write_text("fallback", encoding="utf-8")
        stub = DirectoryStubClient(tmp_path)
        assert stub.complete(messages) == "canned"
        assert stub.complete([{"role": "user", "content": "other"}]) == "fallback"

    def test_directory_stub_missing(self, tmp_path):
        stub = DirectoryStubClient(tmp_path)
        with pytest.raises(ChatEndpointError):
            stub.complete([{"role": "user", "content": "x"}])

    def test_lexical_stub_deterministic(self):
        vocab = [f"word{i}" for i in range(50)]
        a = LexicalStubClient(vocab, seed=1)
        b = LexicalStubClient(vocab, seed=1)
        messages = [{"role": "user", "content": "rewrite this"}]
        assert a.complete(messages) == b.complete(messages)
        assert a.complete(messages) != a.complete([{"role": "user", "content": "другое"}])

    def test_lexical_stub_votes(self):
        stub = LexicalStubClient(["w"], seed=0)
        reply = stub.complete(vote_messages("do the thing", ["plan a", "plan b"]))
        assert parse_vote(reply, 2) == 0


def scripted_source() -> SourceSelection:
    return SourceSelection(source_author="src", source_text=SOURCE)


class TestRunAttack:
    def test_naive_transcript(self):
        client = ScriptedStubClient(["rewritten passage"])
        record = run_attack(client, PromptStrategy(kind="naive"), scripted_source(), EXAMPLES,
                            target_author="a1", example_ids=["a1/d0"])
        assert record.generated_text == "rewritten passage"
        assert [m["role"] for m in record.transcript] == ["user", "assistant"]
        assert record.transcript[-1]["content"] == "rewritten passage"
        assert record.examples_used == ["a1/d0"]

    def test_self_prompt_two_exchanges(self):
        client = ScriptedStubClient(["be the author", "final text"])
        record = run_attack(client, PromptStrategy(kind="self_prompt"), scripted_source(),
                            EXAMPLES, target_author="a1")
        assert record.generated_text == "final text"
        assert [m["role"] for m in record.transcript] == ["user", "assistant", "user", "assistant"]
        # the model-authored instruction is fed back in the second exchange
        assert "be the author" in record.transcript[2]["content"]

    def test_role_play_single_exchange(self):
        client = ScriptedStubClient(['"quoted output"'])
        record = run_attack(client, PromptStrategy(kind="role_play"), scripted_source(),
                            EXAMPLES, target_author="a1")
        assert record.generated_text == "quoted output"
        assert [m["role"] for m in record.transcript] == ["system", "user", "assistant"]

    def test_tot_transcript_and_votes(self):
        replies = (
            ["plan A", "plan B", "plan C"]
            + ["Choice: 2", "Choice: 2", "Choice: 1", "Choice: 3", "Choice: 2"]  # plan votes
            + ["draft 1", "draft 2", "draft 3", "draft 4", "draft 5"]
            + ["Choice: 4"]
        )
        client = ScriptedStubClient(replies)
        record = run_attack(client, PromptStrategy(kind="tree_of_thoughts"), scripted_source(),
                            EXAMPLES, target_author="a1")
        # 14 exchanges: 3 plan gens + 5 plan votes + 5 drafts + 1 draft vote
        assert len([m for m in record.transcript if m["role"] == "assistant"]) == 14 + 1
        assert record.generated_text == "draft 4"
        assert record.transcript[-1] == {"role": "assistant", "content": "draft 4"}
        # winning plan (B, index 1 by plurality) is carried into the draft prompts
        draft_prompt = record.transcript[8 * 2]["content"]
        assert "plan B" in draft_prompt

    def test_tot_vote_tie_lowest_index(self):
        replies = (
            ["plan A", "plan B", "plan C"]
            + ["Choice: 1", "Choice: 1", "Choice: 2", "Choice: 2", "Choice: 3"]  # 2/2/1 tie
            + ["d1", "d2", "d3", "d4", "d5"]
            + ["Choice: 1"]
        )
        record = run_attack(ScriptedStubClient(replies), PromptStrategy(kind="tree_of_thoughts"),
                            scripted_source(), EXAMPLES, target_author="a1")
        assert "plan A" in record.transcript[8 * 2]["content"]

    def test_malformed_vote_reasked_then_fails(self):
        replies = (
            ["plan A", "plan B", "plan C"]
            + ["???", "still no", "nope"]  # one vote round, 3 failed attempts
        )
        with pytest.raises(AttackError) as err:
            run_attack(ScriptedStubClient(replies), PromptStrategy(kind="tree_of_thoughts"),
                       scripted_source(), EXAMPLES, target_author="a1")
        assert "vote" in str(err.value)

    def test_malformed_vote_recovers_on_reask(self):
        replies = (
            ["plan A", "plan B", "plan C"]
            + ["garbage", "Choice: 1"] + ["Choice: 1"] * 4
            + ["d1", "d2", "d3", "d4", "d5"]
            + ["Choice: 5"]
        )
        record = run_attack(ScriptedStubClient(replies), PromptStrategy(kind="tree_of_thoughts"),
                            scripted_source(), EXAMPLES, target_author="a1")
        assert record.generated_text == "d5"

    def test_endpoint_failure_becomes_attack_error(self):
        class FailingClient:
            def describe(self):
                return "failing"

            def complete(self, messages):
                raise ChatEndpointError("boom")

        with pytest.raises(AttackError):
            run_attack(FailingClient(), PromptStrategy(kind="naive"), scripted_source(),
                       EXAMPLES, target_author="a1")

    def test_target_equals_source_rejected(self):
        with pytest.raises(ValueError):
            run_attack(ScriptedStubClient(["x"]), PromptStrategy(kind="naive"),
                       scripted_source(), EXAMPLES, target_author="src")

    def test_stub_replay_reproduces_generated_text(self):
        replies = ["rewritten passage"]
        first = run_attack(ScriptedStubClient(replies), PromptStrategy(kind="naive"),
                           scripted_source(), EXAMPLES, target_author="a1")
        second = run_attack(ScriptedStubClient(replies), PromptStrategy(kind="naive"),
                            scripted_source(), EXAMPLES, target_author="a1")
        assert first.to_dict() == second.to_dict()

    def test_record_round_trip(self):
        record = run_attack(ScriptedStubClient(["out"]), PromptStrategy(kind="naive"),
                            scripted_source(), EXAMPLES, target_author="a1")
        assert AttackRecord.from_dict(record.to_dict()).to_dict() == record.to_dict()

    @pytest.mark.parametrize("kind,replies", [
        ("naive", ['```\nfenced passage\n```']),
        ("role_play", ["plain passage"]),
        ("self_prompt", ["an instruction", '"quoted passage"']),
        ("tree_of_thoughts",
         ["p1", "p2", "p3"] + ["Choice: 1"] * 5 + ["d1", "d2", "d3", "d4", "d5"] + ["Choice: 2"]),
    ])
    def test_generated_text_is_extracted_final_assistant_message(self, kind, replies):
        record = run_attack(ScriptedStubClient(replies), PromptStrategy(kind=kind),
                            scripted_source(), EXAMPLES, target_author="a1")
        assert record.generated_text == extract_output(record.transcript[-1]["content"])


class TestSelectSource:
    def _splits(self, n: int) -> list[AuthorSplit]:
        splits = []
        for i in range(n):
            author = f"a{i}"
            splits.append(AuthorSplit(
                author_id=author,
                known=[make_doc(f"known text {i} alpha beta.", doc_id=f"{author}/k", author=author)],
                unknown=[make_doc(f"unknown text {i} gamma delta.", doc_id=f"{author}/u", author=author)],
            ))
        return splits

    def test_deterministic(self):
        splits = self._splits(5)
        assert select_source(splits, 3) == select_source(splits, 3)

    def test_source_excluded_from_targets(self):
        splits = self._splits(5)
        source = select_source(splits, 3)
        targets = [s.author_id for s in splits if s.author_id != source.source_author]
        assert source.source_author not in targets
        assert len(targets) == 4

    def test_concatenates_unknown_docs(self):
        author = "multi"
        split = AuthorSplit(
            author_id=author,
            known=[make_doc("known stuff here.", doc_id="multi/k", author=author)],
            unknown=[
                make_doc("first message.", doc_id="multi/u1", author=author),
                make_doc("second message.", doc_id="multi/u2", author=author),
            ],
        )
        candidates = [split] + self._splits(1)
        picked = next(
            select_source(candidates, rng_seed=seed)
            for seed in range(20)
            if select_source(candidates, rng_seed=seed).source_author == author
        )
        assert picked.source_text == "first message.\nsecond message."

    def test_requires_two_authors(self):
        with pytest.raises(ValueError):
            select_source(self._splits(1), 0)
