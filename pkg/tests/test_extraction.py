import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from commval.corpus import Comment
from commval.errors import ParseError, ProviderUnavailable, Quarantined, TemplateError
from commval.extraction import (
    EMPTY_BANK,
    JSON_INSTRUCTION,
    ExtractionRecord,
    PromptTemplate,
    ProviderConfig,
    ResponseCache,
    ValueBank,
    build_prompt,
    cache_key,
    extract_one,
    parse_response,
    run_extraction,
)
from commval.labeling import CommentPair
from commval.providers import HttpChatProvider, MockProvider, ScriptedProvider, make_provider


def pair(i=0, community="c", tag="[[values: humor]]", year="2019"):
    ctx = Comment(f"x{i}", "", "l", community, "a", f"context {i}", 1, 0, year_tag=year)
    tgt = Comment(f"t{i:03d}", ctx.id, "l", community, "b", f"reply {i} {tag}", 99, 1, year_tag=year)
    return CommentPair(community, ctx, tgt, year)


def answer(*kws, thinking="because"):
    return json.dumps({"thinking": thinking, "answer": list(kws) if kws != ("N/A",) else "N/A"})


# -- parsing -------------------------------------------------------------------

@pytest.mark.parametrize("raw,kws,na", [
    (answer("Humor", " wit "), ("humor", "wit"), False),
    (answer("N/A"), (), True),
    ('{"thinking": "t", "answer": ["n/a"]}', (), True),
    ('{"thinking": "t", "answer": "humor, Humor, brevity"}', ("humor", "brevity"), False),
    ('```json\n{"thinking": "t", "answer": ["a"]}\n```', ("a",), False),
])
def test_parse_response_accepts(raw, kws, na):
    got = parse_response(raw)
    assert (got.keywords, got.na) == (kws, na)


@pytest.mark.parametrize("raw", [
    "humor, wit",
    "[]",
    '{"thinking": "t"}',
    answer(),
    answer("a", "b", "c", "d"),
    '{"thinking": "t", "answer": ["a", 3]}',
    '{"thinking": "t", "answer": ["N/A", "humor"]}',
    '{"thinking": 5, "answer": ["a"]}',
])
def test_parse_response_rejects(raw):
    with pytest.raises(ParseError):
        parse_response(raw)


def test_record_cardinality_invariant():
    with pytest.raises(ValueError):
        ExtractionRecord("c", "t", "x", "", (), False, "", "m")
    with pytest.raises(ValueError):
        ExtractionRecord("c", "t", "x", "", ("a",), True, "", "m")
    with pytest.raises(ValueError):
        ExtractionRecord("c", "t", "x", "", ("a", "b", "c", "d"), False, "", "m")
    r = ExtractionRecord("c", "t", "x", "2019", ("a",), False, "why", "m", cached=True)
    assert ExtractionRecord.from_json(r.to_json()) == r
    assert "cached" not in r.to_json()


# -- templates and prompts -----------------------------------------------------

def test_default_template_has_every_placeholder():
    t = PromptTemplate.default()
    for p in ("{SUBREDDIT}", "{SUBREDDIT_DESCRIPTION}", "{VALUE_BANK}", "{CONTEXT}", "{COMMENT}"):
        assert p in t.text
    assert "If for some reason you think this comment should have instead been downvoted" in t.text
    with pytest.raises(TemplateError):
        PromptTemplate("no placeholders {SUBREDDIT}")


def test_build_prompt_substitutes_once():
    p = pair(tag="{VALUE_BANK} literal")
    bank = ValueBank(["humor"])
    prompt = build_prompt(PromptTemplate.default(), "askx", "questions", bank, p)
    assert "r/askx" in prompt and "questions" in prompt
    assert "{VALUE_BANK} literal" in prompt
    assert prompt.endswith(JSON_INSTRUCTION + "\n")
    assert build_prompt(PromptTemplate.default(), "askx", "", ValueBank(), p).count(EMPTY_BANK) == 1


def test_bank_render_budget_keeps_earliest():
    bank = ValueBank(["alpha", "beta", "gamma", "delta"])
    assert bank.render() == "alpha, beta, gamma, delta"
    assert bank.render(token_budget=3) == "alpha, beta"
    assert bank.render(token_budget=0) == EMPTY_BANK


@given(st.lists(st.text(alphabet="abcAB ", max_size=6), max_size=30))
def test_bank_normalized_deduplicated_monotone(words):
    bank = ValueBank()
    prev = ()
    for w in words:
        bank.add(w)
        assert bank.entries[:len(prev)] == prev
        prev = bank.entries
    assert len(set(bank.entries)) == len(bank.entries)
    assert all(e == " ".join(e.lower().split()) and e for e in bank.entries)
    assert ValueBank(words) == bank


# -- caching, retries, quarantine ----------------------------------------------

def test_cache_persists_and_skips_damaged_lines(tmp_path):
    path = tmp_path / "cache.jsonl"
    c = ResponseCache(path)
    c.put("k", "v")
    c.put("k", "v")
    with open(path, "a") as fh:
        fh.write("{garbage\n")
    again = ResponseCache(path)
    assert again.get("k") == "v" and len(again) == 1
    assert len(path.read_text().splitlines()) == 2
    assert cache_key("m1", "p") != cache_key("m2", "p")


def test_retry_then_success_is_cached():
    cfg = ProviderConfig(max_retries=2)
    prov = ScriptedProvider(["oops", answer("humor")])
    cache = ResponseCache()
    rec = extract_one(prov, cfg, PromptTemplate.default(), None, ValueBank(), pair(), cache)
    assert rec.keywords == ("humor",) and prov.calls == 2
    again = extract_one(ScriptedProvider([]), cfg, PromptTemplate.default(), None, ValueBank(), pair(), cache)
    assert again.cached and again == rec


def test_quarantine_after_retries():
    prov = ScriptedProvider(["bad"] * 3)
    with pytest.raises(Quarantined) as info:
        extract_one(prov, ProviderConfig(max_retries=2), PromptTemplate.default(), None, ValueBank(), pair())
    assert list(info.value.raw_responses) == ["bad", "bad", "bad"]


def test_outage_is_not_quarantine():
    prov = ScriptedProvider([ProviderUnavailable("down")] * 3)
    with pytest.raises(ProviderUnavailable):
        extract_one(prov, ProviderConfig(max_retries=2), PromptTemplate.default(), None, ValueBank(), pair())


def test_run_extraction_bank_and_na_neutrality():
    pairs = [pair(0, tag="[[values: humor, wit]]"), pair(1, tag="[[N/A]]"), pair(2, tag="[[values: Wit, brevity]]"),
             pair(3, tag="[[malformed]]")]
    run = run_extraction(pairs, ProviderConfig(), PromptTemplate.default(), MockProvider(), cache=ResponseCache())
    assert [r.target_id for r in run.records] == ["t000", "t001", "t002"]
    assert run.bank.entries == ("humor", "wit", "brevity")
    assert [q.target_id for q in run.quarantined] == ["t003"]
    for r in run.records:
        assert set(r.keywords) <= set(run.bank)
    na = [r for r in run.records if r.na]
    assert len(na) == 1 and na[0].keywords == ()


def test_bank_grows_in_pair_order_across_prompts():
    seen = []

    def script(prompt):
        seen.append(prompt.split("already used:\n", 1)[1].split("\n", 1)[0])
        return answer(f"kw{len(seen)}")

    pairs = [pair(i) for i in (2, 0, 1)]
    run_extraction(pairs, ProviderConfig(), PromptTemplate.default(), ScriptedProvider(script), cache=ResponseCache())
    assert seen == [EMPTY_BANK, "kw1", "kw1, kw2"]


def test_community_bank_scope():
    pairs = [pair(0, "a", "[[values: x]]"), pair(1, "b", "[[values: y]]")]
    run = run_extraction(pairs, ProviderConfig(bank_scope="community"), PromptTemplate.default(), MockProvider(),
                         cache=ResponseCache())
    assert {k: b.entries for k, b in run.banks.items()} == {"a": ("x",), "b": ("y",)}


def test_failure_budget_aborts():
    pairs = [pair(i) for i in range(100)]

    def script(prompt):
        raise ProviderUnavailable("down")

    cfg = ProviderConfig(max_retries=0, failure_budget=0.01)
    with pytest.raises(ProviderUnavailable, match="budget"):
        run_extraction(pairs, cfg, PromptTemplate.default(), ScriptedProvider(script), cache=ResponseCache())


def test_single_outage_within_budget():
    calls = {"n": 0}

    def script(prompt):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ProviderUnavailable("blip")
        return answer("humor")

    pairs = [pair(i) for i in range(100)]
    run = run_extraction(pairs, ProviderConfig(max_retries=0), PromptTemplate.default(), ScriptedProvider(script),
                         cache=ResponseCache())
    assert len(run.unavailable) == 1 and len(run.records) == 99


def test_mixed_years_rejected():
    with pytest.raises(ValueError):
        run_extraction([pair(0, year="2016"), pair(1, year="2022")], ProviderConfig(), PromptTemplate.default(),
                       MockProvider(), cache=ResponseCache())


def test_replay_with_warm_cache_is_pure():
    pairs = [pair(i, tag=f"[[values: v{i % 3}]]") for i in range(12)]
    cache = ResponseCache()
    first = run_extraction(pairs, ProviderConfig(), PromptTemplate.default(), MockProvider(), cache=cache)
    second = run_extraction(pairs, ProviderConfig(), PromptTemplate.default(), ScriptedProvider([]), cache=cache)
    assert second.records == first.records and second.cache_hits == len(pairs)
    assert [r.to_json() for r in second.records] == [r.to_json() for r in first.records]


# -- providers -----------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    requests: list = []
    reply: bytes = b""
    status = 200

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests.append((self.path, dict(self.headers), body))
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(type(self).reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def fake_server():
    _Handler.requests = []
    _Handler.status = 200
    _Handler.reply = json.dumps({"choices": [{"message": {"content": answer("humor")}}]}).encode()
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1", _Handler
    server.shutdown()


def test_http_provider_wire_format(fake_server):
    base, handler = fake_server
    prov = HttpChatProvider(api_base=base, api_key="sk-test", timeout=5)
    out = prov.complete("hello", model="m-1", temperature=0.0, top_p=1.0)
    assert parse_response(out).keywords == ("humor",)
    path, headers, body = handler.requests[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer sk-test"
    assert body == {"model": "m-1", "messages": [{"role": "user", "content": "hello"}], "temperature": 0.0,
                    "top_p": 1.0, "response_format": {"type": "json_object"}}
    prov.complete("x", model="m-1", json_mode=False)
    assert "response_format" not in handler.requests[1][2]


def test_http_provider_errors(fake_server, monkeypatch):
    base, handler = fake_server
    handler.status = 500
    with pytest.raises(ProviderUnavailable):
        HttpChatProvider(api_base=base, timeout=5).complete("x", model="m")
    handler.status = 200
    handler.reply = b'{"unexpected": true}'
    with pytest.raises(ProviderUnavailable):
        HttpChatProvider(api_base=base, timeout=5).complete("x", model="m")
    with pytest.raises(ProviderUnavailable):
        HttpChatProvider(api_base="http://127.0.0.1:9", timeout=2).complete("x", model="m")
    monkeypatch.setenv("COMMVAL_API_BASE", base + "/")
    assert HttpChatProvider().api_base == base


def test_make_provider():
    assert isinstance(make_provider("mock"), MockProvider)
    with pytest.raises(ValueError):
        make_provider("nope")
