import json

import numpy as np
import pytest

import helpers
from scenepool.agents import (
    AgentClient,
    classify_relation,
    decode_snapshot,
    encode_snapshot,
    extract_scene_graph,
    parse_critique,
    request_hash,
)
from scenepool.errors import AgentError
from scenepool.relations import CanonicalRelation


def _reply(content):
    return {"choices": [{"message": {"content": content}}]}


@pytest.fixture(autouse=True)
def _clear_no_network(monkeypatch):
    # stub transports make live/record behavior testable without a network;
    # an inherited NO_NETWORK=1 would force every client into replay mode.
    # Tests that want the override set it themselves after this runs.
    monkeypatch.delenv("NO_NETWORK", raising=False)


# --------------------------------------------------------------------------
# Request hashing

def test_request_hash_is_stable_and_order_free():
    a = {"task": "t", "alpha": 1, "beta": [1, 2]}
    b = {"beta": [1, 2], "alpha": 1, "task": "t"}
    assert request_hash(a) == request_hash(b)
    assert request_hash(a) != request_hash({"task": "t", "alpha": 2, "beta": [1, 2]})


def test_request_hash_ignores_snapshot_payload():
    base = {
        "task": "critique_layout",
        "score": 0.5,
        "snapshots": {"x": {"encoding": "zlib+base64", "sha256": "aa", "data": "AAAA"}},
    }
    other = json.loads(json.dumps(base))
    other["snapshots"]["x"]["data"] = "BBBB"
    other["snapshots"]["x"]["sha256"] = "bb"
    assert request_hash(base) == request_hash(other)
    # but structural fields still count
    other["score"] = 0.6
    assert request_hash(base) != request_hash(other)


def test_request_hash_does_not_mutate_body():
    body = {"snapshots": {"x": {"data": "AAAA", "sha256": "aa"}}}
    request_hash(body)
    assert body["snapshots"]["x"]["data"] == "AAAA"


# --------------------------------------------------------------------------
# Snapshot codec

def test_snapshot_codec_round_trip():
    ppm = b"P6\n2 2\n255\n" + bytes(range(12))
    blob = encode_snapshot(ppm)
    assert blob["encoding"] == "zlib+base64"
    assert decode_snapshot(blob) == ppm


def test_snapshot_decode_rejects_unknown_encoding():
    with pytest.raises(AgentError):
        decode_snapshot({"encoding": "raw", "data": ""})


# --------------------------------------------------------------------------
# Record / replay

def test_record_then_replay(tmp_path):
    path = tmp_path / "t.jsonl"
    calls = []

    def transport(client, body):
        calls.append(body)
        return _reply("on")

    rec = AgentClient(mode="record", transcript_path=path, transport=transport)
    body = {"task": "classify_relation", "messages": [{"role": "user", "content": "x"}]}
    assert rec.call(body) == _reply("on")
    assert len(calls) == 1

    entry = json.loads(path.read_text().strip())
    assert entry["request_hash"] == request_hash(body)
    assert entry["request_body"] == body
    assert entry["response_body"] == _reply("on")

    replay = AgentClient(mode="replay", transcript_path=path)
    assert replay.call(body) == _reply("on")
    assert len(calls) == 1  # replay never touches the transport


def test_replay_miss_is_an_error(tmp_path):
    client = AgentClient(mode="replay", transcript_path=tmp_path / "empty.jsonl")
    with pytest.raises(AgentError) as err:
        client.call({"task": "classify_relation"})
    assert "no recorded response" in str(err.value)


def test_no_network_env_forces_replay(tmp_path, monkeypatch):
    def transport(client, body):
        raise AssertionError("transport must not run under NO_NETWORK=1")

    monkeypatch.setenv("NO_NETWORK", "1")
    client = AgentClient(mode="live", transport=transport)
    assert client.effective_mode() == "replay"
    with pytest.raises(AgentError):
        client.call({"task": "anything"})


def test_record_mode_needs_transcript_path():
    client = AgentClient(mode="record", transport=lambda c, b: _reply("ok"))
    with pytest.raises(AgentError) as err:
        client.call({"task": "t"})
    assert "transcript path" in str(err.value)


def test_corrupt_transcript_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"request_hash": "x"}\n')  # missing response_body
    client = AgentClient(mode="replay", transcript_path=path)
    with pytest.raises(AgentError) as err:
        client.call({"task": "t"})
    assert "corrupt transcript" in str(err.value)


def test_from_dict_resolves_transcript_relative(tmp_path):
    client = AgentClient.from_dict(
        {"mode": "replay", "transcript": "t.jsonl"}, base_dir=tmp_path
    )
    assert client.transcript_path == tmp_path / "t.jsonl"
    with pytest.raises(AgentError):
        AgentClient.from_dict({"mode": "telepathy"})


# --------------------------------------------------------------------------
# Task wrappers

def test_extract_scene_graph_parses_reply():
    client = AgentClient(
        mode="live",
        transport=lambda c, b: _reply(json.dumps(helpers.EXTRACT_GRAPH_DOC)),
    )
    g = extract_scene_graph(client, helpers.EXTRACT_TEXT)
    assert [a.name for a in g.assets] == ["bird", "chair"]
    assert g.ground == "grass"


def test_extract_scene_graph_rejects_bad_reply():
    client = AgentClient(mode="live", transport=lambda c, b: _reply("not json"))
    with pytest.raises(AgentError):
        extract_scene_graph(client, "text")
    client = AgentClient(mode="live", transport=lambda c, b: {"nope": True})
    with pytest.raises(AgentError):
        extract_scene_graph(client, "text")
    with pytest.raises(AgentError):
        extract_scene_graph(None, "text")


def test_classify_relation_table_needs_no_client():
    assert classify_relation(None, "perched upon") is CanonicalRelation.ON


def test_classify_relation_agent_fallback():
    seen = []

    def transport(client, body):
        seen.append(body["messages"][1]["content"])
        return _reply("near")

    client = AgentClient(mode="live", transport=transport)
    assert classify_relation(client, "gazing past") is CanonicalRelation.NEAR
    assert seen == ["gazing past"]


def test_classify_relation_strict_token_check():
    client = AgentClient(mode="live", transport=lambda c, b: _reply("sideways"))
    with pytest.raises(AgentError) as err:
        classify_relation(client, "gazing past")
    assert "unknown relation token" in str(err.value)
    with pytest.raises(AgentError):
        classify_relation(None, "gazing past")


# --------------------------------------------------------------------------
# Critique parsing

def test_parse_critique_verdicts():
    assert parse_critique({"verdict": "positive"}).positive
    assert not parse_critique({"verdict": " Negative "}).positive
    with pytest.raises(AgentError):
        parse_critique({"verdict": "maybe"})
    with pytest.raises(AgentError):
        parse_critique({})


def test_parse_critique_moves_and_clamping():
    res = parse_critique(
        {
            "verdict": "negative",
            "moves": [
                {"id": 1, "move": [0.1, 0.0, 0.0]},
                {"id": 2, "move": [3.0, 0.0, 4.0]},  # norm 5 -> clamped to 0.5
            ],
        },
        delta_max=0.5,
    )
    assert res.moves[0].asset_id == 1
    assert np.allclose(res.moves[0].move, [0.1, 0.0, 0.0])
    assert abs(np.linalg.norm(res.moves[1].move) - 0.5) < 1e-12
    assert np.allclose(res.moves[1].move, [0.3, 0.0, 0.4])


@pytest.mark.parametrize(
    "move",
    [
        {"id": 1},
        {"move": [0, 0, 0]},
        {"id": 1, "move": [1, 2]},
        {"id": "x", "move": [0, 0, 0]},
        {"id": 1, "move": [float("nan"), 0, 0]},
    ],
)
def test_parse_critique_rejects_malformed_moves(move):
    with pytest.raises(AgentError):
        parse_critique({"verdict": "negative", "moves": [move]})


# --------------------------------------------------------------------------
# Committed transcripts replay offline

def test_committed_transcript_replays_extract(monkeypatch):
    monkeypatch.setenv("NO_NETWORK", "1")
    client = AgentClient(mode="live", transcript_path=helpers.TRANSCRIPT_PATH)
    g = extract_scene_graph(client, helpers.EXTRACT_TEXT)
    assert [a.name for a in g.assets] == ["bird", "chair"]
    assert g.relations[0].relation == "standing on"


def test_committed_transcript_replays_classify(monkeypatch):
    monkeypatch.setenv("NO_NETWORK", "1")
    client = AgentClient(mode="live", transcript_path=helpers.TRANSCRIPT_PATH)
    assert classify_relation(client, helpers.UNKNOWN_PHRASE) is CanonicalRelation.ON
