"""Agent (LLM) client interfaces with record/replay transcripts.

Three agent tasks exist: scene-graph extraction from free text, relation
phrase classification, and layout critique.  Every request is a plain
JSON body; every response is expected in chat-completion shape with the
answer in ``choices[0].message.content``.

Calls go through a client in one of three modes:

    live    POST the request to the configured endpoint
    record  live, then append (hash, request, response) to a transcript
    replay  look the request hash up in the transcript; never online

Transcripts are JSONL; appends take a sibling ``.lock`` file so parallel
runs cannot interleave lines.  Setting NO_NETWORK=1 forces replay mode
everywhere.  Snapshot images ride along zlib-compressed, and the request
hash is computed over the body with image payloads replaced by their raw
content digests, so compression library differences can never break
replay matching.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import requests
from filelock import FileLock

from scenepool import scene_graph
from scenepool.errors import AgentError
from scenepool.relations import CanonicalRelation, canonical_from_token, classify_phrase

EXTRACT_PROMPT = (
    "You turn a scene description into a JSON scene graph. Reply with JSON "
    "only, shaped as {description, assets: [{id, name, enriched_desc, size}], "
    "relations: [{subject, relation, target, angle_deg?}], special, ground?}. "
    "Ids start at 1 in mention order; the second asset is the core and takes "
    "no relation; sizes are small|medium|large; relation values are free "
    "phrases; special is none or duplicate_x_alignment, duplicate_y_alignment, "
    "duplicate_facing. Enrich each asset description with shape and size cues."
)

CLASSIFY_PROMPT = (
    "Classify the spatial relation phrase into exactly one token: on, under, "
    "left, right, front, behind, far, near, center-aligned, leaning-on, "
    "facing, rotation. Reply with the token only."
)

CRITIC_PROMPT = (
    "You check a 3D layout against its scene description. You get asset "
    "placements, measured violations, the current score, and three "
    "orthographic snapshots. Reply with JSON only: {\"verdict\": \"positive\" "
    "or \"negative\", \"moves\": [{\"id\": assetId, \"move\": [dx, dy, dz]}], "
    "\"comment\": short reason}. Verdict positive means the layout is "
    "acceptable as is; otherwise propose the smallest moves that fix it."
)


def request_hash(body: dict) -> str:
    """sha256 over the canonical request body.

    Snapshot pixel payloads (and their digests) are dropped before
    hashing: the layout state in the body already pins the request, and
    keeping raster bytes out of the key means a compression or rendering
    library difference can never orphan a recorded response.
    """
    canon = copy.deepcopy(body)
    snaps = canon.get("snapshots")
    if isinstance(snaps, dict):
        for view in snaps.values():
            if isinstance(view, dict):
                view.pop("data", None)
                view.pop("sha256", None)
    encoded = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(encoded.encode()).hexdigest()


def encode_snapshot(ppm: bytes) -> dict:
    return {
        "encoding": "zlib+base64",
        "sha256": hashlib.sha256(ppm).hexdigest(),
        "data": base64.b64encode(zlib.compress(ppm, 6)).decode("ascii"),
    }


def decode_snapshot(blob: dict) -> bytes:
    if blob.get("encoding") != "zlib+base64":
        raise AgentError(f"unknown snapshot encoding {blob.get('encoding')!r}")
    return zlib.decompress(base64.b64decode(blob["data"]))


def _http_transport(client: "AgentClient", body: dict) -> dict:
    if not client.endpoint:
        raise AgentError("agent endpoint is not configured")
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(client.api_key_env, "") if client.api_key_env else ""
    if key:
        headers["Authorization"] = f"Bearer {key}"
    try:
        resp = requests.post(client.endpoint, json=body, headers=headers, timeout=120)
        resp.raise_for_status()
        return resp.json()
    except requests.RequestException as e:
        raise AgentError(f"agent request failed: {e}") from None
    except ValueError as e:
        raise AgentError(f"agent returned non-JSON body: {e}") from None


@dataclass
class AgentClient:
    """One configured agent endpoint plus its transcript."""

    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = "SCENEPOOL_API_KEY"
    mode: str = "replay"
    transcript_path: Path | None = None
    transport: Callable[["AgentClient", dict], dict] | None = None
    _cache: dict[str, dict] = field(default_factory=dict, repr=False)
    _loaded: bool = field(default=False, repr=False)

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path | None = None) -> "AgentClient":
        transcript = cfg.get("transcript")
        path = None
        if transcript:
            path = Path(transcript)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
        mode = cfg.get("mode", "replay")
        if mode not in ("live", "record", "replay"):
            raise AgentError(f"unknown agent mode '{mode}'")
        return cls(
            endpoint=cfg.get("endpoint", ""),
            model_name=cfg.get("model", ""),
            api_key_env=cfg.get("api_key_env", "SCENEPOOL_API_KEY"),
            mode=mode,
            transcript_path=path,
        )

    def effective_mode(self) -> str:
        if os.environ.get("NO_NETWORK") == "1":
            return "replay"
        return self.mode

    def _load_transcript(self):
        if self._loaded:
            return
        self._loaded = True
        if self.transcript_path is None or not Path(self.transcript_path).is_file():
            return
        with open(self.transcript_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    self._cache[entry["request_hash"]] = entry["response_body"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise AgentError(
                        f"corrupt transcript line in {self.transcript_path}"
                    ) from None

    def _append(self, h: str, body: dict, response: dict):
        if self.transcript_path is None:
            raise AgentError("record mode needs a transcript path")
        path = Path(self.transcript_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"request_hash": h, "request_body": body, "response_body": response}
        with FileLock(str(path) + ".lock"):
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._cache[h] = response

    def call(self, body: dict) -> dict:
        h = request_hash(body)
        mode = self.effective_mode()
        if mode == "replay":
            self._load_transcript()
            if h not in self._cache:
                raise AgentError(
                    f"no recorded response for request {h[:12]} "
                    f"(task {body.get('task')!r}, replay mode)"
                )
            return self._cache[h]
        transport = self.transport or _http_transport
        response = transport(self, body)
        if mode == "record":
            self._append(h, body, response)
        return response


def _content(response: dict) -> str:
    try:
        content = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise AgentError("agent response is not in chat-completion shape") from None
    if not isinstance(content, str):
        raise AgentError("agent response content is not text")
    return content


def _content_json(response: dict) -> dict:
    text = _content(response)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise AgentError(f"agent reply is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise AgentError("agent reply JSON is not an object")
    return data


def extract_scene_graph(client: AgentClient, text: str) -> scene_graph.SceneGraph:
    """Ask the extraction agent to turn free text into a scene graph."""
    if client is None:
        raise AgentError("scene-graph extraction needs an agent client")
    body = {
        "task": "extract_scene_graph",
        "model": client.model_name,
        "messages": [
            {"role": "system", "content": EXTRACT_PROMPT},
            {"role": "user", "content": text},
        ],
    }
    return scene_graph.graph_from_json(_content_json(client.call(body)))


def classify_relation(client: AgentClient | None, phrase: str) -> CanonicalRelation:
    """Canonicalize a relation phrase: keyword table first, agent fallback."""
    direct = classify_phrase(phrase)
    if direct is not None:
        return direct
    if client is None:
        raise AgentError(f"cannot classify relation phrase '{phrase}' without an agent")
    body = {
        "task": "classify_relation",
        "model": client.model_name,
        "messages": [
            {"role": "system", "content": CLASSIFY_PROMPT},
            {"role": "user", "content": phrase},
        ],
    }
    token = _content(client.call(body)).strip()
    rel = canonical_from_token(token)
    if rel is None:
        raise AgentError(f"agent answered with an unknown relation token {token!r}")
    return rel


@dataclass(slots=True)
class LayoutGuidance:
    """One suggested rigid move for one asset."""

    asset_id: int
    move: np.ndarray

    def __post_init__(self):
        self.move = np.asarray(self.move, dtype=np.float64).reshape(3)


@dataclass
class CritiqueResult:
    positive: bool
    moves: list[LayoutGuidance] = field(default_factory=list)
    comment: str = ""


def parse_critique(data: dict, delta_max: float = 0.5) -> CritiqueResult:
    """Validate critic JSON; move vectors longer than delta_max are scaled down."""
    verdict = str(data.get("verdict", "")).strip().lower()
    if verdict not in ("positive", "negative"):
        raise AgentError(f"critic verdict must be positive or negative, got {verdict!r}")
    moves: list[LayoutGuidance] = []
    for item in data.get("moves", []):
        try:
            asset_id = int(item["id"])
            vec = np.asarray(item["move"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError):
            raise AgentError(f"malformed critic move entry: {item!r}") from None
        if not np.all(np.isfinite(vec)):
            raise AgentError(f"critic move for asset {asset_id} is not finite")
        norm = float(np.linalg.norm(vec))
        if norm > delta_max > 0.0:
            vec = vec * (delta_max / norm)
        moves.append(LayoutGuidance(asset_id=asset_id, move=vec))
    return CritiqueResult(
        positive=(verdict == "positive"),
        moves=moves,
        comment=str(data.get("comment", "")),
    )


def critique_layout(client: AgentClient, payload: dict, delta_max: float = 0.5) -> CritiqueResult:
    """Send layout state plus snapshots to the critic agent."""
    if client is None:
        raise AgentError("layout critique needs an agent client")
    body = {
        "task": "critique_layout",
        "model": client.model_name,
        "messages": [{"role": "system", "content": CRITIC_PROMPT}],
        **payload,
    }
    return parse_critique(_content_json(client.call(body)), delta_max=delta_max)
