"""Transport between query bundles and a vision-language model.

Three pieces live here: a chat-completions style HTTP client with retry and
backoff, a deterministic scripted stand-in used for offline tests and
evaluation, and the logic that turns a parsed reply into a chosen grasp
(including the pixel-to-grasp matching used by the CPG strategy).
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import httpx
import numpy as np

from .candidates import CandidateSet, GraspCandidate
from .errors import (AmbiguousReply, AuthError, ConfigError, EmptyInput,
                     ModelError, TransportError, UnparseableReply,
                     VlmPointOffObject, VlmTimeout)
from .geometry import CameraIntrinsics, GraspPose, GripperGeometry, PointCloud, project_many
from .prompting import (MarkerStyle, QueryBundle, Strategy, VlmReply,
                        REPROMPT_REMINDER_CHOICE, REPROMPT_REMINDER_POINT,
                        build_query, encode_png, parse_reply)


class VlmBackend(Protocol):
    def complete(self, bundle: QueryBundle) -> str: ...


@dataclass(frozen=True)
class VlmEndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var_name: str = ""
    timeout_seconds: float = 60.0
    max_retries: int = 3
    retry_backoff_seconds: float = 1.0

    def __post_init__(self):
        if self.timeout_seconds <= 0:
            raise ConfigError("timeout must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


def build_request(bundle: QueryBundle, model_name: str) -> dict:
    """Chat-completion request body; images inline as base64 PNG."""
    content: list[dict] = [{"type": "text", "text": bundle.prompt}]
    for img in bundle.images:
        content.append({"type": "image",
                        "data": base64.b64encode(encode_png(img)).decode("ascii")})
    return {"model": model_name,
            "messages": [{"role": "user", "content": content}]}


def query(bundle: QueryBundle, endpoint: VlmEndpointConfig,
          client: httpx.Client | None = None,
          sleep: Callable[[float], None] = time.sleep) -> str:
    """Send one chat request; retry transient failures with backoff.

    4xx responses never retry: 401/403 raise AuthError, the rest ModelError.
    Timeouts, transport errors and 5xx retry up to max_retries.
    """
    headers = {}
    if endpoint.api_key_env_var_name:
        key = os.environ.get(endpoint.api_key_env_var_name)
        if not key:
            raise AuthError(
                f"environment variable {endpoint.api_key_env_var_name} is not set")
        headers["Authorization"] = f"Bearer {key}"
    body = build_request(bundle, endpoint.model_name)
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout_seconds)
    try:
        last_error: Exception | None = None
        for attempt in range(endpoint.max_retries + 1):
            if attempt > 0:
                sleep(endpoint.retry_backoff_seconds * 2 ** (attempt - 1))
            try:
                resp = client.post(endpoint.base_url, json=body, headers=headers)
            except httpx.TimeoutException as e:
                last_error = VlmTimeout(str(e))
                continue
            except httpx.TransportError as e:
                last_error = TransportError(str(e))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint returned {resp.status_code}")
            if 400 <= resp.status_code < 500:
                raise ModelError(f"{resp.status_code}: {resp.text[:300]}")
            if resp.status_code >= 500:
                last_error = ModelError(f"{resp.status_code}: {resp.text[:300]}")
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as e:
                raise ModelError(f"malformed response body: {e}")
        raise last_error
    finally:
        if own_client:
            client.close()


@dataclass(frozen=True)
class HttpVlm:
    endpoint: VlmEndpointConfig

    def complete(self, bundle: QueryBundle) -> str:
        return query(bundle, self.endpoint)


@dataclass(frozen=True)
class ScriptedVlm:
    """Deterministic offline backend: first matching rule wins.

    Rules are (match, response) pairs; ``match`` is either a substring
    tested against the prompt, a strategy name, or a callable over the
    bundle.
    """

    rules: tuple[tuple[object, str], ...] = ()
    default: str = ""

    def complete(self, bundle: QueryBundle) -> str:
        for match, response in self.rules:
            if callable(match):
                if match(bundle):
                    return response
            elif isinstance(match, Strategy):
                if bundle.strategy is match:
                    return response
            elif isinstance(match, str) and match in bundle.prompt:
                return response
        return self.default

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedVlm":
        doc = json.loads(Path(path).read_text())
        rules = tuple((r["match"], r["respond"]) for r in doc.get("rules", []))
        return cls(rules=rules, default=doc.get("default", ""))


class SequenceVlm:
    """Backend replaying a fixed list of responses (for reprompt tests)."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self._i = 0

    def complete(self, bundle: QueryBundle) -> str:
        r = self._responses[min(self._i, len(self._responses) - 1)]
        self._i += 1
        return r


# --- CPG point matching -----------------------------------------------------

@dataclass(frozen=True)
class MatchConfig:
    max_pixel_distance_px: float = 20.0  # at the 640 px reference width

    def __post_init__(self):
        if self.max_pixel_distance_px <= 0:
            raise ConfigError("max_pixel_distance_px must be positive")

    def threshold(self, image_width: int) -> float:
        return self.max_pixel_distance_px * image_width / 640.0


def match_point_to_grasp(px: tuple[float, float], cloud: PointCloud,
                         reps: CandidateSet, intr: CameraIntrinsics,
                         cfg: MatchConfig | None = None,
                         world_from_camera: GraspPose | None = None) -> GraspCandidate:
    """Two-stage nearest match: pixel -> cloud point -> grasp contact.

    Stage 1 finds the cloud point whose projection is nearest the queried
    pixel (rejecting off-object points past the threshold); stage 2 returns
    the candidate whose contact is nearest that 3D point. Ties break to the
    lower index in both stages.
    """
    cfg = cfg or MatchConfig()
    if len(cloud) == 0 or len(reps) == 0:
        raise EmptyInput("cloud and candidate set must be non-empty")
    proj = project_many(cloud.points, intr)
    d = np.hypot(proj[:, 0] - px[0], proj[:, 1] - px[1])
    best = int(np.argmin(d))
    if d[best] > cfg.threshold(intr.width):
        raise VlmPointOffObject(
            f"nearest projected point is {d[best]:.1f} px from ({px[0]}, {px[1]}), "
            f"threshold {cfg.threshold(intr.width):.1f}")
    p = cloud.points[best]
    if world_from_camera is not None:
        p = world_from_camera.transform(p)
    contacts = reps.contacts()
    dist3 = np.linalg.norm(contacts - p, axis=1)
    return reps[int(np.argmin(dist3))]


# --- selection orchestration ------------------------------------------------

@dataclass(frozen=True)
class AuditRecord:
    strategy: str
    prompt: str
    image_hashes: tuple[str, ...]
    attempts: tuple[str, ...]  # raw replies, in order
    parsed: str  # canonical form of the accepted reply, or ""
    chosen_id: int
    used_fallback: bool = False

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "prompt": self.prompt,
                "image_hashes": list(self.image_hashes),
                "attempts": list(self.attempts), "parsed": self.parsed,
                "chosen_id": self.chosen_id, "used_fallback": self.used_fallback}

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        return cls(strategy=d["strategy"], prompt=d["prompt"],
                   image_hashes=tuple(d["image_hashes"]),
                   attempts=tuple(d["attempts"]), parsed=d["parsed"],
                   chosen_id=int(d["chosen_id"]),
                   used_fallback=bool(d["used_fallback"]))


def append_audit(record: AuditRecord, path: str | Path) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def _hash_images(bundle: QueryBundle) -> tuple[str, ...]:
    return tuple(hashlib.sha256(img.tobytes()).hexdigest()[:16]
                 for img in bundle.images)


@dataclass(frozen=True)
class SelectConfig:
    reprompt_limit: int = 2  # extra attempts after an unparseable reply
    fallback_to_top_confidence: bool = False
    match: MatchConfig = field(default_factory=MatchConfig)


def select_grasp(image: np.ndarray, reps: CandidateSet, task_description: str,
                 strategy: Strategy, backend: VlmBackend,
                 intr: CameraIntrinsics,
                 cloud: PointCloud | None = None,
                 grip: GripperGeometry | None = None,
                 style: MarkerStyle | None = None,
                 world_from_camera: GraspPose | None = None,
                 cfg: SelectConfig | None = None) -> tuple[GraspCandidate, AuditRecord]:
    """Full query loop: build bundle, ask the backend, parse, resolve a grasp.

    Unparseable or ambiguous replies are re-asked with a terse format
    reminder up to the configured limit; an optional fallback then takes
    the top-confidence candidate instead of failing.
    """
    if len(reps) == 0:
        raise EmptyInput("no candidates to select from")
    cfg = cfg or SelectConfig()
    bundle = build_query(image, reps, task_description, strategy, intr,
                         grip=grip, style=style,
                         world_from_camera=world_from_camera)
    reminder = REPROMPT_REMINDER_POINT if strategy is Strategy.CPG \
        else REPROMPT_REMINDER_CHOICE
    image_size = (intr.width, intr.height)
    attempts: list[str] = []
    reply: VlmReply | None = None
    ask = bundle
    last_parse_error: Exception | None = None
    for attempt in range(cfg.reprompt_limit + 1):
        raw = backend.complete(ask)
        attempts.append(raw)
        try:
            reply = parse_reply(raw, strategy, len(bundle.candidate_order),
                                image_size)
            break
        except (UnparseableReply, AmbiguousReply) as e:
            last_parse_error = e
            ask = QueryBundle(images=bundle.images,
                              prompt=bundle.prompt + "\n\n" + reminder,
                              strategy=bundle.strategy,
                              candidate_order=bundle.candidate_order)
    if reply is None:
        if cfg.fallback_to_top_confidence:
            chosen = reps[0]
            record = AuditRecord(strategy=strategy.value, prompt=bundle.prompt,
                                 image_hashes=_hash_images(bundle),
                                 attempts=tuple(attempts), parsed="",
                                 chosen_id=chosen.id, used_fallback=True)
            return chosen, record
        raise last_parse_error
    if strategy is Strategy.CPG:
        if cloud is None:
            raise ConfigError("CPG selection needs the scene point cloud")
        chosen = match_point_to_grasp(reply.point, cloud, reps, intr,
                                      cfg=cfg.match,
                                      world_from_camera=world_from_camera)
    else:
        chosen = reps.by_id(bundle.candidate_order[reply.choice])
    record = AuditRecord(strategy=strategy.value, prompt=bundle.prompt,
                         image_hashes=_hash_images(bundle),
                         attempts=tuple(attempts), parsed=reply.canonical(),
                         chosen_id=chosen.id)
    return chosen, record
