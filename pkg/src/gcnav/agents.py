"""Agent backends: random, scripted oracle, noise-injecting oracle, and a
remote chat-completion client.

Every backend answers four kinds of request, all carried by an
:class:`AgentContext`: produce a dialogue turn (``utter``), recommend an
action (``recommend_action``, raw text that the protocol parses), answer a
yes/no question (``decide_yes_no``) and label a conversation (``classify``).

Local backends read the structured world state off the context; the remote
backend only sees the rendered prompts plus a textual (or raster) view.
"""

from __future__ import annotations

import base64
import io
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any

import httpx

from .text import is_preemptive
from .world import (
    ACTIONS,
    Action,
    Crop,
    GridWorld,
    GroundView,
    Heading,
    OverheadView,
    Pose,
    Unreachable,
    full_crop,
)

log = logging.getLogger(__name__)

ERROR_KINDS = ("Timeout", "RateLimited", "Refusal", "Malformed", "Network")


class BackendError(Exception):
    def __init__(self, kind: str, detail: str = "", attempts: int = 1):
        if kind not in ERROR_KINDS:
            raise ValueError(f"unknown backend error kind {kind!r}")
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail
        self.attempts = attempts


class MissingApiKey(ValueError):
    def __init__(self, var: str):
        super().__init__(f"environment variable {var} is not set")
        self.var = var


@dataclass
class AgentContext:
    """Everything a backend may look at for one request."""

    purpose: str  # utter | act | accept | gate | classify | probe
    role: str  # oa | ga | decider | classifier | probe
    system: str = ""
    user: str = ""
    world: GridWorld | None = None
    pose: Pose | None = None
    target: str | None = None
    ground_view: GroundView | None = None
    overhead_view: OverheadView | None = None
    transcript: tuple[tuple[str, str], ...] = ()
    step_index: int = 0
    c_len: int = 0
    recommended: Action | None = None
    probe_grid: int | None = None
    # backends that inject noise write ground-truth labels here
    labels: dict[str, Any] = field(default_factory=dict)


# --- view descriptions --------------------------------------------------------

_BEARING_PHRASE = {"Center": "ahead", "Left": "to my left", "Right": "to my right"}
EMPTY_VIEW_TEXT = "I see no notable objects from here."


def fmt_meters(d: float) -> str:
    return f"{d:.2f}".rstrip("0").rstrip(".") or "0"


def _article(label: str) -> str:
    return "an" if label[:1].lower() in "aeiou" else "a"


def describe_ground_view(view: GroundView) -> str:
    if not view.visible:
        return EMPTY_VIEW_TEXT
    parts = [
        f"{_article(s.label)} {s.label} {_BEARING_PHRASE[s.bearing]} at about {fmt_meters(s.distance)} meters"
        for s in view.visible
    ]
    if len(parts) == 1:
        body = parts[0]
    else:
        body = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"I see {body}."


def describe_overhead_view(view: OverheadView) -> str:
    codes: dict[str, str] = {}
    letters = iter("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz")
    rows = []
    for dy, row in enumerate(view.semantic_grid):
        out = []
        for dx, label in enumerate(row):
            cell = (view.crop.x + dx, view.crop.y + dy)
            if view.agent_marker == cell:
                out.append("@")
            elif label in (".", "#"):
                out.append(label)
            else:
                if label not in codes:
                    codes[label] = next(letters, "?")
                out.append(codes[label])
        rows.append("".join(out))
    legend = ", ".join(f"{c}={label}" for label, c in codes.items())
    marker = "@=ground agent" if view.agent_marker else "ground agent not in view"
    return "Top view ('.' free, '#' blocked, " + marker + "; " + legend + "):\n" + "\n".join(rows)


def grid_label(crop: Crop, cell: tuple[int, int], n: int) -> int:
    """1-based row-major label of the n x n overlay tile containing ``cell``'s center."""
    cx = (cell[0] - crop.x + 0.5) / crop.width
    cy = (cell[1] - crop.y + 0.5) / crop.height
    col = min(int(cx * n), n - 1)
    row = min(int(cy * n), n - 1)
    return row * n + col + 1


def label_to_rowcol(label: int, n: int) -> tuple[int, int]:
    return (label - 1) // n, (label - 1) % n


# --- backend interface --------------------------------------------------------


class AgentBackend:
    """Base class. Subclasses override the capabilities they support."""

    backend_id = "base"
    deterministic = True

    def bind(self, episode_seed: int, role: str) -> AgentBackend:
        """Return an instance scoped to one episode and role (fresh RNG streams)."""
        return self

    def utter(self, ctx: AgentContext) -> str:
        raise NotImplementedError

    def recommend_action(self, ctx: AgentContext) -> str:
        raise NotImplementedError

    def decide_yes_no(self, ctx: AgentContext) -> bool:
        raise NotImplementedError

    def classify(self, ctx: AgentContext) -> bool:
        raise NotImplementedError


class RandomBackend(AgentBackend):
    """Ignores its context entirely; uniform choices from a seeded stream."""

    backend_id = "random"
    LINES = (
        "I am not sure where to go.",
        "Let us keep looking.",
        "Nothing stands out to me.",
        "Maybe try another direction.",
    )

    def __init__(self, seed: int = 0, _stream: str | None = None):
        self.seed = seed
        self._rng = random.Random(_stream if _stream is not None else f"random:{seed}")

    def bind(self, episode_seed: int, role: str) -> RandomBackend:
        return RandomBackend(self.seed, f"random:{self.seed}:{episode_seed}:{role}")

    def utter(self, ctx: AgentContext) -> str:
        return self._rng.choice(self.LINES)

    def recommend_action(self, ctx: AgentContext | None = None) -> str:
        return self._rng.choice(ACTIONS).value

    def decide_yes_no(self, ctx: AgentContext | None = None) -> bool:
        return self._rng.random() < 0.5

    def classify(self, ctx: AgentContext | None = None) -> bool:
        return self._rng.random() < 0.5


def _turn_toward(heading: Heading, direction: Heading) -> Action:
    diff = (direction - heading) % 4
    if diff == 0:
        return Action.MOVE_AHEAD
    if diff == 3:
        return Action.ROTATE_LEFT
    return Action.ROTATE_RIGHT


def oracle_action(world: GridWorld, pose: Pose, target: str) -> Action:
    """First move of a shortest path to the target's adjacency region.

    Ties between equally short paths prefer the one needing the fewest
    rotations: ahead, then left, then right, then behind.
    """
    region = world.target_region(target)
    dist = world.distance_field(region)
    here = dist.get(pose.cell)
    if here is None:
        raise Unreachable(f"{target} unreachable from {pose}")
    if here == 0:
        return Action.DO_NOTHING
    order = [pose.heading, Heading((pose.heading - 1) % 4), Heading((pose.heading + 1) % 4),
             Heading((pose.heading + 2) % 4)]
    for direction in order:
        dx, dy = direction.vector
        if dist.get((pose.x + dx, pose.y + dy)) == here - 1:
            return _turn_toward(pose.heading, direction)
    raise Unreachable("distance field inconsistent")  # pragma: no cover


def _offset_in_agent_frame(pose: Pose, cell: tuple[int, int]) -> tuple[int, int]:
    """(forward, rightward) cell offsets of ``cell`` relative to the agent."""
    fx, fy = pose.heading.vector
    rx, ry = -fy, fx
    vx, vy = cell[0] - pose.x, cell[1] - pose.y
    return vx * fx + vy * fy, vx * rx + vy * ry


class OracleBackend(AgentBackend):
    """Truthful scripted agent with full knowledge of the simulator state."""

    backend_id = "oracle"

    def utter(self, ctx: AgentContext) -> str:
        if ctx.purpose == "probe":
            return str(self._locate(ctx))
        if ctx.role == "oa":
            return self._oa_turn(ctx)
        return describe_ground_view(ctx.ground_view) if ctx.ground_view else EMPTY_VIEW_TEXT

    def _oa_turn(self, ctx: AgentContext) -> str:
        view = ctx.overhead_view
        asked = sum(1 for speaker, _ in ctx.transcript if speaker == "OA")
        remaining = ctx.c_len - asked
        target_visible = view is not None and ctx.target in view.labels()
        if remaining > 1:
            if asked % 2 == 1 and target_visible:
                return f"Can you see the {ctx.target} from where you are?"
            return "What objects can you see in front of you?"
        if view is None or view.agent_marker is None:
            return "I cannot locate you from above. Describe what you see around you."
        if not target_visible:
            return "I cannot find the target from above. Describe what you see around you."
        return self._guidance(ctx)

    def _guidance(self, ctx: AgentContext) -> str:
        world, pose, target = ctx.world, ctx.pose, ctx.target
        view = ctx.overhead_view
        cells = [
            (view.crop.x + dx, view.crop.y + dy)
            for dy, row in enumerate(view.semantic_grid)
            for dx, label in enumerate(row)
            if label == target
        ]
        pose = pose or Pose(view.agent_marker[0], view.agent_marker[1], Heading.NORTH)
        best = min(cells, key=lambda c: (math.hypot(c[0] - pose.x, c[1] - pose.y), c))
        fwd, right = _offset_in_agent_frame(pose, best)
        size = world.cell_size if world else 0.25
        pieces = []
        if fwd:
            pieces.append(f"{fmt_meters(abs(fwd) * size)} meters {'ahead' if fwd > 0 else 'behind you'}")
        if right:
            pieces.append(f"{fmt_meters(abs(right) * size)} meters to your {'right' if right > 0 else 'left'}")
        where = " and ".join(pieces) if pieces else "right next to you"
        return f"From above, the {target} is about {where}. Rotate toward it and move ahead when the way is clear."

    def _locate(self, ctx: AgentContext) -> int:
        view = ctx.overhead_view
        crop = view.crop if view else full_crop(ctx.world)
        return grid_label(crop, ctx.pose.cell, ctx.probe_grid)

    def recommend_action(self, ctx: AgentContext) -> str:
        return oracle_action(ctx.world, ctx.pose, ctx.target).value

    def decide_yes_no(self, ctx: AgentContext) -> bool:
        if ctx.purpose == "gate":
            # ask for help only when the target is not already in sight
            return not (ctx.ground_view and ctx.target in ctx.ground_view.labels())
        return ctx.recommended == oracle_action(ctx.world, ctx.pose, ctx.target)

    def classify(self, ctx: AgentContext) -> bool:
        return is_preemptive(ctx.user)


@dataclass(frozen=True)
class NoiseParams:
    p_preemptive: float = 0.0
    p_ghost: float = 0.0
    p_bad_action: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_preemptive", "p_ghost", "p_bad_action"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


# Versioned: metrics tests rely on every phrase being past/perfect-tense motion.
PREEMPTIVE_PHRASES_VERSION = 1
PREEMPTIVE_PHRASES: tuple[str, ...] = (
    "I have moved towards the room.",
    "I have already moved forward a little.",
    "I have turned to face the open area.",
    "I have entered the next room.",
    "I moved closer as you suggested.",
    "I went ahead a few steps.",
    "I have advanced past the corner.",
    "I have rotated to the left.",
)

GHOST_OBJECTS: tuple[str, ...] = (
    "Piano", "Aquarium", "Fireplace", "Bicycle", "Guitar", "Treadmill", "Surfboard", "Canoe",
)


class NoisyBackend(AgentBackend):
    """Oracle (or any base backend) with controlled hallucination injection.

    Injection is decided once per step from a stream keyed on
    ``(seed, episode, step)``, and lands in the first ground-agent reply of
    that step. What was injected is written to ``ctx.labels``.
    """

    backend_id = "noisy"

    def __init__(self, params: NoiseParams, base: AgentBackend | None = None, _episode: int | None = None):
        self.params = params
        self.base = base or OracleBackend()
        self._episode = _episode

    def bind(self, episode_seed: int, role: str) -> NoisyBackend:
        return NoisyBackend(self.params, self.base.bind(episode_seed, role), episode_seed)

    def _step_rng(self, step: int, what: str) -> random.Random:
        return random.Random(f"noisy:{self.params.seed}:{self._episode}:{step}:{what}")

    def step_draws(self, step: int, vocabulary: frozenset[str] = frozenset()) -> dict[str, Any]:
        rng = self._step_rng(step, "utter")
        preemptive = rng.random() < self.params.p_preemptive
        ghost = rng.random() < self.params.p_ghost
        phrase = rng.choice(PREEMPTIVE_PHRASES)
        vocab = {v.lower() for v in vocabulary}
        ghosts = [g for g in GHOST_OBJECTS if g.lower() not in vocab]
        ghost_label = rng.choice(ghosts) if ghosts else None
        return {
            "preemptive": preemptive,
            "ghost": ghost and ghost_label is not None,
            "phrase": phrase,
            "ghost_label": ghost_label,
        }

    def utter(self, ctx: AgentContext) -> str:
        text = self.base.utter(ctx)
        if ctx.role != "ga" or ctx.purpose != "utter" or len(ctx.transcript) != 1:
            return text
        vocab = ctx.world.vocabulary() if ctx.world else frozenset()
        draws = self.step_draws(ctx.step_index, vocab)
        ctx.labels["preemptive"] = draws["preemptive"]
        ctx.labels["ghost"] = draws["ghost"]
        if draws["preemptive"]:
            text = f"{text} {draws['phrase']}"
        if draws["ghost"]:
            text = f"{text} I also notice {_article(draws['ghost_label'])} {draws['ghost_label']} nearby."
            ctx.labels["ghost_label"] = draws["ghost_label"]
        return text

    def recommend_action(self, ctx: AgentContext) -> str:
        rng = self._step_rng(ctx.step_index, f"act:{ctx.role}:{ctx.purpose}")
        if rng.random() < self.params.p_bad_action:
            return rng.choice(ACTIONS).value
        return self.base.recommend_action(ctx)

    def decide_yes_no(self, ctx: AgentContext) -> bool:
        return self.base.decide_yes_no(ctx)

    def classify(self, ctx: AgentContext) -> bool:
        return self.base.classify(ctx)


class ScriptedBackend(AgentBackend):
    """Replays fixed sequences; anything not scripted is delegated to ``base``.

    Sequences cycle. Counters restart for every bound episode, so a yes/no
    script of ``[True, False]`` alternates within each episode.
    """

    backend_id = "scripted"

    def __init__(self, base: AgentBackend | None = None, yes_no=None, actions=None,
                 utterances=None, classify_answers=None, errors: dict | None = None):
        self.base = base or OracleBackend()
        self.yes_no = list(yes_no) if yes_no is not None else None
        self.actions = list(actions) if actions is not None else None
        self.utterances = list(utterances) if utterances is not None else None
        self.classify_answers = list(classify_answers) if classify_answers is not None else None
        # {(method, call_index): BackendError kind} for exercising failure paths
        self.errors = dict(errors or {})
        self._counts: dict[str, int] = {}

    def bind(self, episode_seed: int, role: str) -> ScriptedBackend:
        return ScriptedBackend(self.base.bind(episode_seed, role), self.yes_no, self.actions,
                               self.utterances, self.classify_answers, self.errors)

    def _next(self, method: str, seq):
        i = self._counts.get(method, 0)
        self._counts[method] = i + 1
        kind = self.errors.get((method, i))
        if kind:
            raise BackendError(kind, f"scripted {method} failure at call {i}")
        return None if seq is None else seq[i % len(seq)]

    def utter(self, ctx: AgentContext) -> str:
        value = self._next("utter", self.utterances)
        return self.base.utter(ctx) if value is None else value

    def recommend_action(self, ctx: AgentContext) -> str:
        value = self._next("recommend_action", self.actions)
        return self.base.recommend_action(ctx) if value is None else str(value)

    def decide_yes_no(self, ctx: AgentContext) -> bool:
        value = self._next("decide_yes_no", self.yes_no)
        return self.base.decide_yes_no(ctx) if value is None else bool(value)

    def classify(self, ctx: AgentContext) -> bool:
        value = self._next("classify", self.classify_answers)
        return self.base.classify(ctx) if value is None else bool(value)


# --- remote chat-completion client --------------------------------------------

DEFAULT_REFUSAL_MARKERS: tuple[str, ...] = (
    "i'm sorry, but i can't",
    "i’m sorry, but i can’t",
    "i cannot assist with",
    "i can't assist with",
    "i'm unable to help with",
    "i can't help with that",
    "content_policy_violation",
    "content management policy",
)


@dataclass(frozen=True)
class RemoteConfig:
    endpoint_url: str
    model_name: str = "gpt-4-turbo"
    temperature: float = 0.2
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 5
    max_in_flight: int = 4
    api_key_env_var_name: str = "OPENAI_API_KEY"
    refusal_markers: tuple[str, ...] = DEFAULT_REFUSAL_MARKERS
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    attach_images: bool = False

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        object.__setattr__(self, "refusal_markers", tuple(m.lower() for m in self.refusal_markers))


@dataclass(frozen=True)
class Completion:
    text: str
    attempts: int


_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_yes_no(text: str, strict: bool = False) -> bool:
    """``strict`` demands the whole reply be Yes/No (trailing period allowed)."""
    if strict:
        word = text.strip().rstrip(".!").strip().lower()
        if word in ("yes", "no"):
            return word == "yes"
        raise BackendError("Malformed", f"expected Yes or No, got {text!r}")
    m = _YES_NO_RE.search(text)
    if not m:
        raise BackendError("Malformed", f"no Yes/No in reply {text!r}")
    return m.group(1).lower() == "yes"


class RemoteBackend(AgentBackend):
    """Chat-completion client with bounded concurrency and retry/backoff.

    Timeouts, 429s, transport errors and 5xx responses are retried with
    exponential backoff. Refusals (content-filter finish reasons, policy error
    codes, or configured marker phrases) are raised immediately.
    """

    backend_id = "remote"
    deterministic = False

    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None,
                 sleep=time.sleep):
        self.config = config
        key = os.environ.get(config.api_key_env_var_name)
        if not key:
            raise MissingApiKey(config.api_key_env_var_name)
        self._key = key
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._guard = threading.Lock()
        self._cooldown_until = 0.0
        self.calls = 0
        self.retries = 0

    def close(self) -> None:
        self._client.close()

    # wire ------------------------------------------------------------------

    def _request_body(self, messages: list[dict]) -> dict:
        return {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def _wait_cooldown(self) -> None:
        with self._guard:
            delay = self._cooldown_until - time.monotonic()
        if delay > 0:
            self._sleep(delay)

    def _set_cooldown(self, seconds: float) -> None:
        with self._guard:
            self._cooldown_until = max(self._cooldown_until, time.monotonic() + seconds)

    def _attempt(self, body: dict) -> str:
        headers = {"Authorization": f"Bearer {self._key}"}
        self._wait_cooldown()
        with self._slots:
            try:
                resp = self._client.post(self.config.endpoint_url, json=body, headers=headers,
                                         timeout=self.config.timeout)
            except httpx.TimeoutException as exc:
                raise BackendError("Timeout", str(exc)) from exc
            except httpx.TransportError as exc:
                raise BackendError("Network", str(exc)) from exc
        return self._interpret(resp)

    def _interpret(self, resp: httpx.Response) -> str:
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            if retry_after:
                try:
                    self._set_cooldown(float(retry_after))
                except ValueError:
                    pass
            raise BackendError("RateLimited", resp.text[:200])
        try:
            payload = resp.json()
        except ValueError:
            payload = None
        if resp.status_code >= 500:
            raise BackendError("Network", f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            err = (payload or {}).get("error", {}) if isinstance(payload, dict) else {}
            code = str(err.get("code", "")) + " " + str(err.get("message", ""))
            if self._is_refusal(code):
                raise BackendError("Refusal", code.strip())
            raise _Fatal("Network", f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (TypeError, KeyError, IndexError) as exc:
            raise BackendError("Malformed", f"unexpected response shape: {str(payload)[:200]}") from exc
        if choice.get("finish_reason") == "content_filter":
            raise BackendError("Refusal", "finish_reason=content_filter")
        if not isinstance(text, str):
            raise BackendError("Malformed", "completion has no text content")
        if self._is_refusal(text):
            raise BackendError("Refusal", text[:200])
        return text

    def _is_refusal(self, text: str) -> bool:
        low = text.lower()
        return any(m in low for m in self.config.refusal_markers)

    def call(self, messages: list[dict], image_payload: bytes | None = None) -> Completion:
        if image_payload is not None:
            messages = _attach_image(messages, image_payload)
        body = self._request_body(messages)
        attempts = 0
        while True:
            attempts += 1
            with self._guard:
                self.calls += 1
            try:
                return Completion(self._attempt(body), attempts)
            except _Fatal as exc:
                raise BackendError(exc.kind, exc.detail, attempts) from None
            except BackendError as exc:
                exc.attempts = attempts
                if exc.kind not in ("Timeout", "RateLimited", "Network") or attempts > self.config.max_retries:
                    raise
                delay = min(self.config.backoff_max, self.config.backoff_base * 2 ** (attempts - 1))
                log.warning("remote %s (attempt %d), retrying in %.2fs", exc.kind, attempts, delay)
                with self._guard:
                    self.retries += 1
                self._sleep(delay)

    # capabilities ------------------------------------------------------------

    def _messages(self, ctx: AgentContext) -> tuple[list[dict], bytes | None]:
        parts = [{"type": "text", "text": ctx.user}]
        image = None
        observation = None
        if ctx.role in ("oa", "probe") and ctx.overhead_view is not None:
            observation = describe_overhead_view(ctx.overhead_view)
            if self.config.attach_images and ctx.world is not None:
                image = render_topdown_png(ctx.world, ctx.overhead_view)
        elif ctx.ground_view is not None:
            observation = "Camera view: " + describe_ground_view(ctx.ground_view)
        if observation and image is None:
            parts.append({"type": "text", "text": observation})
        messages = []
        if ctx.system:
            messages.append({"role": "system", "content": ctx.system})
        messages.append({"role": "user", "content": parts})
        return messages, image

    def utter(self, ctx: AgentContext) -> str:
        return self.call(*self._messages(ctx)).text.strip()

    def recommend_action(self, ctx: AgentContext) -> str:
        return self.call(*self._messages(ctx)).text

    def decide_yes_no(self, ctx: AgentContext) -> bool:
        return parse_yes_no(self.call(*self._messages(ctx)).text)

    def classify(self, ctx: AgentContext) -> bool:
        messages = [{"role": "system", "content": ctx.system}, {"role": "user", "content": ctx.user}]
        return parse_yes_no(self.call(messages).text, strict=True)


class _Fatal(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail


def _attach_image(messages: list[dict], png: bytes) -> list[dict]:
    url = "data:image/png;base64," + base64.b64encode(png).decode()
    out = [dict(m) for m in messages]
    last = out[-1]
    content = last["content"]
    if isinstance(content, str):
        content = [{"type": "text", "text": content}]
    last["content"] = list(content) + [{"type": "image_url", "image_url": {"url": url}}]
    return out


_PALETTE = [(230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
            (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212)]


def render_topdown_png(world: GridWorld, view: OverheadView, px: int = 16) -> bytes:
    """Simple cell-color bitmap of an overhead crop; the agent is drawn black."""
    from PIL import Image

    labels = sorted(world.vocabulary())
    color = {label: _PALETTE[i % len(_PALETTE)] for i, label in enumerate(labels)}
    h, w = len(view.semantic_grid), len(view.semantic_grid[0])
    img = Image.new("RGB", (w * px, h * px), (255, 255, 255))
    for dy, row in enumerate(view.semantic_grid):
        for dx, label in enumerate(row):
            if label == ".":
                continue
            fill = (96, 96, 96) if label == "#" else color[label]
            img.paste(fill, (dx * px, dy * px, (dx + 1) * px, (dy + 1) * px))
    if view.agent_marker is not None:
        ax, ay = view.agent_marker[0] - view.crop.x, view.agent_marker[1] - view.crop.y
        img.paste((0, 0, 0), (ax * px + px // 4, ay * px + px // 4, ax * px + 3 * px // 4, ay * px + 3 * px // 4))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# --- construction from config -------------------------------------------------


def build_backend(spec: dict | str, default_seed: int = 0) -> AgentBackend:
    """Build a backend from ``{"id": ..., "params": {...}}`` (or a bare id)."""
    if isinstance(spec, str):
        spec = {"id": spec}
    bid = spec.get("id")
    params = dict(spec.get("params") or {})
    if bid == "random":
        return RandomBackend(int(params.get("seed", default_seed)))
    if bid == "oracle":
        return OracleBackend()
    if bid == "noisy":
        params.setdefault("seed", default_seed)
        base = build_backend(params.pop("base"), default_seed) if "base" in params else None
        return NoisyBackend(NoiseParams(**params), base)
    if bid == "scripted":
        base = build_backend(params.pop("base"), default_seed) if "base" in params else None
        return ScriptedBackend(base, params.get("yes_no"), params.get("actions"),
                               params.get("utterances"), params.get("classify_answers"))
    if bid == "remote":
        if "refusal_markers" in params:
            params["refusal_markers"] = tuple(params["refusal_markers"])
        return RemoteBackend(RemoteConfig(**params))
    raise ValueError(f"unknown backend id {bid!r}")
