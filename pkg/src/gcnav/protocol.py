"""Episode state machine for the five execution modes.

A step in a communication mode runs the dialogue phase (``c_len`` overhead
queries, each answered by the ground agent), concatenates the turns into a
speaker-tagged summary, and hands that summary plus the last-action context
to a decider backend. The modes differ in what happens to the decider's
recommendation.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import prompts
from .agents import AgentBackend, AgentContext, BackendError, RandomBackend, fmt_meters
from .world import (
    Action,
    ActionResult,
    Crop,
    GridWorld,
    Pose,
    Unreachable,
    apply_action,
    distance_to_target,
    dumps_world,
    ground_observation,
    overhead_observation,
    parse_action,
)


class Mode(str, enum.Enum):
    RANDOM = "Random"
    NO_COMM = "NoComm"
    COOPERATIVE_ACTION = "CooperativeAction"
    SELECTIVE_ACTION = "SelectiveAction"
    SELECTIVE_COMMUNICATION = "SelectiveCommunication"

    def __str__(self) -> str:
        return self.value

    @property
    def communicates(self) -> bool:
        return self not in (Mode.RANDOM, Mode.NO_COMM)


class Outcome(str, enum.Enum):
    ORACLE_SUCCESS = "OracleSuccess"
    FAILURE = "Failure"
    EXCLUDED = "Excluded"

    def __str__(self) -> str:
        return self.value


class SpecError(ValueError):
    pass


def world_fingerprint(world: GridWorld) -> str:
    return hashlib.sha256(dumps_world(world).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EpisodeSpec:
    world: GridWorld | None
    start_pose: Pose
    target_label: str
    mode: Mode
    k: int = 10
    c_len: int = 0
    success_radius: float = 1.0
    seed: int = 0
    fov_half_angle: float = 45.0
    view_range: float = 2.0
    crop: Crop | None = None
    early_stop: bool = True
    episode_id: str = ""
    world_name: str = ""
    world_fingerprint: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.world is not None:
            if not self.world_name:
                object.__setattr__(self, "world_name", self.world.name)
            actual = world_fingerprint(self.world)
            if self.world_fingerprint is not None and self.world_fingerprint != actual:
                raise SpecError(f"world {self.world_name} does not match the recorded fingerprint")
            object.__setattr__(self, "world_fingerprint", actual)

    def validate(self) -> None:
        if self.k < 1:
            raise SpecError("step budget k must be >= 1")
        if (self.c_len == 0) != (not self.mode.communicates):
            raise SpecError(f"c_len={self.c_len} is inconsistent with mode {self.mode}")
        if self.c_len < 0:
            raise SpecError("c_len must be >= 0")
        if self.success_radius < 0:
            raise SpecError("success_radius must be >= 0")
        if self.world is None:
            raise SpecError("spec has no world attached")
        if len(self.world.instances(self.target_label)) != 1:
            raise SpecError(f"target {self.target_label!r} must exist exactly once")
        if not self.world.is_free(self.start_pose.cell):
            raise SpecError(f"start pose {self.start_pose} is not on a free cell")
        try:
            distance_to_target(self.world, self.start_pose.cell, self.target_label)
        except Unreachable as exc:
            raise SpecError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "world_name": self.world_name,
            "world_fingerprint": self.world_fingerprint,
            "start_pose": self.start_pose.to_dict(),
            "target_label": self.target_label,
            "mode": self.mode.value,
            "k": self.k,
            "c_len": self.c_len,
            "success_radius": self.success_radius,
            "seed": self.seed,
            "fov_half_angle": self.fov_half_angle,
            "view_range": self.view_range,
            "crop": None if self.crop is None else [self.crop.x, self.crop.y, self.crop.width, self.crop.height],
            "early_stop": self.early_stop,
        }

    @classmethod
    def from_dict(cls, d: dict, world: GridWorld | None = None) -> EpisodeSpec:
        crop = Crop(*d["crop"]) if d.get("crop") else None
        return cls(world, Pose.from_dict(d["start_pose"]), d["target_label"], Mode(d["mode"]), d["k"],
                   d["c_len"], d["success_radius"], d["seed"], d["fov_half_angle"], d["view_range"], crop,
                   d["early_stop"], d["episode_id"], d["world_name"], d.get("world_fingerprint"))


@dataclass(frozen=True)
class DialogueTurn:
    step_index: int
    turn_index: int
    speaker: str  # "OA" | "GA"
    text: str

    def to_dict(self) -> dict:
        return {"step_index": self.step_index, "turn_index": self.turn_index, "speaker": self.speaker,
                "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> DialogueTurn:
        return cls(d["step_index"], d["turn_index"], d["speaker"], d["text"])


SUMMARY_SEPARATOR = "\n"


def summarize(transcript: Sequence[DialogueTurn]) -> str:
    """Speaker-tagged, order-preserving concatenation of a step's turns."""
    if not transcript:
        raise ValueError("cannot summarize an empty transcript")
    return SUMMARY_SEPARATOR.join(f"{t.speaker}: {t.text}" for t in transcript)


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    executed_action: Action
    result: ActionResult
    distance_after: float
    action_source: str  # random | ga_solo | llm_coop | ga_override
    transcript: tuple[DialogueTurn, ...] | None = None
    summary: str | None = None
    recommended_action: Action | None = None
    cooperated: bool | None = None
    initiated_comm: bool | None = None
    parse_failure: bool = False
    raw_action_text: str | None = None
    injected: dict | None = None

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "transcript": None if self.transcript is None else [t.to_dict() for t in self.transcript],
            "summary": self.summary,
            "recommended_action": None if self.recommended_action is None else self.recommended_action.value,
            "action_source": self.action_source,
            "cooperated": self.cooperated,
            "initiated_comm": self.initiated_comm,
            "executed_action": self.executed_action.value,
            "raw_action_text": self.raw_action_text,
            "parse_failure": self.parse_failure,
            "result": self.result.to_dict(),
            "distance_after": self.distance_after,
            "injected": self.injected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StepRecord:
        transcript = None if d["transcript"] is None else tuple(DialogueTurn.from_dict(t) for t in d["transcript"])
        rec = d["recommended_action"]
        return cls(
            step_index=d["step_index"],
            executed_action=Action(d["executed_action"]),
            result=ActionResult.from_dict(d["result"]),
            distance_after=d["distance_after"],
            action_source=d["action_source"],
            transcript=transcript,
            summary=d["summary"],
            recommended_action=None if rec is None else Action(rec),
            cooperated=d["cooperated"],
            initiated_comm=d["initiated_comm"],
            parse_failure=d["parse_failure"],
            raw_action_text=d["raw_action_text"],
            injected=d["injected"],
        )


@dataclass(frozen=True)
class EpisodeRecord:
    spec: EpisodeSpec
    steps: tuple[StepRecord, ...]
    outcome: Outcome
    initial_distance: float
    min_distance: float
    final_distance: float
    shortest_path_length: float
    path_length: float
    vocabulary: tuple[str, ...] = ()
    exclusion: dict | None = None

    @property
    def excluded(self) -> bool:
        return self.outcome is Outcome.EXCLUDED

    @property
    def ground_truth_flags(self) -> list[dict | None] | None:
        flags = [s.injected for s in self.steps]
        return flags if any(f is not None for f in flags) else None

    def transcripts(self) -> list[tuple[DialogueTurn, ...]]:
        return [s.transcript for s in self.steps if s.transcript]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "vocabulary": list(self.vocabulary),
            "outcome": self.outcome.value,
            "exclusion": self.exclusion,
            "initial_distance": self.initial_distance,
            "min_distance": self.min_distance,
            "final_distance": self.final_distance,
            "shortest_path_length": self.shortest_path_length,
            "path_length": self.path_length,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict, world: GridWorld | None = None) -> EpisodeRecord:
        return cls(
            spec=EpisodeSpec.from_dict(d["spec"], world),
            steps=tuple(StepRecord.from_dict(s) for s in d["steps"]),
            outcome=Outcome(d["outcome"]),
            initial_distance=d["initial_distance"],
            min_distance=d["min_distance"],
            final_distance=d["final_distance"],
            shortest_path_length=d["shortest_path_length"],
            path_length=d["path_length"],
            vocabulary=tuple(d["vocabulary"]),
            exclusion=d["exclusion"],
        )


@dataclass
class Backends:
    """Backends by role. ``decider`` turns a dialogue summary into an action."""

    oa: AgentBackend
    ga: AgentBackend
    decider: AgentBackend
    random: AgentBackend = field(default_factory=RandomBackend)
    # optional abstractive rewrite of the summary before the decider sees it
    summary_hook: Callable[[str], str] | None = None

    def bound(self, episode_seed: int) -> Backends:
        return Backends(self.oa.bind(episode_seed, "oa"), self.ga.bind(episode_seed, "ga"),
                        self.decider.bind(episode_seed, "decider"), self.random.bind(episode_seed, "random"),
                        self.summary_hook)


# --- per-step machinery -------------------------------------------------------


@dataclass
class _State:
    pose: Pose
    last_action: Action = Action.DO_NOTHING
    last_result: ActionResult | None = None
    distance: float = 0.0
    views: tuple | None = None


def _views(spec: EpisodeSpec, state: _State):
    if state.views is None:
        state.views = (ground_observation(spec.world, state.pose, spec.fov_half_angle, spec.view_range),
                       overhead_observation(spec.world, state.pose, spec.crop))
    return state.views


def _context(spec: EpisodeSpec, state: _State, step: int, purpose: str, role: str, **kw) -> AgentContext:
    ground, overhead = _views(spec, state)
    return AgentContext(purpose=purpose, role=role, world=spec.world, pose=state.pose, target=spec.target_label,
                        ground_view=ground, overhead_view=overhead, step_index=step, c_len=spec.c_len, **kw)


def _outcome_word(state: _State) -> str:
    ok = state.last_result is None or state.last_result.succeeded
    return "successfully" if ok else "unsuccessfully"


def last_action_prompt(spec: EpisodeSpec, state: _State) -> str:
    """User prompt describing the last action, its result and the distance left."""
    text = prompts.render("no_comm_ground_user", {
        "target_object": spec.target_label,
        "last_action": state.last_action.value,
        "outcome": _outcome_word(state),
        "distance": f"{fmt_meters(state.distance)} meters",
    })
    if state.last_result is not None and not state.last_result.succeeded:
        text += "\n" + prompts.render("no_comm_blocked_suffix",
                                      {"blocking_object": state.last_result.blocking_object})
    return text


def _dialogue_text(turns: Sequence[DialogueTurn]) -> str:
    return summarize(turns) if turns else ""


def run_comm_phase(oa: AgentBackend, ga: AgentBackend, spec: EpisodeSpec, pose: Pose,
                   step: int = 0, state: _State | None = None) -> tuple[tuple[DialogueTurn, ...], dict | None]:
    """Run ``c_len`` OA-query / GA-reply rounds. Returns turns and any injected labels."""
    if spec.c_len < 1:
        raise ValueError("communication phase needs c_len >= 1")
    state = state or _State(pose)
    target = spec.target_label
    oa_system = prompts.render("comm_oa_system", {"target_object": target})
    ga_system = prompts.render("comm_ga_system", {"target_object": target})
    turns: list[DialogueTurn] = []
    labels: dict | None = None
    for i in range(spec.c_len):
        as_pairs = tuple((t.speaker, t.text) for t in turns)
        ctx = _context(spec, state, step, "utter", "oa", system=oa_system,
                       user=prompts.render("comm_oa_user", {"c_len_remaining": str(spec.c_len - i),
                                                            "dialogue": _dialogue_text(turns)}),
                       transcript=as_pairs)
        turns.append(DialogueTurn(step, len(turns), "OA", oa.utter(ctx)))
        as_pairs = tuple((t.speaker, t.text) for t in turns)
        ctx = _context(spec, state, step, "utter", "ga", system=ga_system,
                       user=prompts.render("comm_ga_user", {"dialogue": _dialogue_text(turns)}),
                       transcript=as_pairs)
        turns.append(DialogueTurn(step, len(turns), "GA", ga.utter(ctx)))
        if ctx.labels:
            labels = {**(labels or {}), **ctx.labels}
    return tuple(turns), labels


def _execute(spec: EpisodeSpec, state: _State, action: Action) -> tuple[ActionResult, float]:
    result = apply_action(spec.world, state.pose, action)
    return result, distance_to_target(spec.world, result.new_pose.cell, spec.target_label)


def _solo_action(spec, state, step, ga: AgentBackend) -> tuple[Action, bool, str]:
    ctx = _context(spec, state, step, "act", "ga", system=prompts.render("no_comm_ground_system"),
                   user=last_action_prompt(spec, state))
    raw = ga.recommend_action(ctx)
    action, failed = parse_action(raw)
    return action, failed, raw


def _step_random(spec, state, step, b: Backends) -> StepRecord:
    raw = b.random.recommend_action(_context(spec, state, step, "act", "ga"))
    action, failed = parse_action(raw)
    result, dist = _execute(spec, state, action)
    return StepRecord(step, action, result, dist, "random", parse_failure=failed, raw_action_text=raw)


def run_step_no_comm(spec, state, step, b: Backends) -> StepRecord:
    action, failed, raw = _solo_action(spec, state, step, b.ga)
    result, dist = _execute(spec, state, action)
    return StepRecord(step, action, result, dist, "ga_solo", parse_failure=failed, raw_action_text=raw)


def _comm_and_recommend(spec, state, step, b: Backends):
    turns, labels = run_comm_phase(b.oa, b.ga, spec, state.pose, step, state)
    summary = summarize(turns)
    shown = b.summary_hook(summary) if b.summary_hook else summary
    ctx = _context(spec, state, step, "act", "decider", system=prompts.render("no_comm_ground_system"),
                   user=shown + "\n\n" + last_action_prompt(spec, state),
                   transcript=tuple((t.speaker, t.text) for t in turns))
    raw = b.decider.recommend_action(ctx)
    action, failed = parse_action(raw)
    return turns, summary, labels, action, failed, raw


def run_step_cooperative(spec, state, step, b: Backends, initiated_comm: bool | None = None) -> StepRecord:
    turns, summary, labels, action, failed, raw = _comm_and_recommend(spec, state, step, b)
    result, dist = _execute(spec, state, action)
    return StepRecord(step, action, result, dist, "llm_coop", transcript=turns, summary=summary,
                      recommended_action=action, initiated_comm=initiated_comm, parse_failure=failed,
                      raw_action_text=raw, injected=labels)


def run_step_selective_action(spec, state, step, b: Backends) -> StepRecord:
    turns, summary, labels, recommended, failed, raw = _comm_and_recommend(spec, state, step, b)
    ctx = _context(spec, state, step, "accept", "ga", system=prompts.render("exec_selective_ga_system"),
                   user=prompts.render("exec_selective_ga_user", {"target_object": spec.target_label,
                                                                  "action_command": recommended.value}),
                   recommended=recommended)
    if b.ga.decide_yes_no(ctx):
        action, source, cooperated = recommended, "llm_coop", True
    else:
        action, failed, raw = _solo_action(spec, state, step, b.ga)
        source, cooperated = "ga_override", False
    result, dist = _execute(spec, state, action)
    return StepRecord(step, action, result, dist, source, transcript=turns, summary=summary,
                      recommended_action=recommended, cooperated=cooperated, parse_failure=failed,
                      raw_action_text=raw, injected=labels)


def run_step_selective_comm(spec, state, step, b: Backends) -> StepRecord:
    gate = prompts.render("selective_comm_gate", {"target_object": spec.target_label,
                                                  "last_action": state.last_action.value,
                                                  "outcome": _outcome_word(state)})
    if b.ga.decide_yes_no(_context(spec, state, step, "gate", "ga", user=gate)):
        return run_step_cooperative(spec, state, step, b, initiated_comm=True)
    return replace(run_step_no_comm(spec, state, step, b), initiated_comm=False)


_STEP_FNS = {
    Mode.RANDOM: _step_random,
    Mode.NO_COMM: run_step_no_comm,
    Mode.COOPERATIVE_ACTION: run_step_cooperative,
    Mode.SELECTIVE_ACTION: run_step_selective_action,
    Mode.SELECTIVE_COMMUNICATION: run_step_selective_comm,
}


def run_episode(spec: EpisodeSpec, backends: Backends) -> EpisodeRecord:
    """Run up to ``k`` steps. Any backend error aborts the episode as Excluded."""
    spec.validate()
    world = spec.world
    b = backends.bound(spec.seed)
    d0 = distance_to_target(world, spec.start_pose.cell, spec.target_label)
    state = _State(spec.start_pose, distance=d0)
    steps: list[StepRecord] = []
    min_d, path = d0, 0.0
    exclusion = None
    step_fn = _STEP_FNS[spec.mode]
    for t in range(spec.k):
        if spec.early_stop and state.distance == 0.0:
            break
        try:
            rec = step_fn(spec, state, t, b)
        except BackendError as exc:
            exclusion = {"kind": exc.kind, "detail": exc.detail, "step_index": t}
            break
        steps.append(rec)
        if rec.result.succeeded and rec.executed_action in (Action.MOVE_AHEAD, Action.MOVE_BACK):
            path += world.cell_size
        state = _State(rec.result.new_pose, rec.executed_action, rec.result, rec.distance_after)
        min_d = min(min_d, rec.distance_after)
    if exclusion is not None:
        outcome = Outcome.EXCLUDED
    elif min_d <= spec.success_radius:
        outcome = Outcome.ORACLE_SUCCESS
    else:
        outcome = Outcome.FAILURE
    return EpisodeRecord(spec, tuple(steps), outcome, d0, min_d, state.distance, d0, path,
                         tuple(sorted(world.vocabulary())), exclusion)


def run_batch(specs: Sequence[EpisodeSpec], backends: Backends, parallelism: int = 1) -> list[EpisodeRecord]:
    """Run episodes on a bounded thread pool; output order follows ``specs``."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1:
        return [run_episode(s, backends) for s in specs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda s: run_episode(s, backends), specs))


# --- persistence --------------------------------------------------------------


def record_line(record: EpisodeRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"), ensure_ascii=False)


def write_episodes(records: Iterable[EpisodeRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_line(rec) + "\n")


def read_episodes(path: str | Path, worlds: dict[str, GridWorld] | None = None) -> list[EpisodeRecord]:
    worlds = worlds or {}
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(EpisodeRecord.from_dict(d, worlds.get(d["spec"]["world_name"])))
    return out
