"""Acceptance criteria 1-11, each reported as one PASS/FAIL line."""

from __future__ import annotations

import random
import time
from collections import deque
from contextlib import contextmanager
from fractions import Fraction

import pytest
import yaml

from gcnav import metrics, prompts
from gcnav.agents import AgentBackend, NoiseParams, NoisyBackend, OracleBackend, RandomBackend, ScriptedBackend
from gcnav.cli import format_probe_table, main, probe_table
from gcnav.config import build_specs, build_worlds, config_from_dict
from gcnav.protocol import Backends, EpisodeSpec, Mode, read_episodes, run_batch, run_episode
from gcnav.world import Heading, Pose, WorldParams, generate_world, neighbors, unique_labels

from .conftest import ACCEPTANCE_LINES
from .stub_server import Reply, StubServer, completion
from .test_prompts import GOLDEN, GOLDEN_VARS


@contextmanager
def criterion(n: int, name: str, limit: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.2f} s, limit {limit} s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_LINES[n] = f"FAIL  #{n:<2} {name} ({elapsed:.2f} s): {exc}"
        print(ACCEPTANCE_LINES[n])
        raise
    ACCEPTANCE_LINES[n] = f"PASS  #{n:<2} {name} ({elapsed:.2f} s)"
    print(ACCEPTANCE_LINES[n])


def make_cfg(**episode):
    return config_from_dict({
        "worlds": {"count": 100, "width": 12, "height": 12, "seed": 0, "max_shortest_path": 2.0},
        "episode": {"mode": "NoComm", "c_len": 0, "k": 10, **episode},
        "backends": {"oa": "oracle", "ga": "oracle", "decider": "oracle"},
    })


@pytest.fixture(scope="module")
def nav_specs():
    cfg = make_cfg()
    return build_specs(cfg, build_worlds(cfg))


def oracle_backends(**kw) -> Backends:
    roles = {"oa": OracleBackend(), "ga": OracleBackend(), "decider": OracleBackend()}
    roles.update(kw)
    return Backends(**roles)


def test_1_protocol_conformance():
    with criterion(1, "CR: Cooperative 100, scripted alternating Selective 50", limit=5.0):
        cfg = make_cfg(mode="CooperativeAction", c_len=1)
        worlds = build_worlds(cfg)[:20]
        coop = run_batch(build_specs(cfg, worlds), oracle_backends())
        assert metrics.cr(coop) == 100.0
        cfg = make_cfg(mode="SelectiveAction", c_len=1)
        # the decider never moves, so every episode runs its full k=10 steps
        b = oracle_backends(ga=ScriptedBackend(OracleBackend(), yes_no=[True, False]),
                            decider=ScriptedBackend(actions=["DoNothing"]))
        sel = run_batch(build_specs(cfg, worlds), b)
        assert all(len(r.steps) == 10 for r in sel)
        assert metrics.cr(sel) == 50.0


def test_2_oracle_navigation(nav_specs):
    with criterion(2, "oracle NoComm on 100 worlds: OSR >= 95, SPL >= 90", limit=30.0):
        assert len(nav_specs) == 100
        assert all(s.world.width == s.world.height == 12 for s in nav_specs)
        assert all(0 < metrics_shortest(s) <= 2.0 for s in nav_specs)
        recs = run_batch(nav_specs, oracle_backends())
        osr, spl = metrics.osr(recs), metrics.spl(recs)
        assert osr >= 95.0, osr
        assert spl >= 90.0, spl


def test_3_baseline_ordering(nav_specs):
    with criterion(3, "Random OSR at least 40 points below oracle"):
        oracle = metrics.osr(run_batch(nav_specs, oracle_backends()))
        rnd_specs = [EpisodeSpec(s.world, s.start_pose, s.target_label, Mode.RANDOM, s.k, 0, s.success_radius,
                                 s.seed, episode_id=s.episode_id) for s in nav_specs]
        rnd = metrics.osr(run_batch(rnd_specs, oracle_backends()))
        assert rnd <= oracle - 40.0, (rnd, oracle)


# --- independent SPL reimplementation ------------------------------------------


def brute_force_geodesic(world, start, label) -> float:
    """Plain BFS over free cells from the start to any target-adjacent free cell."""
    goal = set()
    for obj in world.objects:
        if obj.label == label:
            for c in obj.cells:
                goal.update(n for n in neighbors(c) if world.in_bounds(n) and world.is_free(n))
    seen, queue = {start: 0}, deque([start])
    while queue:
        c = queue.popleft()
        if c in goal:
            return seen[c] * world.cell_size
        for n in neighbors(c):
            if world.in_bounds(n) and world.is_free(n) and n not in seen:
                seen[n] = seen[c] + 1
                queue.append(n)
    return float("inf")


def metrics_shortest(spec) -> float:
    return brute_force_geodesic(spec.world, spec.start_pose.cell, spec.target_label)


def brute_force_spl(records) -> float:
    total = 0.0
    for r in records:
        world, spec = r.spec.world, r.spec
        shortest = brute_force_geodesic(world, spec.start_pose.cell, spec.target_label)
        cell, taken, closest = spec.start_pose.cell, 0.0, shortest
        for s in r.steps:
            nxt = s.result.new_pose.cell
            if nxt != cell:
                taken += world.cell_size
            cell = nxt
            closest = min(closest, brute_force_geodesic(world, cell, spec.target_label))
        if closest <= spec.success_radius:
            total += shortest / max(shortest, taken) if max(shortest, taken) > 0 else 1.0
    return 100.0 * total / len(records)


def test_4_spl_equivalence():
    with criterion(4, "spl() equals brute force within 1e-9 on 50 random records"):
        rng = random.Random(2024)
        records = []
        while len(records) < 50:
            world = generate_world(WorldParams(seed=rng.randrange(10_000), object_count=6))
            label = rng.choice(unique_labels(world))
            x, y = rng.choice(world.free_cells())
            mode = rng.choice([Mode.RANDOM, Mode.NO_COMM])
            spec = EpisodeSpec(world, Pose(x, y, Heading(rng.randrange(4))), label, mode, k=rng.randint(1, 15),
                               success_radius=rng.choice([0.5, 1.0, 1.5]), seed=rng.randrange(10**6))
            ga = NoisyBackend(NoiseParams(p_bad_action=rng.random(), seed=rng.randrange(100)))
            records.append(run_episode(spec, oracle_backends(ga=ga)))
        got, want = metrics.spl(records), brute_force_spl(records)
        assert 0.0 < want < 100.0
        assert abs(got - want) <= 1e-9, (got, want)


# --- hallucination recovery ----------------------------------------------------


@pytest.fixture(scope="module")
def h_pe_specs():
    cfg = config_from_dict({
        "worlds": {"count": 500, "seed": 100},
        "episode": {"mode": "CooperativeAction", "c_len": 3, "k": 10},
        "backends": {"oa": "oracle", "ga": "oracle", "decider": "oracle"},
    })
    return build_specs(cfg, build_worlds(cfg))


def realized_rate(records, params: NoiseParams) -> float:
    """Per-episode injection fraction recomputed from the noise stream, not the record labels."""
    scores = []
    for r in records:
        draws = NoisyBackend(params).bind(r.spec.seed, "ga")
        flags = [draws.step_draws(s.step_index)["preemptive"] for s in r.steps if s.transcript]
        if flags:
            scores.append(Fraction(sum(flags), len(flags)))
    return float(100 * sum(scores, Fraction(0)) / len(scores))


def test_5_h_pe_recovery(h_pe_specs):
    with criterion(5, "H_PE: ground truth exact, rule-based within tolerance", limit=60.0):
        assert len(h_pe_specs) == 500
        for p in (0.0, 0.5, 1.0):
            params = NoiseParams(p_preemptive=p, seed=7)
            recs = run_batch(h_pe_specs, oracle_backends(ga=NoisyBackend(params)))
            assert all(len(s.transcript) == 6 for r in recs for s in r.steps)
            truth = realized_rate(recs, params)
            assert metrics.h_pe(recs, metrics.GroundTruthClassifier()) == truth
            rule = metrics.h_pe(recs, metrics.RuleBasedClassifier())
            if p == 0.0:
                assert rule <= 5.0, rule
            elif p == 1.0:
                assert rule >= 95.0, rule
            else:
                assert abs(rule - truth) <= 5.0, (rule, truth)


class TargetEcho(AgentBackend):
    """Ground agent that names the target and nothing else."""

    def utter(self, ctx):
        return f"I see the {ctx.target}."


def test_6_h_go_recovery(nav_specs):
    with criterion(6, "H_GO: one ghost per real mention gives 50, clean oracle gives 0"):
        specs = [EpisodeSpec(s.world, s.start_pose, s.target_label, Mode.COOPERATIVE_ACTION, s.k, 1,
                             s.success_radius, s.seed) for s in nav_specs]
        ghostly = NoisyBackend(NoiseParams(p_ghost=1.0, seed=3), base=TargetEcho())
        b = oracle_backends(oa=ScriptedBackend(utterances=["What do you see?"]), ga=ghostly)
        recs = run_batch(specs, b)
        assert all(r.steps for r in recs)
        value = metrics.h_go(recs)
        assert abs(value - 50.0) <= 5.0, value
        specs3 = [EpisodeSpec(s.world, s.start_pose, s.target_label, Mode.COOPERATIVE_ACTION, s.k, 3,
                              s.success_radius, s.seed) for s in nav_specs]
        clean = run_batch(specs3, oracle_backends(ga=NoisyBackend(NoiseParams(p_ghost=0.0, seed=3))))
        assert metrics.h_go(clean) == 0.0


def test_7_ds_bounds(nav_specs):
    with criterion(7, "DS: identical transcripts 100 per step, disjoint 0"):
        s = nav_specs[0]
        spec = EpisodeSpec(s.world, s.start_pose, s.target_label, Mode.COOPERATIVE_ACTION, 10, 3,
                           s.success_radius, s.seed, early_stop=False)
        same = [run_episode(spec, oracle_backends()) for _ in range(4)]
        values = metrics.ds(same)
        assert len(values) == 10 and values == [100.0] * 10
        words = [("alpha", "bravo"), ("charlie", "delta"), ("echo", "foxtrot"), ("golf", "hotel")]
        disjoint = [run_episode(spec, oracle_backends(oa=ScriptedBackend(utterances=[q]),
                                                      ga=ScriptedBackend(utterances=[a])))
                    for q, a in words]
        embedder = metrics.BagOfWordsEmbedder()
        values = metrics.ds(disjoint, embedder)
        assert len(values) == 10 and values == [0.0] * 10


def test_8_prompt_goldens():
    with criterion(8, "14 templates byte-equal to goldens, blocked suffix phrase"):
        assert len(prompts.TEMPLATE_IDS) == 14
        for tid in prompts.TEMPLATE_IDS:
            assert prompts.render(tid, GOLDEN_VARS).encode("utf-8") == (GOLDEN / f"{tid}.txt").read_bytes(), tid
        suffix = prompts.render("no_comm_blocked_suffix", {"blocking_object": "Chair"})
        assert "is blocking the agent from moving" in suffix


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_9_refusal_handling(tmp_path, monkeypatch, capsys):
    with criterion(9, "refusal excludes the episode, batch completes, analyze discloses"):
        monkeypatch.setenv("GCNAV_STUB_KEY", "test-key")
        refusal = Reply(body=completion("I'm sorry, but I can't help with that."))
        fine = Reply(body=completion("I see nothing notable from here."))
        with StubServer([refusal, fine]) as server:
            remote = {"id": "remote", "params": {"endpoint_url": server.url, "api_key_env_var_name": "GCNAV_STUB_KEY",
                                                 "max_retries": 0, "timeout": 5.0}}
            cfg = write_yaml(tmp_path / "c.yaml", {
                "worlds": {"count": 5, "seed": 3, "max_shortest_path": 2.0},
                "episode": {"mode": "CooperativeAction", "c_len": 1, "k": 4},
                "backends": {"oa": "oracle", "ga": remote, "decider": "oracle"},
            })
            out = tmp_path / "run"
            assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        recs = read_episodes(out / "episodes.jsonl")
        assert len(recs) == 5
        assert [r.excluded for r in recs] == [True, False, False, False, False]
        assert recs[0].exclusion["kind"] == "Refusal"
        capsys.readouterr()
        assert main(["analyze", str(out)]) == 0
        text = capsys.readouterr().out
        assert "Excluded episodes (backend refusals/errors, omitted from all averages): 1" in text
        assert "Excluded episodes" in (out / "report.txt").read_text()


def test_10_determinism(tmp_path):
    with criterion(10, "parallelism 1 and 8 give byte-identical episodes.jsonl"):
        cfg = write_yaml(tmp_path / "c.yaml", {
            "worlds": {"count": 24, "seed": 5},
            "episode": {"mode": "SelectiveAction", "c_len": 3, "k": 10},
            "backends": {"oa": "oracle", "decider": "oracle",
                         "ga": {"id": "noisy", "params": {"p_preemptive": 0.5, "p_ghost": 0.5,
                                                          "p_bad_action": 0.3, "seed": 9}}},
        })
        for par in (1, 8):
            assert main(["run", "--config", str(cfg), "--out", str(tmp_path / f"p{par}"),
                         "--parallelism", str(par)]) == 0
        one, eight = ((tmp_path / f"p{p}" / "episodes.jsonl").read_bytes() for p in (1, 8))
        assert one and one == eight


def test_11_localization_probe():
    with criterion(11, "oracle probe 100% at 16/36/64/144 with a four-row table"):
        cfg = config_from_dict({
            "worlds": {"count": 10, "width": 12, "height": 12, "seed": 1},
            "backends": {"oa": "oracle", "ga": "oracle", "decider": "oracle"},
            "probe": {"grid_sizes": [16, 36, 64, 144], "poses_per_world": 3},
        })
        rows = probe_table(cfg)
        assert [r["grid_cells"] for r in rows] == [16, 36, 64, 144]
        assert all(r["accuracy_pct"] == 100.0 and r["n"] == 30 for r in rows)
        table = format_probe_table(rows).strip().splitlines()
        assert len(table) == 1 + 4
