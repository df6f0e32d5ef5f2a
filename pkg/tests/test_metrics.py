from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnav import metrics
from gcnav.agents import OracleBackend, ScriptedBackend
from gcnav.metrics import (
    BagOfWordsEmbedder,
    EmptySet,
    ExactMatcher,
    GroundTruthClassifier,
    LemmaMatcher,
    LLMClassifier,
    RuleBasedClassifier,
    UndefinedMetric,
    cosine,
    cr,
    ds,
    ds_pairwise,
    extract_mentions,
    h_go,
    h_pe,
    h_pe_episode,
    localization_probe,
    osr,
    spl,
    term_frequencies,
)
from gcnav.protocol import DialogueTurn, EpisodeRecord, EpisodeSpec, Mode, Outcome, StepRecord
from gcnav.world import Action, ActionResult, Crop, Heading, Pose

POSE = Pose(0, 0, Heading.NORTH)
VOCAB = ("Chair", "DiningTable", "PepperShaker", "Sofa")


def step(i=0, turns=None, cooperated=None, injected=None, action=Action.DO_NOTHING):
    transcript = None
    if turns is not None:
        transcript = tuple(DialogueTurn(i, j, "OA" if j % 2 == 0 else "GA", t) for j, t in enumerate(turns))
    return StepRecord(i, action, ActionResult(POSE, True), 1.0, "llm_coop", transcript=transcript,
                      cooperated=cooperated, injected=injected)


def record(steps=(), mode=Mode.COOPERATIVE_ACTION, c_len=1, l=1.0, p=1.0, dmin=0.0, dfinal=None,
           excluded=False, vocab=VOCAB, radius=1.0):
    spec = EpisodeSpec(None, POSE, "Sofa", mode, c_len=c_len, success_radius=radius)
    if excluded:
        outcome = Outcome.EXCLUDED
    else:
        outcome = Outcome.ORACLE_SUCCESS if dmin <= radius else Outcome.FAILURE
    return EpisodeRecord(spec, tuple(steps), outcome, l, dmin, dmin if dfinal is None else dfinal, l, p,
                         tuple(vocab), {"kind": "Refusal"} if excluded else None)


# --- OSR / SPL -----------------------------------------------------------------------


def test_osr_counts_and_drops_excluded():
    recs = [record(dmin=0.0), record(dmin=2.0), record(dmin=1.0), record(dmin=0.0, excluded=True)]
    assert osr(recs) == pytest.approx(200 / 3)
    assert osr(recs, success_radius=0.5) == pytest.approx(100 / 3)
    with pytest.raises(EmptySet):
        osr([record(excluded=True)])


def brute_spl(rows):
    """Independent SPL: rows of (success, l, p)."""
    total = 0.0
    for success, l, p in rows:
        if success:
            total += 1.0 if l == p == 0 else l / (p if p > l else l)
    return 100.0 * total / len(rows)


def test_spl_edge_cases():
    assert spl([record(l=0.0, p=0.0, dmin=0.0)]) == 100.0
    assert spl([record(l=1.0, p=2.0, dmin=0.0), record(l=1.0, p=1.0, dmin=5.0)]) == 25.0
    # taken path can never beat the shortest one, but the max() guards it anyway
    assert spl([record(l=2.0, p=1.0, dmin=0.0)]) == 100.0


def test_spl_final_variant():
    r = record(l=1.0, p=1.0, dmin=0.5, dfinal=3.0)
    assert spl([r], success="oracle") == 100.0
    assert spl([r], success="final") == 0.0


episode_rows = st.lists(
    st.tuples(st.integers(0, 40), st.integers(0, 60), st.integers(0, 12)), min_size=1, max_size=50)


@given(episode_rows)
def test_spl_matches_brute_force(rows):
    recs, expected = [], []
    for l_cells, extra, d in rows:
        l, p, dmin = l_cells * 0.25, (l_cells + extra) * 0.25, d * 0.25
        recs.append(record(l=l, p=p, dmin=dmin))
        expected.append((dmin <= 1.0, l, p))
    got = spl(recs)
    assert abs(got - brute_spl(expected)) < 1e-9
    assert 0.0 <= got <= osr(recs) + 1e-9


# --- H_PE ---------------------------------------------------------------------------


def test_rule_classifier_examples():
    rb = RuleBasedClassifier()
    assert rb.classify("GA: I have moved towards the room.")
    assert rb.classify("GA: I've just turned left as asked")
    assert rb.classify("OA: Now that you have moved closer, what do you see?")
    assert not rb.classify("GA: I will move ahead once you confirm.")
    assert not rb.classify("OA: Move ahead two steps. GA: I see a Sofa ahead.")
    assert not rb.classify("GA: I have a clear view of the chair.")


def test_h_pe_ground_truth_and_rule():
    steps_a = [step(0, ["q", "I have moved towards the room."], injected={"preemptive": True}),
               step(1, ["q", "I see a chair."], injected={"preemptive": False})]
    steps_b = [step(0, ["q", "I see a sofa."], injected={"preemptive": False})]
    recs = [record(steps_a), record(steps_b)]
    assert h_pe(recs, GroundTruthClassifier()) == 25.0
    assert h_pe(recs, RuleBasedClassifier()) == 25.0
    assert h_pe_episode(recs) == 50.0


def test_h_pe_skips_unlabeled_steps():
    recs = [record([step(0, ["q", "a"]), step(1, ["q", "I moved ahead."], injected={"preemptive": True})])]
    # step 0 has no ground-truth label, so only step 1 counts
    assert h_pe(recs, GroundTruthClassifier()) == 100.0
    with pytest.raises(EmptySet):
        h_pe([record([step(0)])])


def test_llm_classifier_uses_templates_and_skips_malformed():
    seen = []

    class Spy(ScriptedBackend):
        def classify(self, ctx):
            seen.append(ctx)
            return super().classify(ctx)

    backend = Spy(classify_answers=[True, False], errors={("classify", 2): "Malformed"})
    recs = [record([step(i, ["q", "a"]) for i in range(3)])]
    assert h_pe(recs, LLMClassifier(backend)) == 50.0
    assert seen[0].system.startswith("You will be given a conversation")
    assert seen[0].user == "OA: q\nGA: a"


# --- H_GO ---------------------------------------------------------------------------


def test_extract_mentions():
    text = "I see a Dining Table, two pepper shakers and a piano near the wall to my left."
    assert extract_mentions(text, VOCAB) == ["dining table", "pepper shakers", "piano"]
    assert extract_mentions("What objects can you see in front of you?", VOCAB) == []


def test_matchers():
    lemma = LemmaMatcher()
    assert lemma.matches("pepper shakers", VOCAB)
    assert lemma.matches("tables", VOCAB)
    assert not lemma.matches("piano", VOCAB)
    assert not ExactMatcher().matches("pepper shakers", VOCAB)
    assert ExactMatcher().matches("pepper shaker", VOCAB)


def test_h_go_values():
    ghost = record([step(0, ["What do you see?", "I see a Sofa. I also notice a Piano nearby."])])
    clean = record([step(0, ["What do you see?", "I see a Sofa and a Chair."])])
    silent = record([step(0, ["What do you see?", "Nothing here."])])
    assert h_go([ghost]) == 50.0
    assert h_go([clean]) == 0.0
    assert h_go([silent]) == 0.0  # no mentions at all counts as full overlap
    assert h_go([ghost, clean]) == 25.0
    with pytest.raises(EmptySet):
        h_go([record([step(0)], mode=Mode.NO_COMM, c_len=0)])


def test_h_go_type_unit():
    r = record([step(0, ["q", "Sofa, sofas, Sofa and a Piano."])])
    assert h_go([r]) == 25.0
    assert h_go([r], unit="type") == 50.0


# --- CR -----------------------------------------------------------------------------


def test_cr():
    assert cr([record([step(i) for i in range(7)])]) == 100.0
    sel = record([step(i, cooperated=i % 2 == 0) for i in range(10)], mode=Mode.SELECTIVE_ACTION)
    assert cr([sel]) == 50.0
    one = record([step(0, cooperated=True)], mode=Mode.SELECTIVE_ACTION)
    assert cr([sel, one]) == 75.0
    with pytest.raises(UndefinedMetric):
        cr([record([step(0)], mode=Mode.NO_COMM, c_len=0)])


# --- DS -----------------------------------------------------------------------------


@given(st.lists(st.integers(0, 5), min_size=1, max_size=8), st.lists(st.integers(0, 5), min_size=1, max_size=8))
def test_cosine_properties(a, b):
    n = max(len(a), len(b))
    va = np.array(a + [0] * (n - len(a)), dtype=float)
    vb = np.array(b + [0] * (n - len(b)), dtype=float)
    c = cosine(va, vb)
    assert c == pytest.approx(cosine(vb, va))
    assert -1e-12 <= c <= 1 + 1e-12
    if va.any():
        assert cosine(va, va) == 1.0


def test_bag_of_words():
    emb = BagOfWordsEmbedder().fit(["the sofa sofa", "a chair"])
    assert emb.vocabulary == ["chair", "sofa"]
    assert list(emb.embed("Sofa and SOFA")) == [0.0, 2.0]
    assert not emb.embed("").any()


def _dialogue_runs(texts_by_episode):
    return [record([step(k, [t]) for k, t in enumerate(texts)]) for texts in texts_by_episode]


def test_ds_identical_and_disjoint():
    same = _dialogue_runs([["I see a sofa.", "Turn left now."]] * 3)
    assert ds(same) == [100.0, 100.0]
    disjoint = _dialogue_runs([["sofa chair"], ["lamp mug"], ["bed vase"]])
    assert ds(disjoint) == [0.0]
    assert ds_pairwise(disjoint) == [0.0]
    # counting the reference against itself adds a term of 100
    assert ds(disjoint, include_reference=True) == [pytest.approx(100 / 3)]
    assert ds(same, include_reference=True) == [100.0, 100.0]
    half = _dialogue_runs([["sofa chair"], ["sofa lamp"]])
    assert ds(half) == [pytest.approx(50.0)]
    assert ds(half, reference_index=1) == [pytest.approx(50.0)]


def test_ds_skips_thin_steps():
    runs = _dialogue_runs([["a sofa", "a chair"], ["a sofa"]])
    assert ds(runs) == [100.0]
    with pytest.raises(EmptySet):
        ds(_dialogue_runs([["only one"]]))


def test_term_frequencies():
    runs = _dialogue_runs([["I see a sofa and a chair.", "I see the sofa."]])
    assert term_frequencies(runs, top_n=3) == [("see", 2), ("sofa", 2), ("chair", 1)]


# --- localization probe -------------------------------------------------------------


@pytest.mark.parametrize("cells", [16, 36, 64, 144])
def test_probe_oracle_exact(cells):
    from gcnav.world import WorldParams, generate_world

    world = generate_world(WorldParams(seed=4))
    for x, y in world.free_cells():
        res = localization_probe(world, Pose(x, y, Heading.EAST), cells, OracleBackend())
        assert res.correct and res.distance_cells == 0 and res.predicted_cell == res.true_cell


def test_probe_fixed_answer_counts_coincidences():
    from gcnav.world import WorldParams, generate_world

    world = generate_world(WorldParams(seed=1))
    stub = ScriptedBackend(utterances=["Tile 1"])
    poses = [Pose(x, y, Heading.NORTH) for (x, y) in world.free_cells()]
    results = [localization_probe(world, p, 16, stub) for p in poses]
    # tile 1 of a 4x4 overlay on 12x12 covers x, y in 0..2
    expected = sum(1 for p in poses if p.x < 3 and p.y < 3)
    assert sum(r.correct for r in results) == expected
    far = next(r for p, r in zip(poses, results) if p.x >= 9 and p.y >= 9)
    assert far.distance_cells == 6


def test_probe_errors(room):
    with pytest.raises(ValueError):
        localization_probe(room, room.spawn, 15, OracleBackend())
    with pytest.raises(ValueError):
        localization_probe(room, room.spawn, 64, OracleBackend())  # 8x8 overlay on 6 rows
    from gcnav.agents import BackendError

    with pytest.raises(BackendError):
        localization_probe(room, room.spawn, 4, ScriptedBackend(utterances=["somewhere"]))
    with pytest.raises(BackendError):
        localization_probe(room, room.spawn, 4, ScriptedBackend(utterances=["99"]))


# --- reports -----------------------------------------------------------------------


def test_report_formatting():
    coop = [record([step(0, ["q", "I see a sofa."])]) for _ in range(2)]
    nocomm = [record([step(0)], mode=Mode.NO_COMM, c_len=0), record(mode=Mode.NO_COMM, c_len=0, excluded=True)]
    reports = [metrics.compute_report(g) for g in metrics.group_records(coop + nocomm)]
    assert [(r.c_len, r.mode) for r in reports] == [(0, "NoComm"), (1, "CooperativeAction")]
    text = metrics.format_tables(reports)
    nocomm_row = next(line for line in text.splitlines() if line.startswith("0 ") and "n/a" in line)
    assert nocomm_row.split()[-4:] == ["n/a"] * 4
    coop_row = [line for line in text.splitlines() if "Cooperative Action" in line][-1]
    assert "100.0" in coop_row.split()
    assert "omitted from all averages): 1" in text
    csv_text = metrics.reports_csv(reports)
    assert csv_text.splitlines()[0] == ",".join(metrics.REPORT_COLUMNS)
    with pytest.raises(ValueError):
        metrics.compute_report(coop + nocomm)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=20))
def test_ground_truth_h_pe_is_realized_rate(flags):
    recs = [record([step(i, ["q", "a"], injected={"preemptive": f})]) for i, f in enumerate(flags)]
    assert h_pe(recs, GroundTruthClassifier()) == pytest.approx(100 * sum(flags) / len(flags), abs=0)
