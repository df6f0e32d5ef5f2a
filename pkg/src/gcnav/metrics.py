"""Navigation and dialogue metrics over episode records.

Count-based aggregates (OSR, CR, H_PE, H_GO) are accumulated as exact
fractions and converted to a float percentage once, so identities such as
"ground-truth classifier equals the realized injection rate" hold exactly.
Excluded episodes are dropped before any average.
"""

from __future__ import annotations

import csv
import io
import math
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import prompts
from .agents import AgentBackend, AgentContext, BackendError, grid_label, label_to_rowcol
from .protocol import EpisodeRecord, Mode, StepRecord, summarize
from .text import (
    NON_OBJECT_WORDS,
    STOPWORDS,
    content_tokens,
    is_preemptive,
    label_phrase,
    lemma,
    tokenize,
)
from .world import Crop, GridWorld, Pose, full_crop, overhead_observation


class MetricError(ValueError):
    pass


class EmptySet(MetricError):
    pass


class UndefinedMetric(MetricError):
    pass


def included(records: Iterable[EpisodeRecord]) -> list[EpisodeRecord]:
    return [r for r in records if not r.excluded]


def _nonempty(records: Iterable[EpisodeRecord]) -> list[EpisodeRecord]:
    recs = included(records)
    if not recs:
        raise EmptySet("no non-excluded episodes")
    return recs


def _pct(x: Fraction) -> float:
    return float(100 * x)


def _mean(parts: Sequence[Fraction]) -> Fraction:
    return sum(parts, Fraction(0)) / len(parts)


# --- navigation ---------------------------------------------------------------


def _radius(rec: EpisodeRecord, success_radius: float | None) -> float:
    return rec.spec.success_radius if success_radius is None else success_radius


def oracle_success(rec: EpisodeRecord, success_radius: float | None = None) -> bool:
    return rec.min_distance <= _radius(rec, success_radius)


def final_success(rec: EpisodeRecord, success_radius: float | None = None) -> bool:
    return rec.final_distance <= _radius(rec, success_radius)


def osr(records: Iterable[EpisodeRecord], success_radius: float | None = None) -> float:
    recs = _nonempty(records)
    hits = sum(1 for r in recs if oracle_success(r, success_radius))
    return _pct(Fraction(hits, len(recs)))


def spl_term(success: bool, shortest: float, taken: float) -> float:
    if not success:
        return 0.0
    denom = max(taken, shortest)
    return 1.0 if denom == 0 else shortest / denom


def spl(records: Iterable[EpisodeRecord], success: str = "oracle", success_radius: float | None = None) -> float:
    """Success weighted by path length. ``success`` is "oracle" (ever within
    radius) or "final" (ends within radius)."""
    recs = _nonempty(records)
    check = {"oracle": oracle_success, "final": final_success}[success]
    terms = [spl_term(check(r, success_radius), r.shortest_path_length, r.path_length) for r in recs]
    return 100.0 * math.fsum(terms) / len(terms)


# --- preemptive hallucination ---------------------------------------------------


class ClassifierError(Exception):
    pass


class PreemptiveClassifier:
    """Labels one step's dialogue as containing a preemptive-motion claim."""

    classifier_id = "base"

    def classify(self, text: str) -> bool:
        raise NotImplementedError

    def classify_step(self, step: StepRecord) -> bool:
        return self.classify(step.summary if step.summary is not None else summarize(step.transcript))


def rule_based_preemptive_classifier(text: str) -> bool:
    return is_preemptive(text)


class RuleBasedClassifier(PreemptiveClassifier):
    classifier_id = "rule"

    def classify(self, text: str) -> bool:
        return is_preemptive(text)


class GroundTruthClassifier(PreemptiveClassifier):
    """Reads the injection labels a noisy backend left on each step."""

    classifier_id = "ground_truth"

    def classify(self, text: str) -> bool:
        raise ClassifierError("ground-truth labels live on step records, not text")

    def classify_step(self, step: StepRecord) -> bool:
        if not step.injected or "preemptive" not in step.injected:
            raise ClassifierError(f"step {step.step_index} carries no injection label")
        return bool(step.injected["preemptive"])


def llm_preemptive_classifier(backend: AgentBackend, transcript_text: str) -> bool:
    ctx = AgentContext(purpose="classify", role="classifier",
                       system=prompts.render("preemptive_classifier_system"),
                       user=prompts.render("preemptive_classifier_user", {"conversation": transcript_text}))
    return backend.classify(ctx)


class LLMClassifier(PreemptiveClassifier):
    classifier_id = "llm"

    def __init__(self, backend: AgentBackend):
        self.backend = backend

    def classify(self, text: str) -> bool:
        return llm_preemptive_classifier(self.backend, text)


def _step_labels(rec: EpisodeRecord, classifier: PreemptiveClassifier) -> list[bool]:
    labels = []
    for step in rec.steps:
        if not step.transcript:
            continue
        try:
            labels.append(classifier.classify_step(step))
        except (ClassifierError, BackendError):
            continue
    return labels


def h_pe(records: Iterable[EpisodeRecord], classifier: PreemptiveClassifier | None = None) -> float:
    """Mean over episodes of the fraction of labeled step dialogues flagged preemptive."""
    classifier = classifier or RuleBasedClassifier()
    scores = []
    for rec in included(records):
        labels = _step_labels(rec, classifier)
        if labels:
            scores.append(Fraction(sum(labels), len(labels)))
    if not scores:
        raise EmptySet("no labeled step dialogues")
    return _pct(_mean(scores))


def h_pe_episode(records: Iterable[EpisodeRecord], classifier: PreemptiveClassifier | None = None) -> float:
    """Binary variant: an episode counts once if any of its steps is flagged."""
    classifier = classifier or RuleBasedClassifier()
    scores = []
    for rec in included(records):
        labels = _step_labels(rec, classifier)
        if labels:
            scores.append(Fraction(int(any(labels))))
    if not scores:
        raise EmptySet("no labeled step dialogues")
    return _pct(_mean(scores))


# --- ghost objects --------------------------------------------------------------


def extract_mentions(text: str, vocabulary: Iterable[str]) -> list[str]:
    """Candidate object mentions: known multi-word labels first, then every
    remaining token that is not a stopword or navigation/structure word."""
    tokens = tokenize(text)
    lemmas = [lemma(t) for t in tokens]
    phrases = sorted({label_phrase(v) for v in vocabulary if label_phrase(v)}, key=lambda p: (-len(p), p))
    out = []
    i = 0
    while i < len(tokens):
        for ph in phrases:
            if len(ph) > 1 and tuple(lemmas[i:i + len(ph)]) == ph:
                out.append(" ".join(tokens[i:i + len(ph)]))
                i += len(ph)
                break
        else:
            t = tokens[i]
            if len(t) > 2 and t not in STOPWORDS and t not in NON_OBJECT_WORDS \
                    and lemmas[i] not in NON_OBJECT_WORDS and "'" not in t:
                out.append(t)
            i += 1
    return out


class LemmaMatcher:
    """Mention matches a label if their lemmatized phrases agree, or a
    single-word mention equals the label's head noun ("table" ~ DiningTable)."""

    matcher_id = "lemma"

    def matches(self, mention: str, vocabulary: Iterable[str]) -> bool:
        m = tuple(lemma(t) for t in mention.split())
        for label in vocabulary:
            ph = label_phrase(label)
            if m == ph or (len(m) == 1 and ph and m[0] == ph[-1]):
                return True
        return False


class ExactMatcher:
    matcher_id = "exact"

    def matches(self, mention: str, vocabulary: Iterable[str]) -> bool:
        return any(mention == " ".join(tokenize(label)) for label in vocabulary)


class EmbeddingMatcher:
    matcher_id = "embedding"

    def __init__(self, embedder: TextEmbedder, threshold: float = 0.8):
        self.embedder = embedder
        self.threshold = threshold

    def matches(self, mention: str, vocabulary: Iterable[str]) -> bool:
        v = self.embedder.embed(mention)
        return any(cosine(v, self.embedder.embed(" ".join(tokenize(label)))) >= self.threshold
                   for label in vocabulary)


def episode_overlap(rec: EpisodeRecord, matcher=None, unit: str = "mention") -> Fraction | None:
    """Share of object mentions found in the world vocabulary; ``None`` when
    the episode has no dialogue at all."""
    matcher = matcher or LemmaMatcher()
    transcripts = [s.transcript for s in rec.steps if s.transcript is not None]
    if not transcripts:
        return None
    mentions = [m for tr in transcripts for turn in tr for m in extract_mentions(turn.text, rec.vocabulary)]
    if unit == "type":
        mentions = sorted({" ".join(lemma(t) for t in m.split()) for m in mentions})
    elif unit != "mention":
        raise ValueError(f"unknown overlap unit {unit!r}")
    if not mentions:
        return Fraction(1)
    hits = sum(1 for m in mentions if matcher.matches(m, rec.vocabulary))
    return Fraction(hits, len(mentions))


def h_go(records: Iterable[EpisodeRecord], matcher=None, unit: str = "mention") -> float:
    overlaps = [o for o in (episode_overlap(r, matcher, unit) for r in included(records)) if o is not None]
    if not overlaps:
        raise EmptySet("no episodes with dialogue")
    return _pct(1 - _mean(overlaps))


# --- cooperation ---------------------------------------------------------------


def cr(records: Iterable[EpisodeRecord]) -> float:
    """Mean per-episode share of steps where the GA accepted the recommendation.

    Cooperative Action has no GA decision, every step is a forced accept.
    """
    parts = []
    for rec in included(records):
        mode = rec.spec.mode
        n = len(rec.steps)
        if mode is Mode.COOPERATIVE_ACTION:
            c = n
        elif mode is Mode.SELECTIVE_ACTION:
            c = sum(1 for s in rec.steps if s.cooperated)
        else:
            raise UndefinedMetric(f"cooperation rate is undefined for mode {mode}")
        if n:
            parts.append(Fraction(c, n))
    if not parts:
        raise EmptySet("no episodes with cooperation decisions")
    return _pct(_mean(parts))


# --- dialogue similarity ---------------------------------------------------------


class TextEmbedder:
    embedder_id = "base"

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def fit(self, texts: Iterable[str]) -> TextEmbedder:
        return self


class BagOfWordsEmbedder(TextEmbedder):
    """Token counts over a fixed vocabulary (built by :meth:`fit`)."""

    embedder_id = "bow"

    def __init__(self, vocabulary: Sequence[str] | None = None, stopwords: Iterable[str] = STOPWORDS):
        self.stopwords = frozenset(stopwords)
        self.vocabulary: list[str] = list(vocabulary or [])
        self._index = {w: i for i, w in enumerate(self.vocabulary)}

    def counts(self, text: str) -> Counter:
        return Counter(content_tokens(text, self.stopwords))

    def fit(self, texts: Iterable[str]) -> BagOfWordsEmbedder:
        vocab = set()
        for t in texts:
            vocab.update(self.counts(t))
        self.vocabulary = sorted(vocab)
        self._index = {w: i for i, w in enumerate(self.vocabulary)}
        return self

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(len(self.vocabulary))
        for word, n in self.counts(text).items():
            i = self._index.get(word)
            if i is not None:
                vec[i] = n
        return vec


class SentenceTransformerEmbedder(TextEmbedder):
    """BERT-family sentence encoder; needs the optional sentence-transformers extra."""

    embedder_id = "sentence-transformer"

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self.model_name = model_name
        self._model = SentenceTransformer(model_name)

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            return np.zeros(self._model.get_sentence_embedding_dimension())
        return np.asarray(self._model.encode(text), dtype=float)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors give 0 by convention."""
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / math.sqrt(aa * bb)


def step_dialogue(step: StepRecord) -> str:
    """Turn texts of one step joined without speaker tags."""
    return " ".join(t.text for t in step.transcript)


def _dialogues_by_step(records: Iterable[EpisodeRecord]) -> list[list[str]]:
    """For each step index, the dialogue texts of episodes that talked at that step."""
    recs = included(records)
    depth = max((len(r.steps) for r in recs), default=0)
    table = []
    for k in range(depth):
        table.append([step_dialogue(r.steps[k]) for r in recs if k < len(r.steps) and r.steps[k].transcript])
    return table


def _fit(embedder: TextEmbedder, table: list[list[str]]) -> None:
    embedder.fit(t for col in table for t in col)


def ds(records: Iterable[EpisodeRecord], embedder: TextEmbedder | None = None,
       reference_index: int = 0, include_reference: bool = False) -> list[float | None]:
    """Per-step similarity of every episode's dialogue to a reference episode's.

    Entry ``k`` averages cosine(reference, episode i) over the other episodes
    with a step-``k`` dialogue. ``include_reference`` adds the reference's own
    term (always 1 for a nonempty dialogue) to the average. Steps where fewer
    than two episodes talked are ``None``.
    """
    embedder = embedder or BagOfWordsEmbedder()
    table = _dialogues_by_step(records)
    _fit(embedder, table)
    out: list[float | None] = []
    for texts in table:
        if len(texts) < 2 or reference_index >= len(texts):
            out.append(None)
            continue
        vecs = [embedder.embed(t) for t in texts]
        ref = vecs[reference_index]
        sims = [cosine(ref, v) for i, v in enumerate(vecs) if include_reference or i != reference_index]
        out.append(100.0 * math.fsum(sims) / len(sims))
    while out and out[-1] is None:
        out.pop()
    if not any(v is not None for v in out):
        raise EmptySet("need at least two episodes with dialogue at some step")
    return out


def ds_pairwise(records: Iterable[EpisodeRecord], embedder: TextEmbedder | None = None) -> list[float | None]:
    """Mean cosine over all unordered episode pairs at each step."""
    embedder = embedder or BagOfWordsEmbedder()
    table = _dialogues_by_step(records)
    _fit(embedder, table)
    out: list[float | None] = []
    for texts in table:
        if len(texts) < 2:
            out.append(None)
            continue
        vecs = [embedder.embed(t) for t in texts]
        sims = [cosine(vecs[i], vecs[j]) for i in range(len(vecs)) for j in range(i + 1, len(vecs))]
        out.append(100.0 * math.fsum(sims) / len(sims))
    while out and out[-1] is None:
        out.pop()
    if not any(v is not None for v in out):
        raise EmptySet("need at least two episodes with dialogue at some step")
    return out


def ds_mean(values: Sequence[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


# --- word frequencies ------------------------------------------------------------


def term_frequencies(records: Iterable[EpisodeRecord], stopwords: Iterable[str] = STOPWORDS,
                     top_n: int | None = 50) -> list[tuple[str, int]]:
    texts = [turn.text for r in included(records) for s in r.steps if s.transcript for turn in s.transcript]
    if not texts:
        raise EmptySet("no dialogue to count")
    return rank_terms(texts, stopwords, top_n)


def rank_terms(texts: Iterable[str], stopwords: Iterable[str] = STOPWORDS,
               top_n: int | None = None) -> list[tuple[str, int]]:
    stop = frozenset(stopwords)
    counts: Counter = Counter()
    for t in texts:
        counts.update(content_tokens(t, stop))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top_n is None else ranked[:top_n]


# --- localization probe ---------------------------------------------------------

PROBE_GRID_SIZES = (16, 36, 64, 144)

PROBE_PROMPT = (
    "The top view is overlaid with a {n}x{n} grid of numbered tiles, 1 to {total}, numbered row by row "
    "from the top-left corner. Which numbered tile contains the ground agent? "
    "Answer with the tile number only."
)


@dataclass(frozen=True)
class ProbeResult:
    grid_cells: int
    predicted_cell: int
    true_cell: int
    correct: bool
    distance_cells: int


def _overlay_text(crop: Crop, n: int) -> str:
    rows = []
    for y in range(crop.y, crop.y + crop.height):
        rows.append(" ".join(f"{grid_label(crop, (x, y), n):>3}" for x in range(crop.x, crop.x + crop.width)))
    return "Tile number under each map cell:\n" + "\n".join(rows)


def localization_probe(world: GridWorld, pose: Pose, grid_cells: int, backend: AgentBackend,
                       crop: Crop | None = None) -> ProbeResult:
    n = math.isqrt(grid_cells)
    if grid_cells < 1 or n * n != grid_cells:
        raise ValueError(f"grid_cells={grid_cells} is not a perfect square")
    crop = crop or full_crop(world)
    if n > crop.width or n > crop.height:
        raise ValueError(f"a {n}x{n} overlay is finer than the {crop.width}x{crop.height} crop")
    if not crop.contains(pose.cell):
        raise ValueError("ground agent is outside the crop")
    view = overhead_observation(world, pose, crop)
    ctx = AgentContext(purpose="probe", role="probe",
                       user=PROBE_PROMPT.format(n=n, total=grid_cells) + "\n\n" + _overlay_text(crop, n),
                       world=world, pose=pose, overhead_view=view, probe_grid=n)
    reply = backend.utter(ctx)
    m = re.search(r"\d+", reply)
    if not m:
        raise BackendError("Malformed", f"no tile number in {reply!r}")
    predicted = int(m.group(0))
    if not 1 <= predicted <= grid_cells:
        raise BackendError("Malformed", f"tile {predicted} outside 1..{grid_cells}")
    truth = grid_label(crop, pose.cell, n)
    pr, pc = label_to_rowcol(predicted, n)
    tr, tc = label_to_rowcol(truth, n)
    return ProbeResult(grid_cells, predicted, truth, predicted == truth, abs(pr - tr) + abs(pc - tc))


# --- reports ---------------------------------------------------------------------

EXECUTION_NAMES = {
    Mode.RANDOM: "Random",
    Mode.NO_COMM: "No Comm.",
    Mode.COOPERATIVE_ACTION: "Cooperative Action",
    Mode.SELECTIVE_ACTION: "Selective Action",
    Mode.SELECTIVE_COMMUNICATION: "Selective Communication",
}


@dataclass
class MetricsReport:
    mode: str
    c_len: int
    n_episodes: int
    n_excluded: int
    osr_pct: float | None
    spl_pct: float | None
    h_pe_pct: float | None = None
    h_pe_episode_pct: float | None = None
    h_go_pct: float | None = None
    cr_pct: float | None = None
    ds_by_step: list[float | None] = field(default_factory=list)
    ds_mean: float | None = None
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _safe(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except MetricError:
        return None


def compute_report(records: Sequence[EpisodeRecord], classifier: PreemptiveClassifier | None = None,
                   embedder: TextEmbedder | None = None, matcher=None, success_radius: float | None = None,
                   spl_success: str = "oracle", ghost_unit: str = "mention") -> MetricsReport:
    classifier = classifier or RuleBasedClassifier()
    embedder = embedder or BagOfWordsEmbedder()
    matcher = matcher or LemmaMatcher()
    modes = {r.spec.mode for r in records}
    c_lens = {r.spec.c_len for r in records}
    if len(modes) != 1 or len(c_lens) != 1:
        raise ValueError("compute_report expects records from a single mode and c_len; use group_records")
    mode = modes.pop()
    radius = success_radius if success_radius is not None else records[0].spec.success_radius
    comm = mode.communicates
    ds_steps = (_safe(ds, records, embedder) or []) if comm else []
    return MetricsReport(
        mode=mode.value,
        c_len=c_lens.pop(),
        n_episodes=len(included(records)),
        n_excluded=sum(1 for r in records if r.excluded),
        osr_pct=_safe(osr, records, radius),
        spl_pct=_safe(spl, records, spl_success, radius),
        h_pe_pct=_safe(h_pe, records, classifier) if comm else None,
        h_pe_episode_pct=_safe(h_pe_episode, records, classifier) if comm else None,
        h_go_pct=_safe(h_go, records, matcher, ghost_unit) if comm else None,
        cr_pct=_safe(cr, records) if mode in (Mode.COOPERATIVE_ACTION, Mode.SELECTIVE_ACTION) else None,
        ds_by_step=ds_steps,
        ds_mean=ds_mean(ds_steps),
        config_echo={
            "success_radius": radius,
            "spl_success": spl_success,
            "classifier": classifier.classifier_id,
            "embedder": embedder.embedder_id,
            "matcher": getattr(matcher, "matcher_id", type(matcher).__name__),
            "ghost_unit": ghost_unit,
        },
    )


def group_records(records: Iterable[EpisodeRecord]) -> list[list[EpisodeRecord]]:
    """Split records by (c_len, mode), ordered like the published tables."""
    order = list(Mode)
    groups: dict[tuple[int, Mode], list[EpisodeRecord]] = {}
    for r in records:
        groups.setdefault((r.spec.c_len, r.spec.mode), []).append(r)
    return [groups[key] for key in sorted(groups, key=lambda kv: (kv[0], order.index(kv[1])))]


def _cell(v: float | None, digits: int = 2) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def _aligned(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    rule = "  ".join("-" * w for w in widths)
    body = ["  ".join(c.rjust(w) if i > 1 else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
            for r in rows]
    return "\n".join([line, rule, *body])


def format_tables(reports: Sequence[MetricsReport]) -> str:
    t1_head = ["Comm. Length", "Execution", "OSR %", "SPL %", "N", "Excluded"]
    t1 = [[str(r.c_len), EXECUTION_NAMES[Mode(r.mode)], _cell(r.osr_pct), _cell(r.spl_pct), str(r.n_episodes),
           str(r.n_excluded)] for r in reports]
    t2_head = ["Comm. Length", "Execution", "H_PE %", "H_GO %", "CR %", "DS %"]
    t2 = [[str(r.c_len), EXECUTION_NAMES[Mode(r.mode)], _cell(r.h_pe_pct), _cell(r.h_go_pct), _cell(r.cr_pct, 1),
           _cell(r.ds_mean, 1)] for r in reports]
    lines = ["ObjectNav performance", _aligned(t1_head, t1), "", "Generative communication traits",
             _aligned(t2_head, t2), ""]
    for r in reports:
        if r.ds_by_step:
            steps = ", ".join(_cell(v, 1) for v in r.ds_by_step)
            lines.append(f"DS by step [{EXECUTION_NAMES[Mode(r.mode)]}, C_len={r.c_len}]: {steps} "
                         f"(mean over steps {_cell(r.ds_mean, 1)})")
    excluded = sum(r.n_excluded for r in reports)
    lines.append(f"Excluded episodes (backend refusals/errors, omitted from all averages): {excluded}")
    if reports:
        echo = reports[0].config_echo
        lines.append(f"success_radius = {echo['success_radius']} m (assumed threshold; configurable), "
                     f"SPL success = {echo['spl_success']}, classifier = {echo['classifier']}, "
                     f"embedder = {echo['embedder']}, matcher = {echo['matcher']}")
    return "\n".join(lines) + "\n"


REPORT_COLUMNS = ["c_len", "execution", "n_episodes", "n_excluded", "osr_pct", "spl_pct", "h_pe_pct",
                  "h_pe_episode_pct", "h_go_pct", "cr_pct", "ds_mean", "ds_by_step", "success_radius",
                  "classifier", "embedder"]


def _csv_num(v: float | None) -> str:
    return "" if v is None else repr(round(v, 6))


def reports_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([r.c_len, r.mode, r.n_episodes, r.n_excluded, _csv_num(r.osr_pct), _csv_num(r.spl_pct),
                    _csv_num(r.h_pe_pct), _csv_num(r.h_pe_episode_pct), _csv_num(r.h_go_pct),
                    _csv_num(r.cr_pct), _csv_num(r.ds_mean), ";".join(_csv_num(v) for v in r.ds_by_step),
                    r.config_echo.get("success_radius"), r.config_echo.get("classifier"),
                    r.config_echo.get("embedder")])
    return buf.getvalue()


def terms_csv(terms: Sequence[tuple[str, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["term", "count"])
    w.writerows(terms)
    return buf.getvalue()
