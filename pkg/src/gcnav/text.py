"""Tokenization and lexical rules shared by the dialogue metrics."""

from __future__ import annotations

import re
from collections.abc import Iterable

_CAMEL_RE = re.compile(r"(?<=[a-z])(?=[A-Z])")
_WORD_RE = re.compile(r"[a-z]+(?:'[a-z]+)?")

STOPWORDS: frozenset[str] = frozenset("""
a about above after again against all also am an and any are aren't as at be because been before
being below between both but by can can't cannot could couldn't did didn't do does doesn't doing
don't down during each few for from further had hadn't has hasn't have haven't having he he'd
he'll he's her here here's hers herself him himself his how how's i i'd i'll i'm i've if in into
is isn't it it's its itself just let's me more most mustn't my myself no nor not now of off on
once only or other ought our ours ourselves out over own same shan't she she'd she'll she's should
shouldn't so some such than that that's the their theirs them themselves then there there's these
they they'd they'll they're they've this those through to too under until up very was wasn't we
we'd we'll we're we've were weren't what what's when when's where where's which while who who's
whom why why's will with won't would wouldn't yes yet you you'd you'll you're you've your yours
yourself yourselves
""".split())

# Words that are never object mentions: navigation vocabulary, spatial terms,
# room structure, units, speaker tags, and common dialogue verbs/adjectives.
NON_OBJECT_WORDS: frozenset[str] = frozenset("""
oa ga agent agents robot ground overhead camera view views feed top image dialogue conversation
see sees seeing saw seen notice noticed notices spot spotted find found finding locate located
look looking looked describe described tell told say said ask asked answer answered query
move moves moved moving go goes going went gone walk walked turn turns turned turning rotate
rotates rotated rotating advance advanced advancing enter entered entering reach reached reaching
approach approached step steps stepped head headed heading face faced facing proceed proceeded
come came keep keeping continue stay stop try help guide follow suggest suggested need want think
know seem seems appear appears visible invisible clear blocked blocking open closed
ahead behind left right forward forwards backward backwards back front side sides center middle
north south east west toward towards around near nearby close closer far farther further next
away along across beside inside outside direction directions position location place spot
meter meters metre metres cm centimeters feet foot degrees degree distance cell cells grid
room rooms area areas wall walls floor ceiling corner corners corridor hallway space way path
one two three four five six seven eight nine ten few several many little bit lot
notable anything something nothing everything thing things object objects target item items
sure ok okay hello hi thanks thank please great good well alright
already still just currently first second last
""".split())

PREEMPTIVE_PATTERNS: tuple[re.Pattern, ...] = tuple(re.compile(p, re.IGNORECASE) for p in (
    r"\b(?:i|we|you|it|the\s+(?:robot|agent|ground\s+agent))\s*(?:have|has|'ve|’ve)\s+"
    r"(?:(?:just|already|now|finally|successfully|also)\s+)*"
    r"(?:moved|entered|turned|rotated|advanced|walked|gone|stepped|reached|approached|driven|"
    r"navigated|proceeded|headed|travell?ed|come|backed)\b",
    r"\b(?:i|we)\s+(?:(?:just|already|now|then|finally)\s+)*"
    r"(?:moved|went|walked|turned|rotated|entered|advanced|stepped|drove|headed|proceeded)\b",
    r"\bnow\s+that\s+(?:i|you|we)(?:\s*(?:'ve|have))?\s+(?:moved|turned|entered|rotated|advanced)\b",
))


def split_camel(text: str) -> str:
    return _CAMEL_RE.sub(" ", text)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; CamelCase labels are split into their words."""
    return _WORD_RE.findall(split_camel(text).lower())


def content_tokens(text: str, stopwords: Iterable[str] = STOPWORDS) -> list[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [t for t in tokenize(text) if t not in stop]


def lemma(word: str) -> str:
    """Crude plural folding, enough for household object nouns."""
    w = word.lower()
    if len(w) > 4 and w.endswith("ies"):
        return w[:-3] + "y"
    if len(w) > 4 and w.endswith("ves"):
        return w[:-3] + "f"
    if len(w) > 3 and w.endswith(("ches", "shes", "xes", "sses", "zes")):
        return w[:-2]
    if len(w) > 3 and w.endswith("s") and not w.endswith(("ss", "us", "is")):
        return w[:-1]
    return w


def label_phrase(label: str) -> tuple[str, ...]:
    """Normalized token phrase for an object label, e.g. ``PepperShaker`` -> ("pepper", "shaker")."""
    return tuple(lemma(t) for t in tokenize(label))


def is_preemptive(text: str) -> bool:
    return any(p.search(text) for p in PREEMPTIVE_PATTERNS)
