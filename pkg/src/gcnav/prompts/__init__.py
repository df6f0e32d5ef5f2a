"""Prompt templates stored as resource files with ``{{name}}`` placeholders.

Two template sets ship with the package: ``sim`` (the full set used by the
episode protocol) and ``realworld`` (the tuned communication prompts for the
physical setup). Leading lines starting with ``%%`` are file metadata and are
stripped before rendering.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

TEMPLATE_IDS: tuple[str, ...] = (
    "no_comm_ground_system",
    "no_comm_ground_user",
    "no_comm_blocked_suffix",
    "comm_oa_system",
    "comm_oa_user",
    "comm_ga_system",
    "comm_ga_user",
    "exec_coop_system",
    "exec_coop_user",
    "exec_selective_ga_system",
    "exec_selective_ga_user",
    "preemptive_classifier_system",
    "preemptive_classifier_user",
    "selective_comm_gate",
)

REALWORLD_IDS: tuple[str, ...] = ("comm_oa_system", "comm_oa_user", "comm_ga_system", "comm_ga_user")

PLACEHOLDERS: frozenset[str] = frozenset({
    "target_object",
    "last_action",
    "outcome",
    "distance",
    "blocking_object",
    "c_len_remaining",
    "dialogue",
    "action_command",
    "conversation",
})

_PLACEHOLDER_RE = re.compile(r"\{\{([a-z_]+)\}\}")


class PromptError(Exception):
    pass


class UnknownTemplate(PromptError):
    pass


class MissingPlaceholder(PromptError):
    def __init__(self, name: str, template_id: str = ""):
        super().__init__(f"template {template_id!r} needs placeholder {name!r}")
        self.name = name


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    template_set: str = "sim"
    derived: bool = False

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen = []
        for name in _PLACEHOLDER_RE.findall(self.body):
            if name not in seen:
                seen.append(name)
        return tuple(seen)

    def render(self, variables: dict[str, str]) -> str:
        for name in self.placeholders:
            if name not in variables:
                raise MissingPlaceholder(name, self.id)
        return _PLACEHOLDER_RE.sub(lambda m: str(variables[m.group(1)]), self.body)


def _ids_for(template_set: str) -> tuple[str, ...]:
    if template_set == "sim":
        return TEMPLATE_IDS
    if template_set == "realworld":
        return REALWORLD_IDS
    raise UnknownTemplate(f"unknown template set {template_set!r}")


@lru_cache(maxsize=None)
def get_template(template_id: str, template_set: str = "sim") -> PromptTemplate:
    if template_id not in _ids_for(template_set):
        raise UnknownTemplate(template_id)
    raw = resources.files(__package__).joinpath(template_set, f"{template_id}.txt").read_text(encoding="utf-8")
    lines = raw.split("\n")
    derived = False
    while lines and lines[0].startswith("%%"):
        derived = derived or "derived" in lines[0]
        lines.pop(0)
    body = "\n".join(lines)
    tmpl = PromptTemplate(template_id, body, template_set, derived)
    unknown = set(tmpl.placeholders) - PLACEHOLDERS
    if unknown:
        raise PromptError(f"{template_id} uses undeclared placeholders {sorted(unknown)}")
    return tmpl


def render(template_id: str, variables: dict[str, str] | None = None, template_set: str = "sim") -> str:
    return get_template(template_id, template_set).render(variables or {})


def list_templates(template_set: str = "sim") -> list[tuple[str, tuple[str, ...]]]:
    return [(tid, get_template(tid, template_set).placeholders) for tid in _ids_for(template_set)]


def templates_digest() -> str:
    """Content hash over every template file; recorded in run manifests."""
    h = hashlib.sha256()
    for tset in ("sim", "realworld"):
        for tid in _ids_for(tset):
            h.update(f"{tset}/{tid}\n".encode())
            h.update(resources.files(__package__).joinpath(tset, f"{tid}.txt").read_bytes())
    return h.hexdigest()
