from __future__ import annotations

import pytest

from gcnav.agents import OracleBackend
from gcnav.protocol import Backends, EpisodeSpec, Mode
from gcnav.world import Heading, Pose, world_from_rows

# 8x6 room: a two-cell sofa, a chair, two mugs (m and n are separate instances)
ROOM_ROWS = (
    "........",
    ".SS...C.",
    "........",
    "..##....",
    "m......n",
    "........",
)
ROOM_LEGEND = {"S": "Sofa", "C": "Chair", "m": "Mug", "n": "Mug"}


@pytest.fixture
def room():
    return world_from_rows(ROOM_ROWS, ROOM_LEGEND, spawn=Pose(4, 5, Heading.NORTH))


def make_spec(world, mode=Mode.NO_COMM, c_len=0, k=10, target="Sofa", pose=None, **kw) -> EpisodeSpec:
    return EpisodeSpec(world, pose or world.spawn, target, mode, k=k, c_len=c_len, **kw)


def oracle_backends(**overrides) -> Backends:
    roles = {"oa": OracleBackend(), "ga": OracleBackend(), "decider": OracleBackend()}
    roles.update(overrides)
    return Backends(**roles)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
