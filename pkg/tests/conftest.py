import os
import sys

import pytest
from hypothesis import HealthCheck, settings, strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from poolsim.chain import GENESIS, Block, MessageState  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def block_trees(draw, max_blocks=30, max_gap=40):
    """A random block tree as (state, blocks); parents precede children, timestamps increase."""
    n = draw(st.integers(0, max_blocks))
    blocks = [GENESIS]
    for i in range(n):
        parent = blocks[draw(st.integers(0, len(blocks) - 1))]
        ts = parent.timestamp + draw(st.integers(1, max_gap))
        miner = draw(st.sampled_from(["a", "b", "c"]))
        blocks.append(Block(parent.id, miner, ts, b"%d" % i))
    return MessageState.from_messages(blocks), blocks


def linear_chain(n, step=1, miner="m"):
    """genesis plus n blocks with timestamps step, 2*step, ..."""
    blocks = [GENESIS]
    for i in range(1, n + 1):
        blocks.append(Block(blocks[-1].id, miner, i * step))
    return MessageState.from_messages(blocks), blocks


@pytest.fixture
def chain7():
    return linear_chain(7)


def shipped(name, *overrides, **fields):
    """A shipped scenario with --set style overrides and dataclass field replacements."""
    from dataclasses import replace

    from poolsim.scenario import load_scenario

    spec = load_scenario(name, list(overrides))
    return replace(spec, **fields) if fields else spec


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
