import pytest

from transferlab.adapter import ActionAligner, SourceEntry, SourceLibrary
from transferlab.diffcore import Mlp, MlpSpec
from transferlab.envs import default_mapper, parse_env
from transferlab.harness.config import parse_config
from transferlab.harness.runner import pretrain_sources


def random_library(target, sources, seed=0, hidden=(8,)):
    """Untrained (but frozen) source nets; enough for plumbing tests."""
    target = parse_env(target) if isinstance(target, str) else target
    entries = []
    for i, src in enumerate(sources):
        spec = parse_env(src) if isinstance(src, str) else src
        net = Mlp(MlpSpec.hidden(spec.state_dim, hidden, spec.n_actions, seed=seed + i), f"source.{i}")
        if spec.n_actions == target.n_actions:
            aligner = ActionAligner.identity(spec.n_actions)
        else:
            aligner = ActionAligner(tuple(range(spec.n_actions)), target.n_actions)
        entries.append(SourceEntry(spec.name, net, default_mapper(target, spec), aligner))
    return SourceLibrary(entries)


@pytest.fixture(scope="session")
def intent_sources(tmp_path_factory):
    """Pretrained intent-world sources shared by harness and CLI tests."""
    src_dir = tmp_path_factory.mktemp("sources")
    cfg = parse_config(
        "env.target = intent-world(4,8)\n"
        "env.sources = intent-world(4,8), intent-world(4,6)\n"
        "agent.variant = gatn\n"
        f"env.source_dir = {src_dir}\n"
    )
    pretrain_sources(cfg)
    return src_dir


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion (shown in the summary)."""

    def record(number, name, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
