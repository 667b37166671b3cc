import numpy as np
import pytest

from dsnt.bench.data import ShiftSpec, SynonymTable, build_vocabulary, generate_shift_dataset, to_arrays


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_task():
    """A small synthetic task shared by the slower tests."""
    spec = ShiftSpec(seed=3, filler_words=12)
    train_ex, src_ex, tgt_ex = generate_shift_dataset(spec, 600, 200, 200)
    vocab = build_vocabulary(spec)
    X, y = to_arrays(train_ex, vocab)
    return {
        "spec": spec,
        "vocab": vocab,
        "train": (X[:500], y[:500]),
        "valid": (X[500:], y[500:]),
        "source": to_arrays(src_ex, vocab),
        "target": to_arrays(tgt_ex, vocab),
        "table": SynonymTable.from_spec(spec, vocab),
    }


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Print one verdict line per criterion and keep it for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
