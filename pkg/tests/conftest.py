import numpy as np
import pytest

from rmsh.data import Dataset, generate_synthetic, split_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    x, y, l = generate_synthetic(n=120, c=5, dim_image=10, dim_text=8, tag_probs=0.3, noise=0.1, seed=3)
    return Dataset(x, y, l)


@pytest.fixture(scope="session")
def ac8_split():
    """N=2000, C=8, noise 0.1 split into 1800 database rows and 200 held-out queries."""
    x, y, l = generate_synthetic(n=2000, c=8, noise=0.1, seed=0)
    return split_dataset(Dataset(x, y, l), 200, seed=0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; asserts on failure."""

    def record(tag: str, ok: bool, detail: str) -> None:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
