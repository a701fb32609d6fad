import numpy as np
import pytest

from osdlab.probs import Distribution, ModelSpec

_criteria: dict[int, str] = {}


@pytest.fixture(scope="session")
def bern_m4():
    return ModelSpec.single(4, Distribution.bernoulli(0.2), Distribution.bernoulli(0.4))


@pytest.fixture(scope="session")
def bern_m6_t2():
    return ModelSpec.homogeneous(6, 2, Distribution.bernoulli(0.2), Distribution.bernoulli(0.4))


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line)
    return record


def random_binary_spec(rng, m, t=1):
    pn = rng.uniform(0.05, 0.95)
    pa = rng.uniform(0.05, 0.95)
    while abs(pa - pn) < 0.05:
        pa = rng.uniform(0.05, 0.95)
    return ModelSpec.homogeneous(m, t, Distribution.bernoulli(pn), Distribution.bernoulli(pa))


def random_spec(rng, m, k, t=1):
    nominal = Distribution(rng.dirichlet(np.ones(k)))
    anomalous = tuple(Distribution(rng.dirichlet(np.ones(k))) for _ in range(t))
    return ModelSpec(m, nominal, anomalous)


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria):
            terminalreporter.write_line(_criteria[number])
