import csv

import numpy as np
import pytest

CAR_HEADER = ["veh_value", "exposure", "clm", "numclaims", "claimcst0", "veh_body", "veh_age", "gender", "area", "agecat"]


def write_synthetic_car(path, n=3000, seed=1):
    """Policy file shaped like the car dataset, with gamma claim severities."""
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CAR_HEADER)
        for _ in range(n):
            gender = rng.choice(["F", "M"])
            area = rng.choice(list("ABCDEF"))
            agecat = int(rng.integers(1, 7))
            exposure = round(float(rng.uniform(0.05, 1.0)), 4)
            k = int(rng.poisson(0.4 * exposure))
            mu = 1500 * np.exp(0.15 * (gender == "M") + 0.2 * (area in "EF") - 0.05 * agecat)
            cost = round(float(rng.gamma(1 / 1.5, mu * 1.5, size=k).sum()), 2) if k else 0.0
            w.writerow([round(float(rng.uniform(0.2, 4.0)), 2), exposure, int(k > 0), k, cost,
                        "SEDAN", "2", gender, area, agecat])
    return path


@pytest.fixture(scope="session")
def car_csv(tmp_path_factory):
    return write_synthetic_car(tmp_path_factory.mktemp("data") / "car.csv")


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert on it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, ok, detail, warn_only=False):
        verdict = "PASS" if ok else ("WARN" if warn_only else "FAIL")
        line = f"criterion {number}: {verdict}  {detail}"
        lines.append(line)
        print(line)
        if not warn_only:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
