import numpy as np
import pytest

from smosched.scheduler import AssignmentMatrix, NeighborView, PriorityParams, build_matrix, priority
from smosched.stream import BufferMap, ChunkId

# peer 1 pulls five single-layer chunks from peers 2, 3 and 4
WORKED_MAPS = {2: "11101", 3: "00011", 4: "10010"}
WORKED_CAPS = {2: 2, 3: 2, 4: 1}


def worked_neighbors():
    return [NeighborView(k, BufferMap(k, 1, np.array([[c == "1" for c in bits]])), WORKED_CAPS[k])
            for k, bits in WORKED_MAPS.items()]


def worked_matrix(priorities=None):
    missing = [ChunkId(s, 0) for s in range(1, 6)]
    return build_matrix(missing, worked_neighbors(), [1.0] * 5 if priorities is None else priorities)


def random_matrix(rng, max_rows=6, max_cols=20, max_layers=4, max_cap=4, unit=False, formula=False):
    """Random availability, capacities and priorities; layers/slots set the tie order.

    With ``formula`` the priorities follow from each chunk's slot and layer
    under the default constants (clock at slot 0).
    """
    n = int(rng.integers(1, max_rows + 1))
    m = int(rng.integers(1, max_cols + 1))
    L = int(rng.integers(1, max_layers + 1))
    cols = [ChunkId(int(rng.integers(0, 30)), int(rng.integers(0, L))) for _ in range(m)]
    avail = rng.random((n, m)) < rng.uniform(0.2, 0.9)
    if formula:
        params = PriorityParams.standard(L)
        pr = np.asarray([priority(c, 0, params) for c in cols])
    elif unit:
        pr = np.ones(m)
    else:
        pr = np.round(rng.uniform(0.01, 2.0, m), 3)
    caps = rng.integers(0, max_cap + 1, n)
    rel = np.sort(np.round(rng.random(n), 2))[::-1]
    return AssignmentMatrix.from_columns(tuple(range(1, n + 1)), cols, avail, pr, caps, rel)


@pytest.fixture
def worked():
    return worked_matrix()


# criterion number -> (passed, detail); filled by test_acceptance and printed at the end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
