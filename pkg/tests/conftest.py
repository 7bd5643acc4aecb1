import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bpfopt.solver import SolverProcess, ensure_backend


@pytest.fixture(scope="session")
def solver_proc():
    ensure_backend()
    proc = SolverProcess()
    # first query in a fresh WASM process pays JIT warmup; get it out of the way
    proc.check_smt2("(set-logic QF_UFBV)(declare-fun w () (_ BitVec 8))"
                    "(assert (= w #x01))(check-sat)", 60000)
    yield proc
    proc.close()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance-gate criteria")
    config.addinivalue_line("markers", "slow: long-running searches")
