import pytest

from bpfopt import isa
from bpfopt.interpreter import RuntimeFault, execute
from bpfopt.safety import (SAFE, UNSAFE, check_control_flow, safety)
from safety_corpus import all_cases

XDP = isa.ProgramSpec()


def test_corpus_has_twenty_cases():
    assert len(all_cases()) == 20


@pytest.mark.parametrize("case", all_cases(), ids=lambda c: c[0])
def test_unsafe_cases_report_expected_kind(case, solver_proc):
    name, bad, good, kind, replayable = case
    rep = safety(bad, solver_proc)
    assert rep.verdict == UNSAFE, f"{name}: expected UNSAFE"
    kinds = {v.kind for v in rep.violations}
    assert kind in kinds, f"{name}: wanted {kind}, got {kinds}"


@pytest.mark.parametrize("case", all_cases(), ids=lambda c: c[0])
def test_safe_twins_are_safe(case, solver_proc):
    name, bad, good, kind, replayable = case
    rep = safety(good, solver_proc)
    assert rep.verdict == SAFE, \
        f"{name}: twin flagged {[str(v) for v in rep.violations]}"


@pytest.mark.parametrize("case", [c for c in all_cases() if c[4]],
                         ids=lambda c: c[0])
def test_counterexamples_replay_with_matching_fault(case, solver_proc):
    name, bad, good, kind, replayable = case
    rep = safety(bad, solver_proc)
    states = [v.counterexample for v in rep.violations
              if v.kind == kind and v.counterexample is not None]
    assert states, f"{name}: no counterexample for {kind}"
    out = execute(bad, states[0])
    assert isinstance(out, RuntimeFault), f"{name}: replay did not fault"
    assert out.kind == kind, f"{name}: fault {out.kind} != violation {kind}"


def test_static_violations_bypass_solver():
    class Exploding:
        def check_smt2(self, *a, **kw):
            raise AssertionError("solver must not be consulted")

    p = isa.Program((isa.Insn(isa.ALU64, op="mov", dst=0, imm=0),
                     isa.Insn(isa.JMP, op="ja", off=-2),
                     isa.Insn(isa.EXIT)), XDP)
    rep = safety(p, Exploding())
    assert rep.verdict == UNSAFE
    assert any(v.kind == "LOOP" for v in rep.violations)


def test_branch_partial_init_counterexample_takes_other_branch(solver_proc):
    cases = {c[0]: c for c in all_cases()}
    name, bad, good, kind, _ = cases["branch_partial_init"]
    rep = safety(bad, solver_proc)
    st = [v.counterexample for v in rep.violations if v.counterexample][0]
    # the faulting input must skip the store: r1 == 0 takes the uninitialized path
    assert st.regs[1] == 0
    out = execute(bad, st)
    assert isinstance(out, RuntimeFault) and out.kind == "READ_BEFORE_WRITE"


def test_control_flow_check_examples():
    p = isa.Program((isa.Insn(isa.ALU64, op="mov", dst=0, imm=0),
                     isa.Insn(isa.JMP, op="ja", off=3),
                     isa.Insn(isa.EXIT)), XDP)
    vs = check_control_flow(p)
    assert any(v.kind == "OOB_JUMP" for v in vs)


def test_benchmark_sources_all_safe(solver_proc):
    from pathlib import Path

    root = Path(__file__).parent.parent / "benchmarks"
    from bpfopt import analysis

    for d in sorted((root / "corpus").iterdir()) + [root / "extra" / "map_counter"]:
        spec = isa.load_spec(d / "spec.yaml") if (d / "spec.yaml").exists() else XDP
        p = analysis.reorder_forward(
            isa.parse_asm((d / "prog.asm").read_text(), spec))
        rep = safety(p, solver_proc)
        assert rep.verdict == SAFE, (d.name, [str(v) for v in rep.violations])
