import pytest

from bpfopt import isa, terms, vcgen
from bpfopt.interpreter import RuntimeFault, execute, run_suite
from bpfopt.solver import (SolverProcess, VerificationCache, check,
                           extract_counterexample, parse_model)

XDP = isa.ProgramSpec()


def parse(src, spec=XDP):
    return isa.parse_asm(src, spec)


def test_trivially_false_goal_unsat(solver_proc):
    p = parse("bpf_mov64 r0 5\nbpf_exit")
    assert check(solver_proc, vcgen.equivalence_query(p, p)).kind == "unsat"


def test_sat_with_model(solver_proc):
    q = vcgen.equivalence_query(parse("bpf_mov64 r0 1\nbpf_exit"),
                                parse("bpf_mov64 r0 2\nbpf_exit"))
    v = check(solver_proc, q)
    assert v.kind == "sat"
    assert v.model


def test_timeout_returns_unknown():
    proc = SolverProcess()
    # a hard query: factor-like multiplication equality
    big = """
    (set-logic QF_BV)
    (declare-fun x () (_ BitVec 64))
    (declare-fun y () (_ BitVec 64))
    (assert (= (bvmul x y) #xDEADBEEF12345677))
    (assert (bvugt x #x0000000000000001))
    (assert (bvugt y #x0000000000000001))
    (check-sat)
    """
    v = proc.check_smt2(big, timeout_ms=1)
    assert v.kind == "unknown" and v.reason == "timeout"
    # the process was killed and respawns cleanly for the next query
    v = proc.check_smt2("(set-logic QF_BV)(declare-fun b () Bool)(assert b)(check-sat)",
                        timeout_ms=30000)
    assert v.kind == "sat"
    proc.close()


def test_never_up_solver_is_environment_error():
    from bpfopt.solver import SolverUnavailable

    proc = SolverProcess(cmd=["false"])
    with pytest.raises(SolverUnavailable):
        proc.check_smt2("(check-sat)", timeout_ms=2000)
    proc.close()


def test_crash_after_first_success_returns_unknown():
    proc = SolverProcess()
    assert proc.check_smt2("(set-logic QF_BV)(declare-fun b () Bool)"
                           "(assert b)(check-sat)", timeout_ms=30000).kind == "sat"
    proc.cmd = ["false"]  # every respawn from now on dies immediately
    proc.close()
    v = proc.check_smt2("(check-sat)", timeout_ms=2000)
    assert v.kind == "unknown" and v.reason.startswith("error")
    proc.close()


def test_respawn_counter():
    proc = SolverProcess(respawn_every=2)
    for _ in range(5):
        v = proc.check_smt2("(set-logic QF_BV)(declare-fun b () Bool)(assert b)(check-sat)",
                            timeout_ms=30000)
        assert v.kind == "sat"
    proc.close()


def test_model_parser_formats():
    text = """(
  (define-fun a_r1_0 () (_ BitVec 64) #x00000000000000ff)
  (define-fun flag () Bool true)
  (define-fun small () (_ BitVec 8) #b00000101)
  (define-fun f ((x!0 (_ BitVec 64))) (_ BitVec 8) (ite (= x!0 #x00) #x01 #x00))
)"""
    m = parse_model(text)
    assert m["a_r1_0"] == 0xFF
    assert m["flag"] == 1
    assert m["small"] == 5
    assert "f" not in m


def test_extract_counterexample_replays(solver_proc):
    p_src = parse("bpf_load_32 r0 r1 0\nbpf_exit")
    cand = parse("bpf_load_32 r0 r1 0\nbpf_add64 r0 1\nbpf_exit")
    q = vcgen.equivalence_query(p_src, cand)
    v = check(solver_proc, q)
    assert v.kind == "sat"
    tc, missing = extract_counterexample(v.model, q.meta, p_src)
    assert tc is not None
    res = run_suite(cand, [tc])
    assert res != "pass"


def test_extract_counterexample_missing_vars_default_zero():
    meta = {"spec": XDP, "scalar_inputs": [(2, "absent_var")],
            "pkt_bytes": [], "ctx_bytes": [], "map_keys": {}, "oracle": {}}
    p = parse("bpf_mov64 r0 0\nbpf_exit")
    tc, missing = extract_counterexample({}, meta, p)
    assert missing == ["absent_var"]
    assert tc.input.regs[2] == 0


def test_cache_insert_lookup():
    cache = VerificationCache()
    p = parse("bpf_mov64 r0 1\nbpf_exit")
    assert cache.lookup(p) is None
    cache.insert(p, "unsat")
    assert cache.lookup(p) == ("unsat", None)
    assert cache.hits == 1 and cache.misses == 1


def test_cache_dead_code_shares_key():
    cache = VerificationCache()
    p = parse("""
    bpf_st_imm32 r10 -4 1
    bpf_st_imm32 r10 -4 2
    bpf_load_32 r0 r10 -4
    bpf_exit
    """)
    q = parse("""
    bpf_st_imm32 r10 -4 2
    bpf_load_32 r0 r10 -4
    bpf_exit
    """)
    cache.insert(p, "unsat")
    assert cache.lookup(q) == ("unsat", None)


def test_cache_structural_difference_misses():
    cache = VerificationCache()
    cache.insert(parse("bpf_mov64 r0 2\nbpf_exit"), "unsat")
    assert cache.lookup(parse("bpf_mov64 r0 1\nbpf_add64 r0 1\nbpf_exit")) is None


def test_safety_counterexample_null_lookup(solver_proc):
    spec = isa.ProgramSpec(maps=(isa.MapDef(0, 4, 8, 4),))
    p = parse("""
    bpf_ld_map_id r1 0
    bpf_st_imm32 r10 -4 1
    bpf_mov64 r2 r10
    bpf_add64 r2 -4
    bpf_call map_lookup
    bpf_load_64 r0 r0 0
    bpf_exit
    """, spec)
    from bpfopt.safety import safety

    rep = safety(p, solver_proc)
    assert not rep.safe
    assert any(v.kind == "NULL_DEREF" for v in rep.violations)
    cexs = [v.counterexample for v in rep.violations
            if v.kind == "NULL_DEREF" and v.counterexample is not None]
    assert cexs
    out = execute(p, cexs[0])
    assert isinstance(out, RuntimeFault) and out.kind == "NULL_DEREF"
