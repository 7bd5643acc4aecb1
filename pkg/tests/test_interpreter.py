import pytest

from bpfopt import isa
from bpfopt.interpreter import (PASS, FirstFailure, MachineState, RuntimeFault,
                                SourceFaults, TestCase, execute, gen_tests,
                                run_suite)

XDP = isa.ProgramSpec()
TRACE = isa.ProgramSpec(prog_type="tracing", packet_size=0,
                        input_registers=((2, "scalar"),))


def run(src, spec=XDP, **kw):
    return execute(isa.parse_asm(src, spec), MachineState(**kw) if kw else MachineState())


def test_add32_zeroes_upper_half():
    out = run("""
    bpf_lddw r0 0xFFFFFFFF00000001
    bpf_add32 r0 2
    bpf_exit
    """)
    assert out.r0 == 0x3


def test_xadd32_adds_in_memory():
    out = run("""
    bpf_st_imm32 r10 -4 41
    bpf_mov64 r1 1
    bpf_mov64 r0 r10
    bpf_add64 r0 -4
    bpf_xadd_32 r0 0 r1
    bpf_load_32 r0 r10 -4
    bpf_exit
    """)
    assert out.r0 == 42


def test_stack_read_before_write_faults():
    out = run("bpf_load_32 r0 r10 -4\nbpf_exit")
    assert isinstance(out, RuntimeFault) and out.kind == "READ_BEFORE_WRITE"


def test_register_read_before_write_faults():
    out = run("bpf_add64 r3 1\nbpf_mov64 r0 0\nbpf_exit")
    assert isinstance(out, RuntimeFault) and out.kind == "READ_BEFORE_WRITE"
    assert out.at == 0


def test_div_by_zero_yields_zero():
    out = run("""
    bpf_mov64 r0 7
    bpf_mov64 r1 0
    bpf_div64 r0 r1
    bpf_exit
    """, TRACE)
    assert out.r0 == 0


def test_shift_masks_amount():
    out = run("""
    bpf_mov64 r0 1
    bpf_lsh64 r0 65
    bpf_exit
    """, TRACE)
    assert out.r0 == 2  # 65 & 63 == 1
    out = run("""
    bpf_mov64 r0 1
    bpf_lsh32 r0 33
    bpf_exit
    """, TRACE)
    assert out.r0 == 2  # 33 & 31 == 1


def test_mov64_imm_sign_extends():
    out = run("bpf_mov64 r0 -1\nbpf_exit", TRACE)
    assert out.r0 == (1 << 64) - 1


def test_oob_stack_access_faults():
    out = run("bpf_st_imm32 r10 -516 1\nbpf_mov64 r0 0\nbpf_exit")
    assert isinstance(out, RuntimeFault) and out.kind == "OOB_ACCESS"


def test_misaligned_stack_store_faults():
    out = run("bpf_st_imm16 r10 -3 1\nbpf_mov64 r0 0\nbpf_exit")
    assert isinstance(out, RuntimeFault) and out.kind == "BAD_ALIGNMENT"


def test_fallthrough_end_is_bad_jump():
    p = isa.Program((isa.Insn(isa.ALU64, op="mov", dst=0, imm=1),))
    out = execute(p, MachineState())
    assert isinstance(out, RuntimeFault) and out.kind == "BAD_JUMP"


def test_backward_jump_diverges_on_fuel():
    p = isa.Program((isa.make_jump("ja", off=-1),), XDP)
    out = execute(p, MachineState(), fuel=10)
    assert isinstance(out, RuntimeFault) and out.kind == "DIVERGED"


def test_map_lookup_update_delete():
    spec = isa.ProgramSpec(maps=(isa.MapDef(0, 4, 8, 16),))
    src = """
    bpf_ld_map_id r1 0
    bpf_st_imm32 r10 -4 5
    bpf_mov64 r2 r10
    bpf_add64 r2 -4
    bpf_call map_delete
    bpf_mov64 r0 r0
    bpf_exit
    """
    p = isa.parse_asm(src, spec)
    key = (5).to_bytes(4, "little")
    out = execute(p, MachineState(maps={0: {key: bytes(8)}}))
    assert out.r0 == 0  # key existed
    out = execute(p, MachineState(maps={0: {}}))
    assert out.r0 == (-2) & isa.MASK64  # key absent

    src2 = """
    bpf_ld_map_id r1 0
    bpf_st_imm32 r10 -4 5
    bpf_mov64 r2 r10
    bpf_add64 r2 -4
    bpf_call map_lookup
    bpf_jeq r0 0 miss
    bpf_load_64 r0 r0 0
    bpf_exit
    miss: bpf_mov64 r0 99
    bpf_exit
    """
    p2 = isa.parse_asm(src2, spec)
    out = execute(p2, MachineState(maps={0: {key: (1234).to_bytes(8, "little")}}))
    assert out.r0 == 1234
    out = execute(p2, MachineState(maps={0: {}}))
    assert out.r0 == 99


def test_helper_clobbers_r1_to_r5():
    out = run("""
    bpf_mov64 r3 7
    bpf_call random_u32
    bpf_mov64 r0 r3
    bpf_exit
    """, TRACE)
    assert isinstance(out, RuntimeFault) and out.kind == "READ_BEFORE_WRITE"


def test_helper_oracle_reproducible():
    src = "bpf_call random_u32\nbpf_exit"
    st = MachineState(helper_oracle={isa.HELPER_RANDOM_U32: (12345,)})
    assert execute(isa.parse_asm(src, TRACE), st).r0 == 12345
    # identical inputs give identical outputs even when the stream runs dry
    st2 = MachineState()
    a = execute(isa.parse_asm(src, TRACE), st2).r0
    b = execute(isa.parse_asm(src, TRACE), st2).r0
    assert a == b


def test_run_suite_reflexive_and_failure_index():
    p = isa.parse_asm("bpf_load_32 r0 r1 0\nbpf_exit", XDP)
    suite = gen_tests(p, 8, 5)
    assert run_suite(p, suite) == PASS
    bad = isa.parse_asm("bpf_load_32 r0 r1 0\nbpf_add64 r0 1\nbpf_exit", XDP)
    res = run_suite(bad, suite)
    assert isinstance(res, FirstFailure) and res.index == 0
    faulty = isa.parse_asm("bpf_load_64 r0 r10 -8\nbpf_exit", XDP)
    res = run_suite(faulty, suite)
    assert isinstance(res, FirstFailure) and res.index == 0
    assert isinstance(res.observed, RuntimeFault)


def test_gen_tests_deterministic_and_empty():
    p = isa.parse_asm("bpf_load_32 r0 r1 0\nbpf_exit", XDP)
    assert gen_tests(p, 0, 1) == []
    a = gen_tests(p, 16, 42)
    b = gen_tests(p, 16, 42)
    assert a == b
    assert len(a) == 16


def test_gen_tests_expected_output_constant_stores():
    p = isa.parse_asm("""
    bpf_mov64 r1 0
    bpf_stx_32 r10 -4 r1
    bpf_stx_32 r10 -8 r1
    bpf_load_64 r0 r10 -8
    bpf_exit
    """, XDP)
    for t in gen_tests(p, 12, 3):
        assert t.expected.r0 == 0


def test_gen_tests_source_faults():
    p = isa.parse_asm("bpf_load_64 r0 r10 -8\nbpf_exit", XDP)
    with pytest.raises(SourceFaults):
        gen_tests(p, 8, 1)


def test_gen_tests_first_test_has_empty_maps():
    spec = isa.ProgramSpec(maps=(isa.MapDef(0, 4, 4, 8),))
    p = isa.parse_asm("bpf_mov64 r0 0\nbpf_exit", spec)
    suite = gen_tests(p, 8, 9)
    assert suite[0].input.maps in ({}, {0: {}})
    assert any(t.input.maps.get(0) for t in suite[1:])


def test_determinism_same_program_same_input():
    p = isa.parse_asm("""
    bpf_load_32 r2 r1 0
    bpf_mul64 r2 r2
    bpf_mov64 r0 r2
    bpf_exit
    """, XDP)
    st = MachineState(packet=bytes(range(16)))
    assert execute(p, st) == execute(p, st)


def test_output_comparison_includes_packet_for_xdp():
    p1 = isa.parse_asm("bpf_st_imm8 r1 0 1\nbpf_mov64 r0 0\nbpf_exit", XDP)
    p2 = isa.parse_asm("bpf_st_imm8 r1 0 2\nbpf_mov64 r0 0\nbpf_exit", XDP)
    suite = gen_tests(p1, 4, 11)
    res = run_suite(p2, suite)
    assert isinstance(res, FirstFailure)
