import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from bpfopt import isa
from bpfopt.cli import main

ROOT = Path(__file__).parent.parent
EX1_SRC = """bpf_mov64 r1 0
bpf_stx_32 r10 -4 r1
bpf_stx_32 r10 -8 r1
bpf_load_64 r0 r10 -8
bpf_exit
"""


@pytest.fixture
def ex1(tmp_path):
    f = tmp_path / "ex1.asm"
    f.write_text(EX1_SRC)
    return f


def test_compile_small_budget(ex1, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["compile", str(ex1), "-o", str(out), "--goal", "inst",
               "--chains", "2", "--budget-iters", "8000", "--seed", "3"])
    assert rc == 0
    report = yaml.safe_load((out / "report.yaml").read_text())
    assert report["outputs"]
    row = report["outputs"][0]
    assert row["insns_before"] == 5
    assert row["insns_after"] <= 3
    # emitted binary decodes to the emitted asm exactly
    asm = (out / "out0.asm").read_text()
    bin_prog = isa.decode((out / "out0.bin").read_bytes())
    assert isa.print_asm(bin_prog) == asm
    assert (out / "report.csv").read_text().startswith("program,")


def test_compile_budget_zero_emits_source(ex1, tmp_path):
    out = tmp_path / "out0"
    rc = main(["compile", str(ex1), "-o", str(out), "--budget-iters", "0",
               "--chains", "1"])
    assert rc == 1  # nothing better: still a success with a report
    report = yaml.safe_load((out / "report.yaml").read_text())
    row = report["outputs"][0]
    assert row["insns_after"] == row["insns_before"]


def test_compile_missing_spec_file_exit_2(ex1, tmp_path):
    rc = main(["compile", str(ex1), "-o", str(tmp_path / "x"),
               "--spec", str(tmp_path / "nope.yaml")])
    assert rc == 2


def test_compile_unsafe_source_exit_2(tmp_path):
    bad = tmp_path / "bad.asm"
    bad.write_text("bpf_load_64 r0 r10 -8\nbpf_exit\n")
    rc = main(["compile", str(bad), "-o", str(tmp_path / "x")])
    assert rc == 2


def test_compile_post_filter_drops_everything(ex1, tmp_path):
    out = tmp_path / "filtered"
    rc = main(["compile", str(ex1), "-o", str(out), "--chains", "1",
               "--budget-iters", "5000", "--post-filter", "false"])
    assert rc == 1
    report = yaml.safe_load((out / "report.yaml").read_text())
    assert report["outputs"] == []


def test_verify_reflexive(ex1, capsys):
    rc = main(["verify", str(ex1), str(ex1)])
    assert rc == 0
    assert "EQUIVALENT" in capsys.readouterr().out


def test_verify_ex1_pair(ex1, tmp_path, capsys):
    after = tmp_path / "after.asm"
    after.write_text("bpf_st_imm64 r10 -8 0\nbpf_load_64 r0 r10 -8\nbpf_exit\n")
    rc = main(["verify", str(ex1), str(after)])
    assert rc == 0
    assert capsys.readouterr().out.strip().endswith("EQUIVALENT")


def test_verify_not_equivalent_writes_replayable_state(tmp_path, capsys):
    a = tmp_path / "a.asm"
    b = tmp_path / "b.asm"
    a.write_text("bpf_mov64 r0 1\nbpf_exit\n")
    b.write_text("bpf_mov64 r0 2\nbpf_exit\n")
    cex = tmp_path / "cex.yaml"
    rc = main(["verify", str(a), str(b), "--cex-out", str(cex)])
    assert rc == 0
    assert "NOT_EQUIVALENT" in capsys.readouterr().out
    assert cex.exists()
    # the state file replays through the interpret subcommand on both programs
    rc = main(["interpret", str(a), "--state", str(cex)])
    out_a = capsys.readouterr().out
    rc = main(["interpret", str(b), "--state", str(cex)])
    out_b = capsys.readouterr().out
    assert out_a.splitlines()[0] != out_b.splitlines()[0]


def test_verify_safety_mode(tmp_path, capsys):
    bad = tmp_path / "bad.asm"
    bad.write_text("bpf_load_32 r0 r10 -4\nbpf_exit\n")
    rc = main(["verify", "--safety", str(bad)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "UNSAFE" in out and "READ_BEFORE_WRITE" in out


def test_verify_window_mode(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text("prog_type: tracing\npacket_size: 0\n"
                    "input_registers: {2: scalar, 3: scalar}\n")
    a = tmp_path / "a.asm"
    a.write_text("bpf_lddw r3 0xffe00000\nbpf_mov64 r0 r2\nbpf_and64 r0 r3\n"
                 "bpf_rsh64 r0 21\nbpf_exit\n")
    b = tmp_path / "b.asm"
    b.write_text("bpf_lddw r3 0xffe00000\nbpf_mov32 r0 r2\nbpf_arsh64 r0 21\n"
                 "nop\nbpf_exit\n")
    rc = main(["verify", str(a), str(b), "--spec", str(spec), "--window"])
    assert rc == 0
    assert "EQUIVALENT" in capsys.readouterr().out


def test_interpret_dump(tmp_path, capsys):
    prog = tmp_path / "p.asm"
    prog.write_text("bpf_load_32 r0 r1 0\nbpf_exit\n")
    state = tmp_path / "state.yaml"
    state.write_text('packet: "2a000000000000000000000000000000"\n')
    rc = main(["interpret", str(prog), "--state", str(state)])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "r0: 0x2a"


def test_interpret_fault_reported(tmp_path, capsys):
    prog = tmp_path / "p.asm"
    prog.write_text("bpf_load_32 r0 r10 -4\nbpf_exit\n")
    rc = main(["interpret", str(prog)])
    assert rc == 0
    assert "READ_BEFORE_WRITE" in capsys.readouterr().out


def test_analyze_dumps_cfg_ssa_types(ex1, capsys):
    rc = main(["analyze", str(ex1)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "digraph cfg" in out
    assert "-- ssa --" in out
    assert "stack" in out  # r10-derived pointer types


def test_bench_empty_corpus_exit_zero(tmp_path, capsys):
    rc = main(["bench", str(tmp_path)])
    assert rc == 0


def test_bench_rows_and_csv(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    for name, src in (("a", EX1_SRC),
                      ("b", "bpf_mov64 r2 5\nbpf_mov64 r0 r2\nbpf_exit\n")):
        d = corpus / name
        d.mkdir(parents=True)
        (d / "prog.asm").write_text(src)
        (d / "meta.yaml").write_text("expected_after: 5\n")
    csvf = tmp_path / "bench.csv"
    rc = main(["bench", str(corpus), "--chains", "1", "--budget-iters", "3000",
               "--csv", str(csvf), "--regress"])
    assert rc == 0
    lines = csvf.read_text().strip().splitlines()
    assert len(lines) == 3  # header + 2 benchmarks
    assert "compression_pct" in lines[0]


def test_cli_entrypoint_exists():
    r = subprocess.run([sys.executable, "-m", "bpfopt.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("compile", "verify", "interpret", "analyze", "bench"):
        assert sub in r.stdout
