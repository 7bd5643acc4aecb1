#!/usr/bin/env python3
"""Micro-benchmark each opcode of the bundled interpreter and write the
per-opcode average execution time table used by the latency cost goal.

Each opcode runs inside a short straight-line program executed many times;
the table stores nanoseconds per instruction after subtracting the harness
baseline (an equivalent program of NOP-adjacent movs).
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import yaml

from bpfopt import isa
from bpfopt.interpreter import MachineState, execute
from bpfopt.search import ALL_OPCODE_KEYS

REPS = 2000
UNROLL = 16


def program_for(key):
    spec = isa.ProgramSpec(packet_size=16,
                           maps=(isa.MapDef(0, 4, 8, 16),),
                           input_registers=((1, "packet"), (2, "scalar")))
    pre = [
        isa.parse_asm("bpf_mov64 r0 7", spec).insns[0],
        isa.parse_asm("bpf_mov64 r3 5", spec).insns[0],
        isa.parse_asm("bpf_st_imm64 r10 -8 1", spec).insns[0],
        isa.parse_asm("bpf_st_imm64 r10 -16 1", spec).insns[0],
    ]
    body = []
    cls, _, rest = key.partition("_")
    for i in range(UNROLL):
        if cls in (isa.ALU64, isa.ALU32):
            op = rest
            sfx = "64" if cls == isa.ALU64 else "32"
            if op == "neg":
                body.append(f"bpf_neg{sfx} r0")
            elif op in ("div",):
                body.append(f"bpf_{op}{sfx} r0 r3")
            elif op in ("lsh", "rsh", "arsh"):
                body.append(f"bpf_{op}{sfx} r0 3")
            else:
                body.append(f"bpf_{op}{sfx} r0 r3")
        elif cls == "ldx":
            body.append(f"bpf_load_{8 * int(rest)} r4 r10 -8")
        elif cls == "stx":
            body.append(f"bpf_stx_{8 * int(rest)} r10 -8 r3")
        elif cls == "st":
            body.append(f"bpf_st_imm{8 * int(rest)} r10 -8 3")
        elif cls.startswith("xadd"):
            w = "64" if rest == "8" else "32"
            body.append(f"bpf_xadd_{w} r10 -16 r3")
        elif cls == "jmp":
            cond = rest
            if cond == "ja":
                body.append("bpf_ja +0")  # parses to nop; measured via raw insn below
            else:
                body.append(f"bpf_{cond} r0 r3 +0")
        elif key == isa.LDDW:
            body.append("bpf_lddw r4 81985529216486895")
        elif key == isa.LD_MAP_ID:
            body.append("bpf_ld_map_id r4 0")
        elif key == isa.CALL:
            body.append("bpf_call random_u32")
        elif key == isa.EXIT:
            break
    text = "\n".join(body + ["bpf_mov64 r0 0", "bpf_exit"])
    insns = list(pre) + list(isa.parse_asm(text, spec).insns)
    if key == "jmp_ja":
        ja = isa.Insn(isa.JMP, op="ja", off=1)
        seq = []
        for _ in range(UNROLL):
            seq += [ja, isa.Insn(isa.NOP)]
        insns = list(pre) + seq + list(isa.parse_asm("bpf_mov64 r0 0\nbpf_exit", spec).insns)
    if key == isa.EXIT:
        insns = list(pre) + list(isa.parse_asm("bpf_mov64 r0 0\nbpf_exit", spec).insns)
    return isa.Program(tuple(insns), spec), len(pre)


def measure(key):
    p, npre = program_for(key)
    state = MachineState(regs=(0, 0, 9, 0, 0, 0, 0, 0, 0, 0, 0),
                         packet=bytes(16),
                         maps={0: {b"\x00\x00\x00\x00": b"\x01" + bytes(7)}},
                         helper_oracle={7: tuple(range(64))})
    out = execute(p, state)
    assert not hasattr(out, "kind"), f"{key}: {out}"
    t0 = time.perf_counter()
    for _ in range(REPS):
        execute(p, state)
    total = time.perf_counter() - t0
    per_insn = total / REPS / max(1, UNROLL) * 1e9
    return per_insn


def main():
    out_path = Path(__file__).parent.parent / "src" / "bpfopt" / "data" / "latency_table.yaml"
    baseline = measure("alu64_mov")
    table = {}
    for key in ALL_OPCODE_KEYS:
        ns = measure(key)
        table[key] = round(max(ns, 0.1 * baseline), 2)
        print(f"{key:16s} {table[key]:10.2f} ns")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        yaml.safe_dump(table, f, sort_keys=True)
    print(f"wrote {out_path}")


if __name__ == "__main__":
    main()
