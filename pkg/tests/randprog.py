"""Random loop-free, helper-free, fault-free-by-construction programs for
differential testing of the interpreter against the logic encoding."""

from __future__ import annotations

import random

from bpfopt import isa

SPEC = isa.ProgramSpec(prog_type="xdp", packet_size=16,
                       input_registers=((1, "packet"), (2, "scalar")))

_ALU_OPS = ("add", "sub", "mul", "div", "or", "and", "lsh", "rsh", "arsh",
            "neg", "mov", "xor")
_CONDS = ("jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge")


class _Gen:
    """Tracks which registers / stack bytes are definitely written so every
    generated read is legal on every path."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.written = {2}          # scalar regs holding values (r1 is a pointer)
        self.stack = set()          # r10-relative offsets definitely written

    def snapshot(self):
        return set(self.written), set(self.stack)

    def restore(self, snap):
        self.written, self.stack = set(snap[0]), set(snap[1])

    def merge(self, snap_a, snap_b):
        self.written = snap_a[0] & snap_b[0]
        self.stack = snap_a[1] & snap_b[1]

    def any_written(self):
        return self.rng.choice(sorted(self.written))

    def insn(self):
        rng = self.rng
        choice = rng.random()
        if choice < 0.55 or not self.stack:
            op = rng.choice(_ALU_OPS)
            cls = isa.ALU64 if rng.random() < 0.7 else isa.ALU32
            if op == "mov":
                dst = rng.randrange(0, 6)
                if rng.random() < 0.5 and self.written:
                    ins = isa.Insn(cls, op="mov", dst=dst, src=self.any_written(),
                                   src_is_reg=True)
                else:
                    ins = isa.Insn(cls, op="mov", dst=dst,
                                   imm=rng.randrange(-(1 << 31), 1 << 31))
                self.written.add(dst)
                return ins
            if not self.written:
                return None
            dst = self.any_written()
            if op == "neg":
                return isa.Insn(cls, op="neg", dst=dst)
            if rng.random() < 0.5:
                return isa.Insn(cls, op=op, dst=dst, src=self.any_written(),
                                src_is_reg=True)
            return isa.Insn(cls, op=op, dst=dst,
                            imm=rng.randrange(-(1 << 31), 1 << 31))
        if choice < 0.7:  # packet load
            dst = rng.randrange(0, 6)
            width = rng.choice(isa.WIDTHS)
            off = rng.randrange(0, SPEC.packet_size - width + 1)
            self.written.add(dst)
            return isa.Insn(isa.LDX, width=width, dst=dst, src=1, off=off)
        if choice < 0.85:  # stack store (aligned), remembers coverage
            width = rng.choice(isa.WIDTHS)
            slot = rng.randrange(1, 1 + 64 // width) * width
            off = -slot
            if self.written and rng.random() < 0.7:
                ins = isa.Insn(isa.STX, width=width, dst=10, off=off,
                               src=self.any_written())
            else:
                ins = isa.Insn(isa.ST, width=width, dst=10, off=off,
                               imm=rng.randrange(-(1 << 31), 1 << 31))
            self.stack |= {off + i for i in range(width)}
            return ins
        # stack load from a fully written, aligned span
        for width in sorted(self.rng.sample(list(isa.WIDTHS), len(isa.WIDTHS)), reverse=True):
            cands = [o for o in self.stack
                     if o % width == 0 and all(o + i in self.stack for i in range(width))]
            if cands:
                dst = rng.randrange(0, 6)
                self.written.add(dst)
                return isa.Insn(isa.LDX, width=width, dst=dst, src=10,
                                off=rng.choice(cands))
        return None


def random_program(rng: random.Random, max_body: int = 9) -> isa.Program:
    g = _Gen(rng)

    def gen(n):
        out = []
        while len(out) < n:
            ins = g.insn()
            if ins is not None:
                out.append(ins)
        return out

    n = rng.randrange(2, max_body + 1)
    if rng.random() < 0.5 or n < 4:
        insns = gen(n)
    else:
        # head; conditional forward branch over an arm of pure stores; tail.
        # Coverage effects of the (possibly skipped) arm roll back so the
        # tail never relies on a conditional write.
        n_head = rng.randrange(1, n - 2)
        head = gen(n_head)
        arm = []
        want = rng.randrange(1, 3)
        for _ in range(20):
            if len(arm) >= want:
                break
            snap = g.snapshot()
            ins = g.insn()
            g.restore(snap)  # nothing from the maybe-skipped arm may persist
            if ins is not None and ins.kind in (isa.ST, isa.STX):
                arm.append(ins)
        if not arm:
            arm = [isa.Insn(isa.ST, width=4, dst=10, off=-64, imm=7)]
        tail = gen(max(1, n - n_head - len(arm)))
        jump = isa.make_jump(rng.choice(_CONDS), dst=2, off=len(arm),
                             imm=rng.randrange(0, 4))
        insns = head + [jump] + arm + tail

    # every path must define the output register before exit
    insns.append(isa.Insn(isa.ALU64, op="mov", dst=0,
                          src=g.any_written(), src_is_reg=True))
    insns.append(isa.Insn(isa.EXIT))
    return isa.Program(tuple(insns), SPEC)


def random_input(rng: random.Random):
    from bpfopt.interpreter import MachineState

    regs = [0] * 11
    regs[2] = rng.getrandbits(64)
    packet = bytes(rng.getrandbits(8) for _ in range(SPEC.packet_size))
    return MachineState(regs=tuple(regs), packet=packet)
