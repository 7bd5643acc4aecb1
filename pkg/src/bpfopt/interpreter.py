"""Concrete executor for BPF-subset programs.

Executes a Program on a MachineState with full runtime checking (bounds,
init-before-read, alignment, jump validity); faults are the runtime mirror of
the safety properties, which is what makes safety counterexamples replayable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from . import bitops, isa
from .semantics import IntAlg, alu_result, jump_taken

MASK64 = bitops.MASK64

# Synthetic runtime address layout; regions are far apart so that candidate
# pointer arithmetic cannot wander from one region into another unnoticed.
STACK_LO = 0x1_0000_0000
PACKET_BASE = 0x2_0000_0000
CTX_BASE = 0x3_0000_0000
MAPVAL_BASE = 0x4_0000_0000
MAPVAL_STRIDE = 0x1000

OOB_ACCESS = "OOB_ACCESS"
READ_BEFORE_WRITE = "READ_BEFORE_WRITE"
NULL_DEREF = "NULL_DEREF"
BAD_ALIGNMENT = "BAD_ALIGNMENT"
BAD_JUMP = "BAD_JUMP"
DIVERGED = "DIVERGED"


@dataclass(frozen=True)
class RuntimeFault:
    kind: str
    at: int

    def __str__(self):
        return f"{self.kind} at instruction {self.at}"


class SourceFaults(Exception):
    """The source program faults on most sampled inputs; cannot build a suite."""


@dataclass
class MachineState:
    """Program input: scalar registers, input memory, map pre-state and the
    oracle streams backing nondeterministic helpers."""

    regs: tuple = (0,) * 11
    packet: bytes = b""
    ctx: bytes = b""
    maps: dict = field(default_factory=dict)  # map_id -> {key bytes: value bytes}
    helper_oracle: dict = field(default_factory=dict)  # helper_id -> tuple of u64

    def to_dict(self):
        return {
            "regs": {f"r{i}": v for i, v in enumerate(self.regs) if v},
            "packet": self.packet.hex(),
            "ctx": self.ctx.hex(),
            "maps": {
                mid: {k.hex(): v.hex() for k, v in entries.items()}
                for mid, entries in self.maps.items()
            },
            "helper_oracle": {h: list(vals) for h, vals in self.helper_oracle.items()},
        }

    @classmethod
    def from_dict(cls, d):
        regs = [0] * 11
        for k, v in (d.get("regs") or {}).items():
            regs[int(str(k).lstrip("r"))] = int(v) & MASK64
        return cls(
            regs=tuple(regs),
            packet=bytes.fromhex(d.get("packet", "") or ""),
            ctx=bytes.fromhex(d.get("ctx", "") or ""),
            maps={
                int(mid): {bytes.fromhex(k): bytes.fromhex(v) for k, v in entries.items()}
                for mid, entries in (d.get("maps") or {}).items()
            },
            helper_oracle={int(h): tuple(int(x) & MASK64 for x in vals)
                           for h, vals in (d.get("helper_oracle") or {}).items()},
        )


@dataclass(frozen=True)
class OutputState:
    r0: int
    packet: bytes
    maps: tuple  # ((map_id, ((key, value), ... sorted by key)), ...)
    regs: tuple = ()  # final registers, for dumps only; not compared

    def key(self, compare):
        parts = []
        if "r0" in compare:
            parts.append(self.r0)
        if "packet" in compare:
            parts.append(self.packet)
        if "maps" in compare:
            parts.append(self.maps)
        return tuple(parts)


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    input: MachineState
    expected: OutputState
    from_counterexample: bool = False


# Which output components each program type is compared on.
PROG_TYPE_OUTPUTS = {
    "xdp": ("r0", "packet", "maps"),
    "socket_filter": ("r0", "maps"),
    "tracing": ("r0", "maps"),
}


def compare_set(spec: isa.ProgramSpec):
    return PROG_TYPE_OUTPUTS.get(spec.prog_type, ("r0", "packet", "maps"))


_K_ALU64, _K_ALU32, _K_JMP, _K_LDX, _K_STX, _K_ST, _K_LDDW, _K_LDMAP, _K_CALL, _K_EXIT, _K_XADD, _K_NOP = range(12)

_KIND_CODE = {
    isa.ALU64: _K_ALU64, isa.ALU32: _K_ALU32, isa.JMP: _K_JMP, isa.LDX: _K_LDX,
    isa.STX: _K_STX, isa.ST: _K_ST, isa.LDDW: _K_LDDW, isa.LD_MAP_ID: _K_LDMAP,
    isa.CALL: _K_CALL, isa.EXIT: _K_EXIT, isa.XADD64: _K_XADD, isa.XADD32: _K_XADD,
    isa.NOP: _K_NOP,
}


@lru_cache(maxsize=4096)
def _compile(insns):
    out = []
    for i in insns:
        out.append((_KIND_CODE[i.kind], i.op, i.width, i.dst, i.src, i.off,
                    i.imm & MASK64, i.src_is_reg))
    return tuple(out)


def _oracle_value(oracle, helper_id, index):
    stream = oracle.get(helper_id)
    if stream is not None and index < len(stream):
        return stream[index] & MASK64
    # deterministic tail so exhausted streams stay reproducible
    h = hashlib.blake2b(f"{helper_id}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


class _Image:
    """Mutable runtime memory image built from a MachineState."""

    __slots__ = ("spec", "stack", "stack_w", "packet", "ctx", "maps", "valptr",
                 "ptrval", "next_val", "oracle", "calls")

    def __init__(self, spec: isa.ProgramSpec, state: MachineState):
        self.spec = spec
        self.stack = bytearray(isa.STACK_SIZE)
        self.stack_w = bytearray(isa.STACK_SIZE)
        pkt = bytes(state.packet)[: spec.packet_size]
        self.packet = bytearray(pkt.ljust(spec.packet_size, b"\0"))
        c = bytes(state.ctx)[: spec.ctx_size]
        self.ctx = bytearray(c.ljust(spec.ctx_size, b"\0"))
        self.maps = {}
        self.valptr = {}   # (map_id, key) -> address
        self.ptrval = {}   # address -> (map_id, key)
        self.next_val = MAPVAL_BASE
        for m in spec.maps:
            entries = {}
            for k, v in sorted((state.maps.get(m.map_id) or {}).items()):
                kk = bytes(k)[: m.key_size].ljust(m.key_size, b"\0")
                vv = bytearray(bytes(v)[: m.value_size].ljust(m.value_size, b"\0"))
                entries[kk] = vv
                self._assign_ptr(m.map_id, kk)
            self.maps[m.map_id] = entries
        self.oracle = state.helper_oracle
        self.calls = {}

    def _assign_ptr(self, map_id, key):
        p = self.valptr.get((map_id, key))
        if p is None:
            p = self.next_val
            self.next_val += MAPVAL_STRIDE
            self.valptr[(map_id, key)] = p
            self.ptrval[p] = (map_id, key)
        return p


def execute(p: isa.Program, state: MachineState, fuel: int | None = None):
    """Run to EXIT; returns OutputState or RuntimeFault."""
    spec = p.spec
    code = _compile(p.insns)
    n = len(code)
    if fuel is None:
        fuel = max(n, 1) * 4  # generous for un-reordered inputs; loop-free needs n
    img = _Image(spec, state)

    regs = [0] * 11
    written = [False] * 11
    for r, ty in spec.input_registers:
        if ty == "packet":
            regs[r] = PACKET_BASE
        elif ty == "ctx":
            regs[r] = CTX_BASE
        else:
            regs[r] = state.regs[r] & MASK64
        written[r] = True
    regs[10] = STACK_LO + isa.STACK_SIZE
    written[10] = True

    def mem_read(addr, width, at):
        if addr == 0:
            return None, RuntimeFault(NULL_DEREF, at)
        end = addr + width
        if STACK_LO <= addr and end <= STACK_LO + isa.STACK_SIZE:
            o = addr - STACK_LO
            if (addr % width) != 0:
                return None, RuntimeFault(BAD_ALIGNMENT, at)
            if not all(img.stack_w[o + i] for i in range(width)):
                return None, RuntimeFault(READ_BEFORE_WRITE, at)
            return int.from_bytes(img.stack[o:o + width], "little"), None
        if PACKET_BASE <= addr and end <= PACKET_BASE + spec.packet_size:
            o = addr - PACKET_BASE
            return int.from_bytes(img.packet[o:o + width], "little"), None
        if CTX_BASE <= addr and end <= CTX_BASE + spec.ctx_size:
            o = addr - CTX_BASE
            return int.from_bytes(img.ctx[o:o + width], "little"), None
        base = addr - (addr % MAPVAL_STRIDE)
        mk = img.ptrval.get(base)
        if mk is not None:
            m = spec.map_by_id(mk[0])
            o = addr - base
            entry = img.maps[mk[0]].get(mk[1])
            if entry is None:
                return None, RuntimeFault(NULL_DEREF, at)  # stale pointer after delete
            if o + width <= m.value_size:
                return int.from_bytes(entry[o:o + width], "little"), None
        return None, RuntimeFault(OOB_ACCESS, at)

    def mem_write(addr, width, value, at):
        if addr == 0:
            return RuntimeFault(NULL_DEREF, at)
        end = addr + width
        if STACK_LO <= addr and end <= STACK_LO + isa.STACK_SIZE:
            o = addr - STACK_LO
            if (addr % width) != 0:
                return RuntimeFault(BAD_ALIGNMENT, at)
            img.stack[o:o + width] = value.to_bytes(width, "little")
            for i in range(width):
                img.stack_w[o + i] = 1
            return None
        if PACKET_BASE <= addr and end <= PACKET_BASE + spec.packet_size:
            o = addr - PACKET_BASE
            img.packet[o:o + width] = value.to_bytes(width, "little")
            return None
        if CTX_BASE <= addr and end <= CTX_BASE + spec.ctx_size:
            o = addr - CTX_BASE
            img.ctx[o:o + width] = value.to_bytes(width, "little")
            return None
        base = addr - (addr % MAPVAL_STRIDE)
        mk = img.ptrval.get(base)
        if mk is not None:
            m = spec.map_by_id(mk[0])
            o = addr - base
            entry = img.maps[mk[0]].get(mk[1])
            if entry is None:
                return RuntimeFault(NULL_DEREF, at)
            if o + width <= m.value_size:
                entry[o:o + width] = value.to_bytes(width, "little")
                return None
        return RuntimeFault(OOB_ACCESS, at)

    def read_key(ptr, map_id, at):
        m = spec.map_by_id(map_id)
        key = bytearray()
        for i in range(m.key_size):
            v, fault = mem_read(ptr + i, 1, at)
            if fault:
                return None, fault
            key.append(v)
        return bytes(key), None

    pc = 0
    steps = 0
    while True:
        if steps >= fuel:
            return RuntimeFault(DIVERGED, pc if pc < n else n - 1)
        if not 0 <= pc < n:
            return RuntimeFault(BAD_JUMP, pc if pc < n else n - 1)
        steps += 1
        kind, op, width, dst, src, off, imm, src_is_reg = code[pc]

        if kind == _K_NOP:
            pc += 1
            continue
        if kind == _K_ALU64 or kind == _K_ALU32:
            if src_is_reg:
                if not written[src]:
                    return RuntimeFault(READ_BEFORE_WRITE, pc)
                rhs = regs[src]
            else:
                rhs = imm
            if op != "mov":
                if not written[dst]:
                    return RuntimeFault(READ_BEFORE_WRITE, pc)
            regs[dst] = alu_result(IntAlg, op, kind == _K_ALU32, regs[dst], rhs)
            written[dst] = True
            pc += 1
            continue
        if kind == _K_JMP:
            if op == "ja":
                tgt = pc + 1 + off
                if not 0 <= tgt < n:
                    return RuntimeFault(BAD_JUMP, pc)
                pc = tgt
                continue
            if not written[dst]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            if src_is_reg:
                if not written[src]:
                    return RuntimeFault(READ_BEFORE_WRITE, pc)
                rhs = regs[src]
            else:
                rhs = imm
            if jump_taken(IntAlg, op, regs[dst], rhs):
                tgt = pc + 1 + off
                if not 0 <= tgt < n:
                    return RuntimeFault(BAD_JUMP, pc)
                pc = tgt
            else:
                pc += 1
            continue
        if kind == _K_LDX:
            if not written[src]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            v, fault = mem_read((regs[src] + off) & MASK64, width, pc)
            if fault:
                return fault
            regs[dst] = v
            written[dst] = True
            pc += 1
            continue
        if kind == _K_STX:
            if not written[dst] or not written[src]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            fault = mem_write((regs[dst] + off) & MASK64, width,
                              regs[src] & ((1 << (8 * width)) - 1), pc)
            if fault:
                return fault
            pc += 1
            continue
        if kind == _K_ST:
            if not written[dst]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            fault = mem_write((regs[dst] + off) & MASK64, width,
                              imm & ((1 << (8 * width)) - 1), pc)
            if fault:
                return fault
            pc += 1
            continue
        if kind == _K_XADD:
            if not written[dst] or not written[src]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            addr = (regs[dst] + off) & MASK64
            v, fault = mem_read(addr, width, pc)
            if fault:
                return fault
            v = (v + regs[src]) & ((1 << (8 * width)) - 1)
            fault = mem_write(addr, width, v, pc)
            if fault:
                return fault
            pc += 1
            continue
        if kind == _K_LDDW:
            regs[dst] = imm
            written[dst] = True
            pc += 1
            continue
        if kind == _K_LDMAP:
            regs[dst] = imm  # opaque handle; helpers interpret it
            written[dst] = True
            pc += 1
            continue
        if kind == _K_CALL:
            helper = imm
            result, fault = _do_call(img, spec, helper, regs, written, read_key,
                                     mem_read, mem_write, pc)
            if fault:
                return fault
            regs[0] = result
            written[0] = True
            for r in (1, 2, 3, 4, 5):
                written[r] = False  # clobbered and unreadable after a call
            pc += 1
            continue
        if kind == _K_EXIT:
            if not written[0]:
                return RuntimeFault(READ_BEFORE_WRITE, pc)
            final_maps = tuple(
                (mid, tuple(sorted((k, bytes(v)) for k, v in entries.items())))
                for mid, entries in sorted(img.maps.items())
            )
            return OutputState(r0=regs[0], packet=bytes(img.packet),
                               maps=final_maps, regs=tuple(regs))
        return RuntimeFault(BAD_JUMP, pc)


def _do_call(img, spec, helper, regs, written, read_key, mem_read, mem_write, pc):
    def arg(i):
        if not written[i]:
            return None
        return regs[i]

    if helper in (isa.HELPER_MAP_LOOKUP, isa.HELPER_MAP_UPDATE, isa.HELPER_MAP_DELETE):
        map_id = arg(1)
        if map_id is None:
            return None, RuntimeFault(READ_BEFORE_WRITE, pc)
        if not any(m.map_id == map_id for m in spec.maps):
            return None, RuntimeFault(OOB_ACCESS, pc)
        key_ptr = arg(2)
        if key_ptr is None:
            return None, RuntimeFault(READ_BEFORE_WRITE, pc)
        key, fault = read_key(key_ptr, map_id, pc)
        if fault:
            return None, fault
        entries = img.maps[map_id]
        if helper == isa.HELPER_MAP_LOOKUP:
            if key in entries:
                return img._assign_ptr(map_id, key), None
            return 0, None
        if helper == isa.HELPER_MAP_UPDATE:
            val_ptr = arg(3)
            if val_ptr is None:
                return None, RuntimeFault(READ_BEFORE_WRITE, pc)
            m = spec.map_by_id(map_id)
            val = bytearray()
            for i in range(m.value_size):
                v, fault = mem_read(val_ptr + i, 1, pc)
                if fault:
                    return None, fault
                val.append(v)
            entries[key] = val
            img._assign_ptr(map_id, key)
            return 0, None
        # delete: distinct return values depending on prior presence
        if key in entries:
            del entries[key]
            return 0, None
        return (-2) & MASK64, None

    if helper in (isa.HELPER_KTIME, isa.HELPER_RANDOM_U32, isa.HELPER_SMP_PROCESSOR_ID):
        idx = img.calls.get(helper, 0)
        img.calls[helper] = idx + 1
        v = _oracle_value(img.oracle, helper, idx)
        if helper == isa.HELPER_RANDOM_U32:
            v &= 0xFFFFFFFF
        if helper == isa.HELPER_SMP_PROCESSOR_ID:
            v &= 0xFF
        return v, None

    return None, RuntimeFault(OOB_ACCESS, pc)  # unmodeled helper id


@dataclass(frozen=True)
class FirstFailure:
    index: int
    observed: object  # OutputState or RuntimeFault


PASS = "pass"


def run_suite(p: isa.Program, suite):
    cmp_set = compare_set(p.spec)
    for i, t in enumerate(suite):
        out = execute(p, t.input)
        if isinstance(out, RuntimeFault):
            return FirstFailure(i, out)
        if out.key(cmp_set) != t.expected.key(cmp_set):
            return FirstFailure(i, out)
    return PASS


def gen_tests(p_src: isa.Program, n: int, rng_seed: int):
    """Deterministic suite: random packets, scalar registers and map contents
    (the first populated test uses empty maps); expected outputs come from the
    source program itself."""
    import random

    rng = random.Random(rng_seed)
    spec = p_src.spec
    tests = []
    faults = 0
    attempts = 0
    while len(tests) < n:
        attempts += 1
        if attempts > max(4 * n, 16) and faults > attempts // 2:
            raise SourceFaults(f"source faulted on {faults}/{attempts} sampled inputs")
        regs = [0] * 11
        for r, ty in spec.input_registers:
            if ty not in ("packet", "ctx"):
                regs[r] = rng.getrandbits(64) if rng.random() < 0.5 else rng.randrange(256)
        packet = bytes(rng.getrandbits(8) for _ in range(spec.packet_size))
        ctx = bytes(rng.getrandbits(8) for _ in range(spec.ctx_size))
        maps = {}
        if tests:  # test 0 exercises the empty-map case
            for m in spec.maps:
                entries = {}
                for _ in range(rng.randrange(0, min(4, m.max_entries) + 1)):
                    k = bytes(rng.getrandbits(8) for _ in range(m.key_size))
                    entries[k] = bytes(rng.getrandbits(8) for _ in range(m.value_size))
                maps[m.map_id] = entries
        oracle = {h: tuple(rng.getrandbits(64) for _ in range(64))
                  for h in (isa.HELPER_KTIME, isa.HELPER_RANDOM_U32, isa.HELPER_SMP_PROCESSOR_ID)}
        state = MachineState(regs=tuple(regs), packet=packet, ctx=ctx,
                             maps=maps, helper_oracle=oracle)
        out = execute(p_src, state)
        if isinstance(out, RuntimeFault):
            faults += 1
            continue
        tests.append(TestCase(state, out))
    return tests
