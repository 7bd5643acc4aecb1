"""BPF-subset instruction set: types, assembly syntax, binary encoding.

The subset covers 64/32-bit ALU ops, forward jumps, sized loads/stores,
store-immediate, LDDW (including the map-handle pseudo form), helper calls,
atomic adds and EXIT.  r10 is the read-only stack frame pointer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import yaml

NUM_REGS = 11
STACK_REG = 10
STACK_SIZE = 512

MASK64 = (1 << 64) - 1


class AsmError(Exception):
    """Raised on malformed assembly, with a 1-based line number."""

    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(msg if line is None else f"line {line}: {msg}")


class EncodingError(Exception):
    """Raised on undecodable or unencodable binary instruction records."""


# Instruction classes of the subset.
ALU64 = "alu64"
ALU32 = "alu32"
JMP = "jmp"
LDX = "ldx"
STX = "stx"
ST = "st"
LDDW = "lddw"
LD_MAP_ID = "ld_map_id"
CALL = "call"
EXIT = "exit"
XADD64 = "xadd64"
XADD32 = "xadd32"
NOP = "nop"

ALU_OPS = ("add", "sub", "mul", "div", "or", "and", "lsh", "rsh", "arsh", "neg", "mov", "xor")
JMP_CONDS = ("ja", "jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge")
WIDTHS = (1, 2, 4, 8)

# Well-known helper ids (kernel numbering for the modeled subset).
HELPER_MAP_LOOKUP = 1
HELPER_MAP_UPDATE = 2
HELPER_MAP_DELETE = 3
HELPER_KTIME = 5
HELPER_RANDOM_U32 = 7
HELPER_SMP_PROCESSOR_ID = 8
HELPER_NAMES = {
    HELPER_MAP_LOOKUP: "map_lookup",
    HELPER_MAP_UPDATE: "map_update",
    HELPER_MAP_DELETE: "map_delete",
    HELPER_KTIME: "ktime",
    HELPER_RANDOM_U32: "random_u32",
    HELPER_SMP_PROCESSOR_ID: "smp_processor_id",
}
HELPER_IDS = {v: k for k, v in HELPER_NAMES.items()}


@dataclass(frozen=True)
class Insn:
    """One instruction. Unused fields are 0/None.

    off is a signed 16-bit jump offset (in instructions) or memory byte
    offset.  imm is signed; only LDDW/LD_MAP_ID may exceed 32 bits.
    src_is_reg distinguishes the register and immediate forms of ALU/JMP.
    """

    kind: str
    op: str | None = None       # ALU operation or jump condition
    width: int | None = None    # memory access width in bytes
    dst: int = 0
    src: int = 0
    off: int = 0
    imm: int = 0
    src_is_reg: bool = False

    def is_nop(self):
        return self.kind == NOP

    def is_jump(self):
        return self.kind == JMP

    def is_mem(self):
        """Memory-based instruction in the sense of the rewrite rules."""
        return self.kind in (LDX, STX, ST, XADD64, XADD32)

    def is_exit(self):
        return self.kind == EXIT


def _check_reg(r, line=None):
    if not 0 <= r <= 10:
        raise AsmError(f"register out of range: r{r}", line)


def _fits_signed(v, bits):
    return -(1 << (bits - 1)) <= v < (1 << (bits - 1))


def validate(insn: Insn) -> Insn:
    """Structural checks shared by the parser, decoder and proposal engine."""
    _check_reg(insn.dst)
    _check_reg(insn.src)
    if not _fits_signed(insn.off, 16):
        raise AsmError(f"offset {insn.off} does not fit in 16 bits")
    if insn.kind in (LDDW, LD_MAP_ID):
        if not -(1 << 63) <= insn.imm < (1 << 64):
            raise AsmError("lddw immediate out of 64-bit range")
    elif not _fits_signed(insn.imm, 32):
        raise AsmError(f"imm overflow: {insn.imm} does not fit in 32 bits")
    if insn.kind in (LDX, STX, ST, XADD64, XADD32) and insn.width not in WIDTHS:
        raise AsmError(f"bad width {insn.width}")
    if insn.kind in (XADD64, XADD32):
        # kernel only supports word/dword atomic add
        if (insn.kind == XADD64) != (insn.width == 8):
            raise AsmError("xadd width mismatch")
    return insn


def make_jump(cond, dst=0, src=0, off=0, imm=0, src_is_reg=False) -> Insn:
    # `ja +0` is the canonical NOP; normalizing here keeps round-trips exact.
    if cond == "ja" and off == 0:
        return Insn(NOP)
    if not src_is_reg:
        src = 0  # the immediate form has no source register
    return validate(Insn(JMP, op=cond, dst=dst, src=src, off=off, imm=imm, src_is_reg=src_is_reg))


@dataclass(frozen=True)
class MapDef:
    map_id: int
    key_size: int
    value_size: int
    max_entries: int = 16


@dataclass(frozen=True)
class ProgramSpec:
    """Execution context of a program: typed inputs, memory sizes, maps.

    input_registers maps register index -> 'packet' | 'ctx' | 'scalar'.
    """

    prog_type: str = "xdp"
    input_registers: tuple = ((1, "packet"),)
    packet_size: int = 16
    ctx_size: int = 0
    stack_size: int = STACK_SIZE
    maps: tuple = ()
    output_register: int = 0

    def __post_init__(self):
        if self.stack_size != STACK_SIZE:
            raise ValueError("stack size is fixed to 512 bytes")
        ids = [m.map_id for m in self.maps]
        if len(ids) != len(set(ids)):
            raise ValueError("map_ids must be unique")

    def map_by_id(self, map_id):
        for m in self.maps:
            if m.map_id == map_id:
                return m
        raise KeyError(f"unknown map id {map_id}")

    def input_reg_type(self, r):
        for reg, ty in self.input_registers:
            if reg == r:
                return ty
        return None


@dataclass(frozen=True)
class Program:
    insns: tuple
    spec: ProgramSpec = field(default_factory=ProgramSpec)

    def __post_init__(self):
        if not self.insns:
            raise ValueError("program must be non-empty")

    def __len__(self):
        return len(self.insns)

    def real_len(self):
        """Instruction count excluding NOPs."""
        return sum(1 for i in self.insns if not i.is_nop())

    def with_insns(self, insns):
        return replace(self, insns=tuple(insns))


def spec_from_dict(d) -> ProgramSpec:
    maps = tuple(
        MapDef(m["map_id"], m["key_size"], m["value_size"], m.get("max_entries", 16))
        for m in d.get("maps", ())
    )
    inputs = d.get("input_registers", {1: "packet"})
    if isinstance(inputs, dict):
        inputs = tuple(sorted((int(k), v) for k, v in inputs.items()))
    else:
        inputs = tuple((int(k), v) for k, v in inputs)
    return ProgramSpec(
        prog_type=d.get("prog_type", "xdp"),
        input_registers=inputs,
        packet_size=d.get("packet_size", 16),
        ctx_size=d.get("ctx_size", 0),
        stack_size=d.get("stack_size", STACK_SIZE),
        maps=maps,
        output_register=d.get("output_register", 0),
    )


def spec_to_dict(spec: ProgramSpec) -> dict:
    return {
        "prog_type": spec.prog_type,
        "input_registers": {r: t for r, t in spec.input_registers},
        "packet_size": spec.packet_size,
        "ctx_size": spec.ctx_size,
        "stack_size": spec.stack_size,
        "maps": [
            {"map_id": m.map_id, "key_size": m.key_size, "value_size": m.value_size,
             "max_entries": m.max_entries}
            for m in spec.maps
        ],
        "output_register": spec.output_register,
    }


def load_spec(path) -> ProgramSpec:
    with open(path) as f:
        return spec_from_dict(yaml.safe_load(f) or {})


# ---------------------------------------------------------------------------
# Assembly text format
# ---------------------------------------------------------------------------

_ALU_SUFFIX = {"64": ALU64, "32": ALU32}
_WIDTH_SUFFIX = {"8": 1, "16": 2, "32": 4, "64": 8}


def _parse_int(tok, line):
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"expected a number, got {tok!r}", line)


def _parse_reg(tok, line):
    if not tok.startswith("r") or not tok[1:].isdigit():
        raise AsmError(f"expected a register, got {tok!r}", line)
    r = int(tok[1:])
    _check_reg(r, line)
    return r


def _parse_reg_or_imm(tok, line):
    """Returns (is_reg, value)."""
    if tok.startswith("r") and tok[1:].isdigit():
        return True, _parse_reg(tok, line)
    return False, _parse_int(tok, line)


def parse_asm(text: str, spec: ProgramSpec | None = None) -> Program:
    """Parse line-oriented assembly (one instruction per line, // comments).

    Jump targets may be numeric relative offsets or labels (`name:` lines).
    """
    lines = text.splitlines()
    insns = []
    labels = {}
    pending = []  # (insn index, field already parsed, label token, line no)

    for ln, raw in enumerate(lines, 1):
        code = raw.split("//", 1)[0].strip()
        if not code:
            continue
        while code:
            head, _, rest = code.partition(":")
            if _ is not None and _ == ":" and head and " " not in head and not head.startswith("r"):
                labels[head] = len(insns)
                code = rest.strip()
            else:
                break
        if not code:
            continue
        toks = code.split()
        insns.append(_parse_insn(toks, ln, len(insns), pending))

    for idx, label, ln in pending:
        if label not in labels:
            raise AsmError(f"undefined label {label!r}", ln)
        off = labels[label] - idx - 1
        if not _fits_signed(off, 16):
            raise AsmError(f"jump to {label!r} out of range", ln)
        old = insns[idx]
        insns[idx] = make_jump(old.op, old.dst, old.src, off, old.imm, old.src_is_reg)

    if not insns:
        raise AsmError("empty program")
    return Program(tuple(insns), spec or ProgramSpec())


def _parse_insn(toks, ln, index, pending):
    mn = toks[0].lower()
    args = toks[1:]

    def want(n):
        if len(args) != n:
            raise AsmError(f"{mn} expects {n} operand(s), got {len(args)}", ln)

    def want_between(lo, hi):
        if not lo <= len(args) <= hi:
            raise AsmError(f"{mn} expects {lo}..{hi} operand(s), got {len(args)}", ln)

    if mn == "nop":
        want(0)
        return Insn(NOP)
    if mn == "bpf_exit":
        want(0)
        return Insn(EXIT)
    if mn == "bpf_call":
        want(1)
        if args[0] in HELPER_IDS:
            return Insn(CALL, imm=HELPER_IDS[args[0]])
        return validate(Insn(CALL, imm=_parse_int(args[0], ln)))
    if mn == "bpf_lddw":
        want(2)
        return validate(Insn(LDDW, dst=_parse_reg(args[0], ln), imm=_parse_int(args[1], ln)))
    if mn == "bpf_ld_map_id":
        want(2)
        return validate(Insn(LD_MAP_ID, dst=_parse_reg(args[0], ln), imm=_parse_int(args[1], ln)))

    if mn.startswith("bpf_ja"):
        want(1)
        if args[0].lstrip("+-").isdigit():
            return make_jump("ja", off=_parse_int(args[0], ln))
        pending.append((index, args[0], ln))
        return Insn(JMP, op="ja", off=0x7FFF)  # placeholder until label resolution
    if mn.startswith("bpf_j"):
        cond = mn[4:]
        if cond == "jneq":
            cond = "jne"
        if cond not in JMP_CONDS:
            raise AsmError(f"unknown opcode {toks[0]!r}", ln)
        want(3)
        dst = _parse_reg(args[0], ln)
        is_reg, v = _parse_reg_or_imm(args[1], ln)
        tgt = args[2]
        if tgt.lstrip("+-").isdigit():
            off = _parse_int(tgt, ln)
            return make_jump(cond, dst, v if is_reg else 0, off, 0 if is_reg else v, is_reg)
        pending.append((index, tgt, ln))
        return Insn(JMP, op=cond, dst=dst, src=v if is_reg else 0,
                    imm=0 if is_reg else v, src_is_reg=is_reg, off=0x7FFF)

    if mn.startswith("bpf_load_"):
        w = _WIDTH_SUFFIX.get(mn[len("bpf_load_"):])
        if w is None:
            raise AsmError(f"unknown opcode {toks[0]!r}", ln)
        want_between(2, 3)
        dst = _parse_reg(args[0], ln)
        src = _parse_reg(args[1], ln)
        off = _parse_int(args[2], ln) if len(args) == 3 else 0
        return validate(Insn(LDX, width=w, dst=dst, src=src, off=off))
    if mn.startswith("bpf_stx_"):
        w = _WIDTH_SUFFIX.get(mn[len("bpf_stx_"):])
        if w is None:
            raise AsmError(f"unknown opcode {toks[0]!r}", ln)
        want(3)
        return validate(Insn(STX, width=w, dst=_parse_reg(args[0], ln),
                             off=_parse_int(args[1], ln), src=_parse_reg(args[2], ln)))
    if mn.startswith("bpf_st_imm"):
        w = _WIDTH_SUFFIX.get(mn[len("bpf_st_imm"):])
        if w is None:
            raise AsmError(f"unknown opcode {toks[0]!r}", ln)
        want(3)
        return validate(Insn(ST, width=w, dst=_parse_reg(args[0], ln),
                             off=_parse_int(args[1], ln), imm=_parse_int(args[2], ln)))
    if mn in ("bpf_xadd_64", "bpf_xadd64", "bpf_xadd_32", "bpf_xadd32"):
        want(3)
        kind = XADD64 if "64" in mn else XADD32
        return validate(Insn(kind, width=8 if kind == XADD64 else 4,
                             dst=_parse_reg(args[0], ln), off=_parse_int(args[1], ln),
                             src=_parse_reg(args[2], ln)))

    # ALU: bpf_<op>[32|64]; bare mnemonic means 64-bit, as in listings.
    if mn.startswith("bpf_"):
        body = mn[4:]
        for suffix, kind in (("32", ALU32), ("64", ALU64), ("", ALU64)):
            if suffix and body.endswith(suffix):
                op = body[: -len(suffix)]
            elif not suffix:
                op = body
            else:
                continue
            if op in ALU_OPS:
                if op == "neg":
                    want(1)
                    return validate(Insn(kind, op=op, dst=_parse_reg(args[0], ln)))
                want(2)
                dst = _parse_reg(args[0], ln)
                is_reg, v = _parse_reg_or_imm(args[1], ln)
                return validate(Insn(kind, op=op, dst=dst,
                                     src=v if is_reg else 0,
                                     imm=0 if is_reg else v, src_is_reg=is_reg))
    raise AsmError(f"unknown opcode {toks[0]!r}", ln)


_W_NAME = {1: "8", 2: "16", 4: "32", 8: "64"}


def print_insn(insn: Insn) -> str:
    k = insn.kind
    if k == NOP:
        return "nop"
    if k == EXIT:
        return "bpf_exit"
    if k == CALL:
        return f"bpf_call {HELPER_NAMES.get(insn.imm, insn.imm)}"
    if k == LDDW:
        return f"bpf_lddw r{insn.dst} {insn.imm:#x}" if abs(insn.imm) > 0xFFFF else f"bpf_lddw r{insn.dst} {insn.imm}"
    if k == LD_MAP_ID:
        return f"bpf_ld_map_id r{insn.dst} {insn.imm}"
    if k == JMP:
        if insn.op == "ja":
            return f"bpf_ja {insn.off:+d}"
        rhs = f"r{insn.src}" if insn.src_is_reg else str(insn.imm)
        return f"bpf_{insn.op} r{insn.dst} {rhs} {insn.off:+d}"
    if k == LDX:
        return f"bpf_load_{_W_NAME[insn.width]} r{insn.dst} r{insn.src} {insn.off}"
    if k == STX:
        return f"bpf_stx_{_W_NAME[insn.width]} r{insn.dst} {insn.off} r{insn.src}"
    if k == ST:
        return f"bpf_st_imm{_W_NAME[insn.width]} r{insn.dst} {insn.off} {insn.imm}"
    if k in (XADD64, XADD32):
        return f"bpf_xadd_{_W_NAME[insn.width]} r{insn.dst} {insn.off} r{insn.src}"
    if k in (ALU64, ALU32):
        sfx = "64" if k == ALU64 else "32"
        if insn.op == "neg":
            return f"bpf_neg{sfx} r{insn.dst}"
        rhs = f"r{insn.src}" if insn.src_is_reg else str(insn.imm)
        return f"bpf_{insn.op}{sfx} r{insn.dst} {rhs}"
    raise EncodingError(f"unprintable instruction {insn!r}")


def print_asm(p: Program) -> str:
    return "\n".join(print_insn(i) for i in p.insns) + "\n"


# ---------------------------------------------------------------------------
# Binary encoding: 8-byte records per the public BPF instruction layout
# ---------------------------------------------------------------------------

_CLS_LD, _CLS_LDX, _CLS_ST, _CLS_STX, _CLS_ALU, _CLS_JMP, _CLS_ALU64 = 0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x07
_SRC_K, _SRC_X = 0x00, 0x08
_ALU_CODE = {"add": 0x0, "sub": 0x1, "mul": 0x2, "div": 0x3, "or": 0x4, "and": 0x5,
             "lsh": 0x6, "rsh": 0x7, "neg": 0x8, "xor": 0xA, "mov": 0xB, "arsh": 0xC}
_JMP_CODE = {"ja": 0x0, "jeq": 0x1, "jgt": 0x2, "jge": 0x3, "jne": 0x5,
             "jsgt": 0x6, "jsge": 0x7, "jlt": 0xA, "jle": 0xB}
_CALL_CODE, _EXIT_CODE = 0x8, 0x9
_SZ_BITS = {4: 0x00, 2: 0x08, 1: 0x10, 8: 0x18}
_MODE_IMM, _MODE_MEM, _MODE_XADD = 0x00, 0x60, 0xC0

_ALU_REV = {v: k for k, v in _ALU_CODE.items()}
_JMP_REV = {v: k for k, v in _JMP_CODE.items()}
_SZ_REV = {v: k for k, v in _SZ_BITS.items()}


def _pack(opcode, dst, src, off, imm):
    return struct.pack("<BBhi", opcode, (src << 4) | dst, off, imm)


def encode_insn(insn: Insn) -> bytes:
    k = insn.kind
    if k == NOP:
        return _pack(_CLS_JMP | (_JMP_CODE["ja"] << 4), 0, 0, 0, 0)
    if k == EXIT:
        return _pack(_CLS_JMP | (_EXIT_CODE << 4), 0, 0, 0, 0)
    if k == CALL:
        return _pack(_CLS_JMP | (_CALL_CODE << 4), 0, 0, 0, insn.imm)
    if k in (LDDW, LD_MAP_ID):
        lo = insn.imm & 0xFFFFFFFF
        hi = (insn.imm >> 32) & 0xFFFFFFFF
        src = 1 if k == LD_MAP_ID else 0
        first = _pack(_CLS_LD | _SZ_BITS[8] | _MODE_IMM, insn.dst, src, 0,
                      lo - (1 << 32) if lo >= (1 << 31) else lo)
        second = _pack(0, 0, 0, 0, hi - (1 << 32) if hi >= (1 << 31) else hi)
        return first + second
    if k == JMP:
        srcbit = _SRC_X if insn.src_is_reg else _SRC_K
        return _pack(_CLS_JMP | srcbit | (_JMP_CODE[insn.op] << 4),
                     insn.dst, insn.src, insn.off, insn.imm)
    if k in (ALU64, ALU32):
        cls = _CLS_ALU64 if k == ALU64 else _CLS_ALU
        srcbit = _SRC_X if insn.src_is_reg else _SRC_K
        return _pack(cls | srcbit | (_ALU_CODE[insn.op] << 4),
                     insn.dst, insn.src, 0, insn.imm)
    if k == LDX:
        return _pack(_CLS_LDX | _SZ_BITS[insn.width] | _MODE_MEM,
                     insn.dst, insn.src, insn.off, 0)
    if k == STX:
        return _pack(_CLS_STX | _SZ_BITS[insn.width] | _MODE_MEM,
                     insn.dst, insn.src, insn.off, 0)
    if k == ST:
        return _pack(_CLS_ST | _SZ_BITS[insn.width] | _MODE_MEM,
                     insn.dst, 0, insn.off, insn.imm)
    if k in (XADD64, XADD32):
        return _pack(_CLS_STX | _SZ_BITS[insn.width] | _MODE_XADD,
                     insn.dst, insn.src, insn.off, 0)
    raise EncodingError(f"unencodable instruction {insn!r}")


def encode(p: Program) -> bytes:
    return b"".join(encode_insn(i) for i in p.insns)


def decode(data: bytes, spec: ProgramSpec | None = None) -> Program:
    if len(data) % 8 != 0:
        raise EncodingError(f"truncated record: {len(data)} bytes is not a multiple of 8")
    insns = []
    i = 0
    while i < len(data):
        opcode, regs, off, imm = struct.unpack_from("<BBhi", data, i)
        dst, src = regs & 0xF, regs >> 4
        at = i
        i += 8
        cls = opcode & 0x07
        try:
            if cls in (_CLS_ALU, _CLS_ALU64):
                op = _ALU_REV[opcode >> 4]
                insns.append(validate(Insn(ALU64 if cls == _CLS_ALU64 else ALU32, op=op,
                                           dst=dst, src=src, imm=imm,
                                           src_is_reg=bool(opcode & _SRC_X))))
            elif cls == _CLS_JMP:
                code = opcode >> 4
                if code == _EXIT_CODE:
                    insns.append(Insn(EXIT))
                elif code == _CALL_CODE:
                    insns.append(Insn(CALL, imm=imm))
                else:
                    insns.append(make_jump(_JMP_REV[code], dst, src, off, imm,
                                           bool(opcode & _SRC_X)))
            elif cls == _CLS_LD:
                if opcode != _CLS_LD | _SZ_BITS[8] | _MODE_IMM:
                    raise KeyError
                if i >= len(data):
                    raise EncodingError(f"truncated lddw pair at byte {at}")
                _, _, _, imm_hi = struct.unpack_from("<BBhi", data, i)
                i += 8
                value = (imm & 0xFFFFFFFF) | ((imm_hi & 0xFFFFFFFF) << 32)
                if value >= 1 << 63:
                    value -= 1 << 64
                kind = LD_MAP_ID if src == 1 else LDDW
                insns.append(validate(Insn(kind, dst=dst, imm=value)))
            elif cls == _CLS_LDX and (opcode & 0xE0) == _MODE_MEM:
                insns.append(validate(Insn(LDX, width=_SZ_REV[opcode & 0x18],
                                           dst=dst, src=src, off=off)))
            elif cls == _CLS_STX and (opcode & 0xE0) == _MODE_MEM:
                insns.append(validate(Insn(STX, width=_SZ_REV[opcode & 0x18],
                                           dst=dst, src=src, off=off)))
            elif cls == _CLS_ST and (opcode & 0xE0) == _MODE_MEM:
                insns.append(validate(Insn(ST, width=_SZ_REV[opcode & 0x18],
                                           dst=dst, off=off, imm=imm)))
            elif cls == _CLS_STX and (opcode & 0xE0) == _MODE_XADD:
                w = _SZ_REV[opcode & 0x18]
                if w not in (4, 8):
                    raise KeyError
                insns.append(validate(Insn(XADD64 if w == 8 else XADD32, width=w,
                                           dst=dst, src=src, off=off)))
            else:
                raise KeyError
        except KeyError:
            raise EncodingError(f"unknown opcode {opcode:#04x} at byte {at}")
    if not insns:
        raise EncodingError("empty program")
    return Program(tuple(insns), spec or ProgramSpec())
