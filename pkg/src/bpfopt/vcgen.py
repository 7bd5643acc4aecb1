"""Verification-condition generation in the quantifier-free theory of bit
vectors with uninterpreted functions.

Per-register-version variables are constrained instruction by instruction;
memory is handled through per-region read/write tables of single-byte rows
(loads chain over prior stores, falling back to a shared region-initial
uninterpreted function), and maps through a second, valuation-level table per
map.  Three concretization switches (region-split tables, static map ids,
compile-time offsets) shrink the emitted formulas without changing verdicts.

Region base addresses are pinned to the interpreter's layout constants, so a
model of any encoding is directly replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import analysis, isa, terms
from .analysis import CTX, MAPPTR, MAPVAL, PACKET, SCALAR, STACK, UNKNOWN
from .interpreter import CTX_BASE, MAPVAL_BASE, MAPVAL_STRIDE, PACKET_BASE, STACK_LO
from .semantics import TermAlg, alu_result

MASK64 = isa.MASK64
STACK_TOP = STACK_LO + isa.STACK_SIZE  # value of r10


class EncodingRefused(Exception):
    """Access through a pointer the analysis could not type; the caller
    treats the candidate as not-equivalent / unsafe."""


@dataclass(frozen=True)
class OptFlags:
    mem_types: bool = True   # I: per-region read/write tables
    map_ids: bool = True     # II: statically resolved map for each call
    offsets: bool = True     # III: compile-time-known address concretization


@dataclass
class MemRow:
    addr: tuple            # 64-bit term
    value: tuple           # 8-bit term
    pc: tuple              # bool term
    at: int                # instruction index


@dataclass
class MapRow:
    key: tuple             # key-valuation term
    value_ptr: tuple       # 64-bit term (0 encodes deletion)
    pc: tuple
    at: int


@dataclass
class VCContext:
    """Read/write tables and helper-call bookkeeping for one program."""

    mem_write: dict = field(default_factory=dict)   # table key -> [MemRow]
    mem_read: dict = field(default_factory=dict)
    map_write: dict = field(default_factory=dict)   # map_id -> [MapRow]
    map_read: dict = field(default_factory=dict)
    helper_calls: list = field(default_factory=list)
    regions: dict = field(default_factory=dict)     # map_id -> [(key term, ptr term)]


def _init_fn(table_key, addr):
    """Initial memory contents: shared per-region uninterpreted functions."""
    kind = table_key[0]
    if kind == STACK:
        return terms.uf("init_stack", 8, [addr], [64])
    if kind == PACKET:
        return terms.uf("init_packet", 8, [addr], [64])
    if kind == CTX:
        return terms.uf("init_ctx", 8, [addr], [64])
    if kind == MAPVAL:
        return terms.uf("init_mapval", 8, [addr], [64])
    # merged table: select by the fixed region layout
    if addr[0] == "c":
        a = addr[2]
        if STACK_LO <= a < STACK_TOP:
            return _init_fn((STACK,), addr)
        if PACKET_BASE <= a < PACKET_BASE + (1 << 32):
            return _init_fn((PACKET,), addr)
        if CTX_BASE <= a < CTX_BASE + (1 << 32):
            return _init_fn((CTX,), addr)
        return _init_fn((MAPVAL,), addr)
    in_stack = terms.andb(terms.ule(terms.const(64, STACK_LO), addr),
                          terms.ult(addr, terms.const(64, STACK_TOP)))
    in_pkt = terms.andb(terms.ule(terms.const(64, PACKET_BASE), addr),
                        terms.ult(addr, terms.const(64, CTX_BASE)))
    in_ctx = terms.andb(terms.ule(terms.const(64, CTX_BASE), addr),
                        terms.ult(addr, terms.const(64, MAPVAL_BASE)))
    return terms.ite(in_stack, _init_fn((STACK,), addr),
                     terms.ite(in_pkt, _init_fn((PACKET,), addr),
                               terms.ite(in_ctx, _init_fn((CTX,), addr),
                                         _init_fn((MAPVAL,), addr))))


class ProgramEncoder:
    """Encodes one SSA program's input-output behavior as constraints."""

    def __init__(self, an: analysis.Analysis, opts: OptFlags = OptFlags(),
                 tag: str | None = None, window_inputs: dict | None = None):
        self.an = an
        self.ssa = an.ssa
        self.spec = an.program.spec
        self.opts = opts
        self.tag = tag if tag is not None else an.ssa.tag
        self.window_inputs = window_inputs  # reg -> TypeInfo at window entry
        self.ctx = VCContext()
        self.assertions = []
        self._fresh = 0
        self.r0_out = None
        self.oracle_binds = {}   # helper -> [var names], call-order model hooks

    # -- small helpers ------------------------------------------------------

    def fresh(self, width, stem):
        self._fresh += 1
        return terms.var(width, f"{self.tag}_{stem}_{self._fresh}")

    def emit(self, t, guard=terms.TRUE):
        if t != terms.TRUE:
            self.assertions.append(terms.implies(guard, t))

    def rvar(self, name):
        return terms.var(64, name)

    def table_key(self, kind, map_id=None):
        if not self.opts.mem_types:
            return ("all",)
        if kind == MAPVAL:
            return (MAPVAL, map_id if self.opts.map_ids else None)
        return (kind,)

    # -- memory -------------------------------------------------------------

    def _region_base_const(self, kind):
        return {STACK: STACK_TOP, PACKET: PACKET_BASE, CTX: CTX_BASE}[kind]

    def address_term(self, si, base_var, insn_off):
        """Address of an access, concretized when the analysis allows."""
        ptr = self.an.ptr
        kind = ptr.region_kind(base_var)
        if kind in (UNKNOWN, SCALAR, MAPPTR):
            raise EncodingRefused(f"access via {kind} pointer at insn {si.idx}")
        base = self.rvar(base_var)
        addr = terms.add(base, terms.const(64, insn_off))
        if not self.opts.offsets:
            return kind, addr, ptr.typeof(base_var)
        off = ptr.concrete_offset(base_var)
        if off is not None and kind in (STACK, PACKET, CTX):
            return kind, terms.const(64, self._region_base_const(kind) + off + insn_off), ptr.typeof(base_var)
        entries = ptr.merge_entries(base_var)
        if entries is not None and kind in (STACK, PACKET, CTX):
            flat = [(cond, blk, analysis._ti_offset(ti)) for cond, blk, ti in entries]
            conc, clauses = analysis.resolve_at_read(si.block, list(reversed(flat)),
                                                     self.an.dom, self.an.reach)
            if conc is not None:
                return kind, terms.const(64, self._region_base_const(kind) + conc + insn_off), ptr.typeof(base_var)
            for cond, eoff in clauses:
                if eoff is not None:
                    self.emit(terms.implies(cond, terms.eq(
                        addr, terms.const(64, self._region_base_const(kind) + eoff + insn_off))))
        if kind == MAPVAL:
            t = ptr.typeof(base_var)
            if t[0] == MAPVAL and t[3] is not None and t[2] is not None:
                origin_ptr = self._origin_ptr.get(t[2])
                if origin_ptr is not None:
                    addr = terms.add(origin_ptr, terms.const(64, t[3] + insn_off))
        return kind, addr, ptr.typeof(base_var)

    def mem_load(self, si, base_var, insn_off, width, pc, guard=terms.TRUE):
        bs = self._load_bytes(si, base_var, insn_off, width, pc, guard)
        value = bs[0]
        for b in bs[1:]:
            value = terms.concat(b, value)
        return terms.zext(value, 64)

    def _load_bytes(self, si, base_var, insn_off, width, pc, guard=terms.TRUE):
        kind, addr, ti = self.address_term(si, base_var, insn_off)
        map_id = ti[1] if ti[0] == MAPVAL else None
        key = self.table_key(kind, map_id)
        return self._load_at(key, addr, width, pc, si.idx, guard)

    def _load_at(self, table_key, addr, width, pc, at, guard=terms.TRUE):
        rows = self.ctx.mem_write.setdefault(table_key, [])
        out_bytes = []
        for i in range(width):
            ai = terms.add(addr, terms.const(64, i))
            li = self.fresh(8, f"ld{at}b{i}")
            later = terms.FALSE
            for row in reversed(rows):
                match = terms.andb(terms.eq(row.addr, ai), row.pc)
                if match == terms.FALSE:
                    continue
                applies = terms.andb(match, terms.not_(later))
                self.emit(terms.implies(applies, terms.eq(li, row.value)), guard)
                later = terms.orb(later, match)
            self.emit(terms.implies(terms.not_(later),
                                    terms.eq(li, _init_fn(table_key, ai))), guard)
            self.ctx.mem_read.setdefault(table_key, []).append(MemRow(ai, li, pc, at))
            out_bytes.append(li)
        return out_bytes

    def mem_store(self, si, base_var, insn_off, width, value, pc, guard=terms.TRUE):
        kind, addr, ti = self.address_term(si, base_var, insn_off)
        map_id = ti[1] if ti[0] == MAPVAL else None
        key = self.table_key(kind, map_id)
        self._store_at(key, addr, width, value, pc if guard == terms.TRUE
                       else terms.andb(pc, guard), si.idx)

    def _store_at(self, table_key, addr, width, value, pc, at):
        rows = self.ctx.mem_write.setdefault(table_key, [])
        for i in range(width):
            ai = terms.add(addr, terms.const(64, i))
            byte = terms.extract(value, 8 * i + 7, 8 * i)
            rows.append(MemRow(ai, byte, pc, at))

    def end_read(self, table_key, addr, width):
        """Final memory contents at an address (no rows appended)."""
        rows = self.ctx.mem_write.get(table_key, [])
        out_bytes = []
        for i in range(width):
            ai = terms.add(addr, terms.const(64, i))
            val = _init_fn(table_key, ai)
            for row in rows:  # earliest..latest; later rows override
                match = terms.andb(terms.eq(row.addr, ai), row.pc)
                if match == terms.FALSE:
                    continue
                val = terms.ite(match, row.value, val)
            out_bytes.append(val)
        value = out_bytes[0]
        for b in out_bytes[1:]:
            value = terms.concat(b, value)
        return value

    # -- maps ----------------------------------------------------------------

    def _map_v0(self, m: isa.MapDef, key):
        return terms.uf(f"map{m.map_id}_v0", 64, [key], [8 * m.key_size])

    def map_chain(self, m: isa.MapDef, key, upto=None):
        """Value pointer a lookup of `key` would observe: latest matching
        valuation-level write, else the shared initial map function."""
        rows = self.ctx.map_write.get(m.map_id, [])
        if upto is not None:
            rows = rows[:upto]
        val = self._map_v0(m, key)
        for row in rows:
            match = terms.andb(terms.eq(row.key, key), row.pc)
            val = terms.ite(match, row.value_ptr, val)
        return val

    def _read_mem_bytes(self, si, ptr_var, size, pc, guard):
        """Concatenated valuation of `size` bytes at a pointer register."""
        bs = self._load_bytes(si, ptr_var, 0, size, pc, guard)
        value = bs[0]
        for b in bs[1:]:
            value = terms.concat(b, value)
        return value

    def _ptr_region_axioms(self, m: isa.MapDef, key, ptr):
        """Nonzero value pointers live in the map-value area on stride
        boundaries; equal keys share a region, distinct keys get disjoint ones."""
        nz = terms.ne(ptr, terms.const(64, 0))
        self.emit(terms.implies(nz, terms.ule(terms.const(64, MAPVAL_BASE), ptr)))
        self.emit(terms.implies(nz, terms.eq(
            terms.and_(ptr, terms.const(64, MAPVAL_STRIDE - 1)), terms.const(64, 0))))
        for k2, p2 in self.ctx.regions.get(m.map_id, []):
            both = terms.andb(nz, terms.ne(p2, terms.const(64, 0)))
            self.emit(terms.implies(both, terms.eq(terms.eq(key, k2),
                                                   terms.eq(ptr, p2))))
        self.ctx.regions.setdefault(m.map_id, []).append((key, ptr))

    def encode_call(self, si):
        ins = si.insn
        helper = ins.imm
        pc = si.pc
        ret = self.rvar(si.defs["ret"])

        if helper in (isa.HELPER_MAP_LOOKUP, isa.HELPER_MAP_UPDATE, isa.HELPER_MAP_DELETE):
            mid = self.an.ptr.call_map_ids.get(si.idx)
            if not self.opts.map_ids:
                mid = None
            if mid is not None:
                candidates = [(self.spec.map_by_id(mid), terms.TRUE)]
            else:
                arg1 = self.rvar(si.uses["arg1"])
                candidates = [(m, terms.eq(arg1, terms.const(64, m.map_id)))
                              for m in self.spec.maps]
                if not candidates:
                    raise EncodingRefused("map helper call with no maps in spec")
            for m, g in candidates:
                key = self._read_mem_bytes(si, si.uses["arg2"], m.key_size, pc, g)
                if helper == isa.HELPER_MAP_LOOKUP:
                    before = self.map_chain(m, key)
                    self.emit(terms.eq(ret, before), g)
                    self._ptr_region_axioms(m, key, ret)
                    self._origin_ptr[si.idx] = ret
                    self.ctx.map_read.setdefault(m.map_id, []).append(
                        MapRow(key, ret, pc, si.idx))
                elif helper == isa.HELPER_MAP_UPDATE:
                    value = self._read_mem_bytes(si, si.uses["arg3"], m.value_size, pc, g)
                    pv = self.fresh(64, f"upd{si.idx}m{m.map_id}")
                    self.emit(terms.ne(pv, terms.const(64, 0)), g)
                    self._ptr_region_axioms(m, key, pv)
                    self.ctx.map_write.setdefault(m.map_id, []).append(
                        MapRow(key, pv, terms.andb(pc, g), si.idx))
                    vkey = self.table_key(MAPVAL, m.map_id)
                    self._store_at(vkey, pv, m.value_size, value,
                                   terms.andb(pc, g), si.idx)
                    self.emit(terms.eq(ret, terms.const(64, 0)), g)
                else:  # delete
                    before = self.map_chain(m, key)
                    existed = terms.ne(before, terms.const(64, 0))
                    self.ctx.map_write.setdefault(m.map_id, []).append(
                        MapRow(key, terms.const(64, 0), terms.andb(pc, g), si.idx))
                    self.emit(terms.eq(ret, terms.ite(
                        existed, terms.const(64, 0), terms.const(64, (-2) & MASK64))), g)
            self.ctx.helper_calls.append((si.idx, helper))
            return

        if helper in (isa.HELPER_KTIME, isa.HELPER_RANDOM_U32, isa.HELPER_SMP_PROCESSOR_ID):
            prev = self._helper_state.get(helper, terms.const(64, 0))
            raw = terms.uf("helper_draw", 64, [terms.const(64, helper), prev], [64, 64])
            nxt_v = self.fresh(64, f"hst{si.idx}")
            self.emit(terms.eq(nxt_v, terms.ite(
                pc, terms.uf("helper_next", 64, [terms.const(64, helper), prev], [64, 64]),
                prev)))
            self._helper_state[helper] = nxt_v
            if helper == isa.HELPER_RANDOM_U32:
                raw = terms.and_(raw, terms.const(64, 0xFFFFFFFF))
            if helper == isa.HELPER_SMP_PROCESSOR_ID:
                raw = terms.and_(raw, terms.const(64, 0xFF))
            self.emit(terms.eq(ret, raw))
            self.oracle_binds.setdefault(helper, []).append(raw)
            self.ctx.helper_calls.append((si.idx, helper))
            return

        # unmodeled helper id: a pure uninterpreted function of its arguments
        args = [terms.const(64, helper)] + [self.rvar(si.uses[f"arg{a}"])
                                            for a in (1, 2, 3, 4, 5) if f"arg{a}" in si.uses]
        self.emit(terms.eq(ret, terms.uf("helper_opaque", 64, args, [64] * len(args))))
        self.ctx.helper_calls.append((si.idx, helper))

    # -- whole program -------------------------------------------------------

    def encode(self):
        ssa = self.ssa
        self._helper_state = {}
        self._origin_ptr = {}

        # pin input pointers to the runtime layout; inside a window, pin only
        # registers whose region and offset the enclosing program proved
        for v, r in ssa.input_vars.items():
            if self.window_inputs is not None:
                if r == 10:
                    self.emit(terms.eq(self.rvar(v), terms.const(64, STACK_TOP)))
                    continue
                ti = self.window_inputs.get(r)
                if ti and ti[0] in (STACK, PACKET, CTX) and ti[1] is not None:
                    base = {STACK: STACK_TOP, PACKET: PACKET_BASE, CTX: CTX_BASE}[ti[0]]
                    self.emit(terms.eq(self.rvar(v), terms.const(64, base + ti[1])))
                continue
            ty = self.spec.input_reg_type(r)
            if r == 10:
                self.emit(terms.eq(self.rvar(v), terms.const(64, STACK_TOP)))
            elif ty == "packet":
                self.emit(terms.eq(self.rvar(v), terms.const(64, PACKET_BASE)))
            elif ty == "ctx":
                self.emit(terms.eq(self.rvar(v), terms.const(64, CTX_BASE)))

        for ph in ssa.phis:
            out = self.rvar(ph.out)
            for cond, v, _pb in ph.cases:
                self.emit(terms.implies(cond, terms.eq(out, self.rvar(v))))

        for si in ssa.insns:
            ins = si.insn
            k = ins.kind
            if k in (isa.NOP, isa.JMP):
                continue
            if k in (isa.ALU64, isa.ALU32):
                if ins.op == "neg":
                    rhs = terms.const(64, 0)
                elif ins.src_is_reg:
                    rhs = self.rvar(si.uses["src_in"])
                else:
                    rhs = terms.const(64, ins.imm)
                lhs = self.rvar(si.uses["dst_in"]) if "dst_in" in si.uses else terms.const(64, 0)
                res = alu_result(TermAlg, ins.op, k == isa.ALU32, lhs, rhs)
                self.emit(terms.eq(self.rvar(si.defs["dst_out"]), res))
            elif k in (isa.LDDW, isa.LD_MAP_ID):
                self.emit(terms.eq(self.rvar(si.defs["dst_out"]),
                                   terms.const(64, ins.imm)))
            elif k == isa.LDX:
                v = self.mem_load(si, si.uses["base"], ins.off, ins.width, si.pc)
                self.emit(terms.eq(self.rvar(si.defs["dst_out"]), v))
            elif k == isa.STX:
                self.mem_store(si, si.uses["base"], ins.off, ins.width,
                               self.rvar(si.uses["val"]), si.pc)
            elif k == isa.ST:
                self.mem_store(si, si.uses["base"], ins.off, ins.width,
                               terms.const(64, ins.imm), si.pc)
            elif k in (isa.XADD64, isa.XADD32):
                old = self.mem_load(si, si.uses["base"], ins.off, ins.width, si.pc)
                new = terms.add(old, self.rvar(si.uses["val"]))
                self.mem_store(si, si.uses["base"], ins.off, ins.width, new, si.pc)
            elif k == isa.CALL:
                self.encode_call(si)
            elif k == isa.EXIT:
                pass

        # output r0: the exit point whose path condition holds
        if ssa.exit_points:
            pcs_envs = list(ssa.exit_points)
            r0 = self.rvar(pcs_envs[-1][1][0])
            for pc, env in reversed(pcs_envs[:-1]):
                r0 = terms.ite(pc, self.rvar(env[0]), r0)
            self.r0_out = r0
        else:
            self.r0_out = terms.const(64, 0)
        return self.assertions

    # -- output observations --------------------------------------------------

    def final_packet_byte(self, o):
        key = self.table_key(PACKET)
        return self.end_read(key, terms.const(64, PACKET_BASE + o), 1)

    def touched_keys(self, map_id):
        out = []
        for row in self.ctx.map_write.get(map_id, []):
            out.append(row.key)
        for row in self.ctx.map_read.get(map_id, []):
            out.append(row.key)
        return out

    def final_map_entry(self, m: isa.MapDef, key):
        """(present, value bytes term) for a key valuation at program end."""
        ptr = self.map_chain(m, key)
        present = terms.ne(ptr, terms.const(64, 0))
        vkey = self.table_key(MAPVAL, m.map_id)
        value = self.end_read(vkey, ptr, m.value_size)
        return present, value


@dataclass
class EquivQuery:
    assertions: list
    mode: str                   # "full" | "window"
    meta: dict = field(default_factory=dict)

    def to_smt2(self, get_model=True):
        return terms.smt2_script(self.assertions, get_model=get_model)


def equivalence_query(p1: isa.Program, p2: isa.Program,
                      spec: isa.ProgramSpec | None = None,
                      opts: OptFlags = OptFlags()) -> EquivQuery:
    """UNSAT iff the two programs agree on every compared output for every
    input; a model is a distinguishing input."""
    spec = spec or p1.spec
    an1 = analysis.Analysis(p1, offsets_on=opts.offsets, tag="a")
    an2 = analysis.Analysis(p2, offsets_on=opts.offsets, tag="b")
    e1 = ProgramEncoder(an1, opts, tag="a")
    e2 = ProgramEncoder(an2, opts, tag="b")
    asserts = []
    asserts += e1.encode()
    asserts += e2.encode()

    # inputs to program 1 == inputs to program 2
    meta = {"spec": spec, "scalar_inputs": [], "pkt_bytes": [], "ctx_bytes": [],
            "map_keys": {}, "oracle": {}}
    for r in range(isa.NUM_REGS):
        v1, v2 = f"a_r{r}_0", f"b_r{r}_0"
        asserts.append(terms.eq(terms.var(64, v1), terms.var(64, v2)))
        ty = spec.input_reg_type(r)
        if ty is not None and ty not in ("packet", "ctx"):
            meta["scalar_inputs"].append((r, v1))
    for o in range(spec.packet_size):
        b = terms.var(8, f"in_pkt_{o}")
        asserts.append(terms.eq(b, _init_fn((PACKET,), terms.const(64, PACKET_BASE + o))))
        meta["pkt_bytes"].append((o, f"in_pkt_{o}"))
    for o in range(spec.ctx_size):
        b = terms.var(8, f"in_ctx_{o}")
        asserts.append(terms.eq(b, _init_fn((CTX,), terms.const(64, CTX_BASE + o))))
        meta["ctx_bytes"].append((o, f"in_ctx_{o}"))

    cmp_set = _compare_set(spec)
    diffs = [terms.ne(e1.r0_out, e2.r0_out)] if "r0" in cmp_set else []
    if "packet" in cmp_set:
        for o in range(spec.packet_size):
            diffs.append(terms.ne(e1.final_packet_byte(o), e2.final_packet_byte(o)))
    if "maps" in cmp_set:
        for m in spec.maps:
            keys = _dedup(e1.touched_keys(m.map_id) + e2.touched_keys(m.map_id))
            meta["map_keys"][m.map_id] = []
            for j, key in enumerate(keys):
                pr1, val1 = e1.final_map_entry(m, key)
                pr2, val2 = e2.final_map_entry(m, key)
                diffs.append(terms.ne(terms.ite(pr1, terms.const(1, 1), terms.const(1, 0)),
                                      terms.ite(pr2, terms.const(1, 1), terms.const(1, 0))))
                diffs.append(terms.andb(pr1, pr2, terms.ne(val1, val2)))
                kv = terms.var(8 * m.key_size, f"q_mkey_{m.map_id}_{j}")
                asserts.append(terms.eq(kv, key))
                v0p = terms.var(64, f"q_mv0_{m.map_id}_{j}")
                asserts.append(terms.eq(v0p, e1._map_v0(m, key)))
                binds = []
                for o in range(m.value_size):
                    bv = terms.var(8, f"q_mval_{m.map_id}_{j}_{o}")
                    asserts.append(terms.eq(bv, _init_fn(
                        (MAPVAL,), terms.add(v0p, terms.const(64, o)))))
                    binds.append(f"q_mval_{m.map_id}_{j}_{o}")
                meta["map_keys"][m.map_id].append(
                    (f"q_mkey_{m.map_id}_{j}", f"q_mv0_{m.map_id}_{j}", binds))
    for h, draws in e1.oracle_binds.items():
        names = []
        for j, d in enumerate(draws):
            nm = f"q_orc_{h}_{j}"
            asserts.append(terms.eq(terms.var(64, nm), d))
            names.append(nm)
        meta["oracle"][h] = names

    goal = terms.orb(*diffs)
    asserts.append(goal)
    return EquivQuery(asserts, "full", meta)


def _compare_set(spec):
    from .interpreter import compare_set

    return compare_set(spec)


def _dedup(keys):
    seen = []
    for k in keys:
        if all(k != s for s in seen):
            seen.append(k)
    return seen


def single_program_encoding(p: isa.Program, an: analysis.Analysis | None = None,
                            opts: OptFlags = OptFlags()):
    """(encoder, assertions, meta) for one program: behavior constraints plus
    named bindings of every input so SAT models convert to MachineStates."""
    an = an or analysis.Analysis(p, offsets_on=opts.offsets, tag="a")
    enc = ProgramEncoder(an, opts, tag=an.ssa.tag)
    asserts = list(enc.encode())
    spec = p.spec
    tag = an.ssa.tag
    meta = {"spec": spec, "scalar_inputs": [], "pkt_bytes": [], "ctx_bytes": [],
            "map_keys": {}, "oracle": {}}
    for r in range(isa.NUM_REGS):
        ty = spec.input_reg_type(r)
        if ty is not None and ty not in ("packet", "ctx"):
            meta["scalar_inputs"].append((r, f"{tag}_r{r}_0"))
    for o in range(spec.packet_size):
        nm = f"in_pkt_{o}"
        asserts.append(terms.eq(terms.var(8, nm),
                                _init_fn((PACKET,), terms.const(64, PACKET_BASE + o))))
        meta["pkt_bytes"].append((o, nm))
    for o in range(spec.ctx_size):
        nm = f"in_ctx_{o}"
        asserts.append(terms.eq(terms.var(8, nm),
                                _init_fn((CTX,), terms.const(64, CTX_BASE + o))))
        meta["ctx_bytes"].append((o, nm))
    for m in spec.maps:
        keys = _dedup(enc.touched_keys(m.map_id))
        meta["map_keys"][m.map_id] = []
        for j, key in enumerate(keys):
            kv = f"q_mkey_{m.map_id}_{j}"
            asserts.append(terms.eq(terms.var(8 * m.key_size, kv), key))
            v0 = f"q_mv0_{m.map_id}_{j}"
            v0t = terms.var(64, v0)
            asserts.append(terms.eq(v0t, enc._map_v0(m, key)))
            binds = []
            for o in range(m.value_size):
                bv = f"q_mval_{m.map_id}_{j}_{o}"
                asserts.append(terms.eq(terms.var(8, bv), _init_fn(
                    (MAPVAL,), terms.add(v0t, terms.const(64, o)))))
                binds.append(bv)
            meta["map_keys"][m.map_id].append((kv, v0, binds))
    for h, draws in enc.oracle_binds.items():
        names = []
        for j, d in enumerate(draws):
            nm = f"q_orc_{h}_{j}"
            asserts.append(terms.eq(terms.var(64, nm), d))
            names.append(nm)
        meta["oracle"][h] = names
    return enc, asserts, meta


def concrete_binding_query(p: isa.Program, state, opts: OptFlags = OptFlags()):
    """Assert the program encoding plus concrete input bindings; the model's
    outputs must match the interpreter (the dual-route soundness check)."""
    an = analysis.Analysis(p, offsets_on=opts.offsets)
    enc = ProgramEncoder(an, opts, tag="a")
    asserts = enc.encode()
    spec = p.spec
    for r, ty in spec.input_registers:
        if ty in ("packet", "ctx"):
            continue
        asserts.append(terms.eq(terms.var(64, f"a_r{r}_0"),
                                terms.const(64, state.regs[r])))
    pkt = bytes(state.packet).ljust(spec.packet_size, b"\0")
    for o in range(spec.packet_size):
        asserts.append(terms.eq(_init_fn((PACKET,), terms.const(64, PACKET_BASE + o)),
                                terms.const(8, pkt[o])))
    c = bytes(state.ctx).ljust(spec.ctx_size, b"\0")
    for o in range(spec.ctx_size):
        asserts.append(terms.eq(_init_fn((CTX,), terms.const(64, CTX_BASE + o)),
                                terms.const(8, c[o])))
    asserts.append(terms.eq(terms.var(64, "q_out_r0"), enc.r0_out))
    outs = {"r0": "q_out_r0", "pkt": []}
    for o in range(spec.packet_size):
        nm = f"q_out_pkt_{o}"
        asserts.append(terms.eq(terms.var(8, nm), enc.final_packet_byte(o)))
        outs["pkt"].append(nm)
    return EquivQuery(asserts, "full", {"outputs": outs, "spec": spec})


# ---------------------------------------------------------------------------
# Window-level equivalence
# ---------------------------------------------------------------------------

def _window_mini_analysis(insns, spec, input_types, tag):
    """Treat a window body as a straight-line program whose register inputs
    are shared symbols typed by the enclosing program's analysis."""
    body = tuple(insns) + (isa.Insn(isa.EXIT),)
    mini = isa.Program(body, spec)
    return analysis.Analysis(mini, tag=tag, input_types=input_types)


def window_query(w1_insns, w2_insns, ws: analysis.WindowSpec,
                 outer: analysis.Analysis, spec: isa.ProgramSpec,
                 opts: OptFlags = OptFlags()) -> EquivQuery:
    """Window-based equivalence: live-in equality plus inferred concrete
    valuations as premises, live-out equality as the goal.  UNSAT means the
    replacement window is safe to splice under this program context."""
    entry = outer.ssa.insns[ws.start].env_before
    input_types = {}
    for r in range(isa.NUM_REGS):
        input_types[r] = outer.ptr.typeof(entry[r])

    an1 = _window_mini_analysis(w1_insns, spec, input_types, "wa")
    an2 = _window_mini_analysis(w2_insns, spec, input_types, "wb")
    e1 = ProgramEncoder(an1, opts, tag="wa", window_inputs=input_types)
    e2 = ProgramEncoder(an2, opts, tag="wb", window_inputs=input_types)
    asserts = e1.encode() + e2.encode()

    # live-in equality: both windows start from the same register symbols
    for r in range(isa.NUM_REGS):
        asserts.append(terms.eq(terms.var(64, f"wa_r{r}_0"), terms.var(64, f"wb_r{r}_0")))

    # inferred concrete valuations of live-in registers, as free-choice cases
    bools = []
    for j, (reg, cases) in enumerate(ws.concrete_pre):
        case_bools = []
        for i, (_, value) in enumerate(cases):
            pb = terms.boolvar(f"q_pre_{j}_{i}")
            case_bools.append(pb)
            asserts.append(terms.implies(pb, terms.eq(
                terms.var(64, f"wa_r{reg}_0"), terms.const(64, value))))
        asserts.append(terms.orb(*case_bools))
        for i in range(len(case_bools)):
            for k in range(i + 1, len(case_bools)):
                asserts.append(terms.not_(terms.andb(case_bools[i], case_bools[k])))
        bools.extend(case_bools)

    # goal: some live-out item differs
    diffs = []
    for loc in ws.live_out:
        if loc[0] == "r":
            r = loc[1]
            v1 = an1.ssa.exit_points[0][1][r] if an1.ssa.exit_points else f"wa_r{r}_0"
            v2 = an2.ssa.exit_points[0][1][r] if an2.ssa.exit_points else f"wb_r{r}_0"
            diffs.append(terms.ne(terms.var(64, v1), terms.var(64, v2)))
    written = _written_addresses(e1) | _written_addresses(e2)
    for (tkey, addr) in sorted(written, key=str):
        if not _addr_live_out(tkey, addr, ws.live_out):
            continue
        diffs.append(terms.ne(e1.end_read(tkey, addr, 1), e2.end_read(tkey, addr, 1)))
    asserts.append(terms.orb(*diffs) if diffs else terms.FALSE)
    return EquivQuery(asserts, "window", {"spec": spec, "window": ws,
                                          "scalar_inputs": [], "pkt_bytes": [],
                                          "ctx_bytes": [], "map_keys": {}, "oracle": {}})


def _written_addresses(enc: ProgramEncoder):
    out = set()
    for tkey, rows in enc.ctx.mem_write.items():
        for row in rows:
            out.add((tkey, row.addr))
    return out


def _addr_live_out(tkey, addr, live_out):
    kind = tkey[0]
    tok = {STACK: "s", PACKET: "p", CTX: "c"}.get(kind)
    if kind == MAPVAL or kind == "all":
        return any(l[0] in ("m", "m*") or l == ("m*",) for l in live_out) or \
            any(l[0].startswith("m") for l in live_out)
    if addr[0] == "c":
        base = {STACK: STACK_LO, PACKET: PACKET_BASE, CTX: CTX_BASE}[kind]
        off = addr[2] - base
        if kind == STACK:
            off -= isa.STACK_SIZE  # live sets use r10-relative offsets
        return (tok, off) in live_out or (tok + "*",) in live_out
    return (tok + "*",) in live_out or any(l[0] == tok for l in live_out)
