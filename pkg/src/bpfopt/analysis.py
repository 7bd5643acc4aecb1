"""Static analyses over programs: control flow, SSA with path conditions,
dominance/reachability/liveness, pointer type and offset inference, constant
valuation inference, window selection and dead-code canonicalization.

Everything here is pure; results are derived snapshots of one program.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import isa, terms
from .semantics import IntAlg, TermAlg, alu_result, jump_taken

# Memory type tags
STACK, PACKET, CTX, MAPVAL, MAPPTR, SCALAR, UNKNOWN = (
    "stack", "packet", "ctx", "mapval", "mapptr", "scalar", "unknown")


class OutOfBoundsJump(Exception):
    def __init__(self, index):
        self.index = index
        super().__init__(f"jump at instruction {index} leaves the program")


class CycleDetected(Exception):
    pass


@dataclass(frozen=True)
class CFG:
    blocks: tuple          # (start, end) half-open instruction ranges
    edges: tuple           # (from_block, to_block, taken?) in deterministic order
    block_of: tuple        # instruction index -> block id

    @property
    def nblocks(self):
        return len(self.blocks)

    def succs(self, b):
        return [(t, tk) for f, t, tk in self.edges if f == b]

    def preds(self, b):
        return [(f, tk) for f, t, tk in self.edges if t == b]


def build_cfg(p: isa.Program) -> CFG:
    n = len(p.insns)
    leaders = {0}
    for i, ins in enumerate(p.insns):
        if ins.is_jump():
            tgt = i + 1 + ins.off
            if not 0 <= tgt < n:
                raise OutOfBoundsJump(i)
            leaders.add(tgt)
            if i + 1 < n:
                leaders.add(i + 1)
        elif ins.is_exit() and i + 1 < n:
            leaders.add(i + 1)
    starts = sorted(leaders)
    blocks = []
    for bi, s in enumerate(starts):
        e = starts[bi + 1] if bi + 1 < len(starts) else n
        blocks.append((s, e))
    block_of = [0] * n
    for bi, (s, e) in enumerate(blocks):
        for i in range(s, e):
            block_of[i] = bi
    edges = []
    for bi, (s, e) in enumerate(blocks):
        last = p.insns[e - 1]
        if last.is_exit():
            continue
        if last.is_jump():
            tgt = block_of[e - 1 + 1 + last.off]
            if last.op == "ja":
                edges.append((bi, tgt, True))
            else:
                edges.append((bi, tgt, True))
                if e < n:
                    edges.append((bi, block_of[e], False))
        elif e < n:
            edges.append((bi, block_of[e], False))
    return CFG(tuple(blocks), tuple(edges), tuple(block_of))


def _topo_order(cfg: CFG):
    indeg = [0] * cfg.nblocks
    for _, t, _ in cfg.edges:
        indeg[t] += 1
    import heapq

    ready = [b for b in range(cfg.nblocks) if indeg[b] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        b = heapq.heappop(ready)
        order.append(b)
        for t, _ in cfg.succs(b):
            indeg[t] -= 1
            if indeg[t] == 0:
                heapq.heappush(ready, t)
    if len(order) != cfg.nblocks:
        raise CycleDetected("control flow contains a cycle")
    return order


def is_forward(p: isa.Program) -> bool:
    return all(not i.is_jump() or i.off >= 0 for i in p.insns)


def reorder_forward(p: isa.Program) -> isa.Program:
    """Topologically reorder blocks so control flow only moves forward.

    Inserts explicit jumps where a fall-through edge would otherwise break.
    Raises CycleDetected for non-loop-free programs.
    """
    cfg = build_cfg(p)
    order = _topo_order(cfg)
    if is_forward(p) and order == list(range(cfg.nblocks)):
        return p

    out = []
    placed_at = {}
    pending_jumps = []  # (position in out, target block, insn)
    for oi, b in enumerate(order):
        placed_at[b] = len(out)
        s, e = cfg.blocks[b]
        body = list(p.insns[s:e])
        last = body[-1]
        nxt = order[oi + 1] if oi + 1 < len(order) else None
        if last.is_exit():
            out.extend(body)
            continue
        if last.is_jump() and last.op == "ja":
            tgt = cfg.block_of[e - 1 + 1 + last.off]
            out.extend(body[:-1])
            if tgt != nxt:
                pending_jumps.append((len(out), tgt, last))
                out.append(last)
            continue
        if last.is_jump():
            tgt = cfg.block_of[e - 1 + 1 + last.off]
            fall = cfg.block_of[e]
            out.extend(body[:-1])
            pending_jumps.append((len(out), tgt, last))
            out.append(last)
            if fall != nxt:
                ja = isa.Insn(isa.JMP, op="ja", off=0x7FFF)
                pending_jumps.append((len(out), fall, ja))
                out.append(ja)
            continue
        out.extend(body)
        if nxt is not None and cfg.block_of[e] != nxt:
            ja = isa.Insn(isa.JMP, op="ja", off=0x7FFF)
            pending_jumps.append((len(out), cfg.block_of[e], ja))
            out.append(ja)
    for pos, tgt, ins in pending_jumps:
        off = placed_at[tgt] - pos - 1
        if off < 0:
            raise CycleDetected("reordering produced a backward jump")
        out[pos] = isa.make_jump(ins.op, ins.dst, ins.src, off, ins.imm, ins.src_is_reg)
    return p.with_insns(out)


# ---------------------------------------------------------------------------
# Dominance / reachability
# ---------------------------------------------------------------------------

def dominance(cfg: CFG):
    """dominators[b] = frozenset of blocks dominating b (including b)."""
    n = cfg.nblocks
    preds = [ [f for f, t, _ in cfg.edges if t == b] for b in range(n) ]
    full = frozenset(range(n))
    dom = [full] * n
    dom[0] = frozenset([0])
    changed = True
    while changed:
        changed = False
        for b in range(1, n):
            ps = preds[b]
            new = full
            for pb in ps:
                new = new & dom[pb]
            if not ps:
                new = frozenset()
            new = new | {b}
            if new != dom[b]:
                dom[b] = new
                changed = True
    return dom


def reachability(cfg: CFG):
    """reach[b] = frozenset of blocks reachable from b (including b)."""
    n = cfg.nblocks
    succ = [[t for f, t, _ in cfg.edges if f == b] for b in range(n)]
    reach = []
    for b in range(n):
        seen = {b}
        stack = [b]
        while stack:
            x = stack.pop()
            for t in succ[x]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        reach.append(frozenset(seen))
    return reach


# ---------------------------------------------------------------------------
# SSA conversion with path conditions
# ---------------------------------------------------------------------------

HELPER_ARGS = {
    isa.HELPER_MAP_LOOKUP: (1, 2),
    isa.HELPER_MAP_UPDATE: (1, 2, 3),
    isa.HELPER_MAP_DELETE: (1, 2),
    isa.HELPER_KTIME: (),
    isa.HELPER_RANDOM_U32: (),
    isa.HELPER_SMP_PROCESSOR_ID: (),
}


@dataclass
class Phi:
    block: int
    reg: int
    out: str
    cases: tuple  # ((edge_cond_term, in_var_name, pred_block), ...)


@dataclass
class SSAInsn:
    idx: int
    insn: isa.Insn
    block: int
    pc: tuple                 # path condition term
    uses: dict                # role -> var name
    defs: dict                # role -> var name
    env_before: dict = field(default_factory=dict)  # reg -> var name at entry


@dataclass
class SSAProgram:
    program: isa.Program
    tag: str
    cfg: CFG
    insns: list
    phis: list
    block_pc: list            # term per block
    edge_cond: dict           # (pred, succ) -> term
    input_vars: dict          # var name -> reg, for version-0 input symbols
    exit_points: list         # (pc_term, {reg: var name}) per EXIT
    reads_of_uninit: list     # (ssa_idx, reg, var, pc) reads of non-input v0

    def var(self, name):
        return terms.var(64, name)


def _is_v0(var):
    return var.rsplit("_", 1)[1] == "0"


def to_ssa(p: isa.Program, tag: str = "a") -> SSAProgram:
    if not is_forward(p):
        raise ValueError("to_ssa requires forward control flow")
    cfg = build_cfg(p)
    nreg = isa.NUM_REGS
    counter = [0] * nreg

    def name(r, v):
        return f"{tag}_r{r}_{v}"

    def fresh(r):
        counter[r] += 1
        return name(r, counter[r])

    input_regs = {r for r, _ in p.spec.input_registers} | {10}
    input_vars = {name(r, 0): r for r in range(nreg)}

    out_versions = [None] * cfg.nblocks   # block -> {reg: var}
    block_pc = [terms.FALSE] * cfg.nblocks
    edge_cond = {}
    branch_cond_of = {}                   # block -> taken-condition term
    phis = []
    ssa_insns = []
    exit_points = []
    reads_of_uninit = []

    for b in range(cfg.nblocks):
        preds = cfg.preds(b)   # all predecessors precede b under forward flow
        if b == 0:
            env = {r: name(r, 0) for r in range(nreg)}
            block_pc[0] = terms.TRUE
        else:
            for pb, taken in preds:
                last = p.insns[cfg.blocks[pb][1] - 1]
                if last.is_jump() and last.op != "ja":
                    bc = branch_cond_of[pb]
                    ec = terms.andb(block_pc[pb], bc if taken else terms.not_(bc))
                else:
                    ec = block_pc[pb]
                edge_cond[(pb, b)] = ec
            block_pc[b] = terms.orb(*[edge_cond[(pb, b)] for pb, _ in preds])
            env = {}
            for r in range(nreg):
                versions = [out_versions[pb][r] for pb, _ in preds]
                if versions and all(v == versions[0] for v in versions):
                    env[r] = versions[0]
                elif versions:
                    merged = fresh(r)
                    cases = tuple((edge_cond[(pb, b)], out_versions[pb][r], pb)
                                  for pb, _ in preds)
                    phis.append(Phi(b, r, merged, cases))
                    env[r] = merged
                else:
                    env[r] = name(r, 0)  # unreachable block; keep it total

        pc = block_pc[b]
        s, e = cfg.blocks[b]
        for i in range(s, e):
            ins = p.insns[i]
            uses, defs = {}, {}
            env_snapshot = dict(env)
            k = ins.kind

            def use(role, r):
                v = env[r]
                uses[role] = v
                if _is_v0(v) and r not in input_regs:
                    reads_of_uninit.append((i, r, v, pc))
                return v

            if k in (isa.ALU64, isa.ALU32):
                if ins.op != "mov":
                    use("dst_in", ins.dst)
                if ins.src_is_reg and ins.op != "neg":
                    use("src_in", ins.src)
                env[ins.dst] = fresh(ins.dst)
                defs["dst_out"] = env[ins.dst]
            elif k == isa.JMP:
                if ins.op != "ja":
                    use("dst_in", ins.dst)
                    if ins.src_is_reg:
                        use("src_in", ins.src)
            elif k == isa.LDX:
                use("base", ins.src)
                env[ins.dst] = fresh(ins.dst)
                defs["dst_out"] = env[ins.dst]
            elif k == isa.STX:
                use("base", ins.dst)
                use("val", ins.src)
            elif k == isa.ST:
                use("base", ins.dst)
            elif k in (isa.XADD64, isa.XADD32):
                use("base", ins.dst)
                use("val", ins.src)
            elif k in (isa.LDDW, isa.LD_MAP_ID):
                env[ins.dst] = fresh(ins.dst)
                defs["dst_out"] = env[ins.dst]
            elif k == isa.CALL:
                for a in HELPER_ARGS.get(ins.imm, (1, 2, 3, 4, 5)):
                    use(f"arg{a}", a)
                env[0] = fresh(0)
                defs["ret"] = env[0]
                for r in (1, 2, 3, 4, 5):
                    env[r] = fresh(r)  # clobbered: fresh unconstrained symbols
                    defs[f"clobber{r}"] = env[r]
            elif k == isa.EXIT:
                use("r0", 0)
                exit_points.append((pc, dict(env)))
            ssa_insns.append(SSAInsn(i, ins, b, pc, uses, defs, env_snapshot))

        last = p.insns[e - 1]
        if last.is_jump() and last.op != "ja":
            dstv = terms.var(64, env[last.dst])
            rhs = terms.var(64, env[last.src]) if last.src_is_reg else terms.const(64, last.imm)
            branch_cond_of[b] = jump_taken(TermAlg, last.op, dstv, rhs)
        out_versions[b] = env

    return SSAProgram(p, tag, cfg, ssa_insns, phis, block_pc, edge_cond,
                      input_vars, exit_points, reads_of_uninit)


# ---------------------------------------------------------------------------
# Pointer type and offset inference
# ---------------------------------------------------------------------------

@dataclass
class PtrInfo:
    """Per-SSA-variable region info.

    types[var] is one of:
      ("scalar",) | ("unknown",)
      (STACK|PACKET|CTX, offset_or_None)           offsets: stack is r10-relative
      (MAPVAL, map_id_or_None, origin_idx, off)    region born at a lookup call
      (MAPPTR, map_id)
      ("merge", ((cond_term, concrete_typeinfo), ...))  from phi joins
    """

    types: dict
    call_map_ids: dict          # call ssa idx -> map_id | None (unresolved)
    ptr_alu_flags: list         # (ssa idx, reason) kernel-checker-relevant ALU-on-pointer
    offsets_on: bool = True

    def typeof(self, var):
        return self.types.get(var, ("unknown",))

    def region_kind(self, var):
        """Collapse merges: the single region kind or UNKNOWN."""
        t = self.typeof(var)
        if t[0] == "merge":
            kinds = {c[0] for _, _, c in t[1]}
            return kinds.pop() if len(kinds) == 1 else UNKNOWN
        return t[0]

    def concrete_offset(self, var):
        if not self.offsets_on:
            return None
        t = self.typeof(var)
        if t[0] in (STACK, PACKET, CTX):
            return t[1]
        if t[0] == MAPVAL:
            return t[3]
        return None

    def merge_entries(self, var):
        t = self.typeof(var)
        if t[0] == "merge":
            return t[1]
        return None


def _ti_offset(ti):
    if ti[0] in (STACK, PACKET, CTX):
        return ti[1]
    if ti[0] == MAPVAL:
        return ti[3]
    return None


def _ti_with_offset(ti, off):
    if ti[0] in (STACK, PACKET, CTX):
        return (ti[0], off)
    if ti[0] == MAPVAL:
        return (ti[0], ti[1], ti[2], off)
    return ti


def _is_pointer(ti):
    return ti[0] in (STACK, PACKET, CTX, MAPVAL, MAPPTR) or (
        ti[0] == "merge" and any(_is_pointer(c) for _, _, c in ti[1]))


def infer_ptr_types(ssa: SSAProgram, spec: isa.ProgramSpec | None = None,
                    offsets_on: bool = True, consts: dict | None = None,
                    input_types: dict | None = None) -> PtrInfo:
    """Information-flow pass over SSA: region of every register version, plus
    best-effort compile-time offsets (disabled via offsets_on for ablation).

    input_types overrides the spec-derived seeding of version-0 registers
    (used when a window inherits types from its enclosing program)."""
    spec = spec or ssa.program.spec
    if consts is None:
        consts = infer_concrete_values(ssa)
    types = {}
    call_map_ids = {}
    flags = []

    for v, r in ssa.input_vars.items():
        if input_types is not None and r in input_types:
            types[v] = input_types[r]
        elif r == 10:
            types[v] = (STACK, 0)
        else:
            ty = spec.input_reg_type(r)
            if ty == "packet":
                types[v] = (PACKET, 0)
            elif ty == "ctx":
                types[v] = (CTX, 0)
            else:
                types[v] = ("scalar",)

    phis_by_block = {}
    for ph in ssa.phis:
        phis_by_block.setdefault(ph.block, []).append(ph)

    def merge_phi(ph):
        flat = []
        for cond, v, pb in ph.cases:
            ti = types.get(v, ("unknown",))
            if ti[0] == "merge":
                for c2, b2, sub in ti[1]:
                    flat.append((terms.andb(cond, c2), b2, sub))
            else:
                flat.append((cond, pb, ti))
        concrete = [c for _, _, c in flat]
        if all(c == concrete[0] for c in concrete):
            return concrete[0]
        kinds = {c[0] for c in concrete}
        if kinds == {"scalar"}:
            return ("scalar",)
        if len(kinds) > 1 or kinds & {"unknown", "scalar", MAPPTR}:
            # region kind must be unique for a dereference to be encodable
            return ("unknown",)
        if kinds == {MAPVAL} and len({c[1] for c in concrete}) > 1:
            return ("unknown",)
        return ("merge", tuple(flat))

    done_blocks = set()
    for si in ssa.insns:
        if si.block not in done_blocks:
            done_blocks.add(si.block)
            for ph in phis_by_block.get(si.block, ()):
                types[ph.out] = merge_phi(ph)
        ins = si.insn
        k = ins.kind

        def scalar_const(var):
            cs = consts.get(var)
            if cs and len(cs) == 1 and cs[0][0] == terms.TRUE:
                return cs[0][1]
            return None

        if k in (isa.ALU64, isa.ALU32):
            out = si.defs["dst_out"]
            if ins.op == "mov":
                if ins.src_is_reg:
                    ti = types.get(si.uses["src_in"], ("unknown",))
                    if k == isa.ALU32 and _is_pointer(ti):
                        flags.append((si.idx, "alu32 on pointer"))
                        types[out] = ("unknown",)
                    else:
                        types[out] = ti
                else:
                    types[out] = ("scalar",)
                continue
            din = types.get(si.uses.get("dst_in"), ("unknown",))
            sin = None
            if ins.src_is_reg and ins.op != "neg":
                sin = types.get(si.uses.get("src_in"), ("unknown",))
            dptr = _is_pointer(din)
            sptr = sin is not None and _is_pointer(sin)
            if k == isa.ALU32 and (dptr or sptr):
                flags.append((si.idx, "alu32 on pointer"))
                types[out] = ("unknown",)
                continue
            if ins.op in ("add", "sub") and (dptr or sptr):
                if dptr and sptr:
                    flags.append((si.idx, "pointer +/- pointer"))
                    types[out] = ("unknown",)
                    continue
                base_ti = din if dptr else sin
                if not ins.src_is_reg:
                    delta = ins.imm
                elif dptr:
                    delta = scalar_const(si.uses["src_in"])
                else:
                    delta = scalar_const(si.uses["dst_in"])
                if ins.op == "sub" and not dptr:
                    # scalar - pointer: not a pointer anymore
                    types[out] = ("unknown",)
                    continue
                sign = 1 if ins.op == "add" else -1

                def shift(ti):
                    o = _ti_offset(ti)
                    if o is None or delta is None:
                        return _ti_with_offset(ti, None)
                    d = delta if delta < (1 << 63) else delta - (1 << 64)
                    return _ti_with_offset(ti, o + sign * d)

                if base_ti[0] == "merge":
                    types[out] = ("merge", tuple((c, b, shift(t)) for c, b, t in base_ti[1]))
                else:
                    types[out] = shift(base_ti)
                continue
            if dptr or sptr:
                flags.append((si.idx, f"{ins.op} on pointer"))
                types[out] = ("unknown",)
                continue
            types[out] = ("scalar",)
        elif k == isa.LDX:
            types[si.defs["dst_out"]] = ("scalar",)
        elif k in (isa.LDDW,):
            types[si.defs["dst_out"]] = ("scalar",)
        elif k == isa.LD_MAP_ID:
            types[si.defs["dst_out"]] = (MAPPTR, ins.imm)
        elif k == isa.CALL:
            if ins.imm == isa.HELPER_MAP_LOOKUP:
                t1 = types.get(si.uses.get("arg1"), ("unknown",))
                mid = t1[1] if t1[0] == MAPPTR else None
                call_map_ids[si.idx] = mid
                types[si.defs["ret"]] = (MAPVAL, mid, si.idx, 0)
            else:
                if ins.imm in (isa.HELPER_MAP_UPDATE, isa.HELPER_MAP_DELETE):
                    t1 = types.get(si.uses.get("arg1"), ("unknown",))
                    call_map_ids[si.idx] = t1[1] if t1[0] == MAPPTR else None
                types[si.defs["ret"]] = ("scalar",)
            for r in (1, 2, 3, 4, 5):
                types[si.defs[f"clobber{r}"]] = ("scalar",)

    info = PtrInfo(types, call_map_ids, flags, offsets_on)
    return info


def infer_offsets(ssa: SSAProgram, info: PtrInfo) -> PtrInfo:
    """Augment a types-only PtrInfo with compile-time-known offsets."""
    if info.offsets_on:
        return info
    return infer_ptr_types(ssa, offsets_on=True)


def resolve_at_read(read_block, entries, dom, reach):
    """Iterate prior-write entries (latest first): a dominating entry decides
    the offset outright; unreachable entries are skipped; otherwise emit an
    implication clause per entry and keep going.

    entries: ((cond_term, block, offset), ...) latest-to-earliest.
    Returns (concrete_offset | None, clauses [(cond_term, offset)]).
    """
    clauses = []
    for cond, blk, off in entries:
        if blk in dom[read_block]:
            return off, clauses
        if read_block not in reach[blk]:
            continue
        clauses.append((cond, off))
    return None, clauses


def infer_concrete_values(ssa: SSAProgram, cap: int = 8) -> dict:
    """var -> ((cond_term, value), ...) for versions provably holding one of a
    small set of constants; None/absent means symbolic."""
    vals = {}
    phis_by_block = {}
    for ph in ssa.phis:
        phis_by_block.setdefault(ph.block, []).append(ph)

    def merge_phi(ph):
        flat = []
        for cond, v, _pb in ph.cases:
            cs = vals.get(v)
            if cs is None:
                return None
            for c2, value in cs:
                flat.append((terms.andb(cond, c2), value))
            if len(flat) > cap:
                return None
        return tuple(flat)

    done_blocks = set()
    for si in ssa.insns:
        if si.block not in done_blocks:
            done_blocks.add(si.block)
            for ph in phis_by_block.get(si.block, ()):
                m = merge_phi(ph)
                if m is not None:
                    vals[ph.out] = m
        ins = si.insn
        k = ins.kind
        if k in (isa.LDDW,):
            vals[si.defs["dst_out"]] = ((terms.TRUE, ins.imm & isa.MASK64),)
        elif k in (isa.ALU64, isa.ALU32):
            out = si.defs["dst_out"]
            if ins.op == "mov" and not ins.src_is_reg:
                v = alu_result(IntAlg, "mov", k == isa.ALU32, 0, ins.imm & isa.MASK64)
                vals[out] = ((terms.TRUE, v),)
                continue
            rhs_sets = None
            if ins.op == "neg":
                rhs_sets = ((terms.TRUE, 0),)
            elif ins.src_is_reg:
                rhs_sets = vals.get(si.uses.get("src_in"))
            else:
                rhs_sets = ((terms.TRUE, ins.imm & isa.MASK64),)
            if ins.op == "mov":
                if rhs_sets is not None:
                    vals[out] = tuple((c, alu_result(IntAlg, "mov", k == isa.ALU32, 0, v))
                                      for c, v in rhs_sets)
                continue
            lhs_sets = vals.get(si.uses.get("dst_in"))
            if lhs_sets is None or rhs_sets is None:
                continue
            combined = []
            for c1, a in lhs_sets:
                for c2, b in rhs_sets:
                    combined.append((terms.andb(c1, c2),
                                     alu_result(IntAlg, ins.op, k == isa.ALU32, a, b)))
                    if len(combined) > cap:
                        break
                if len(combined) > cap:
                    break
            if len(combined) <= cap:
                vals[out] = tuple(combined)
    return vals


# ---------------------------------------------------------------------------
# Liveness over registers, concrete memory bytes and map state
# ---------------------------------------------------------------------------
#
# Locations: ("r", i) registers; ("s"/"p"/"c", off) stack/packet/ctx bytes
# (stack offsets are r10-relative); ("m", map_id) whole-map tokens; and the
# region-wide tokens ("s*",) ("p*",) ("c*",) ("m*",) for unresolved addresses.

_REGION_TOKEN = {STACK: "s", PACKET: "p", CTX: "c"}


def _mem_locs(kind, off, width, map_id=None):
    if kind == MAPVAL:
        return {("m", map_id)} if map_id is not None else {("m*",)}
    tok = _REGION_TOKEN.get(kind)
    if tok is None:
        return {("s*",), ("p*",), ("c*",), ("m*",)}
    if off is None:
        return {(tok + "*",)}
    return {(tok, off + i) for i in range(width)}


def _covers(live, locs):
    """Does the live set intersect locs, honoring region-wide tokens?"""
    for loc in locs:
        if loc in live:
            return True
        t = loc[0]
        if len(t) == 1 and (t + "*",) in live:
            return True
        if t.endswith("*"):
            if any(x[0] == t[0] for x in live):
                return True
        if loc[0] == "m" and ("m*",) in live:
            return True
    return False


class Analysis:
    """Bundle of per-program analyses computed once and shared."""

    def __init__(self, p: isa.Program, offsets_on: bool = True, tag: str = "a",
                 input_types: dict | None = None):
        self.program = p
        self.ssa = to_ssa(p, tag=tag)
        self.cfg = self.ssa.cfg
        self.consts = infer_concrete_values(self.ssa)
        self.ptr = infer_ptr_types(self.ssa, offsets_on=offsets_on,
                                   consts=self.consts, input_types=input_types)
        self.dom = dominance(self.cfg)
        self.reach = reachability(self.cfg)
        self._live = None

    def mem_access(self, si: SSAInsn):
        """(region_kind, r10-or-base-relative offset|None, width, map_id|None)
        for a memory instruction, else None."""
        ins = si.insn
        if not ins.is_mem():
            return None
        base = si.uses["base"]
        kind = self.ptr.region_kind(base)
        off = self.ptr.concrete_offset(base)
        if off is not None:
            off += ins.off
        mid = None
        t = self.ptr.typeof(base)
        if t[0] == MAPVAL:
            mid = t[1]
        elif t[0] == "merge" and all(c[0] == MAPVAL for _, _, c in t[1]):
            ids = {c[1] for _, _, c in t[1]}
            mid = ids.pop() if len(ids) == 1 else None
        return (kind, off, ins.width, mid)

    def use_def(self, si: SSAInsn, compare):
        ins = si.insn
        k = ins.kind
        uses, defs = set(), set()
        if k == isa.NOP:
            return uses, defs
        if k in (isa.ALU64, isa.ALU32):
            if ins.op != "mov":
                uses.add(("r", ins.dst))
            if ins.src_is_reg and ins.op != "neg":
                uses.add(("r", ins.src))
            defs.add(("r", ins.dst))
        elif k == isa.JMP:
            if ins.op != "ja":
                uses.add(("r", ins.dst))
                if ins.src_is_reg:
                    uses.add(("r", ins.src))
        elif k == isa.LDX:
            uses.add(("r", ins.src))
            acc = self.mem_access(si)
            uses |= _mem_locs(acc[0], acc[1], acc[2], acc[3])
            defs.add(("r", ins.dst))
        elif k in (isa.STX, isa.ST):
            uses.add(("r", ins.dst))
            if k == isa.STX:
                uses.add(("r", ins.src))
            acc = self.mem_access(si)
            locs = _mem_locs(acc[0], acc[1], acc[2], acc[3])
            if acc[1] is not None and acc[0] in (STACK, PACKET, CTX):
                defs |= locs
            elif acc[0] == MAPVAL:
                uses |= locs  # partial update of persistent state
                defs |= locs
            else:
                uses |= locs
        elif k in (isa.XADD64, isa.XADD32):
            uses.add(("r", ins.dst))
            uses.add(("r", ins.src))
            acc = self.mem_access(si)
            locs = _mem_locs(acc[0], acc[1], acc[2], acc[3])
            uses |= locs
            defs |= locs
        elif k in (isa.LDDW, isa.LD_MAP_ID):
            defs.add(("r", ins.dst))
        elif k == isa.CALL:
            for a in HELPER_ARGS.get(ins.imm, (1, 2, 3, 4, 5)):
                uses.add(("r", a))
            if ins.imm in (isa.HELPER_MAP_LOOKUP, isa.HELPER_MAP_UPDATE, isa.HELPER_MAP_DELETE):
                mid = self.ptr.call_map_ids.get(si.idx)
                mtok = ("m", mid) if mid is not None else ("m*",)
                uses.add(mtok)
                spec = self.program.spec
                key_reg = si.uses.get("arg2")
                if key_reg is not None and mid is not None:
                    kk = self.ptr.region_kind(key_reg)
                    ko = self.ptr.concrete_offset(key_reg)
                    uses |= _mem_locs(kk, ko, spec.map_by_id(mid).key_size)
                else:
                    uses |= {("s*",), ("p*",), ("c*",)}
                if ins.imm == isa.HELPER_MAP_UPDATE:
                    val_reg = si.uses.get("arg3")
                    if val_reg is not None and mid is not None:
                        vk = self.ptr.region_kind(val_reg)
                        vo = self.ptr.concrete_offset(val_reg)
                        uses |= _mem_locs(vk, vo, spec.map_by_id(mid).value_size)
                    else:
                        uses |= {("s*",), ("p*",), ("c*",)}
                if ins.imm != isa.HELPER_MAP_LOOKUP:
                    defs.add(mtok)
            for r in (0, 1, 2, 3, 4, 5):
                defs.add(("r", r))
        elif k == isa.EXIT:
            uses.add(("r", 0))
            if "packet" in compare:
                uses.add(("p*",))
            if "maps" in compare:
                uses.add(("m*",))
        return uses, defs

    def liveness(self, compare=None):
        """live_before[i], live_after[i] for every instruction index."""
        if self._live is not None and compare is None:
            return self._live
        from .interpreter import compare_set

        cmp_set = compare if compare is not None else compare_set(self.program.spec)
        p, cfg = self.program, self.cfg
        n = len(p.insns)
        ud = {}
        for si in self.ssa.insns:
            ud[si.idx] = self.use_def(si, cmp_set)
        live_in_block = [set() for _ in range(cfg.nblocks)]
        live_before = [set() for _ in range(n)]
        live_after = [set() for _ in range(n)]
        for b in reversed(range(cfg.nblocks)):  # reverse topo: blocks are ordered
            s, e = cfg.blocks[b]
            live = set()
            for t, _ in cfg.succs(b):
                live |= live_in_block[t]
            for i in reversed(range(s, e)):
                live_after[i] = set(live)
                uses, defs = ud[i]
                live = (live - {d for d in defs}) | uses
                live_before[i] = set(live)
            live_in_block[b] = live
        result = (live_before, live_after)
        if compare is None:
            self._live = result
        return result


# ---------------------------------------------------------------------------
# Window selection for modular verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSpec:
    block: int
    start: int                 # instruction range [start, end)
    end: int
    live_in: tuple             # locations
    live_out: tuple            # locations (written in window and read later)
    concrete_pre: tuple        # (reg, ((cond_term, value), ...)) for live-in regs
    has_call: bool = False


def select_windows(p: isa.Program, max_len: int = 4, analysis: Analysis | None = None):
    an = analysis or Analysis(p)
    live_before, live_after = an.liveness()
    from .interpreter import compare_set

    cmp_set = compare_set(p.spec)
    windows = []
    for b in range(an.cfg.nblocks):
        s, e = an.cfg.blocks[b]
        if e > s and (p.insns[e - 1].is_jump() or p.insns[e - 1].is_exit()):
            e -= 1  # the block terminator stays outside any window
        start = s
        while start < e:
            end = min(start + max_len, e)
            body = p.insns[start:end]
            if all(i.is_nop() for i in body):
                start = end
                continue
            defs = set()
            has_call = False
            for i in range(start, end):
                si = an.ssa.insns[i]
                _, d = an.use_def(si, cmp_set)
                defs |= d
                if si.insn.kind == isa.CALL:
                    has_call = True  # not verifiable as a plain window
            live_in = frozenset(live_before[start])
            live_out = frozenset(live_after[end - 1]) & defs
            pre = []
            for loc in sorted(live_in):
                if loc[0] == "r":
                    var = an.ssa.insns[start].env_before.get(loc[1])
                    cs = an.consts.get(var)
                    if cs:
                        pre.append((loc[1], cs))
            windows.append(WindowSpec(b, start, end, tuple(sorted(live_in)),
                                      tuple(sorted(live_out)), tuple(pre), has_call))
            start = end
    return windows


# ---------------------------------------------------------------------------
# Dead-code canonicalization (verification-cache key)
# ---------------------------------------------------------------------------

def _rebuild(p: isa.Program, keep):
    """Drop instructions not in keep, rewriting jump offsets."""
    old_idx = [i for i in range(len(p.insns)) if i in keep]
    new_of = {}
    for new_i, i in enumerate(old_idx):
        new_of[i] = new_i

    def target_of(old_target):
        while old_target < len(p.insns) and old_target not in new_of:
            old_target += 1
        return new_of.get(old_target, len(old_idx) - 1)

    out = []
    for new_i, i in enumerate(old_idx):
        ins = p.insns[i]
        if ins.is_jump():
            tgt = target_of(i + 1 + ins.off)
            out.append(isa.make_jump(ins.op, ins.dst, ins.src, tgt - new_i - 1,
                                     ins.imm, ins.src_is_reg))
        else:
            out.append(ins)
    return p.with_insns(out)


def canonicalize(p: isa.Program) -> isa.Program:
    """Remove dead code: pure computes whose results are never read, stores
    whose bytes are overwritten or unread before exit, and NOP padding."""
    cur = p
    for _ in range(len(p.insns)):
        an = Analysis(cur)
        _, live_after = an.liveness()
        keep = set()
        removed = False
        for si in an.ssa.insns:
            i, ins = si.idx, si.insn
            if ins.is_nop():
                removed = True
                continue
            if ins.kind in (isa.ALU64, isa.ALU32, isa.LDX, isa.LDDW, isa.LD_MAP_ID):
                if not _covers(live_after[i], {("r", ins.dst)}):
                    removed = True
                    continue
            elif ins.kind in (isa.STX, isa.ST):
                acc = an.mem_access(si)
                if acc[0] in (STACK, PACKET, CTX) and acc[1] is not None:
                    locs = _mem_locs(acc[0], acc[1], acc[2])
                    if not _covers(live_after[i], locs):
                        removed = True
                        continue
            keep.add(i)
        if not removed:
            return cur
        if not keep:
            return cur
        cur = _rebuild(cur, keep)
    return cur


def canonical_key(p: isa.Program) -> bytes:
    import hashlib

    return hashlib.sha256(isa.encode(canonicalize(p))).digest()
