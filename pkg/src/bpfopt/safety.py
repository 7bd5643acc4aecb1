"""Candidate safety: static control-flow and checker-discipline analysis plus
first-order queries for bounds, init-before-read, alignment and NULL derefs.

Query-based violations carry an input state that makes the interpreter raise
the matching RuntimeFault, so unsafe candidates can be pruned by testing
instead of re-proving (the counterexamples feed the search suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import analysis, isa, terms, vcgen
from .analysis import CTX, MAPPTR, MAPVAL, PACKET, SCALAR, STACK, UNKNOWN
from .interpreter import CTX_BASE, PACKET_BASE, STACK_LO
from .solver import SAT, UNKNOWN as V_UNKNOWN, SolverProcess, check, extract_input_state

STACK_TOP = STACK_LO + isa.STACK_SIZE

# static violation kinds
UNREACHABLE_BLOCK = "UNREACHABLE_BLOCK"
LOOP = "LOOP"
OOB_JUMP = "OOB_JUMP"
R10_WRITE = "R10_WRITE"
PTR_ALU = "PTR_ALU"
CTX_STORE_IMM = "CTX_STORE_IMM"
CLOBBER_READ = "CLOBBER_READ"
# query-based kinds mirror the interpreter fault kinds
OOB_ACCESS = "OOB_ACCESS"
NULL_DEREF = "NULL_DEREF"
READ_BEFORE_WRITE = "READ_BEFORE_WRITE"
BAD_ALIGNMENT = "BAD_ALIGNMENT"

SAFE = "SAFE"
UNSAFE = "UNSAFE"


@dataclass
class Violation:
    kind: str
    at: int
    detail: str = ""
    counterexample: object = None   # MachineState for query-derived violations

    def __str__(self):
        s = f"{self.kind} at instruction {self.at}"
        return f"{s}: {self.detail}" if self.detail else s


@dataclass
class SafetyReport:
    verdict: str
    violations: list = field(default_factory=list)
    counterexamples: list = field(default_factory=list)  # MachineStates

    @property
    def safe(self):
        return self.verdict == SAFE


# ---------------------------------------------------------------------------
# Static checks
# ---------------------------------------------------------------------------

def check_control_flow(p: isa.Program):
    violations = []
    try:
        cfg = analysis.build_cfg(p)
    except analysis.OutOfBoundsJump as e:
        return [Violation(OOB_JUMP, e.index, "jump target outside the program")]
    for b, (s, e) in enumerate(cfg.blocks):
        last = p.insns[e - 1]
        if e == len(p.insns) and not last.is_exit() and not (
                last.is_jump() and last.off > 0):
            violations.append(Violation(
                OOB_JUMP, e - 1, "control can run past the last instruction"))
    for f, t, _ in cfg.edges:
        if cfg.blocks[t][0] <= cfg.blocks[f][0]:
            violations.append(Violation(LOOP, cfg.blocks[f][1] - 1,
                                        "back-edge in the control flow"))
    reach0 = analysis.reachability(cfg)[0]
    for b in range(cfg.nblocks):
        if b not in reach0:
            s, e = cfg.blocks[b]
            if not all(p.insns[i].is_nop() for i in range(s, e)):
                violations.append(Violation(UNREACHABLE_BLOCK, s,
                                            f"block {b} is unreachable"))
    return violations


def check_kernel_specific(p: isa.Program, an: analysis.Analysis):
    violations = []
    for idx, reason in an.ptr.ptr_alu_flags:
        violations.append(Violation(PTR_ALU, idx, reason))
    clobbered = set()
    for si in an.ssa.insns:
        for role, v in si.defs.items():
            if role.startswith("clobber"):
                clobbered.add(v)
        for role, v in si.uses.items():
            if v in clobbered:
                violations.append(Violation(
                    CLOBBER_READ, si.idx,
                    f"{role} operand reads a register clobbered by a helper call"))
                break
        if si.insn.kind == isa.ST:
            if an.ptr.region_kind(si.uses["base"]) == CTX:
                violations.append(Violation(
                    CTX_STORE_IMM, si.idx, "immediate store through a context pointer"))
        for role in si.defs:
            if role == "dst_out" and si.insn.dst == 10:
                violations.append(Violation(R10_WRITE, si.idx, "write to r10"))
    # phi merges of clobbered values count as reads on the join path
    for ph in an.ssa.phis:
        if any(v in clobbered for _, v, _pb in ph.cases):
            clobbered.add(ph.out)
    return violations


def _accesses(an: analysis.Analysis):
    """(ssa insn, base var, byte offset span) for every memory access."""
    out = []
    for si in an.ssa.insns:
        if si.insn.is_mem():
            out.append((si, si.uses["base"], si.insn.off, si.insn.width))
        elif si.insn.kind == isa.CALL and si.insn.imm in (
                isa.HELPER_MAP_LOOKUP, isa.HELPER_MAP_UPDATE, isa.HELPER_MAP_DELETE):
            spec = an.program.spec
            mid = an.ptr.call_map_ids.get(si.idx)
            if mid is None:
                continue  # flagged statically elsewhere
            m = spec.map_by_id(mid)
            out.append((si, si.uses["arg2"], 0, m.key_size))
            if si.insn.imm == isa.HELPER_MAP_UPDATE:
                out.append((si, si.uses["arg3"], 0, m.value_size))
    return out


def check_static_access(p: isa.Program, an: analysis.Analysis):
    """Type resolution, writability and concrete bounds/alignment checks that
    need no solver."""
    spec = p.spec
    violations = []
    for si, base, off, width in _accesses(an):
        kind = an.ptr.region_kind(base)
        if kind in (UNKNOWN, SCALAR, MAPPTR):
            violations.append(Violation(
                OOB_ACCESS, si.idx, f"access through a {kind} value"))
            continue
        t = an.ptr.typeof(base)
        if kind == MAPVAL and t[0] == MAPVAL and t[1] is None:
            violations.append(Violation(
                OOB_ACCESS, si.idx, "value pointer from an unresolved map"))
            continue
        conc = an.ptr.concrete_offset(base)
        if conc is not None:
            o = conc + off
            if kind == STACK and not (-isa.STACK_SIZE <= o and o + width <= 0):
                violations.append(Violation(OOB_ACCESS, si.idx,
                                            f"stack offset {o} width {width}"))
            elif kind == PACKET and not (0 <= o and o + width <= spec.packet_size):
                violations.append(Violation(OOB_ACCESS, si.idx,
                                            f"packet offset {o} width {width}"))
            elif kind == CTX and not (0 <= o and o + width <= spec.ctx_size):
                violations.append(Violation(OOB_ACCESS, si.idx,
                                            f"ctx offset {o} width {width}"))
            elif kind == MAPVAL:
                vs = spec.map_by_id(t[1]).value_size
                if not (0 <= o and o + width <= vs):
                    violations.append(Violation(OOB_ACCESS, si.idx,
                                                f"map value offset {o} width {width}"))
            if kind == STACK and si.insn.is_mem():
                w = si.insn.width
                if (STACK_TOP + o) % w != 0:
                    violations.append(Violation(BAD_ALIGNMENT, si.idx,
                                                f"{w}-byte access at stack offset {o}"))
    return violations


# ---------------------------------------------------------------------------
# Query-based checks
# ---------------------------------------------------------------------------

def _region_bounds(kind, spec, t):
    if kind == STACK:
        return terms.const(64, STACK_LO), terms.const(64, STACK_TOP)
    if kind == PACKET:
        return terms.const(64, PACKET_BASE), terms.const(64, PACKET_BASE + spec.packet_size)
    if kind == CTX:
        return terms.const(64, CTX_BASE), terms.const(64, CTX_BASE + spec.ctx_size)
    return None


class QueryChecks:
    """Bounds/NULL/init/alignment queries over one program encoding."""

    def __init__(self, p: isa.Program, an: analysis.Analysis, proc: SolverProcess,
                 timeout_ms=None, opts: vcgen.OptFlags = vcgen.OptFlags()):
        self.p = p
        self.an = an
        self.proc = proc
        self.timeout_ms = timeout_ms
        self.enc, self.base_asserts, self.meta = vcgen.single_program_encoding(p, an, opts)
        self.violations = []
        self.unknown = False

    def _ask(self, extra, kind, at, detail):
        verdict = check(self.proc, self.base_asserts + extra, self.timeout_ms)
        if verdict.kind == SAT:
            state = extract_input_state(verdict.model, self.meta)
            self.violations.append(Violation(kind, at, detail, state))
        elif verdict.kind == V_UNKNOWN:
            self.unknown = True
            self.violations.append(Violation(
                kind, at, f"solver unknown ({verdict.reason}); treated as unsafe"))

    def run(self):
        spec = self.p.spec
        for si, base, off, width in _accesses(self.an):
            kind = self.an.ptr.region_kind(base)
            t = self.an.ptr.typeof(base)
            conc = self.an.ptr.concrete_offset(base)
            addr = terms.add(terms.var(64, base), terms.const(64, off))
            if kind in (STACK, PACKET, CTX):
                if conc is None:
                    lo, hi = _region_bounds(kind, spec, t)
                    oob = terms.orb(terms.ult(addr, lo),
                                    terms.not_(terms.ule(terms.add(addr, terms.const(64, width)), hi)))
                    self._ask([si.pc, oob], OOB_ACCESS, si.idx,
                              f"{kind} access may leave [{'%#x' % lo[2]}, {'%#x' % hi[2]})")
                    if kind == STACK and si.insn.is_mem():
                        w = si.insn.width
                        mis = terms.ne(terms.and_(addr, terms.const(64, w - 1)),
                                       terms.const(64, 0))
                        self._ask([si.pc, mis], BAD_ALIGNMENT, si.idx,
                                  f"{w}-byte stack access may be misaligned")
            elif kind == MAPVAL:
                base_ptr = self.enc._origin_ptr.get(t[2]) if t[0] == MAPVAL else None
                self._ask([si.pc, terms.eq(terms.var(64, base), terms.const(64, 0))]
                          if base_ptr is None else
                          [si.pc, terms.eq(base_ptr, terms.const(64, 0))],
                          NULL_DEREF, si.idx, "map lookup result may be NULL here")
                if conc is None and base_ptr is not None:
                    vs = spec.map_by_id(t[1]).value_size
                    oob = terms.orb(
                        terms.ult(addr, base_ptr),
                        terms.not_(terms.ule(terms.add(addr, terms.const(64, width)),
                                             terms.add(base_ptr, terms.const(64, vs)))))
                    self._ask([si.pc, terms.ne(base_ptr, terms.const(64, 0)), oob],
                              OOB_ACCESS, si.idx, "map value access may leave the value")

        # stack init-before-read: every read byte needs a covering prior write
        reads = self.enc.ctx.mem_read.get((STACK,), []) + (
            self.enc.ctx.mem_read.get(("all",), []) if (STACK,) not in self.enc.ctx.mem_read else [])
        writes = self.enc.ctx.mem_write.get((STACK,), [])
        by_insn = {}
        for row in reads:
            by_insn.setdefault(row.at, []).append(row)
        for at, rows in sorted(by_insn.items()):
            uncovered_any = []
            statically_covered = True
            for row in rows:
                prior = [w for w in writes if w.at < at]
                cov = terms.orb(*[terms.andb(terms.eq(w.addr, row.addr), w.pc)
                                  for w in prior])
                if cov != terms.TRUE:
                    statically_covered = False
                uncovered_any.append(terms.not_(cov))
            if statically_covered:
                continue
            pc = rows[0].pc
            self._ask([pc, terms.orb(*uncovered_any)], READ_BEFORE_WRITE, at,
                      "stack bytes may be read before they are written")

        # registers read before any write (non-inputs)
        for idx, r, var, pc in self.an.ssa.reads_of_uninit:
            self._ask([pc], READ_BEFORE_WRITE, idx,
                      f"r{r} may be read before it is written")
        return self.violations


# ---------------------------------------------------------------------------
# Aggregate
# ---------------------------------------------------------------------------

def check_mem_bounds(p, proc=None, timeout_ms=None):
    an = analysis.Analysis(p)
    static = [v for v in check_static_access(p, an)
              if v.kind in (OOB_ACCESS, NULL_DEREF)]
    if static or proc is None:
        return static
    qc = QueryChecks(p, an, proc, timeout_ms)
    return [v for v in qc.run() if v.kind in (OOB_ACCESS, NULL_DEREF)]


def check_init_before_read(p, proc, timeout_ms=None):
    an = analysis.Analysis(p)
    qc = QueryChecks(p, an, proc, timeout_ms)
    return [v for v in qc.run() if v.kind == READ_BEFORE_WRITE]


def check_alignment(p, proc=None, timeout_ms=None):
    an = analysis.Analysis(p)
    static = [v for v in check_static_access(p, an) if v.kind == BAD_ALIGNMENT]
    if proc is None:
        return static
    qc = QueryChecks(p, an, proc, timeout_ms)
    return static + [v for v in qc.run() if v.kind == BAD_ALIGNMENT]


def safety(p: isa.Program, proc: SolverProcess | None = None,
           timeout_ms=None, opts: vcgen.OptFlags = vcgen.OptFlags()) -> SafetyReport:
    """Full safety decision. Static violations short-circuit before any
    solver query; query UNKNOWN is conservatively unsafe."""
    violations = check_control_flow(p)
    if violations:
        return SafetyReport(UNSAFE, violations)
    try:
        an = analysis.Analysis(p)
    except Exception as e:
        return SafetyReport(UNSAFE, [Violation(OOB_JUMP, 0, f"analysis failed: {e}")])
    violations += check_kernel_specific(p, an)
    violations += check_static_access(p, an)
    if violations:
        return SafetyReport(UNSAFE, violations)
    if proc is not None:
        try:
            qc = QueryChecks(p, an, proc, timeout_ms, opts)
            violations += qc.run()
        except vcgen.EncodingRefused as e:
            violations.append(Violation(OOB_ACCESS, 0, str(e)))
    if violations:
        cexs = [v.counterexample for v in violations if v.counterexample is not None]
        return SafetyReport(UNSAFE, violations, cexs)
    return SafetyReport(SAFE)
