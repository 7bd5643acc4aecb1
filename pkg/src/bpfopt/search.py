"""Stochastic optimization: Markov-chain search over programs with a
test-then-verify cost function.

Proposals never alter control-flow structure (jump targets, calls and exits
stay put; offsets are forward and in-bounds by construction) and never write
r10, so structural safety cannot regress during search.  Equivalence verdicts
are cached by canonicalized program; solver counterexamples (both equivalence
and safety) grow the test suite so repeat offenders die in the interpreter.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field, replace

from . import analysis, isa, vcgen
from .interpreter import (PASS, MachineState, RuntimeFault, TestCase, compare_set,
                          execute, gen_tests, run_suite)
from .safety import SAFE, safety
from .solver import (SAT, UNSAT, UNKNOWN, SolverProcess, VerificationCache,
                     check, extract_counterexample)

FAULT_DIFF_POP = 64          # per-test distance charged for a runtime fault
FAULT_DIFF_ABS = float(2 ** 20)


@dataclass(frozen=True)
class ProposalProbabilities:
    prob_ir: float = 0.2
    prob_or: float = 0.4
    prob_nr: float = 0.15
    prob_me1: float = 0.2
    prob_me2: float = 0.0
    prob_cir: float = 0.05
    k_contig: int = 2

    def __post_init__(self):
        s = (self.prob_ir + self.prob_or + self.prob_nr + self.prob_me1 +
             self.prob_me2 + self.prob_cir)
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"proposal probabilities sum to {s}, not 1")

    def cumulative(self):
        out, acc = [], 0.0
        for name, p in (("ir", self.prob_ir), ("or", self.prob_or),
                        ("nr", self.prob_nr), ("me1", self.prob_me1),
                        ("me2", self.prob_me2), ("cir", self.prob_cir)):
            acc += p
            out.append((acc, name))
        return out


@dataclass(frozen=True)
class ErrorCostConfig:
    diff_kind: str = "abs"        # "pop" | "abs"
    c_kind: str = "full"          # "full" (c=1) | "avg" (c=1/|T|)
    num_tests_kind: str = "incorrect"  # "incorrect" | "correct"


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 0.5
    beta: float = 5.0
    gamma: float = 1.0
    err_max: float = 1e6
    mh_beta: float = 1.0


@dataclass(frozen=True)
class ChainConfig:
    probabilities: ProposalProbabilities = ProposalProbabilities()
    error: ErrorCostConfig = ErrorCostConfig()
    weights: CostWeights = CostWeights()
    perf_goal: str = "inst"       # "inst" | "lat"
    seed: int = 1
    budget_iters: int = 100_000
    budget_secs: float | None = None
    window_mode: bool = False
    num_tests: int = 32
    suite_cap: int = 512
    solver_timeout_ms: int = 10_000
    opts: vcgen.OptFlags = vcgen.OptFlags()
    name: str = ""


class LatencyTable:
    """Average per-opcode execution time (ns); NOPs cost nothing."""

    def __init__(self, table: dict):
        missing = [k for k in ALL_OPCODE_KEYS if k not in table]
        if missing:
            raise ValueError(f"latency table is missing opcodes: {missing}")
        bad = [k for k, v in table.items() if v <= 0]
        if bad:
            raise ValueError(f"latency table has non-positive entries: {bad}")
        self.table = dict(table)

    @classmethod
    def load(cls, path):
        import yaml

        with open(path) as f:
            return cls(yaml.safe_load(f))

    def cost(self, insn: isa.Insn) -> float:
        if insn.is_nop():
            return 0.0
        return self.table[opcode_key(insn)]


def opcode_key(insn: isa.Insn) -> str:
    k = insn.kind
    if k in (isa.ALU64, isa.ALU32):
        return f"{k}_{insn.op}"
    if k in (isa.LDX, isa.STX, isa.ST, isa.XADD64, isa.XADD32):
        return f"{k}_{insn.width}"
    if k == isa.JMP:
        return f"jmp_{insn.op}"
    return k


ALL_OPCODE_KEYS = tuple(
    [f"{cls}_{op}" for cls in (isa.ALU64, isa.ALU32) for op in isa.ALU_OPS]
    + [f"{cls}_{w}" for cls in (isa.LDX, isa.STX, isa.ST) for w in isa.WIDTHS]
    + [f"{isa.XADD64}_8", f"{isa.XADD32}_4"]
    + [f"jmp_{c}" for c in isa.JMP_CONDS]
    + [isa.LDDW, isa.LD_MAP_ID, isa.CALL, isa.EXIT]
)


# ---------------------------------------------------------------------------
# Proposal generation
# ---------------------------------------------------------------------------

# instructions whose replacement would change control-flow structure or the
# helper/map call graph; proposals leave them (and their targets) alone
STRUCTURAL = (isa.JMP, isa.EXIT, isa.CALL, isa.LDDW, isa.LD_MAP_ID)


class InstructionPool:
    """Uniform sampler over a fixed finite instruction universe derived from
    the source program; fixed pools keep every rewrite rule symmetric."""

    def __init__(self, p_src: isa.Program):
        spec = p_src.spec
        imms = {0, 1, 2, 4, 8}
        offs = {-8, -4, 0}
        for i in p_src.insns:
            if i.kind in (isa.ALU64, isa.ALU32, isa.ST) and not i.src_is_reg:
                if -(1 << 31) <= i.imm < (1 << 31):
                    imms.add(i.imm)
            if i.is_mem():
                offs.add(i.off)
                offs.add(i.off + i.width)
                offs.add(i.off - i.width)
        self.imms = sorted(imms)
        self.offs = sorted(o for o in offs if -isa.STACK_SIZE <= o <= max(64, spec.packet_size))
        self.dsts = list(range(10))            # r10 is never a written operand
        self.bases = list(range(11))           # but may be read as an address
        self.srcs = list(range(10))
        ni, no, nd, nb, ns = (len(self.imms), len(self.offs), len(self.dsts),
                              len(self.bases), len(self.srcs))
        shapes = [("nop", 1)]
        for cls in (isa.ALU64, isa.ALU32):
            for op in isa.ALU_OPS:
                if op == "neg":
                    shapes.append((f"{cls}:{op}", nd))
                else:
                    shapes.append((f"{cls}:{op}:reg", nd * ns))
                    shapes.append((f"{cls}:{op}:imm", nd * ni))
        for w in isa.WIDTHS:
            shapes.append((f"ldx:{w}", nd * nb * no))
            shapes.append((f"stx:{w}", nb * no * ns))
            shapes.append((f"st:{w}", nb * no * ni))
        shapes.append(("xadd:8", nb * no * ns))
        shapes.append(("xadd:4", nb * no * ns))
        self.shapes = shapes
        self.total = sum(n for _, n in shapes)

    def sample(self, rng: random.Random) -> isa.Insn:
        u = rng.randrange(self.total)
        for shape, n in self.shapes:
            if u < n:
                return self._decode(shape, u, rng)
            u -= n
        raise AssertionError("pool sampling out of range")

    def _decode(self, shape, u, rng):
        if shape == "nop":
            return isa.Insn(isa.NOP)
        parts = shape.split(":")
        if parts[0] in (isa.ALU64, isa.ALU32):
            cls, op = parts[0], parts[1]
            if op == "neg":
                return isa.Insn(cls, op=op, dst=self.dsts[u])
            if parts[2] == "reg":
                d, s = divmod(u, len(self.srcs))
                return isa.Insn(cls, op=op, dst=self.dsts[d], src=self.srcs[s],
                                src_is_reg=True)
            d, i = divmod(u, len(self.imms))
            return isa.Insn(cls, op=op, dst=self.dsts[d], imm=self.imms[i])
        if parts[0] == "ldx":
            w = int(parts[1])
            d, r = divmod(u, len(self.bases) * len(self.offs))
            b, o = divmod(r, len(self.offs))
            return isa.Insn(isa.LDX, width=w, dst=self.dsts[d],
                            src=self.bases[b], off=self.offs[o])
        if parts[0] == "stx":
            w = int(parts[1])
            b, r = divmod(u, len(self.offs) * len(self.srcs))
            o, s = divmod(r, len(self.srcs))
            return isa.Insn(isa.STX, width=w, dst=self.bases[b],
                            off=self.offs[o], src=self.srcs[s])
        if parts[0] == "st":
            w = int(parts[1])
            b, r = divmod(u, len(self.offs) * len(self.imms))
            o, i = divmod(r, len(self.imms))
            return isa.Insn(isa.ST, width=w, dst=self.bases[b],
                            off=self.offs[o], imm=self.imms[i])
        if parts[0] == "xadd":
            w = int(parts[1])
            b, r = divmod(u, len(self.offs) * len(self.srcs))
            o, s = divmod(r, len(self.srcs))
            kind = isa.XADD64 if w == 8 else isa.XADD32
            return isa.Insn(kind, width=w, dst=self.bases[b],
                            off=self.offs[o], src=self.srcs[s])
        raise AssertionError(shape)


def propose(p_curr: isa.Program, probs: ProposalProbabilities,
            rng: random.Random, pool: InstructionPool,
            positions: list | None = None) -> isa.Program:
    """One rewrite per call; inapplicable draws return the program unchanged
    (a self-loop in the chain)."""
    insns = list(p_curr.insns)
    n = len(insns)
    cand = positions if positions is not None else range(n)
    u = rng.random()
    rule = next(name for cum, name in probs.cumulative() if u < cum or cum >= 1.0)

    def editable(i):
        return insns[i].kind not in STRUCTURAL

    pos = rng.choice(list(cand))
    if rule == "ir":
        if not editable(pos):
            return p_curr
        insns[pos] = pool.sample(rng)
    elif rule == "or":
        new = _replace_operand(insns[pos], rng, pool)
        if new is None:
            return p_curr
        insns[pos] = new
    elif rule == "nr":
        if not editable(pos) or insns[pos].is_nop():
            return p_curr
        insns[pos] = isa.Insn(isa.NOP)
    elif rule == "me1":
        ins = insns[pos]
        if not ins.is_mem():
            return p_curr
        insns[pos] = _mem_exchange1(ins, rng, pool)
    elif rule == "me2":
        ins = insns[pos]
        if not ins.is_mem():
            return p_curr
        insns[pos] = _mem_exchange2(ins, rng)
    else:  # cir: replace k contiguous instructions
        k = probs.k_contig
        if positions is not None:
            window = list(positions)
            starts = [i for i in window if all(
                j in window and editable(j) for j in range(i, i + k))]
        else:
            starts = [i for i in range(n - k + 1) if all(
                editable(j) for j in range(i, i + k))]
        if not starts:
            return p_curr
        start = rng.choice(starts)
        for j in range(start, start + k):
            insns[j] = pool.sample(rng)
    return p_curr.with_insns(insns)


def _replace_operand(ins: isa.Insn, rng, pool: InstructionPool):
    k = ins.kind
    slots = []
    if k in (isa.ALU64, isa.ALU32):
        slots.append("dst")
        if ins.op != "neg":
            slots.append("src" if ins.src_is_reg else "imm")
    elif k == isa.JMP and ins.op != "ja":
        slots.append("dst")
        slots.append("src" if ins.src_is_reg else "imm")
    elif k == isa.LDX:
        slots += ["dst", "base", "off"]
    elif k == isa.STX or k in (isa.XADD64, isa.XADD32):
        slots += ["base", "off", "src"]
    elif k == isa.ST:
        slots += ["base", "off", "imm"]
    elif k in (isa.LDDW, isa.LD_MAP_ID, isa.CALL):
        return None
    if not slots:
        return None
    slot = rng.choice(slots)
    if slot == "dst" and k == isa.LDX:
        return replace(ins, dst=rng.choice(pool.dsts))
    if slot == "dst" and k in (isa.ALU64, isa.ALU32, isa.JMP):
        return replace(ins, dst=rng.choice(pool.dsts))
    if slot == "src":
        return replace(ins, src=rng.choice(pool.srcs))
    if slot == "imm":
        return replace(ins, imm=rng.choice(pool.imms))
    if slot == "base":
        return replace(ins, dst=rng.choice(pool.bases)) if k != isa.LDX \
            else replace(ins, src=rng.choice(pool.bases))
    if slot == "off":
        return replace(ins, off=rng.choice(pool.offs))
    return None


def _mem_exchange1(ins: isa.Insn, rng, pool: InstructionPool):
    """New width and a new value operand; address base, offset and the
    load/store direction stay."""
    w = rng.choice(isa.WIDTHS)
    if ins.kind == isa.LDX:
        return replace(ins, width=w, dst=rng.choice(pool.dsts))
    if ins.kind in (isa.STX, isa.ST):
        if rng.random() < 0.5:
            return isa.Insn(isa.STX, width=w, dst=ins.dst, off=ins.off,
                            src=rng.choice(pool.srcs))
        return isa.Insn(isa.ST, width=w, dst=ins.dst, off=ins.off,
                        imm=rng.choice(pool.imms))
    # xadd keeps its RMW nature; only width and source change
    kind = isa.XADD64 if w == 8 else isa.XADD32
    w = 8 if w == 8 else 4
    return isa.Insn(kind, width=w, dst=ins.dst, off=ins.off,
                    src=rng.choice(pool.srcs))


def _mem_exchange2(ins: isa.Insn, rng):
    w = rng.choice(isa.WIDTHS)
    if ins.kind in (isa.XADD64, isa.XADD32):
        kind = isa.XADD64 if rng.random() < 0.5 else isa.XADD32
        return replace(ins, width=8 if kind == isa.XADD64 else 4, kind=kind)
    return replace(ins, width=w)


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------

def _output_vector(out, cmp_set):
    """Flatten an OutputState into comparable components."""
    vec = []
    if "r0" in cmp_set:
        vec.append(("r0", out.r0, 64))
    if "packet" in cmp_set:
        for i, b in enumerate(out.packet):
            vec.append((f"p{i}", b, 8))
    if "maps" in cmp_set:
        for mid, entries in out.maps:
            for key, val in entries:
                vec.append((f"m{mid}k{key.hex()}", int.from_bytes(val, "little"),
                            8 * len(val)))
    return vec


def output_diff(out_synth, out_src, cmp_set, diff_kind):
    """Distance between two output states: popcount of xor or absolute
    numeric difference, summed over compared components."""
    a = _output_vector(out_synth, cmp_set)
    b = _output_vector(out_src, cmp_set)
    da = dict((k, v) for k, v, _ in a)
    db = dict((k, v) for k, v, _ in b)
    total = 0
    for k in set(da) | set(db):
        x, y = da.get(k, 0), db.get(k, 0)
        if diff_kind == "pop":
            total += bin(x ^ y).count("1")
        else:
            total += abs(x - y)
    return float(total)


def error_cost(p, suite, unequal, cfg: ErrorCostConfig, cmp_set,
               diffs=None) -> float:
    """Eq-style error: c * sum of per-test distances + unequal * num_tests."""
    if diffs is None:
        diffs = suite_diffs(p, suite, cmp_set, cfg.diff_kind)
    total_diff = sum(d for d in diffs)
    incorrect = sum(1 for d in diffs if d > 0)
    correct = len(diffs) - incorrect
    c = 1.0 if cfg.c_kind == "full" else (1.0 / len(diffs) if diffs else 1.0)
    num = incorrect if cfg.num_tests_kind == "incorrect" else correct
    err = c * total_diff + unequal * float(num)
    if unequal and err == 0.0:
        err = 1.0  # keep err == 0 equivalent-only when the solver said no/unknown
    return err


def suite_diffs(p, suite, cmp_set, diff_kind, abort_above=None):
    """Per-test distances. When the running sum passes abort_above the rest
    of the suite is skipped (the candidate's acceptance probability is
    already negligible); the partial sum still lower-bounds the true cost."""
    diffs = []
    total = 0.0
    for t in suite:
        out = execute(p, t.input)
        if isinstance(out, RuntimeFault):
            d = FAULT_DIFF_POP if diff_kind == "pop" else FAULT_DIFF_ABS
        else:
            d = output_diff(out, t.expected, cmp_set, diff_kind)
        diffs.append(d)
        total += d
        if abort_above is not None and total > abort_above:
            break
    return diffs


def perf_cost(p_synth, p_src, goal, lat_table: LatencyTable | None = None) -> float:
    if goal == "inst":
        return float(p_synth.real_len() - p_src.real_len())
    return sum(lat_table.cost(i) for i in p_synth.insns) - \
        sum(lat_table.cost(i) for i in p_src.insns)


def total_cost(err, perf, safe_cost, w: CostWeights) -> float:
    return w.alpha * err + w.beta * perf + w.gamma * safe_cost


def mh_accept(f_curr, f_synth, tr_ratio, mh_beta, rng) -> bool:
    """Metropolis-Hastings acceptance on exp(-mh_beta * cost); the partition
    constant cancels in the ratio and is never computed."""
    ratio = math.exp(max(-700.0, min(700.0, -mh_beta * (f_synth - f_curr)))) * tr_ratio
    return rng.random() < min(1.0, ratio)


# ---------------------------------------------------------------------------
# CEGIS evaluation step
# ---------------------------------------------------------------------------

@dataclass
class ChainState:
    p_src: isa.Program
    cfg: ChainConfig
    suite: list
    solver: SolverProcess
    cache: VerificationCache
    lat_table: LatencyTable | None = None
    src_analysis: analysis.Analysis | None = None
    windows: list = field(default_factory=list)
    stats: dict = field(default_factory=lambda: {
        "iterations": 0, "accepts": 0, "solver_calls": 0, "cache_hits": 0,
        "cache_lookups": 0, "safety_checks": 0, "tests_added": 0,
        "test_runs": 0, "eq_time": 0.0})
    safety_memo: dict = field(default_factory=dict)
    current_window: int = -1


@dataclass
class EvalResult:
    err: float
    perf: float
    safe_cost: float
    total: float
    verified: bool      # equivalence proved UNSAT this evaluation
    safe: bool


def _append_cex(state: ChainState, tc: TestCase):
    cap = state.cfg.suite_cap
    if len(state.suite) >= cap:
        for i, t in enumerate(state.suite):
            if not t.from_counterexample:
                state.suite.pop(i)
                break
        else:
            return
    state.suite.append(tc)
    state.stats["tests_added"] += 1


def _program_safety(state: ChainState, p: isa.Program):
    key = isa.encode(p)
    got = state.safety_memo.get(key)
    if got is not None:
        return got
    state.stats["safety_checks"] += 1
    report = safety(p, state.solver, state.cfg.solver_timeout_ms, state.cfg.opts)
    state.safety_memo[key] = report
    return report


def cegis_step(state: ChainState, p_synth: isa.Program,
               abort_above=None) -> EvalResult:
    """Tests first; solver work only for candidates that pass everything."""
    cfg = state.cfg
    cmp_set = compare_set(state.p_src.spec)
    state.stats["test_runs"] += len(state.suite)
    diffs = suite_diffs(p_synth, state.suite, cmp_set, cfg.error.diff_kind,
                        abort_above)
    all_pass = len(diffs) == len(state.suite) and all(d == 0 for d in diffs)
    unequal = 1
    verified = False
    safe = True
    safe_cost = 0.0

    if all_pass:
        report = _program_safety(state, p_synth)
        if not report.safe:
            safe = False
            safe_cost = cfg.weights.err_max
            for cex_state in report.counterexamples:
                out = execute(state.p_src, cex_state)
                if not isinstance(out, RuntimeFault):
                    _append_cex(state, TestCase(cex_state, out, from_counterexample=True))
        verdict_kind, cex = _check_equivalence(state, p_synth)
        if verdict_kind == UNSAT:
            unequal = 0
            verified = True
        elif verdict_kind == SAT and cex is not None:
            _append_cex(state, cex)
            diffs = suite_diffs(p_synth, state.suite, cmp_set, cfg.error.diff_kind)

    err = error_cost(p_synth, state.suite, unequal, cfg.error, cmp_set, diffs)
    perf = perf_cost(p_synth, state.p_src, cfg.perf_goal, state.lat_table)
    total = total_cost(err, perf, safe_cost, cfg.weights)
    return EvalResult(err, perf, safe_cost, total, verified, safe)


def _check_equivalence(state: ChainState, p_synth: isa.Program):
    """Cache-aware equivalence decision; returns (verdict kind, TestCase|None)."""
    state.stats["cache_lookups"] += 1
    hit = state.cache.lookup(p_synth)
    if hit is not None:
        state.stats["cache_hits"] += 1
        return hit
    if state.cfg.window_mode and state.current_window >= 0:
        verdict_kind, cex = _window_equivalence(state, p_synth)
    else:
        verdict_kind, cex = _full_equivalence(state, p_synth)
    state.cache.insert(p_synth, verdict_kind, cex)
    return verdict_kind, cex


def _full_equivalence(state: ChainState, p_synth):
    try:
        q = vcgen.equivalence_query(state.p_src, p_synth, opts=state.cfg.opts)
    except vcgen.EncodingRefused:
        return UNKNOWN, None
    state.stats["solver_calls"] += 1
    t0 = time.monotonic()
    verdict = check(state.solver, q, state.cfg.solver_timeout_ms)
    state.stats["eq_time"] += time.monotonic() - t0
    if verdict.kind == SAT:
        cex, _missing = extract_counterexample(verdict.model, q.meta, state.p_src)
        return SAT, cex
    return verdict.kind, None


def _window_equivalence(state: ChainState, p_synth):
    ws = state.windows[state.current_window]
    w1 = state.p_src.insns[ws.start:ws.end]
    w2 = p_synth.insns[ws.start:ws.end]
    try:
        q = vcgen.window_query(w1, w2, ws, state.src_analysis,
                               state.p_src.spec, state.cfg.opts)
    except vcgen.EncodingRefused:
        return UNKNOWN, None
    state.stats["solver_calls"] += 1
    verdict = check(state.solver, q, state.cfg.solver_timeout_ms)
    if verdict.kind == SAT:
        return SAT, None  # window models are not whole-program inputs
    return verdict.kind, None


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass
class Record:
    program: isa.Program
    cost: float
    perf: float
    iteration: int
    wall_time: float
    chain: str = ""


def run_chain(cfg: ChainConfig, p_src: isa.Program,
              solver_proc: SolverProcess | None = None,
              cache: VerificationCache | None = None,
              suite: list | None = None,
              lat_table: LatencyTable | None = None,
              progress=None) -> tuple:
    """One Markov chain from p_src; returns (records, stats).  Records hold
    every verified+safe accepted state that set a new best cost."""
    t_start = time.monotonic()
    p_src = analysis.reorder_forward(p_src)
    rng = random.Random(cfg.seed)
    own_solver = solver_proc is None
    solver_proc = solver_proc or SolverProcess(timeout_ms=cfg.solver_timeout_ms)
    cache = cache or VerificationCache()
    if suite is None:
        suite = gen_tests(p_src, cfg.num_tests, cfg.seed)
    state = ChainState(p_src=p_src, cfg=cfg, suite=list(suite),
                       solver=solver_proc, cache=cache, lat_table=lat_table)
    pool = InstructionPool(p_src)

    positions = None
    if cfg.window_mode:
        state.src_analysis = analysis.Analysis(p_src)
        state.windows = [w for w in analysis.select_windows(p_src, analysis=state.src_analysis)
                         if not w.has_call]

    p_curr = p_src
    res_curr = cegis_step(state, p_curr)
    f_curr = res_curr.total
    best = f_curr
    records = [Record(p_src, f_curr, res_curr.perf, 0, 0.0, cfg.name)]

    it = 0
    window_budget = 0
    while it < cfg.budget_iters:
        if cfg.budget_secs is not None and time.monotonic() - t_start > cfg.budget_secs:
            break
        it += 1
        state.stats["iterations"] = it
        if cfg.window_mode and state.windows:
            if window_budget <= 0:
                state.current_window = (state.current_window + 1) % len(state.windows)
                window_budget = max(1, cfg.budget_iters // (4 * len(state.windows)))
                ws = state.windows[state.current_window]
                positions = list(range(ws.start, ws.end))
            window_budget -= 1
        p_synth = propose(p_curr, cfg.probabilities, rng, pool, positions)
        if p_synth.insns == p_curr.insns:
            continue
        # beyond this distance the acceptance probability is < e^-30; the
        # remaining tests cannot change the accept/reject outcome
        w = cfg.weights
        abort_above = None
        if w.alpha > 0:
            c = 1.0 if cfg.error.c_kind == "full" else 1.0 / max(1, len(state.suite))
            abort_above = (max(f_curr, 0.0) + 30.0 / w.mh_beta +
                           w.beta * len(p_src.insns)) / (w.alpha * c)
        res = cegis_step(state, p_synth, abort_above)
        if mh_accept(f_curr, res.total, 1.0, cfg.weights.mh_beta, rng):
            state.stats["accepts"] += 1
            p_curr, f_curr = p_synth, res.total
            if f_curr < best and res.verified and res.safe:
                best = f_curr
                records.append(Record(p_curr, f_curr, res.perf, it,
                                      time.monotonic() - t_start, cfg.name))
        if progress and it % progress == 0:
            print(f"[{cfg.name or 'chain'}] iter={it} cost={f_curr:.3f} "
                  f"best={best:.3f} cache_hits={state.stats['cache_hits']} "
                  f"solver_calls={state.stats['solver_calls']}")
    if own_solver:
        solver_proc.close()
    return records, state.stats


def run_parallel(cfgs: list, p_src: isa.Program, top_k: int = 1,
                 lat_table: LatencyTable | None = None,
                 shared_cache: VerificationCache | None = None,
                 progress=None):
    """Independent chains (sequential execution, isolated state unless a
    shared cache is given); merged records are re-verified before emission."""
    p_src = analysis.reorder_forward(p_src)
    all_records = []
    all_stats = []
    for cfg in cfgs:
        proc = SolverProcess(timeout_ms=cfg.solver_timeout_ms)
        cache = shared_cache if shared_cache is not None else VerificationCache()
        records, stats = run_chain(cfg, p_src, proc, cache,
                                   lat_table=lat_table, progress=progress)
        proc.close()
        all_records.extend(records)
        all_stats.append((cfg.name, stats))

    # dedup by canonical key, keep the best perf representative
    by_key = {}
    for rec in all_records:
        k = analysis.canonical_key(rec.program)
        if k not in by_key or rec.perf < by_key[k].perf:
            by_key[k] = rec

    # final re-check: full equivalence + safety, independently of any cache
    verified = []
    proc = SolverProcess(timeout_ms=cfgs[0].solver_timeout_ms if cfgs else 10000)
    for rec in by_key.values():
        if rec.program.insns == p_src.insns:
            verified.append(rec)
            continue
        rep = safety(rec.program, proc)
        if not rep.safe:
            continue
        try:
            q = vcgen.equivalence_query(p_src, rec.program)
        except vcgen.EncodingRefused:
            continue
        if check(proc, q).kind == UNSAT:
            verified.append(rec)
    proc.close()
    verified.sort(key=lambda r: (r.perf, r.program.real_len()))
    return verified[:max(1, top_k)], all_stats
