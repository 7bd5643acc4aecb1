"""Acceptance gate: every criterion runs at its stated tolerance and prints
one pass/fail line.  Run with `pytest tests/test_acceptance.py -v -s`."""

import math
import random
import time
from pathlib import Path

import pytest
import yaml

from bpfopt import analysis, config, isa, search, solver, terms, vcgen
from bpfopt.interpreter import MachineState, RuntimeFault, execute, gen_tests, run_suite
from bpfopt.safety import SAFE, UNSAFE, safety
from randprog import SPEC as RAND_SPEC, random_input, random_program
from safety_corpus import all_cases

ROOT = Path(__file__).parent.parent
CORPUS = ROOT / "benchmarks" / "corpus"

pytestmark = pytest.mark.acceptance


def _report(name, ok, detail):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------------------

def test_interpreter_formalizer_agreement(solver_proc):
    """1000 random loop-free helper-free programs (<=12 insns) x 10 inputs:
    solver-model outputs equal interpreter outputs exactly.  Target < 10 min."""
    rng = random.Random(0xA9EE)
    t0 = time.monotonic()
    checked = 0
    for _ in range(1000):
        p = random_program(rng)
        assert len(p.insns) <= 12
        for _ in range(10):
            st = random_input(rng)
            out = execute(p, st)
            assert not isinstance(out, RuntimeFault), isa.print_asm(p)
            q = vcgen.concrete_binding_query(p, st)
            v = solver.check(solver_proc, q, 60000)
            assert v.kind == "sat", (v.kind, isa.print_asm(p))
            assert v.model["q_out_r0"] == out.r0, isa.print_asm(p)
            for o in range(RAND_SPEC.packet_size):
                assert v.model[f"q_out_pkt_{o}"] == out.packet[o], isa.print_asm(p)
            checked += 1
    dt = time.monotonic() - t0
    _report("interpreter-formalizer-agreement",
            checked == 10000 and dt < 600,
            f"{checked} cases agreed in {dt:.0f}s")


# ---------------------------------------------------------------------------

REGRESSION = ("01_coalesce_stores", "02_xadd_fusion", "03_arsh_context",
              "04_dead_store")


def _load_bench(name):
    d = CORPUS / name
    spec = isa.load_spec(d / "spec.yaml") if (d / "spec.yaml").exists() \
        else isa.ProgramSpec()
    p = isa.parse_asm((d / "prog.asm").read_text(), spec)
    meta = yaml.safe_load((d / "meta.yaml").read_text())
    return p, spec, meta


@pytest.mark.slow
def test_regression_rediscovery(solver_proc):
    """Each bundled case-study fixture: 5 shipped parameter sets, INST goal,
    200k iterations per chain find a program no larger than the known rewrite,
    verified equivalent and safe.  3 seeded retries; target < 30 min total."""
    t0 = time.monotonic()
    results = []
    for name in REGRESSION:
        p, spec, meta = _load_bench(name)
        bound = meta["expected_after"]
        found = None
        for attempt, seed in enumerate((11, 211, 3111)):
            cfgs = config.default_chain_configs(seed=seed, budget_iters=200_000)
            records, _stats = search.run_parallel(cfgs, p, top_k=1)
            best = records[0]
            if best.program.real_len() <= bound:
                found = best
                break
        ok = found is not None
        if ok:
            # the emitted program must re-verify from scratch
            q = vcgen.equivalence_query(analysis.reorder_forward(p), found.program, spec)
            assert solver.check(solver_proc, q, 120000).kind == "unsat"
            assert safety(found.program, solver_proc).verdict == SAFE
        results.append((name, p.real_len(),
                        found.program.real_len() if found else None, bound, ok))
    dt = time.monotonic() - t0
    detail = "; ".join(f"{n}: {b}->{a} (bound {x})" for n, b, a, x, _ in results)
    _report("regression-rediscovery",
            all(ok for *_, ok in results) and dt < 1800,
            f"{detail}; {dt:.0f}s")


# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_compression_on_synthetic_corpus():
    """>= 10% mean instruction-count reduction across the 10-program corpus."""
    t0 = time.monotonic()
    rows = []
    for d in sorted(CORPUS.iterdir()):
        p, spec, meta = _load_bench(d.name)
        cfgs = config.default_chain_configs(seed=7, budget_iters=60_000)[:3]
        records, _ = search.run_parallel(cfgs, p, top_k=1)
        before = p.real_len()
        after = records[0].program.real_len()
        rows.append((d.name, before, after, 100.0 * (before - after) / before))
    mean = sum(r[3] for r in rows) / len(rows)
    detail = ", ".join(f"{n}:{b}->{a}" for n, b, a, _ in rows)
    _report("synthetic-corpus-compression",
            len(rows) == 10 and mean >= 10.0,
            f"mean {mean:.1f}% over {len(rows)} programs [{detail}] "
            f"{time.monotonic() - t0:.0f}s")


# ---------------------------------------------------------------------------

def test_equivalence_optimization_ablation(solver_proc):
    """Disabling memory-type and offset concretization (I+III) slows the mean
    equivalence query by >= 10x on the 2-region 32-access fixture."""
    d = ROOT / "benchmarks" / "ablation" / "mem_swap"
    spec = isa.load_spec(d / "spec.yaml")
    p1 = isa.parse_asm((d / "prog.asm").read_text(), spec)
    p2 = isa.parse_asm((d / "variant.asm").read_text(), spec)
    n_acc = sum(1 for i in p1.insns if i.is_mem())
    assert n_acc >= 16

    def mean_time(opts):
        q = vcgen.equivalence_query(p1, p2, spec, opts)
        txt = q.to_smt2(get_model=False)
        samples = []
        for _ in range(5):
            t0 = time.monotonic()
            v = solver_proc.check_smt2(txt, 600_000)
            samples.append(time.monotonic() - t0)
            assert v.kind == "unsat"
        samples.sort()
        return sum(samples[1:-1]) / (len(samples) - 2)

    on = mean_time(vcgen.OptFlags())
    off = mean_time(vcgen.OptFlags(mem_types=False, offsets=False))
    ratio = off / on
    _report("equivalence-optimization-ablation", ratio >= 10.0,
            f"on {on * 1000:.0f}ms, I+III off {off * 1000:.0f}ms, ratio {ratio:.1f}x")


# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_cache_hit_rate_over_seeded_run():
    """>= 80% verification-cache hit rate over a 100k-iteration seeded run."""
    p, spec, _ = _load_bench("01_coalesce_stores")
    cfg = search.ChainConfig(seed=23, budget_iters=100_000, name="cache-run")
    records, stats = search.run_chain(cfg, p)
    lookups, hits = stats["cache_lookups"], stats["cache_hits"]
    rate = hits / lookups if lookups else 0.0
    _report("cache-efficacy", lookups > 0 and rate >= 0.80,
            f"{hits}/{lookups} hits = {100 * rate:.1f}% over "
            f"{stats['iterations']} iterations")


# ---------------------------------------------------------------------------

def test_safety_suite(solver_proc):
    """20 crafted unsafe programs all UNSAFE with the right violation kind;
    query counterexamples replay as the matching fault; 20 safe twins all
    SAFE.  Zero false verdicts."""
    cases = all_cases()
    assert len(cases) == 20
    wrong = []
    replays = 0
    for name, bad, good, kind, replayable in cases:
        rep_bad = safety(bad, solver_proc)
        if rep_bad.verdict != UNSAFE or kind not in {v.kind for v in rep_bad.violations}:
            wrong.append(f"{name}: unsafe program misjudged")
            continue
        if replayable:
            states = [v.counterexample for v in rep_bad.violations
                      if v.kind == kind and v.counterexample is not None]
            if not states:
                wrong.append(f"{name}: no counterexample")
                continue
            out = execute(bad, states[0])
            if not (isinstance(out, RuntimeFault) and out.kind == kind):
                wrong.append(f"{name}: replay gave {out}")
                continue
            replays += 1
        rep_good = safety(good, solver_proc)
        if rep_good.verdict != SAFE:
            wrong.append(f"{name}: safe twin flagged "
                         f"{[str(v) for v in rep_good.violations]}")
    _report("safety-suite", not wrong,
            f"20 unsafe + 20 twins, {replays} counterexample replays"
            + ("" if not wrong else "; " + "; ".join(wrong)))


# ---------------------------------------------------------------------------

def test_window_verification(solver_proc):
    """Conditional window equivalences hold exactly under their inferred
    preconditions: multiply-by-known-constant vs shift, and the masked-shift
    pair that only holds under its mask value."""
    sc = isa.ProgramSpec(prog_type="tracing", packet_size=0,
                         input_registers=((2, "scalar"), (3, "scalar")))
    outer = analysis.Analysis(isa.parse_asm("bpf_mov64 r0 0\nbpf_exit", sc))

    def v(asm_a, asm_b, pre, live_out):
        wa = isa.parse_asm(asm_a, sc).insns
        wb = isa.parse_asm(asm_b, sc).insns
        ws = analysis.WindowSpec(block=0, start=0, end=max(len(wa), len(wb)),
                                 live_in=(("r", 2), ("r", 3), ("r", 4)),
                                 live_out=live_out, concrete_pre=pre)
        q = vcgen.window_query(wa, wb, ws, outer, sc)
        return solver.check(solver_proc, q, 60000).kind

    pre_r3 = lambda val: ((3, ((terms.TRUE, val),)),)
    checks = [
        ("mul-by-4 vs lsh-2 under r3==4",
         v("bpf_mul64 r4 r3", "bpf_lsh64 r4 2", pre_r3(4), (("r", 4),)), "unsat"),
        ("mul-by-r3 vs lsh-2 without precondition",
         v("bpf_mul64 r4 r3", "bpf_lsh64 r4 2", (), (("r", 4),)), "sat"),
        ("mul-by-2 vs lsh-1 under r3==2",
         v("bpf_mul64 r4 r3", "bpf_lsh64 r4 1", pre_r3(2), (("r", 4),)), "unsat"),
        ("masked shift under r3==0xffe00000",
         v("bpf_mov64 r0 r2\nbpf_and64 r0 r3\nbpf_rsh64 r0 21",
           "bpf_mov32 r0 r2\nbpf_arsh64 r0 21\nnop",
           pre_r3(0x00000000FFE00000), (("r", 0),)), "unsat"),
        ("masked shift without precondition",
         v("bpf_mov64 r0 r2\nbpf_and64 r0 r3\nbpf_rsh64 r0 21",
           "bpf_mov32 r0 r2\nbpf_arsh64 r0 21\nnop",
           (), (("r", 0),)), "sat"),
    ]
    bad = [f"{name}: got {got}, want {want}" for name, got, want in checks
           if got != want]
    _report("window-verification", not bad,
            "; ".join(f"{n}={g}" for n, g, _ in checks)
            + ("" if not bad else " | " + "; ".join(bad)))


# ---------------------------------------------------------------------------

def test_mh_acceptance_statistics():
    """For a fixed cost gap and symmetric transitions, the empirical
    acceptance rate over 10k trials is within 3 sigma of exp(-mh_beta*delta)."""
    rng = random.Random(0xBEEF)
    mh_beta = 1.0
    results = []
    ok = True
    for delta in (0.5, 1.0, 2.0):
        expect = math.exp(-mh_beta * delta)
        n = 10_000
        acc = sum(search.mh_accept(0.0, delta, 1.0, mh_beta, rng)
                  for _ in range(n)) / n
        sigma = math.sqrt(expect * (1 - expect) / n)
        ok = ok and abs(acc - expect) <= 3 * sigma
        results.append(f"delta={delta}: {acc:.4f} vs {expect:.4f} (3s={3 * sigma:.4f})")
    _report("mh-acceptance-statistics", ok, "; ".join(results))


# ---------------------------------------------------------------------------

def test_cegis_counterexamples_prune_without_solver():
    """A candidate the solver refuted must afterwards fail the extended test
    suite without a second solver call."""
    from bpfopt.search import ChainConfig, ChainState, cegis_step
    from bpfopt.solver import SolverProcess, VerificationCache

    p_src = isa.parse_asm("bpf_mov64 r0 7\nbpf_exit")
    cand = isa.parse_asm("""
    bpf_load_8 r2 r1 0
    bpf_jeq r2 0xAB hit
    bpf_mov64 r0 7
    bpf_exit
    hit: bpf_mov64 r0 8
    bpf_exit
    """)
    cfg = ChainConfig(seed=5, budget_iters=0, num_tests=12)
    state = ChainState(p_src=p_src, cfg=cfg, suite=gen_tests(p_src, 12, 5),
                       solver=SolverProcess(), cache=VerificationCache())
    assert run_suite(cand, state.suite) == "pass"
    res1 = cegis_step(state, cand)
    first_calls = state.stats["solver_calls"]
    grew = len(state.suite) == 13 and state.suite[-1].from_counterexample
    res2 = cegis_step(state, cand)
    state.solver.close()
    ok = (first_calls == 1 and grew and res2.err > 0
          and state.stats["solver_calls"] == 1
          and run_suite(cand, state.suite) != "pass")
    _report("cegis-counterexample-pruning", ok,
            f"solver calls {state.stats['solver_calls']}, suite 12->"
            f"{len(state.suite)}, re-eval err {res2.err}")
