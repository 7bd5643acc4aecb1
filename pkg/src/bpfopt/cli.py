"""Command-line driver: compile, verify, interpret, analyze, bench.

Exit codes: 0 success; 1 search produced nothing better (report still
written); 2 input error; 3 environment error (e.g. no solver).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import subprocess
import sys
import time
from pathlib import Path

import yaml

from . import analysis, config, isa, search, vcgen
from .interpreter import MachineState, RuntimeFault, execute
from .safety import safety
from .solver import SAT, UNSAT, SolverProcess, SolverUnavailable, VerificationCache, check
from .terms import to_smt2


def _env(name, default=None):
    return os.environ.get(f"BPFOPT_{name}", default)


def _load_program(path, spec):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    if p.suffix in (".bin", ".o"):
        return isa.decode(p.read_bytes(), spec)
    return isa.parse_asm(p.read_text(), spec)


def _load_spec(path):
    if path is None:
        return isa.ProgramSpec()
    return isa.load_spec(path)


def _solver_args(parser):
    parser.add_argument("--solver", default=_env("SOLVER"),
                        help="external SMT-LIB2 solver command (default: bundled z3 backend)")
    parser.add_argument("--solver-timeout", type=int,
                        default=int(_env("SOLVER_TIMEOUT_MS", 10000)),
                        metavar="MS", help="per-query timeout in milliseconds")


def _make_solver(args):
    import shlex

    cmd = shlex.split(args.solver) if args.solver else None
    try:
        return SolverProcess(cmd=cmd, timeout_ms=args.solver_timeout)
    except SolverUnavailable as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(3)


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------

def cmd_compile(args):
    try:
        spec = _load_spec(args.spec)
        p_src = _load_program(args.input, spec)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    p_src = analysis.reorder_forward(p_src)

    proc = _make_solver(args)
    rep = safety(p_src, proc)
    if not rep.safe:
        print("error: source program fails safety checks:", file=sys.stderr)
        for v in rep.violations:
            print(f"  {v}", file=sys.stderr)
        proc.close()
        return 2
    proc.close()

    lat_table = None
    if args.goal == "lat" or args.lat_table:
        lat_table = search.LatencyTable.load(
            args.lat_table or config.default_latency_table_path())

    cfgs = config.default_chain_configs(
        seed=args.seed, budget_iters=args.budget_iters, budget_secs=args.budget_secs,
        perf_goal=args.goal, window_mode=args.window, params_path=args.params,
        solver_timeout_ms=args.solver_timeout)
    if args.chains:
        import dataclasses

        base = list(cfgs)
        cfgs = [dataclasses.replace(base[i % len(base)], seed=args.seed + i,
                                    name=f"{base[i % len(base)].name}#{i}")
                for i in range(args.chains)]

    top_k = args.top_k if args.top_k else (1 if args.goal == "inst" else 5)
    t0 = time.monotonic()
    records, stats = search.run_parallel(cfgs, p_src, top_k=top_k,
                                         lat_table=lat_table,
                                         progress=args.progress)
    wall = time.monotonic() - t0

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    emitted = []
    for i, rec in enumerate(records):
        if args.post_filter:
            asm_tmp = outdir / f".candidate{i}.asm"
            asm_tmp.write_text(isa.print_asm(rec.program))
            r = subprocess.run(args.post_filter.split() + [str(asm_tmp)],
                               capture_output=True)
            asm_tmp.unlink()
            if r.returncode != 0:
                continue
        emitted.append(rec)

    lat = lat_table or search.LatencyTable.load(config.default_latency_table_path())
    rows = []
    for i, rec in enumerate(emitted):
        stem = outdir / f"out{i}"
        if args.emit in ("asm", "both"):
            (stem.with_suffix(".asm")).write_text(isa.print_asm(rec.program))
        if args.emit in ("bin", "both"):
            (stem.with_suffix(".bin")).write_bytes(isa.encode(rec.program))
        rows.append({
            "program": stem.name,
            "insns_before": p_src.real_len(),
            "insns_after": rec.program.real_len(),
            "est_lat_before_ns": round(sum(lat.cost(x) for x in p_src.insns), 1),
            "est_lat_after_ns": round(sum(lat.cost(x) for x in rec.program.insns), 1),
            "chain": rec.chain,
            "iteration_found": rec.iteration,
            "wall_time_s": round(rec.wall_time, 2),
        })

    report = {"outputs": rows, "totals": {
        "wall_time_s": round(wall, 2),
        "solver_calls": sum(s["solver_calls"] for _, s in stats),
        "cache_hits": sum(s["cache_hits"] for _, s in stats),
        "cache_lookups": sum(s["cache_lookups"] for _, s in stats),
        "iterations": sum(s["iterations"] for _, s in stats),
    }}
    (outdir / "report.yaml").write_text(yaml.safe_dump(report, sort_keys=False))
    w = io.StringIO()
    cw = csv.DictWriter(w, fieldnames=list(rows[0]) if rows else ["program"])
    cw.writeheader()
    cw.writerows(rows)
    (outdir / "report.csv").write_text(w.getvalue())

    for row in rows:
        print(f"{row['program']}: {row['insns_before']} -> {row['insns_after']} insns, "
              f"est. latency {row['est_lat_before_ns']} -> {row['est_lat_after_ns']} ns "
              f"(chain {row['chain']}, iter {row['iteration_found']})")
    print(f"total: {report['totals']['iterations']} iterations, "
          f"{report['totals']['solver_calls']} solver calls, {wall:.1f}s")
    improved = any(r["insns_after"] < r["insns_before"] or
                   r["est_lat_after_ns"] < r["est_lat_before_ns"] for r in rows)
    return 0 if improved else 1


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args):
    try:
        spec = _load_spec(args.spec)
        pa = analysis.reorder_forward(_load_program(args.prog_a, spec))
        if args.safety:
            proc = _make_solver(args)
            rep = safety(pa, proc)
            proc.close()
            print(f"verdict: {rep.verdict}")
            for v in rep.violations:
                print(f"  {v}")
            for i, st in enumerate(rep.counterexamples):
                out = Path(args.cex_out or f"safety_cex{i}.yaml")
                out.write_text(yaml.safe_dump(st.to_dict()))
                print(f"  counterexample written to {out}")
            return 0
        pb = analysis.reorder_forward(_load_program(args.prog_b, spec))
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    proc = _make_solver(args)
    try:
        if args.window:
            verdict = _window_verify(pa, pb, spec, proc)
        else:
            q = vcgen.equivalence_query(pa, pb, spec)
            verdict = check(proc, q, args.solver_timeout)
            if verdict.kind == SAT:
                from .solver import extract_input_state

                state = extract_input_state(verdict.model, q.meta)
                out = Path(args.cex_out or "counterexample.yaml")
                out.write_text(yaml.safe_dump(state.to_dict()))
                print(f"NOT_EQUIVALENT (counterexample written to {out})")
                return 0
    except vcgen.EncodingRefused as e:
        print(f"UNKNOWN (encoding refused: {e})")
        return 0
    finally:
        proc.close()
    if args.window:
        print(verdict)
        return 0
    if verdict.kind == UNSAT:
        print("EQUIVALENT")
    else:
        print(f"UNKNOWN ({verdict.reason})")
    return 0


def _window_verify(pa, pb, spec, proc):
    """Window-by-window comparison; both programs must share block shape."""
    if len(pa.insns) != len(pb.insns):
        return "UNKNOWN (window mode needs equal-length programs)"
    an = analysis.Analysis(pa)
    for ws in analysis.select_windows(pa, analysis=an):
        if ws.has_call:
            if pa.insns[ws.start:ws.end] != pb.insns[ws.start:ws.end]:
                return "UNKNOWN (differing non-verifiable window)"
            continue
        q = vcgen.window_query(pa.insns[ws.start:ws.end], pb.insns[ws.start:ws.end],
                               ws, an, spec)
        v = check(proc, q)
        if v.kind == SAT:
            return f"NOT_EQUIVALENT (window at {ws.start}..{ws.end})"
        if v.kind != UNSAT:
            return f"UNKNOWN ({v.reason})"
    return "EQUIVALENT"


# ---------------------------------------------------------------------------
# interpret / analyze
# ---------------------------------------------------------------------------

def cmd_interpret(args):
    try:
        spec = _load_spec(args.spec)
        p = _load_program(args.input, spec)
        if args.state:
            state = MachineState.from_dict(yaml.safe_load(Path(args.state).read_text()) or {})
        else:
            state = MachineState()
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = execute(p, state, fuel=args.fuel)
    if isinstance(out, RuntimeFault):
        print(f"fault: {out}")
        return 0
    print(f"r0: {out.r0:#x}")
    for i, v in enumerate(out.regs):
        print(f"r{i}: {v:#x}")
    print(f"packet: {out.packet.hex()}")
    for mid, entries in out.maps:
        print(f"map {mid}:")
        for k, v in entries:
            print(f"  {k.hex()} -> {v.hex()}")
    return 0


def cmd_analyze(args):
    try:
        spec = _load_spec(args.spec)
        p = analysis.reorder_forward(_load_program(args.input, spec))
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    an = analysis.Analysis(p)
    cfg = an.cfg
    print("digraph cfg {")
    for b, (s, e) in enumerate(cfg.blocks):
        label = "\\l".join(f"{i}: {isa.print_insn(p.insns[i])}" for i in range(s, e))
        print(f'  b{b} [shape=box,label="{label}\\l"];')
    for f, t, taken in cfg.edges:
        style = "solid" if taken else "dashed"
        print(f"  b{f} -> b{t} [style={style}];")
    print("}")
    print("\n-- ssa --")
    for si in an.ssa.insns:
        pc = to_smt2(si.pc)
        defs = ", ".join(f"{k}={v}" for k, v in si.defs.items())
        uses = ", ".join(f"{k}={v}" for k, v in si.uses.items())
        print(f"{si.idx:3d} [{isa.print_insn(si.insn)}] pc={pc} uses({uses}) defs({defs})")
    print("\n-- pointer types and offsets --")
    for var in sorted(an.ptr.types):
        t = an.ptr.types[var]
        if t != ("scalar",):
            print(f"{var}: {t}")
    print("\n-- inferred constant values --")
    for var in sorted(an.consts):
        cs = an.consts[var]
        if cs:
            vals = ", ".join(f"{v:#x}" for _, v in cs)
            print(f"{var}: {{{vals}}}")
    print("\n-- windows --")
    for ws in analysis.select_windows(p, analysis=an):
        print(f"block {ws.block} [{ws.start}, {ws.end}) live_in={list(ws.live_in)} "
              f"live_out={list(ws.live_out)} pre={[(r, [v for _, v in cs]) for r, cs in ws.concrete_pre]}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args):
    corpus = Path(args.corpus)
    rows = []
    failures = []
    benches = sorted(d for d in corpus.iterdir() if (d / "prog.asm").exists()) \
        if corpus.exists() else []
    for d in benches:
        try:
            rows.append(_bench_one(d, args))
        except Exception as e:
            failures.append((d.name, str(e)))
    if rows:
        fieldnames = list(rows[0])
        w = io.StringIO()
        cw = csv.DictWriter(w, fieldnames=fieldnames)
        cw.writeheader()
        cw.writerows(rows)
        text = w.getvalue()
        if args.csv:
            Path(args.csv).write_text(text)
        print(text)
    else:
        print("benchmark,empty")
    for name, err in failures:
        print(f"FAILED {name}: {err}", file=sys.stderr)
    if args.regress:
        bad = [r for r in rows if r.get("regress") == "fail"]
        if bad or failures:
            return 1
    return 0


def _bench_one(d: Path, args):
    spec = _load_spec(d / "spec.yaml" if (d / "spec.yaml").exists() else None)
    meta = {}
    if (d / "meta.yaml").exists():
        meta = yaml.safe_load((d / "meta.yaml").read_text()) or {}
    p_src = analysis.reorder_forward(_load_program(d / "prog.asm", spec))
    cfgs = config.default_chain_configs(
        seed=args.seed, budget_iters=args.budget_iters,
        solver_timeout_ms=args.solver_timeout)
    if args.chains:
        cfgs = cfgs[:args.chains]
    records, stats = search.run_parallel(cfgs, p_src, top_k=1)
    best = records[0] if records else None
    before = p_src.real_len()
    after = best.program.real_len() if best else before
    lookups = sum(s["cache_lookups"] for _, s in stats)
    hits = sum(s["cache_hits"] for _, s in stats)
    row = {
        "benchmark": d.name,
        "insns_before": before,
        "insns_after": after,
        "compression_pct": round(100.0 * (before - after) / before, 2),
        "time_to_best_s": round(best.wall_time, 2) if best else "",
        "iters_to_best": best.iteration if best else "",
        "solver_calls": sum(s["solver_calls"] for _, s in stats),
        "cache_hit_rate": round(hits / lookups, 3) if lookups else "",
    }
    if args.regress and "expected_after" in meta:
        row["expected_after"] = meta["expected_after"]
        row["regress"] = "ok" if after <= meta["expected_after"] else "fail"
    if args.ablation:
        row.update(_ablation_timings(d, p_src, spec, args))
    return row


def _ablation_timings(d, p_src, spec, args, reps=3):
    """Mean equivalence-query wall time with concretizations toggled."""
    variant_path = d / "variant.asm"
    p2 = _load_program(variant_path, spec) if variant_path.exists() else p_src
    out = {}
    combos = [("all_on", vcgen.OptFlags()),
              ("no_I", vcgen.OptFlags(mem_types=False)),
              ("no_II", vcgen.OptFlags(map_ids=False)),
              ("no_III", vcgen.OptFlags(offsets=False)),
              ("no_I_III", vcgen.OptFlags(mem_types=False, offsets=False))]
    proc = _make_solver(args)
    proc.check_smt2("(set-logic QF_UFBV)(declare-fun w () (_ BitVec 8))"
                    "(assert (= w #x01))(check-sat)", args.solver_timeout)
    for name, opts in combos:
        q = vcgen.equivalence_query(p_src, p2, spec, opts)
        txt = q.to_smt2(get_model=False)
        samples = []
        for _ in range(reps):
            t0 = time.monotonic()
            v = proc.check_smt2(txt, args.solver_timeout)
            samples.append(time.monotonic() - t0)
        out[f"eqtime_{name}_ms"] = round(1000 * min(samples), 1)
        out[f"verdict_{name}"] = v.kind
    # IV: modular (window) checking instead of one whole-program query
    if len(p_src.insns) == len(p2.insns):
        an = analysis.Analysis(p_src)
        windows = [w for w in analysis.select_windows(p_src, analysis=an)
                   if not w.has_call]
        samples = []
        for _ in range(reps):
            t0 = time.monotonic()
            ok = True
            for ws in windows:
                q = vcgen.window_query(p_src.insns[ws.start:ws.end],
                                       p2.insns[ws.start:ws.end], ws, an, spec)
                ok = ok and proc.check_smt2(q.to_smt2(get_model=False),
                                            args.solver_timeout).kind == "unsat"
            samples.append(time.monotonic() - t0)
        out["eqtime_IV_window_ms"] = round(1000 * min(samples), 1)
        out["verdict_IV_window"] = "unsat" if ok else "other"
    proc.close()
    return out


# ---------------------------------------------------------------------------

def main(argv=None):
    ap = argparse.ArgumentParser(prog="bpfopt",
                                 description="BPF-subset superoptimizing compiler")
    sub = ap.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("compile", help="search for smaller/faster equivalents")
    c.add_argument("input")
    c.add_argument("--spec", default=_env("SPEC"))
    c.add_argument("-o", "--out", default="bpfopt_out")
    c.add_argument("--goal", choices=("inst", "lat"), default="inst")
    c.add_argument("--chains", type=int, default=0,
                   help="number of chains (default: one per shipped parameter set)")
    c.add_argument("--params", default=None, help="parameter-set YAML file")
    c.add_argument("--budget-iters", type=int, default=int(_env("BUDGET_ITERS", 200000)))
    c.add_argument("--budget-secs", type=float, default=None)
    c.add_argument("--seed", type=int, default=int(_env("SEED", 1)))
    c.add_argument("--top-k", type=int, default=0)
    c.add_argument("--window", action="store_true")
    c.add_argument("--post-filter", default=_env("POST_FILTER"),
                   help="external command; emitted programs it rejects are dropped")
    c.add_argument("--emit", choices=("asm", "bin", "both"), default="both")
    c.add_argument("--lat-table", default=None)
    c.add_argument("--progress", type=int, default=0)
    _solver_args(c)
    c.set_defaults(fn=cmd_compile)

    v = sub.add_parser("verify", help="prove equivalence or safety")
    v.add_argument("prog_a")
    v.add_argument("prog_b", nargs="?")
    v.add_argument("--spec", default=_env("SPEC"))
    v.add_argument("--window", action="store_true")
    v.add_argument("--safety", action="store_true", help="run the safety checks on one program")
    v.add_argument("--cex-out", default=None)
    _solver_args(v)
    v.set_defaults(fn=cmd_verify)

    i = sub.add_parser("interpret", help="execute a program on a state file")
    i.add_argument("input")
    i.add_argument("--spec", default=_env("SPEC"))
    i.add_argument("--state", default=None)
    i.add_argument("--fuel", type=int, default=None)
    i.set_defaults(fn=cmd_interpret)

    a = sub.add_parser("analyze", help="dump CFG, SSA, inferred types/offsets")
    a.add_argument("input")
    a.add_argument("--spec", default=_env("SPEC"))
    a.set_defaults(fn=cmd_analyze)

    b = sub.add_parser("bench", help="run the benchmark corpus")
    b.add_argument("corpus")
    b.add_argument("--regress", action="store_true")
    b.add_argument("--ablation", action="store_true")
    b.add_argument("--chains", type=int, default=0)
    b.add_argument("--budget-iters", type=int, default=50000)
    b.add_argument("--seed", type=int, default=int(_env("SEED", 1)))
    b.add_argument("--csv", default=None)
    _solver_args(b)
    b.set_defaults(fn=cmd_bench)

    args = ap.parse_args(argv)
    if args.cmd == "verify" and not args.safety and not args.prog_b:
        ap.error("verify needs two programs (or --safety with one)")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
