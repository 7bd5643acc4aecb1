"""External SMT solver management: child processes speaking SMT-LIB2 over
stdin/stdout, verdict/model parsing, counterexample reconstruction, and the
canonicalized-program verification cache.

The default backend is a bundled Node shim around the z3 WASM build (see
z3backend/); any binary that reads SMT-LIB2 on stdin and answers check-sat /
get-model works via ``BPFOPT_SOLVER`` or the --solver flag.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis, isa, terms
from .interpreter import MachineState, RuntimeFault, TestCase, execute

UNSAT = "unsat"
SAT = "sat"
UNKNOWN = "unknown"

DEFAULT_TIMEOUT_MS = 10_000
RESPAWN_EVERY = 1000


class SolverUnavailable(Exception):
    pass


@dataclass
class SolverVerdict:
    kind: str                  # unsat | sat | unknown
    model: dict = field(default_factory=dict)
    reason: str = ""           # for unknown: timeout | error


def backend_dir() -> Path:
    override = os.environ.get("BPFOPT_Z3_DIR")
    if override:
        return Path(override)
    return Path(__file__).parent / "z3backend"


def ensure_backend(install: bool = True) -> list:
    """Command line for the default solver child process, installing the
    node backend on first use."""
    env_cmd = os.environ.get("BPFOPT_SOLVER")
    if env_cmd:
        return shlex.split(env_cmd)
    node = shutil.which("node")
    if node is None:
        raise SolverUnavailable("node is required for the bundled z3 backend")
    d = backend_dir()
    shell = d / "z3shell.cjs"
    if not (d / "node_modules" / "z3-solver").exists():
        if not install:
            raise SolverUnavailable(f"z3 backend not installed under {d}")
        if not os.access(d, os.W_OK):
            cache = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "bpfopt" / "z3backend"
            cache.mkdir(parents=True, exist_ok=True)
            for f in ("package.json", "z3shell.cjs"):
                shutil.copy(d / f, cache / f)
            d = cache
            shell = d / "z3shell.cjs"
        if not (d / "node_modules" / "z3-solver").exists():
            proc = subprocess.run(["npm", "install", "--no-audit", "--no-fund"],
                                  cwd=d, capture_output=True, text=True, timeout=600)
            if proc.returncode != 0:
                raise SolverUnavailable(f"npm install failed: {proc.stderr[-500:]}")
    return [node, str(shell)]


class SolverProcess:
    """One child solver process; restarted after a fixed number of queries
    and on any timeout or crash."""

    def __init__(self, cmd=None, timeout_ms=DEFAULT_TIMEOUT_MS,
                 respawn_every=RESPAWN_EVERY):
        self.cmd = cmd or ensure_backend()
        self.timeout_ms = timeout_ms
        self.respawn_every = respawn_every
        self.proc = None
        self.queries = 0
        self.ever_up = False
        self.stats = {"queries": 0, "sat": 0, "unsat": 0, "unknown": 0,
                      "solve_time": 0.0}

    def _spawn(self):
        self.close()
        self.proc = subprocess.Popen(
            self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self.queries = 0
        line = self._read_line(30.0)
        if line is None:
            raise SolverUnavailable(f"solver {self.cmd} did not come up")
        if line.strip() != ";;READY":
            # plain SMT-LIB2 REPLs (e.g. `z3 -in`) print nothing on startup;
            # push the line back by treating it as part of the first response
            self._pushback = line
        else:
            self._pushback = None

    def _read_line(self, timeout_s):
        result = []

        def read():
            try:
                result.append(self.proc.stdout.readline())
            except Exception:
                result.append(None)

        t = threading.Thread(target=read, daemon=True)
        t.start()
        t.join(timeout_s)
        if not result or result[0] in (None, ""):
            return None
        return result[0]

    def close(self):
        if self.proc is not None:
            try:
                self.proc.kill()
            except Exception:
                pass
            self.proc = None

    def check_smt2(self, text: str, timeout_ms=None) -> SolverVerdict:
        """Send one full SMT-LIB2 script; returns the parsed verdict."""
        timeout_ms = timeout_ms or self.timeout_ms
        if self.proc is None or self.proc.poll() is not None or \
                self.queries >= self.respawn_every:
            try:
                self._spawn()
                self.ever_up = True
            except SolverUnavailable:
                if not self.ever_up:
                    raise  # the configured solver never worked: environment error
                return SolverVerdict(UNKNOWN, reason="error: solver did not respawn")
            except Exception as e:
                return SolverVerdict(UNKNOWN, reason=f"error: {e}")
        self.queries += 1
        self.stats["queries"] += 1
        t0 = time.monotonic()
        deadline = t0 + timeout_ms / 1000.0
        try:
            self.proc.stdin.write(text)
            if not text.endswith("\n"):
                self.proc.stdin.write("\n")
            self.proc.stdin.write(";;EOQ\n")
            self.proc.stdin.flush()
        except Exception:
            self.close()
            return SolverVerdict(UNKNOWN, reason="error: solver pipe broke")
        lines = []
        if getattr(self, "_pushback", None):
            lines.append(self._pushback)
            self._pushback = None
        while True:
            remain = deadline - time.monotonic()
            if remain <= 0:
                self.close()
                self.stats["unknown"] += 1
                self.stats["solve_time"] += time.monotonic() - t0
                return SolverVerdict(UNKNOWN, reason="timeout")
            line = self._read_line(remain)
            if line is None:
                self.close()
                self.stats["unknown"] += 1
                self.stats["solve_time"] += time.monotonic() - t0
                return SolverVerdict(UNKNOWN, reason="timeout")
            if line.strip() == ";;EOR":
                break
            lines.append(line)
        self.stats["solve_time"] += time.monotonic() - t0
        return self._parse(lines)

    def _parse(self, lines) -> SolverVerdict:
        verdict = None
        rest = []
        for ln in lines:
            s = ln.strip()
            if verdict is None and s in (SAT, UNSAT, UNKNOWN):
                verdict = s
                continue
            rest.append(ln)
        if verdict is None:
            self.stats["unknown"] += 1
            return SolverVerdict(UNKNOWN, reason="error: " + " ".join(rest)[:200])
        self.stats[verdict] += 1
        if verdict != SAT:
            return SolverVerdict(verdict)
        model = parse_model("".join(rest))
        return SolverVerdict(SAT, model=model)


def check(proc: SolverProcess, query, timeout_ms=None) -> SolverVerdict:
    """Discharge an EquivQuery (or raw assertion list) to the child solver."""
    assertions = query.assertions if hasattr(query, "assertions") else query
    text = terms.smt2_script(assertions, get_model=True)
    return proc.check_smt2(text, timeout_ms)


# ---------------------------------------------------------------------------
# Model parsing: (get-model) S-expressions
# ---------------------------------------------------------------------------

def _tokenize(s):
    out = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c in "()":
            out.append(c)
            i += 1
        elif c.isspace():
            i += 1
        elif c == ";":
            while i < n and s[i] != "\n":
                i += 1
        elif c == '"':
            j = i + 1
            while j < n and s[j] != '"':
                j += 1
            out.append(s[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not s[j].isspace() and s[j] not in "()":
                j += 1
            out.append(s[i:j])
            i = j
    return out


def _read_sexprs(tokens):
    exprs = []
    stack = []
    for t in tokens:
        if t == "(":
            stack.append([])
        elif t == ")":
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            else:
                exprs.append(done)
        else:
            if stack:
                stack[-1].append(t)
            else:
                exprs.append(t)
    return exprs


def _bv_value(v):
    if isinstance(v, str):
        if v.startswith("#x"):
            return int(v[2:], 16)
        if v.startswith("#b"):
            return int(v[2:], 2)
        if v == "true":
            return 1
        if v == "false":
            return 0
        if v.isdigit():
            return int(v)
    elif isinstance(v, list):
        if len(v) == 3 and v[0] == "_" and v[1].startswith("bv"):
            return int(v[1][2:])
        if len(v) == 2 and v[0] == "-":
            inner = _bv_value(v[1])
            return -inner if inner is not None else None
    return None


def parse_model(text: str) -> dict:
    """Zero-arity define-funs from a (get-model) answer; UF interpretations
    are ignored (every value the compiler needs is bound to a constant)."""
    model = {}
    for expr in _read_sexprs(_tokenize(text)):
        if not isinstance(expr, list):
            continue
        items = expr if expr and isinstance(expr[0], list) else [expr]
        for it in items:
            if (isinstance(it, list) and len(it) >= 5 and it[0] == "define-fun"
                    and isinstance(it[1], str) and it[2] == []):
                val = _bv_value(it[4])
                if val is not None:
                    model[it[1]] = val
    return model


# ---------------------------------------------------------------------------
# Counterexamples
# ---------------------------------------------------------------------------

def extract_input_state(model: dict, meta: dict):
    """Rebuild the program input a SAT model describes.  Variables the solver
    left out of the model (don't-cares) are filled with 0 and reported."""
    spec = meta["spec"]
    missing = []

    def get(name):
        if name in model:
            return model[name]
        missing.append(name)
        return 0

    regs = [0] * 11
    for r, var in meta.get("scalar_inputs", ()):
        regs[r] = get(var) & isa.MASK64
    packet = bytes(get(v) & 0xFF for _, v in meta.get("pkt_bytes", ()))
    ctx = bytes(get(v) & 0xFF for _, v in meta.get("ctx_bytes", ()))
    maps = {}
    for map_id, entries in meta.get("map_keys", {}).items():
        m = spec.map_by_id(map_id)
        table = {}
        for keyvar, v0var, bytevars in entries:
            if get(v0var) == 0:
                continue
            key = (get(keyvar) & ((1 << (8 * m.key_size)) - 1)).to_bytes(m.key_size, "little")
            table[key] = bytes(get(bv) & 0xFF for bv in bytevars)
        maps[map_id] = table
    oracle = {h: tuple(get(v) for v in names)
              for h, names in meta.get("oracle", {}).items()}
    state = MachineState(regs=tuple(regs), packet=packet, ctx=ctx,
                         maps=maps, helper_oracle=oracle)
    state._missing_model_vars = missing
    return state


def extract_counterexample(model: dict, meta: dict, p_src: isa.Program):
    """Counterexample TestCase: model input paired with the source program's
    output on it.  Returns (None, missing) when the source faults there."""
    state = extract_input_state(model, meta)
    missing = state._missing_model_vars
    out = execute(p_src, state)
    if isinstance(out, RuntimeFault):
        return None, missing
    return TestCase(state, out, from_counterexample=True), missing


# ---------------------------------------------------------------------------
# Verification cache over canonicalized programs
# ---------------------------------------------------------------------------

class VerificationCache:
    """Equivalence verdicts keyed by the dead-code-eliminated program hash."""

    def __init__(self):
        self.table = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def key(self, p: isa.Program) -> bytes:
        return analysis.canonical_key(p)

    def lookup(self, p: isa.Program):
        k = self.key(p)
        with self._lock:
            got = self.table.get(k)
            if got is None:
                self.misses += 1
            else:
                self.hits += 1
            return got

    def insert(self, p: isa.Program, verdict_kind: str, counterexample=None):
        with self._lock:
            self.table[self.key(p)] = (verdict_kind, counterexample)

    @property
    def hit_rate(self):
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
