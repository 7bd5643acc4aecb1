"""Bit-vector first-order terms and their SMT-LIB2 serialization.

Terms are immutable tuples: ('c', w, value) constants, ('v', w, name)
variables, ('uf', w, fname, argwidths, *args) uninterpreted applications, and
(op, w, *args) for everything else.  Width 0 means Bool.  Smart constructors
fold constants with the same arithmetic the interpreter uses, so clauses whose
operands concretize (e.g. compile-time-known offsets) vanish before any solver
sees them.
"""

from __future__ import annotations

from . import bitops

BOOL = 0

TRUE = ("c", BOOL, 1)
FALSE = ("c", BOOL, 0)


def const(width, value):
    return ("c", width, value & ((1 << width) - 1))


def boolconst(v):
    return TRUE if v else FALSE


def var(width, name):
    return ("v", width, name)


def boolvar(name):
    return ("v", BOOL, name)


def width_of(t):
    return t[1]


def is_const(t):
    return t[0] == "c"


def const_value(t):
    return t[2]


def _all_const(*ts):
    return all(t[0] == "c" for t in ts)


def _bin(op, w, a, b, fold):
    if _all_const(a, b):
        return const(w, fold(a[2], b[2]))
    return (op, w, a, b)


def add(a, b):
    w = a[1]
    if _all_const(a, b):
        return const(w, a[2] + b[2])
    if is_const(b) and b[2] == 0:
        return a
    if is_const(a) and a[2] == 0:
        return b
    return ("bvadd", w, a, b)


def sub(a, b):
    w = a[1]
    if _all_const(a, b):
        return const(w, a[2] - b[2])
    if is_const(b) and b[2] == 0:
        return a
    return ("bvsub", w, a, b)


def mul(a, b):
    w = a[1]
    if _all_const(a, b):
        return const(w, a[2] * b[2])
    for x, y in ((a, b), (b, a)):
        if is_const(x):
            if x[2] == 0:
                return const(w, 0)
            if x[2] == 1:
                return y
    return ("bvmul", w, a, b)


def udiv(a, b):
    # Total division: x/0 == 0, matching the runtime. Encoded via ite below.
    w = a[1]
    if _all_const(a, b):
        return const(w, bitops.udiv(a[2], b[2], w))
    div = ("bvudiv", w, a, b)
    return ite(eq(b, const(w, 0)), const(w, 0), div)


def and_(a, b):
    w = a[1]
    return _bin("bvand", w, a, b, lambda x, y: x & y)


def or_(a, b):
    w = a[1]
    return _bin("bvor", w, a, b, lambda x, y: x | y)


def xor(a, b):
    w = a[1]
    return _bin("bvxor", w, a, b, lambda x, y: x ^ y)


def shl(a, b):
    w = a[1]
    return _bin("bvshl", w, a, b, lambda x, y: bitops.shl(x, y, w) if y < w else 0)


def lshr(a, b):
    w = a[1]
    return _bin("bvlshr", w, a, b, lambda x, y: x >> y if y < w else 0)


def ashr(a, b):
    w = a[1]

    def fold(x, y):
        sh = y if y < w else w - 1  # bvashr saturates at full sign fill
        return (_sv(x, w) >> sh) & ((1 << w) - 1)

    return _bin("bvashr", w, a, b, fold)


def neg(a):
    w = a[1]
    if is_const(a):
        return const(w, -a[2])
    return ("bvneg", w, a)


def extract(a, hi, lo):
    w = hi - lo + 1
    if is_const(a):
        return const(w, a[2] >> lo)
    if lo == 0 and hi == a[1] - 1:
        return a
    # extract of concat picks the matching side when the cut is clean
    if a[0] == "concat":
        hi_part, lo_part = a[2], a[3]
        lw = lo_part[1]
        if hi < lw:
            return extract(lo_part, hi, lo)
        if lo >= lw:
            return extract(hi_part, hi - lw, lo - lw)
    return ("ex", w, a, hi, lo)


def concat(hi, lo):
    w = hi[1] + lo[1]
    if _all_const(hi, lo):
        return const(w, (hi[2] << lo[1]) | lo[2])
    return ("concat", w, hi, lo)


def zext(a, width):
    if a[1] == width:
        return a
    return concat(const(width - a[1], 0), a)


def _base_disp(t):
    """View a term as base + constant displacement (for address folding)."""
    if t[0] == "c":
        return None, t[2]
    if t[0] == "bvadd" and t[3][0] == "c":
        return t[2], t[3][2]
    if t[0] == "bvadd" and t[2][0] == "c":
        return t[3], t[2][2]
    return t, 0


def eq(a, b):
    if a == b:
        return TRUE
    if _all_const(a, b):
        return boolconst(a[2] == b[2])
    if a[1] == b[1] and a[1] != BOOL:
        ba, da = _base_disp(a)
        bb, db = _base_disp(b)
        if ba is bb or ba == bb:
            return boolconst((da - db) % (1 << a[1]) == 0)
    return ("eq", BOOL, a, b)


def ne(a, b):
    return not_(eq(a, b))


def _cmp(op, a, b, fold):
    if _all_const(a, b):
        return boolconst(fold(a[2], b[2]))
    return (op, BOOL, a, b)


def ult(a, b):
    return _cmp("bvult", a, b, lambda x, y: x < y)


def ule(a, b):
    return _cmp("bvule", a, b, lambda x, y: x <= y)


def slt(a, b):
    w = a[1]
    return _cmp("bvslt", a, b, lambda x, y: _sv(x, w) < _sv(y, w))


def sle(a, b):
    w = a[1]
    return _cmp("bvsle", a, b, lambda x, y: _sv(x, w) <= _sv(y, w))


def not_(a):
    if a == TRUE:
        return FALSE
    if a == FALSE:
        return TRUE
    if a[0] == "not":
        return a[2]
    return ("not", BOOL, a)


def andb(*args):
    flat = []
    for a in args:
        if a == FALSE:
            return FALSE
        if a == TRUE:
            continue
        if a[0] == "and":
            flat.extend(a[2:])
        else:
            flat.append(a)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return ("and",) + (BOOL,) + tuple(flat)


def orb(*args):
    flat = []
    for a in args:
        if a == TRUE:
            return TRUE
        if a == FALSE:
            continue
        if a[0] == "or":
            flat.extend(a[2:])
        else:
            flat.append(a)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return ("or",) + (BOOL,) + tuple(flat)


def implies(a, b):
    if a == FALSE or b == TRUE:
        return TRUE
    if a == TRUE:
        return b
    if b == FALSE:
        return not_(a)
    return ("=>", BOOL, a, b)


def ite(c, a, b):
    if c == TRUE:
        return a
    if c == FALSE:
        return b
    if a == b:
        return a
    return ("ite", a[1], c, a, b)


def uf(fname, ret_width, args, arg_widths):
    return ("uf", ret_width, fname, tuple(arg_widths)) + tuple(args)


def children(t):
    op = t[0]
    if op in ("c", "v"):
        return ()
    if op == "ex":
        return (t[2],)
    if op == "uf":
        return t[4:]
    return t[2:]


# ---------------------------------------------------------------------------
# Concrete evaluation (the model-checking side of dual-route tests)
# ---------------------------------------------------------------------------

def eval_term(t, env, uf_env=None):
    """Evaluate under env: name -> int. UFs resolve via uf_env[(fname, argvals)]
    with a default of 0 for unconstrained points."""
    op = t[0]
    if op == "c":
        return t[2]
    if op == "v":
        return env[t[2]]
    if op == "ex":
        v = eval_term(t[2], env, uf_env)
        return (v >> t[4]) & ((1 << t[1]) - 1)
    if op == "uf":
        args = tuple(eval_term(a, env, uf_env) for a in t[4:])
        if uf_env is None:
            return 0
        return uf_env.setdefault((t[2], args), 0)
    a = [eval_term(c, env, uf_env) for c in children(t)]
    w = t[1]
    m = (1 << w) - 1 if w else 1
    if op == "bvadd":
        return (a[0] + a[1]) & m
    if op == "bvsub":
        return (a[0] - a[1]) & m
    if op == "bvmul":
        return (a[0] * a[1]) & m
    if op == "bvudiv":
        return m if a[1] == 0 else a[0] // a[1]  # SMT-LIB bvudiv semantics
    if op == "bvand":
        return a[0] & a[1]
    if op == "bvor":
        return a[0] | a[1]
    if op == "bvxor":
        return a[0] ^ a[1]
    if op == "bvshl":
        return (a[0] << a[1]) & m if a[1] < w else 0
    if op == "bvlshr":
        return a[0] >> a[1] if a[1] < w else 0
    if op == "bvashr":
        sh = a[1] if a[1] < w else w - 1
        return (_sv(a[0], w) >> sh) & m
    if op == "bvneg":
        return (-a[0]) & m
    if op == "concat":
        return (a[0] << children(t)[1][1]) | a[1]
    if op == "eq":
        return int(a[0] == a[1])
    if op == "bvult":
        return int(a[0] < a[1])
    if op == "bvule":
        return int(a[0] <= a[1])
    if op == "bvslt":
        cw = children(t)[0][1]
        return int(_sv(a[0], cw) < _sv(a[1], cw))
    if op == "bvsle":
        cw = children(t)[0][1]
        return int(_sv(a[0], cw) <= _sv(a[1], cw))
    if op == "not":
        return 1 - a[0]
    if op == "and":
        return int(all(a))
    if op == "or":
        return int(any(a))
    if op == "=>":
        return int(not a[0] or a[1])
    if op == "ite":
        return a[1] if a[0] else a[2]
    raise ValueError(f"cannot evaluate {op}")


def _sv(v, w):
    return v - (1 << w) if v >> (w - 1) else v


# ---------------------------------------------------------------------------
# SMT-LIB2 serialization
# ---------------------------------------------------------------------------

def _sort(w):
    return "Bool" if w == BOOL else f"(_ BitVec {w})"


def collect_decls(roots):
    """All variables and uninterpreted functions reachable from roots."""
    seen = set()
    variables = {}
    ufs = {}
    stack = list(roots)
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t[0] == "v":
            variables[t[2]] = t[1]
        elif t[0] == "uf":
            ufs[t[2]] = (t[3], t[1])
        stack.extend(children(t))
    return variables, ufs


def to_smt2(t, memo=None):
    if memo is None:
        memo = {}
    got = memo.get(t)
    if got is not None:
        return got
    op = t[0]
    if op == "c":
        if t[1] == BOOL:
            s = "true" if t[2] else "false"
        elif t[1] % 4 == 0:
            s = f"#x{t[2]:0{t[1] // 4}x}"
        else:
            s = f"#b{t[2]:0{t[1]}b}"
    elif op == "v":
        s = t[2]
    elif op == "ex":
        s = f"((_ extract {t[3]} {t[4]}) {to_smt2(t[2], memo)})"
    elif op == "uf":
        s = "(" + t[2] + " " + " ".join(to_smt2(a, memo) for a in t[4:]) + ")"
    elif op == "eq":
        s = f"(= {to_smt2(t[2], memo)} {to_smt2(t[3], memo)})"
    else:
        s = "(" + op + " " + " ".join(to_smt2(a, memo) for a in children(t)) + ")"
    memo[t] = s
    return s


def smt2_script(assertions, logic="QF_UFBV", get_model=False, options=()):
    """Full SMT-LIB2 text for a conjunction of assertions."""
    variables, ufs = collect_decls(assertions)
    out = []
    for opt in options:
        out.append(opt)
    out.append(f"(set-logic {logic})")
    for name in sorted(variables):
        out.append(f"(declare-fun {name} () {_sort(variables[name])})")
    for name in sorted(ufs):
        argw, retw = ufs[name]
        out.append(f"(declare-fun {name} ({' '.join(_sort(w) for w in argw)}) {_sort(retw)})")
    memo = {}
    for a in assertions:
        out.append(f"(assert {to_smt2(a, memo)})")
    out.append("(check-sat)")
    if get_model:
        out.append("(get-model)")
    return "\n".join(out) + "\n"
