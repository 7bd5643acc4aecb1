"""Declarative ALU and branch semantics shared by the interpreter and the
verification-condition generator.

Each operation is written once against a small algebra interface; the
interpreter instantiates it over machine ints, vcgen over bit-vector terms.
Keeping a single description is what makes the two sides agree bit for bit.
"""

from __future__ import annotations

from . import bitops, terms


class IntAlg:
    """Concrete 64-bit machine arithmetic."""

    width = 64

    @staticmethod
    def const(v, w=64):
        return v & ((1 << w) - 1)

    add = staticmethod(lambda a, b, w=64: bitops.add(a, b, w))
    sub = staticmethod(lambda a, b, w=64: bitops.sub(a, b, w))
    mul = staticmethod(lambda a, b, w=64: bitops.mul(a, b, w))
    div = staticmethod(lambda a, b, w=64: bitops.udiv(a, b, w))
    or_ = staticmethod(lambda a, b, w=64: a | b)
    and_ = staticmethod(lambda a, b, w=64: a & b)
    xor = staticmethod(lambda a, b, w=64: a ^ b)
    lsh = staticmethod(lambda a, b, w=64: bitops.shl(a, b, w))
    rsh = staticmethod(lambda a, b, w=64: bitops.lshr(a, b, w))
    arsh = staticmethod(lambda a, b, w=64: bitops.ashr(a, b, w))
    neg = staticmethod(lambda a, w=64: bitops.neg(a, w))

    @staticmethod
    def low32(a):
        return a & bitops.MASK32

    @staticmethod
    def zext32(a):
        return a & bitops.MASK32

    @staticmethod
    def eq(a, b):
        return a == b

    @staticmethod
    def ne(a, b):
        return a != b

    @staticmethod
    def ult(a, b):
        return a < b

    @staticmethod
    def ule(a, b):
        return a <= b

    @staticmethod
    def ugt(a, b):
        return a > b

    @staticmethod
    def uge(a, b):
        return a >= b

    @staticmethod
    def slt(a, b):
        return bitops.s64(a) < bitops.s64(b)

    @staticmethod
    def sge(a, b):
        return bitops.s64(a) >= bitops.s64(b)

    @staticmethod
    def sgt(a, b):
        return bitops.s64(a) > bitops.s64(b)


class TermAlg:
    """The same operations over bit-vector terms."""

    @staticmethod
    def const(v, w=64):
        return terms.const(w, v)

    @staticmethod
    def _mask(b, w):
        return terms.and_(b, terms.const(w, w - 1))

    add = staticmethod(lambda a, b, w=64: terms.add(a, b))
    sub = staticmethod(lambda a, b, w=64: terms.sub(a, b))
    mul = staticmethod(lambda a, b, w=64: terms.mul(a, b))
    div = staticmethod(lambda a, b, w=64: terms.udiv(a, b))
    or_ = staticmethod(lambda a, b, w=64: terms.or_(a, b))
    and_ = staticmethod(lambda a, b, w=64: terms.and_(a, b))
    xor = staticmethod(lambda a, b, w=64: terms.xor(a, b))

    @staticmethod
    def lsh(a, b, w=64):
        return terms.shl(a, TermAlg._mask(b, w))

    @staticmethod
    def rsh(a, b, w=64):
        return terms.lshr(a, TermAlg._mask(b, w))

    @staticmethod
    def arsh(a, b, w=64):
        return terms.ashr(a, TermAlg._mask(b, w))

    @staticmethod
    def neg(a, w=64):
        return terms.sub(terms.const(w, 0), a)

    @staticmethod
    def low32(a):
        return terms.extract(a, 31, 0)

    @staticmethod
    def zext32(a):
        return terms.zext(terms.extract(a, 31, 0), 64)

    eq = staticmethod(terms.eq)
    ne = staticmethod(terms.ne)
    ult = staticmethod(terms.ult)
    ule = staticmethod(terms.ule)
    slt = staticmethod(terms.slt)

    @staticmethod
    def ugt(a, b):
        return terms.ult(b, a)

    @staticmethod
    def uge(a, b):
        return terms.ule(b, a)

    @staticmethod
    def sgt(a, b):
        return terms.slt(b, a)

    @staticmethod
    def sge(a, b):
        return terms.sle(b, a)


def alu_result(alg, op, is32, dst, src):
    """Value written to dst by an ALU op. 32-bit ops compute on the low words
    and zero the upper half of the destination."""
    if op == "mov":
        return alg.zext32(src) if is32 else src
    if op == "neg":
        if is32:
            return alg.zext32(alg.neg(alg.low32(dst), 32))
        return alg.neg(dst)
    fn = getattr(alg, {"or": "or_", "and": "and_"}.get(op, op))
    if is32:
        return alg.zext32(fn(alg.low32(dst), alg.low32(src), 32))
    return fn(dst, src, 64)


def jump_taken(alg, cond, dst, src):
    """Branch predicate over full 64-bit operands."""
    if cond == "ja":
        return alg.eq(alg.const(0), alg.const(0))
    return {
        "jeq": alg.eq, "jne": alg.ne,
        "jgt": alg.ugt, "jge": alg.uge,
        "jlt": alg.ult, "jle": alg.ule,
        "jsgt": alg.sgt, "jsge": alg.sge,
    }[cond](dst, src)
