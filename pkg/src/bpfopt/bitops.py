"""Two's-complement helpers on plain ints, shared by the interpreter and the
constant folder so both sides of every dual check compute bits identically."""

MASK32 = (1 << 32) - 1
MASK64 = (1 << 64) - 1


def u64(v):
    return v & MASK64


def u32(v):
    return v & MASK32


def s64(v):
    v &= MASK64
    return v - (1 << 64) if v >= (1 << 63) else v


def s32(v):
    v &= MASK32
    return v - (1 << 32) if v >= (1 << 31) else v


def add(a, b, bits=64):
    return (a + b) & (MASK64 if bits == 64 else MASK32)


def sub(a, b, bits=64):
    return (a - b) & (MASK64 if bits == 64 else MASK32)


def mul(a, b, bits=64):
    return (a * b) & (MASK64 if bits == 64 else MASK32)


def udiv(a, b, bits=64):
    # BPF runtime convention: division by zero yields 0 and continues.
    if b == 0:
        return 0
    return a // b


def shl(a, amt, bits=64):
    amt &= bits - 1
    return (a << amt) & (MASK64 if bits == 64 else MASK32)


def lshr(a, amt, bits=64):
    amt &= bits - 1
    return a >> amt


def ashr(a, amt, bits=64):
    amt &= bits - 1
    sv = s64(a) if bits == 64 else s32(a)
    return (sv >> amt) & (MASK64 if bits == 64 else MASK32)


def neg(a, bits=64):
    return (-a) & (MASK64 if bits == 64 else MASK32)


def popcount_diff(a, b):
    return bin(a ^ b).count("1")
