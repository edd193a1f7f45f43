import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycfa.isa import (
    C_BIT,
    N_BIT,
    V_BIT,
    Z_BIT,
    CfClass,
    Instruction,
    Mode,
    Operand,
    UnsupportedMnemonic,
    absolute,
    alu,
    branch_taken,
    classify,
    imm,
    indexed,
    indirect,
    instr_cycles,
    instr_size,
    reg,
    target,
)


def ins(m, *ops, byte=False):
    return Instruction(m, tuple(ops), byte=byte)


@pytest.mark.parametrize(
    "instr, expected",
    [
        (ins("ret"), CfClass.INDIRECT_CF),
        (ins("jmp", target(".L3")), CfClass.STATIC_CF),
        (ins("mov", reg(15), indirect(14), byte=True), CfClass.INDIRECT_WRITE),
        (ins("call", imm(symbol="f")), CfClass.STATIC_CF),
        (ins("call", reg(5)), CfClass.INDIRECT_CF),
        (ins("br", indirect(10)), CfClass.INDIRECT_CF),
        (ins("br", indexed(2, 7)), CfClass.INDIRECT_CF),
        (ins("mov", reg(5), reg(0)), CfClass.INDIRECT_CF),
        (ins("jne", target("x")), CfClass.COND_BRANCH),
        (ins("mov", reg(5), absolute(0x200)), CfClass.DIRECT_WRITE),
        (ins("mov", reg(5), indexed(2, 14)), CfClass.INDIRECT_WRITE),
        (ins("cmp", imm(3), indexed(0, 14)), CfClass.OTHER),
        (ins("push", reg(5)), CfClass.OTHER),
        (ins("nop"), CfClass.OTHER),
    ],
)
def test_classify(instr, expected):
    assert classify(instr) is expected


def test_unsupported_mnemonic():
    with pytest.raises(UnsupportedMnemonic):
        Instruction("mul", (reg(4), reg(5)))


def test_sizes_and_cycles():
    syms = {"OR_MIN": 0x200}
    assert instr_size(ins("ret")) == 2
    assert instr_size(ins("cmp", imm(symbol="OR_MIN"), reg(4)), syms) == 4
    assert instr_size(ins("mov", imm(0), reg(5))) == 2
    assert instr_size(ins("mov", imm(0xFFFF), reg(5))) == 2
    assert instr_size(ins("mov", imm(3), reg(5))) == 4
    assert instr_size(ins("mov", indexed(2, 4), absolute(0x500))) == 6
    assert instr_cycles(ins("nop")) == 1
    assert instr_cycles(ins("mov", reg(1), indirect(4))) == 3
    assert instr_cycles(ins("jne", target(".L2"))) == 2
    assert instr_cycles(ins("call", imm(symbol="f"))) == 5
    assert instr_cycles(ins("ret")) == 3


def _flags_oracle(op, s, d, bits):
    """Flags from unbounded integer arithmetic, independent of alu()."""
    mask = (1 << bits) - 1
    half = 1 << (bits - 1)
    sgn = lambda x: x - (1 << bits) if x & half else x  # noqa: E731
    if op == "add":
        exact, signed = d + s, sgn(d) + sgn(s)
        c = exact > mask
    else:
        exact, signed = d - s, sgn(d) - sgn(s)
        c = d >= s
    r = exact & mask
    v = not (-half <= signed < half)
    return r, c, r == 0, bool(r & half), v


def _unpack(sr):
    return bool(sr & C_BIT), bool(sr & Z_BIT), bool(sr & N_BIT), bool(sr & V_BIT)


def test_cmp_byte_exhaustive():
    for s in range(256):
        for d in range(256):
            r, c, z, n, v = _flags_oracle("sub", s, d, 8)
            res, sr = alu("cmp", s, d, True, 0)
            assert (res, *_unpack(sr)) == (r, c, z, n, v), (s, d)


@settings(max_examples=3000)
@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.sampled_from(["add", "sub", "cmp"]))
def test_word_flags_match_oracle(s, d, op):
    r, c, z, n, v = _flags_oracle("add" if op == "add" else "sub", s, d, 16)
    res, sr = alu(op, s, d, False, 0)
    assert (res, *_unpack(sr)) == (r, c, z, n, v)


def test_word_flags_sampled_1e5():
    import random

    rng = random.Random(7)
    for _ in range(100_000):
        s, d = rng.getrandbits(16), rng.getrandbits(16)
        r, c, z, n, v = _flags_oracle("sub", s, d, 16)
        res, sr = alu("cmp", s, d, False, 0)
        assert (res, *_unpack(sr)) == (r, c, z, n, v)


def test_cmp_equal_sets_zero():
    _, sr = alu("cmp", 64, 64, False, 0)
    assert sr & Z_BIT


@given(st.integers(0, 0xFFFF))
def test_branch_predicates(sr):
    c, z, n, v = _unpack(sr)
    assert branch_taken("jne", sr) == (not z)
    assert branch_taken("jeq", sr) == z
    assert branch_taken("jn", sr) == n
    assert branch_taken("jlo", sr) == (not c)
    assert branch_taken("jhs", sr) == c
    assert branch_taken("jge", sr) == (n == v)
    assert branch_taken("jl", sr) == (n != v)
    assert branch_taken("jmp", sr)


def test_mov_keeps_flags():
    assert alu("mov", 5, 0, False, 0x107)[1] == 0x107


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF))
def test_logic_ops(s, d):
    r, sr = alu("and", s, d, False, 0)
    assert r == s & d and bool(sr & C_BIT) == (r != 0)
    r, sr = alu("xor", s, d, False, 0)
    assert r == s ^ d
    assert alu("bis", s, d, False, 0)[0] == s | d
    assert alu("bic", s, d, False, 0)[0] == d & ~s & 0xFFFF


def test_operand_render():
    assert Operand(Mode.IMM, value=2, symbol="OR_MAX").render() == "#OR_MAX+2"
    assert indexed(-2, 4).render() == "-2(r4)"
    assert Instruction("mov", (reg(15), indirect(14)), byte=True).render() == "mov.b r15, @r14"
