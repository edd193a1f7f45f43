"""Word encoding of the instruction subset, close to the MSP430 formats.

Format I/II/jump words follow the MSP430 layout. The one extension is an
indirect ``@rN`` destination, which MSP430 cannot express; it uses the
opcode nibbles that the subset leaves free (addc, subc, dadd, bit) with the
Ad bit selecting among the eight two-operand operations. ``halt`` is the
idiomatic ``jmp $`` word.
"""

from __future__ import annotations

from .isa import (
    CG,
    PC,
    SP,
    SR,
    EMULATED_STEP,
    Instruction,
    Mode,
    Operand,
    UnsupportedMnemonic,
    is_generator_constant,
)

FORMAT1 = {"mov": 0x4, "add": 0x5, "sub": 0x8, "cmp": 0x9, "bic": 0xC, "bis": 0xD, "xor": 0xE, "and": 0xF}
FORMAT1_BY_CODE = {v: k for k, v in FORMAT1.items()}
INDIRECT_DST_OPS = ("mov", "add", "sub", "cmp", "and", "bis", "bic", "xor")
INDIRECT_DST_CODES = (0x6, 0x7, 0xA, 0xB)
JUMP_CODES = {"jne": 0, "jeq": 1, "jlo": 2, "jhs": 3, "jn": 4, "jge": 5, "jl": 6, "jmp": 7}
JUMP_BY_CODE = {v: k for k, v in JUMP_CODES.items()}
HALT_WORD = 0x3FFF
NOP_WORD = 0x4303
RET_WORD = 0x4130

_CG_SRC = {0: (CG, 0), 1: (CG, 1), 2: (CG, 2), 0xFFFF: (CG, 3), 4: (SR, 2), 8: (SR, 3)}
_CG_VALUE = {v: k for k, v in _CG_SRC.items()}


class EncodingError(ValueError):
    pass


def _src_fields(op: Operand, symbols) -> tuple[int, int, list[int]]:
    if op.mode is Mode.REG:
        return op.reg, 0, []
    if op.mode is Mode.INDEXED:
        return op.reg, 1, [op.resolve(symbols) & 0xFFFF]
    if op.mode is Mode.ABS:
        return SR, 1, [op.resolve(symbols) & 0xFFFF]
    if op.mode is Mode.INDIRECT:
        return op.reg, 2, []
    if op.mode is Mode.AUTOINC:
        return op.reg, 3, []
    if op.mode is Mode.IMM:
        value = op.resolve(symbols) & 0xFFFF
        if is_generator_constant(op, symbols):
            r, a = _CG_SRC[value]
            return r, a, []
        return PC, 3, [value]
    raise EncodingError(f"operand {op.render()} cannot be a source")


def _dst_fields(op: Operand, symbols) -> tuple[int, int, list[int]]:
    if op.mode is Mode.REG:
        return op.reg, 0, []
    if op.mode is Mode.INDEXED:
        return op.reg, 1, [op.resolve(symbols) & 0xFFFF]
    if op.mode is Mode.ABS:
        return SR, 1, [op.resolve(symbols) & 0xFFFF]
    raise EncodingError(f"operand {op.render()} cannot be a destination")


def _canonical(instr: Instruction) -> tuple[str, tuple[Operand, ...]]:
    """Rewrite emulated mnemonics into their core two-operand form."""
    m, ops = instr.mnemonic, instr.operands
    if m in EMULATED_STEP:
        core, k = EMULATED_STEP[m]
        return core, (Operand(Mode.IMM, value=k), ops[0])
    if m == "pop":
        return "mov", (Operand(Mode.AUTOINC, reg=SP), ops[0])
    if m == "br":
        return "mov", (ops[0], Operand(Mode.REG, reg=PC))
    return m, ops


def encode(instr: Instruction, addr: int, symbols) -> list[int]:
    """Encode one instruction at ``addr``; returns 16-bit words."""
    m = instr.mnemonic
    bw = 0x40 if instr.byte else 0
    if m == "halt":
        return [HALT_WORD]
    if m == "nop":
        return [NOP_WORD]
    if m == "ret":
        return [RET_WORD]
    if m in JUMP_CODES:
        dest = instr.operands[0].resolve(symbols)
        delta = dest - (addr + 2)
        if delta % 2:
            raise EncodingError(f"odd jump target 0x{dest:04x}")
        off = delta // 2
        if not -512 <= off <= 511:
            raise EncodingError(f"jump to 0x{dest:04x} out of range from 0x{addr:04x}")
        return [0x2000 | (JUMP_CODES[m] << 10) | (off & 0x3FF)]
    if m in ("push", "call"):
        r, a, ext = _src_fields(instr.operands[0], symbols)
        code = 4 if m == "push" else 5
        return [0x1000 | (code << 7) | bw | (a << 4) | r] + ext
    core, (src, dst) = _canonical(instr)
    if core not in FORMAT1:
        raise UnsupportedMnemonic(m)
    sr_, sa, sext = _src_fields(src, symbols)
    if dst.mode is Mode.INDIRECT:
        idx = INDIRECT_DST_OPS.index(core)
        opcode, ad, dr, dext = INDIRECT_DST_CODES[idx >> 1], idx & 1, dst.reg, []
    else:
        dr, ad, dext = _dst_fields(dst, symbols)
        opcode = FORMAT1[core]
    return [(opcode << 12) | (sr_ << 8) | (ad << 7) | bw | (sa << 4) | dr] + sext + dext


def _decode_src(r: int, a: int, words, pos: int) -> tuple[Operand, int]:
    if r == CG or (r == SR and a >= 2):
        return Operand(Mode.IMM, value=_CG_VALUE[(r, a)]), pos
    if a == 0:
        return Operand(Mode.REG, reg=r), pos
    if a == 1:
        ext = words(pos)
        if r == SR:
            return Operand(Mode.ABS, value=ext), pos + 1
        return Operand(Mode.INDEXED, reg=r, value=_signed(ext)), pos + 1
    if a == 2:
        return Operand(Mode.INDIRECT, reg=r), pos
    if r == PC:
        return Operand(Mode.IMM, value=words(pos)), pos + 1
    return Operand(Mode.AUTOINC, reg=r), pos


def _decode_dst(r: int, ad: int, words, pos: int) -> tuple[Operand, int]:
    if ad == 0:
        return Operand(Mode.REG, reg=r), pos
    ext = words(pos)
    if r == SR:
        return Operand(Mode.ABS, value=ext), pos + 1
    return Operand(Mode.INDEXED, reg=r, value=_signed(ext)), pos + 1


def _signed(v: int) -> int:
    return v - 0x10000 if v & 0x8000 else v


def decode(read_word, addr: int) -> tuple[Instruction, int]:
    """Decode the instruction at ``addr``. ``read_word(a)`` returns the
    16-bit word at ``a``. Returns (instruction, size in bytes)."""
    word = read_word(addr)
    words = lambda i: read_word((addr + 2 * i) & 0xFFFF)  # noqa: E731
    if word == HALT_WORD:
        return Instruction("halt"), 2
    if word == NOP_WORD:
        return Instruction("nop"), 2
    if word == RET_WORD:
        return Instruction("ret"), 2
    top = word >> 12
    if top == 0x1:
        code = (word >> 7) & 0x1F
        if code not in (4, 5):
            raise EncodingError(f"unsupported format II word 0x{word:04x}")
        src, pos = _decode_src(word & 0xF, (word >> 4) & 3, words, 1)
        m = "push" if code == 4 else "call"
        return Instruction(m, (src,), byte=bool(word & 0x40) and m == "push"), 2 * pos
    if top in (0x2, 0x3):
        cond = (word >> 10) & 7
        off = word & 0x3FF
        if off & 0x200:
            off -= 0x400
        dest = (addr + 2 + 2 * off) & 0xFFFF
        return Instruction(JUMP_BY_CODE[cond], (Operand(Mode.JUMP, value=dest),)), 2
    byte = bool(word & 0x40)
    sreg, sa, ad, dreg = (word >> 8) & 0xF, (word >> 4) & 3, (word >> 7) & 1, word & 0xF
    src, pos = _decode_src(sreg, sa, words, 1)
    if top in INDIRECT_DST_CODES:
        core = INDIRECT_DST_OPS[(INDIRECT_DST_CODES.index(top) << 1) | ad]
        dst = Operand(Mode.INDIRECT, reg=dreg)
    elif top in FORMAT1_BY_CODE:
        core = FORMAT1_BY_CODE[top]
        dst, pos = _decode_dst(dreg, ad, words, pos)
    else:
        raise EncodingError(f"unsupported word 0x{word:04x}")
    return _emulated(core, src, dst, byte), 2 * pos


def _emulated(core: str, src: Operand, dst: Operand, byte: bool) -> Instruction:
    generated = src.mode is Mode.IMM and src.value in (1, 2)
    if core == "mov" and src.mode is Mode.AUTOINC and src.reg == SP:
        return Instruction("pop", (dst,), byte=byte)
    if core == "mov" and dst.mode is Mode.REG and dst.reg == PC:
        return Instruction("br", (src,))
    if core in ("add", "sub") and generated:
        for name, (c, k) in EMULATED_STEP.items():
            if c == core and k == src.value:
                return Instruction(name, (dst,), byte=byte)
    return Instruction(core, (src, dst), byte=byte)
