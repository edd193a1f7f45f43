"""MSP430-style instruction subset: operands, sizing, cycle costs, flags.

Everything here is a pure function of its inputs. The flag arithmetic
(:func:`alu`) and branch predicates (:func:`branch_taken`) are the single
table shared by the simulator and the verifier's replay.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

PC, SP, SR, CG = 0, 1, 2, 3
DEFAULT_CURSOR = 4

# status register bits
C_BIT = 0x0001
Z_BIT = 0x0002
N_BIT = 0x0004
V_BIT = 0x0100
FLAG_MASK = C_BIT | Z_BIT | N_BIT | V_BIT

GENERATOR_CONSTANTS = frozenset({0, 1, 2, 4, 8, 0xFFFF})

TWO_OPERAND = ("mov", "add", "sub", "cmp", "and", "bis", "bic", "xor")
ONE_OPERAND_DST = ("inc", "incd", "dec", "decd", "pop")
ONE_OPERAND_SRC = ("push", "call", "br")
NO_OPERAND = ("ret", "nop", "halt")
COND_JUMPS = ("jne", "jeq", "jn", "jlo", "jhs", "jge", "jl")
JUMPS = ("jmp",) + COND_JUMPS
MNEMONICS = frozenset(TWO_OPERAND + ONE_OPERAND_DST + ONE_OPERAND_SRC + NO_OPERAND + JUMPS)
BYTE_CAPABLE = frozenset(TWO_OPERAND + ONE_OPERAND_DST + ("push",))

JUMP_ALIASES = {"jnz": "jne", "jz": "jeq", "jnc": "jlo", "jc": "jhs"}

# mnemonics whose destination operand receives a store
WRITES_DST = frozenset(("mov", "add", "sub", "and", "bis", "bic", "xor") + ONE_OPERAND_DST)
SETS_FLAGS = frozenset(("add", "sub", "cmp", "and", "xor", "inc", "incd", "dec", "decd"))


class UnsupportedMnemonic(ValueError):
    pass


class Mode(enum.Enum):
    REG = "reg"
    INDEXED = "indexed"
    INDIRECT = "indirect"
    AUTOINC = "autoinc"
    IMM = "imm"
    ABS = "abs"
    JUMP = "jump"  # jump target, label or resolved address


MEMORY_MODES = frozenset({Mode.INDEXED, Mode.INDIRECT, Mode.AUTOINC, Mode.ABS})


@dataclass(frozen=True)
class Operand:
    """One operand. ``value`` is numeric; ``symbol`` (plus ``value`` as an
    addend) marks a value resolved at layout time."""

    mode: Mode
    reg: int | None = None
    value: int = 0
    symbol: str | None = None

    def __post_init__(self):
        if self.reg is not None and not 0 <= self.reg <= 15:
            raise ValueError(f"register r{self.reg} out of range")
        if self.symbol is None and not -0x8000 <= self.value <= 0xFFFF:
            raise ValueError(f"value {self.value} does not fit in 16 bits")

    @property
    def is_symbolic(self) -> bool:
        return self.symbol is not None

    def resolve(self, symbols) -> int:
        if self.symbol is None:
            return self.value
        return (symbols[self.symbol] + self.value) & 0xFFFF

    def render(self) -> str:
        if self.mode is Mode.REG:
            return f"r{self.reg}"
        if self.mode is Mode.INDEXED:
            return f"{_expr(self, hex_=False)}(r{self.reg})"
        if self.mode is Mode.INDIRECT:
            return f"@r{self.reg}"
        if self.mode is Mode.AUTOINC:
            return f"@r{self.reg}+"
        if self.mode is Mode.IMM:
            return f"#{_expr(self, hex_=False)}"
        if self.mode is Mode.ABS:
            return f"&{_expr(self, hex_=True)}"
        return _expr(self, hex_=True)


def _expr(op: Operand, hex_: bool) -> str:
    if op.symbol is not None:
        if op.value > 0:
            return f"{op.symbol}+{op.value}"
        if op.value < 0:
            return f"{op.symbol}-{-op.value}"
        return op.symbol
    if hex_:
        return f"0x{op.value & 0xFFFF:04x}"
    return str(op.value)


def reg(n: int) -> Operand:
    return Operand(Mode.REG, reg=n)


def imm(value: int = 0, symbol: str | None = None) -> Operand:
    return Operand(Mode.IMM, value=value, symbol=symbol)


def indexed(offset: int, n: int) -> Operand:
    return Operand(Mode.INDEXED, reg=n, value=offset)


def indirect(n: int) -> Operand:
    return Operand(Mode.INDIRECT, reg=n)


def absolute(addr: int = 0, symbol: str | None = None) -> Operand:
    return Operand(Mode.ABS, value=addr, symbol=symbol)


def target(label: str | None = None, addr: int = 0) -> Operand:
    return Operand(Mode.JUMP, value=addr, symbol=label)


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple[Operand, ...] = ()
    byte: bool = False
    source_line: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.mnemonic not in MNEMONICS:
            raise UnsupportedMnemonic(self.mnemonic)
        if len(self.operands) != arity(self.mnemonic):
            raise ValueError(
                f"{self.mnemonic} takes {arity(self.mnemonic)} operands, got {len(self.operands)}"
            )
        if self.byte and self.mnemonic not in BYTE_CAPABLE:
            raise ValueError(f"{self.mnemonic} has no byte form")

    @property
    def src(self) -> Operand | None:
        if self.mnemonic in TWO_OPERAND or self.mnemonic in ONE_OPERAND_SRC:
            return self.operands[0]
        if self.mnemonic == "pop":
            return Operand(Mode.AUTOINC, reg=SP)
        return None

    @property
    def dst(self) -> Operand | None:
        if self.mnemonic in TWO_OPERAND:
            return self.operands[1]
        if self.mnemonic in ONE_OPERAND_DST:
            return self.operands[0]
        return None

    def render(self) -> str:
        name = self.mnemonic + (".b" if self.byte else "")
        if not self.operands:
            return name
        return name + " " + ", ".join(op.render() for op in self.operands)

    def registers(self) -> set[int]:
        return {op.reg for op in self.operands if op.reg is not None}


def arity(mnemonic: str) -> int:
    if mnemonic in TWO_OPERAND:
        return 2
    if mnemonic in NO_OPERAND:
        return 0
    if mnemonic in MNEMONICS:
        return 1
    raise UnsupportedMnemonic(mnemonic)


class CfClass(enum.Enum):
    STATIC_CF = "StaticCF"
    INDIRECT_CF = "IndirectCF"
    COND_BRANCH = "CondBranch"
    DIRECT_WRITE = "DirectWrite"
    INDIRECT_WRITE = "IndirectWrite"
    OTHER = "Other"


def classify(instr: Instruction) -> CfClass:
    m = instr.mnemonic
    if m not in MNEMONICS:
        raise UnsupportedMnemonic(m)
    if m in COND_JUMPS:
        return CfClass.COND_BRANCH
    if m == "jmp":
        return CfClass.STATIC_CF
    if m == "ret":
        return CfClass.INDIRECT_CF
    if m in ("call", "br"):
        return CfClass.STATIC_CF if instr.operands[0].mode is Mode.IMM else CfClass.INDIRECT_CF
    dst = instr.dst
    if dst is None or m not in WRITES_DST:
        return CfClass.OTHER
    if dst.mode is Mode.REG:
        if dst.reg == PC:
            if m == "mov" and instr.src.mode is Mode.IMM:
                return CfClass.STATIC_CF
            return CfClass.INDIRECT_CF
        return CfClass.OTHER
    if dst.mode is Mode.ABS:
        return CfClass.DIRECT_WRITE
    return CfClass.INDIRECT_WRITE


def is_generator_constant(op: Operand, symbols=None) -> bool:
    if op.mode is not Mode.IMM:
        return False
    if op.symbol is not None:
        if symbols is None or op.symbol not in symbols:
            return False
        return op.resolve(symbols) in GENERATOR_CONSTANTS
    return (op.value & 0xFFFF) in GENERATOR_CONSTANTS


def needs_extension(op: Operand, symbols=None) -> bool:
    if op.mode in (Mode.INDEXED, Mode.ABS):
        return True
    if op.mode is Mode.IMM:
        return not is_generator_constant(op, symbols)
    return False


def instr_size(instr: Instruction, symbols=None) -> int:
    """Byte size: one opcode word plus one extension word per operand that
    needs it. Symbols absent from ``symbols`` are assumed to need one."""
    if instr.mnemonic not in MNEMONICS:
        raise UnsupportedMnemonic(instr.mnemonic)
    return 2 + 2 * sum(needs_extension(op, symbols) for op in instr.operands)


def instr_cycles(instr: Instruction, symbols=None) -> int:
    """Simplified fixed cost table.

    jumps 2, call 5, ret 3, halt 1; everything else costs 1, plus 2 per
    memory operand (push/pop count their implicit stack access) and 1 per
    immediate extension word fetched.
    """
    m = instr.mnemonic
    if m not in MNEMONICS:
        raise UnsupportedMnemonic(m)
    if m in JUMPS:
        return 2
    if m == "call":
        return 5
    if m == "ret":
        return 3
    if m == "halt":
        return 1
    cost = 1
    for op in instr.operands:
        if op.mode in MEMORY_MODES:
            cost += 2
        elif op.mode is Mode.IMM and needs_extension(op, symbols):
            cost += 1
    if m in ("push", "pop"):
        cost += 2
    return cost


def reads_flags(instr: Instruction) -> bool:
    if instr.mnemonic in COND_JUMPS:
        return True
    return any(op.reg == SR and op.mode is not Mode.IMM for op in instr.operands)


def sets_flags(instr: Instruction) -> bool:
    if instr.mnemonic in SETS_FLAGS:
        return True
    dst = instr.dst
    return dst is not None and dst.mode is Mode.REG and dst.reg == SR and instr.mnemonic in WRITES_DST


# ---------------------------------------------------------------------------
# ALU and predicates, shared by the simulator and the verifier


def _width(byte: bool) -> tuple[int, int]:
    return (0xFF, 0x80) if byte else (0xFFFF, 0x8000)


def alu(op: str, src: int, dst: int, byte: bool, sr: int) -> tuple[int, int]:
    """Apply ``op`` (dst := dst op src) and return (result, new SR).

    ``op`` is one of mov/add/sub/cmp/and/bis/bic/xor. For cmp the result is
    the difference, and callers must not write it back.
    """
    mask, sign = _width(byte)
    s, d = src & mask, dst & mask
    if op == "mov":
        return s, sr
    if op == "bis":
        return d | s, sr
    if op == "bic":
        return d & ~s & mask, sr
    if op == "add":
        raw = d + s
        r = raw & mask
        c = raw > mask
        v = bool((d ^ r) & (s ^ r) & sign)
    elif op in ("sub", "cmp"):
        raw = d + (~s & mask) + 1
        r = raw & mask
        c = raw > mask
        v = bool((d ^ s) & (d ^ r) & sign)
    elif op == "and":
        r = d & s
        c, v = r != 0, False
    elif op == "xor":
        r = d ^ s
        c, v = r != 0, bool(d & s & sign)
    else:
        raise UnsupportedMnemonic(op)
    flags = (C_BIT if c else 0) | (Z_BIT if r == 0 else 0) | (N_BIT if r & sign else 0) | (V_BIT if v else 0)
    return r, (sr & ~FLAG_MASK & 0xFFFF) | flags


def branch_taken(mnemonic: str, sr: int) -> bool:
    c, z, n, v = bool(sr & C_BIT), bool(sr & Z_BIT), bool(sr & N_BIT), bool(sr & V_BIT)
    if mnemonic == "jmp":
        return True
    if mnemonic == "jne":
        return not z
    if mnemonic == "jeq":
        return z
    if mnemonic == "jn":
        return n
    if mnemonic == "jlo":
        return not c
    if mnemonic == "jhs":
        return c
    if mnemonic == "jge":
        return n == v
    if mnemonic == "jl":
        return n != v
    raise UnsupportedMnemonic(mnemonic)


# emulated single-operand mnemonics and the core operation they stand for
EMULATED_STEP = {"inc": ("add", 1), "incd": ("add", 2), "dec": ("sub", 1), "decd": ("sub", 2)}
