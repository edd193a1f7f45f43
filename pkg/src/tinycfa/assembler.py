"""Assembly text <-> Program, memory layout, and address resolution.

Grammar, one item per line::

    label:                 ; a label (may share a line with an instruction)
    mov.b r15, @r14        ; comments start with ';'
    .equ NAME, 0x0500      ; named constant

Operands: ``rN``/``pc``/``sp``/``sr``, ``#expr``, ``&expr``, ``@rN``,
``@rN+``, ``expr(rN)``; ``expr`` is a number or ``SYMBOL[+-N]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from types import MappingProxyType

from . import encoding
from .isa import (
    CG,
    JUMP_ALIASES,
    JUMPS,
    MNEMONICS,
    PC,
    SP,
    SR,
    BYTE_CAPABLE,
    CfClass,
    Instruction,
    Mode,
    Operand,
    UnsupportedMnemonic,
    arity,
    classify,
    instr_size,
)

GPIO_P3OUT = 0x0019

# symbols every layout defines
LAYOUT_SYMBOLS = ("ER_MIN", "ER_MAX", "OR_MIN", "OR_MAX", "DATA_MIN", "DATA_MAX", "IN_BUF", "P3OUT")


class AssemblyError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class AsmSyntaxError(AssemblyError):
    pass


class UndefinedLabel(AssemblyError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        super().__init__(f"undefined label {name}", line)


class DuplicateLabel(AssemblyError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        super().__init__(f"duplicate label {name}", line)


class UnsupportedInstruction(AssemblyError):
    pass


class EmptyProgram(AssemblyError):
    pass


class RegionOverflow(AssemblyError):
    def __init__(self, needed: int, available: int):
        self.needed, self.available = needed, available
        super().__init__(f"program needs {needed} bytes, ER holds {available}")


class LayoutError(ValueError):
    pass


class NoFreeRegister(Exception):
    pass


@dataclass(frozen=True)
class Program:
    items: tuple[Instruction, ...]
    labels: dict[str, int] = field(default_factory=dict)
    equates: dict[str, int] = field(default_factory=dict)
    entry_label: str | None = None

    def __post_init__(self):
        for name, idx in self.labels.items():
            if not 0 <= idx < len(self.items):
                raise ValueError(f"label {name} points past the program")

    def labels_at(self, index: int) -> list[str]:
        return [name for name, i in self.labels.items() if i == index]

    def __hash__(self):
        return hash((self.items, tuple(sorted(self.labels.items())), tuple(sorted(self.equates.items()))))


@dataclass(frozen=True)
class MemoryLayout:
    er_min: int = 0xE000
    er_max: int = 0xFFDE
    or_min: int = 0x0200
    or_max: int = 0x03FE
    data_min: int = 0x0400
    data_max: int = 0x09FE
    stack_init: int = 0x09F0

    def __post_init__(self):
        bounds = (self.er_min, self.er_max, self.or_min, self.or_max, self.data_min, self.data_max, self.stack_init)
        if any(not 0 <= b <= 0xFFFF for b in bounds):
            raise LayoutError("bounds must be 16-bit addresses")
        if any(b % 2 for b in bounds):
            raise LayoutError("bounds must be word aligned")
        regions = [(self.er_min, self.er_max), (self.or_min, self.or_max), (self.data_min, self.data_max)]
        for lo, hi in regions:
            if lo > hi:
                raise LayoutError(f"empty region [0x{lo:04x}, 0x{hi:04x}]")
        for i, (a_lo, a_hi) in enumerate(regions):
            for b_lo, b_hi in regions[i + 1 :]:
                if a_lo <= b_hi + 1 and b_lo <= a_hi + 1:
                    raise LayoutError("ER, OR and data regions must be disjoint")
        if self.er_min <= 8:
            raise LayoutError("ER must start above the constant-generator values")
        if self.or_min <= GPIO_P3OUT or self.data_min <= GPIO_P3OUT:
            raise LayoutError("OR and data must sit above the peripheral space")
        if self.or_max - self.or_min >= 0x8000:
            raise LayoutError("OR must span less than 32 KiB (the cursor check is a signed compare)")
        if not self.data_min <= self.stack_init <= self.data_max + 2:
            raise LayoutError("initial stack pointer must be inside the data region")

    @property
    def out_cursor_init(self) -> int:
        return self.or_min

    @property
    def cflog_cursor_init(self) -> int:
        return self.or_max

    @property
    def or_size(self) -> int:
        return self.or_max - self.or_min + 2

    @property
    def cflog_capacity(self) -> int:
        """Entries that fit while the cursor stays inside OR."""
        return (self.or_max - self.or_min) // 2

    def symbols(self) -> dict[str, int]:
        return {
            "ER_MIN": self.er_min,
            "ER_MAX": self.er_max,
            "OR_MIN": self.or_min,
            "OR_MAX": self.or_max,
            "DATA_MIN": self.data_min,
            "DATA_MAX": self.data_max,
            "IN_BUF": self.data_min,
            "P3OUT": GPIO_P3OUT,
        }

    def in_or(self, addr: int) -> bool:
        return self.or_min <= addr <= self.or_max + 1

    def in_er(self, addr: int) -> bool:
        return self.er_min <= addr <= self.er_max + 1


LAYOUT_KEYS = ("er_min", "er_max", "or_min", "or_max", "data_min", "data_max", "stack_init")


def parse_layout(text: str) -> MemoryLayout:
    """Read ``key=value`` lines (hex values, ``#`` comments)."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LayoutError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in LAYOUT_KEYS:
            raise LayoutError(f"line {n}: unknown key {key}")
        try:
            values[key] = int(value, 16)
        except ValueError:
            raise LayoutError(f"line {n}: {value!r} is not hex") from None
    return MemoryLayout(**values)


def render_layout(m: MemoryLayout) -> str:
    return "".join(f"{k}=0x{getattr(m, k):04X}\n" for k in LAYOUT_KEYS)


# ---------------------------------------------------------------------------
# parsing

_REG_NAMES = {"pc": PC, "sp": SP, "sr": SR, "cg": CG}
_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*):")
_SYMBOL_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")
_EXPR_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*([+-]\s*(?:0x[0-9a-fA-F]+|\d+))?$")


def _parse_register(tok: str, line: int) -> int:
    t = tok.strip().lower()
    if t in _REG_NAMES:
        return _REG_NAMES[t]
    if re.fullmatch(r"r(\d|1[0-5])", t):
        return int(t[1:])
    raise AsmSyntaxError(f"bad register {tok!r}", line)


def _parse_number(tok: str) -> int | None:
    t = tok.strip().replace(" ", "")
    try:
        return int(t, 0)
    except ValueError:
        return None


def _parse_expr(tok: str, line: int) -> tuple[int, str | None]:
    num = _parse_number(tok)
    if num is not None:
        if not -0x8000 <= num <= 0xFFFF:
            raise AsmSyntaxError(f"value {tok!r} does not fit in 16 bits", line)
        return num, None
    m = _EXPR_RE.match(tok.strip())
    if not m:
        raise AsmSyntaxError(f"bad expression {tok!r}", line)
    addend = int(m.group(2).replace(" ", ""), 0) if m.group(2) else 0
    return addend, m.group(1)


def _parse_operand(tok: str, line: int) -> Operand:
    t = tok.strip()
    if not t:
        raise AsmSyntaxError("empty operand", line)
    if t.startswith("#"):
        value, sym = _parse_expr(t[1:], line)
        return Operand(Mode.IMM, value=value, symbol=sym)
    if t.startswith("&"):
        value, sym = _parse_expr(t[1:], line)
        return Operand(Mode.ABS, value=value, symbol=sym)
    if t.startswith("@"):
        auto = t.endswith("+")
        r = _parse_register(t[1:-1] if auto else t[1:], line)
        if r in (PC, SR, CG):
            raise AsmSyntaxError(f"register r{r} cannot be used indirectly", line)
        return Operand(Mode.AUTOINC if auto else Mode.INDIRECT, reg=r)
    m = re.fullmatch(r"(.+)\(\s*(\w+)\s*\)", t)
    if m:
        value, sym = _parse_expr(m.group(1), line)
        r = _parse_register(m.group(2), line)
        if r in (PC, SR, CG):
            raise AsmSyntaxError(f"register r{r} cannot be indexed", line)
        return Operand(Mode.INDEXED, reg=r, value=value, symbol=sym)
    try:
        return Operand(Mode.REG, reg=_parse_register(t, line))
    except AsmSyntaxError:
        pass
    raise AsmSyntaxError(f"bad operand {tok!r}", line)


def _split_operands(text: str) -> list[str]:
    if not text.strip():
        return []
    return [p for p in (s.strip() for s in text.split(","))]


def _parse_instruction(text: str, line: int) -> Instruction:
    parts = text.split(None, 1)
    name = parts[0].lower()
    rest = parts[1] if len(parts) > 1 else ""
    byte = False
    if name.endswith(".b"):
        byte, name = True, name[:-2]
    elif name.endswith(".w"):
        name = name[:-2]
    name = JUMP_ALIASES.get(name, name)
    if name not in MNEMONICS:
        raise UnsupportedMnemonic(f"line {line}: unsupported mnemonic {parts[0]!r}")
    if byte and name not in BYTE_CAPABLE:
        raise AsmSyntaxError(f"{name} has no byte form", line)
    toks = _split_operands(rest)
    if len(toks) != arity(name):
        raise AsmSyntaxError(f"{name} takes {arity(name)} operands, got {len(toks)}", line)
    if name in JUMPS:
        tok = toks[0].strip()
        num = _parse_number(tok)
        if num is not None:
            ops = (Operand(Mode.JUMP, value=num & 0xFFFF),)
        elif _SYMBOL_RE.match(tok):
            ops = (Operand(Mode.JUMP, symbol=tok),)
        else:
            raise AsmSyntaxError(f"bad jump target {tok!r}", line)
    else:
        ops = tuple(_parse_operand(t, line) for t in toks)
    instr = Instruction(name, ops, byte=byte, source_line=line)
    dst = instr.dst
    if dst is not None and dst.mode in (Mode.IMM, Mode.AUTOINC):
        raise AsmSyntaxError(f"{dst.render()} cannot be a destination", line)
    return instr


def parse_program(text: str) -> Program:
    items: list[Instruction] = []
    labels: dict[str, int] = {}
    label_lines: dict[str, int] = {}
    equates: dict[str, int] = {}
    pending: list[tuple[str, int]] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in label_lines or name in equates or any(name == p for p, _ in pending):
                raise DuplicateLabel(name, n)
            pending.append((name, n))
            label_lines[name] = n
            line = line[m.end() :].strip()
        if not line:
            continue
        if line.lower().startswith(".equ"):
            body = line[4:].strip()
            parts = [p.strip() for p in re.split(r"[,\s]\s*", body, maxsplit=1)]
            value = _parse_number(parts[1]) if len(parts) == 2 else None
            if value is None or not _SYMBOL_RE.match(parts[0]):
                raise AsmSyntaxError(f"bad .equ {body!r}", n)
            if parts[0] in equates or parts[0] in label_lines:
                raise DuplicateLabel(parts[0], n)
            equates[parts[0]] = value & 0xFFFF
            continue
        instr = _parse_instruction(line, n)
        for name, _ in pending:
            labels[name] = len(items)
        pending = []
        items.append(instr)
    if not items:
        raise EmptyProgram("program has no instructions")
    if pending:
        raise AsmSyntaxError(f"label {pending[0][0]} has no instruction", pending[0][1])
    known = set(labels) | set(equates) | set(LAYOUT_SYMBOLS)
    for instr in items:
        for op in instr.operands:
            if op.symbol is None:
                continue
            if op.mode is Mode.JUMP and op.symbol not in labels:
                raise UndefinedLabel(op.symbol, instr.source_line)
            if op.symbol not in known:
                raise UndefinedLabel(op.symbol, instr.source_line)
    entry = next((name for name, i in labels.items() if i == 0), None)
    return Program(tuple(items), labels, equates, entry)


def render(p: Program) -> str:
    lines = [f".equ {name}, 0x{value:04x}" for name, value in p.equates.items()]
    by_index: dict[int, list[str]] = {}
    for name, idx in p.labels.items():
        by_index.setdefault(idx, []).append(name)
    for i, instr in enumerate(p.items):
        lines.extend(f"{name}:" for name in by_index.get(i, ()))
        lines.append(instr.render())
    return "\n".join(lines)


def find_free_register(p: Program, preferred: int = 4, exclude=()) -> int:
    used = set()
    for instr in p.items:
        used |= instr.registers()
    if preferred not in used and preferred not in exclude and 4 <= preferred <= 15:
        return preferred
    for r in range(4, 16):
        if r not in used and r not in exclude:
            return r
    raise NoFreeRegister("r4..r15 are all in use; the program must be recompiled to free one")


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int | None
    kind: str  # fallthrough, static, cond_taken, cond_not_taken, indirect_unknown


@dataclass(frozen=True)
class ProgramImage:
    program: Program
    layout: MemoryLayout
    addr_of: tuple[int, ...]
    sizes: tuple[int, ...]
    symbols: MappingProxyType
    code: bytes
    cfg: frozenset

    @property
    def total_bytes(self) -> int:
        return len(self.code)

    @property
    def exit_addr(self) -> int:
        """Legal exit: the last ``halt`` (or the last instruction)."""
        for i in range(len(self.program.items) - 1, -1, -1):
            if self.program.items[i].mnemonic == "halt":
                return self.addr_of[i]
        return self.addr_of[-1]

    @property
    def er_min(self) -> int:
        return self.layout.er_min

    @property
    def er_max(self) -> int:
        return self.exit_addr

    @property
    def er_bytes(self) -> bytes:
        return self.code[: self.exit_addr + 2 - self.layout.er_min]

    def index_at(self, addr: int) -> int | None:
        return self._index_map().get(addr)

    def _index_map(self) -> dict[int, int]:
        cache = self.__dict__.get("_imap")
        if cache is None:
            cache = {a: i for i, a in enumerate(self.addr_of)}
            object.__setattr__(self, "_imap", cache)
        return cache

    def label_addr(self, name: str) -> int:
        return self.addr_of[self.program.labels[name]]

    def successors(self, addr: int) -> list[Edge]:
        return [e for e in self.cfg if e.src == addr]


def program_symbols(p: Program, m: MemoryLayout) -> dict[str, int]:
    syms = m.symbols()
    syms.update(p.equates)
    return syms


def layout(p: Program, m: MemoryLayout) -> ProgramImage:
    syms = program_symbols(p, m)
    sizes = [instr_size(i, syms) for i in p.items]
    total = sum(sizes)
    available = m.er_max - m.er_min + 2
    if total > available:
        raise RegionOverflow(total, available)
    addrs, a = [], m.er_min
    for s in sizes:
        addrs.append(a)
        a += s
    for name, idx in p.labels.items():
        syms[name] = addrs[idx]
    code = bytearray()
    for instr, addr, size in zip(p.items, addrs, sizes):
        try:
            words = encoding.encode(instr, addr, syms)
        except encoding.EncodingError as exc:
            raise AssemblyError(str(exc), instr.source_line) from None
        if 2 * len(words) != size:
            raise AssemblyError(f"size mismatch for {instr.render()}", instr.source_line)
        for w in words:
            code += (w & 0xFFFF).to_bytes(2, "little")
    return ProgramImage(
        program=p,
        layout=m,
        addr_of=tuple(addrs),
        sizes=tuple(sizes),
        symbols=MappingProxyType(dict(syms)),
        code=bytes(code),
        cfg=frozenset(_build_cfg(p, addrs, syms)),
    )


def _build_cfg(p: Program, addrs, syms) -> list[Edge]:
    edges = []
    n = len(p.items)
    for i, instr in enumerate(p.items):
        here = addrs[i]
        nxt = addrs[i + 1] if i + 1 < n else None
        cls = classify(instr)
        if instr.mnemonic == "halt":
            continue
        if cls is CfClass.COND_BRANCH:
            edges.append(Edge(here, instr.operands[0].resolve(syms), "cond_taken"))
            edges.append(Edge(here, nxt, "cond_not_taken"))
        elif cls is CfClass.STATIC_CF:
            edges.append(Edge(here, instr.operands[0].resolve(syms), "static"))
        elif cls is CfClass.INDIRECT_CF:
            edges.append(Edge(here, None, "indirect_unknown"))
        else:
            edges.append(Edge(here, nxt, "fallthrough"))
    return edges
