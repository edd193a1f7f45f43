"""CF-Log instrumentation pass.

The pass rewrites a Program so that every runtime control-flow decision is
pushed onto a downward-growing log at the top of OR, addressed by a reserved
cursor register:

* entry check: the cursor must equal OR_MAX when execution starts;
* indirect transfers (ret, br/call through registers or memory) log their
  destination before transferring;
* conditional branches log a snapshot of SR and restore it before branching;
* indirect writes are followed by a guard that traps when the target lies
  in the live log ``[cursor, OR_MAX]``;
* every log push re-checks that the cursor is still inside OR;
* statically predictable loops log their condition registers once on entry
  instead of one SR snapshot per iteration.

Violations jump to a trap label placed after the program's final ``halt``,
i.e. outside the attested executable region, so the execution monitor
itself records the failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .assembler import (
    Program,
    ProgramImage,
    find_free_register,
    layout,
    program_symbols,
)
from .isa import (
    EMULATED_STEP,
    PC,
    SP,
    SR,
    CfClass,
    Instruction,
    Mode,
    Operand,
    classify,
    reads_flags,
    sets_flags,
)
from .assembler import MemoryLayout

GUARD_LABEL_PREFIX = ".LW"


class InstrumentationError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class StaticWriteViolation(InstrumentationError):
    pass


class SrHazard(InstrumentationError):
    pass


@dataclass(frozen=True)
class InstrumentationOptions:
    cursor_reg: int = 4
    enable_o1: bool = True
    enable_o2: bool = True
    entry_size: int = 2
    trap_label: str = ".L11"
    # bytes of regular output at the bottom of OR; None infers it from the
    # program's direct writes into OR
    output_bytes: int | None = None
    scratch_reg: int | None = None

    def __post_init__(self):
        if not 4 <= self.cursor_reg <= 15:
            raise ValueError("cursor register must be one of r4..r15")
        if self.entry_size != 2:
            raise ValueError("CF-Log entries are 16-bit words")


@dataclass(frozen=True)
class StaticLoop:
    """A bottom-tested loop whose trip count follows from its condition
    registers' values at entry.

    ``cmp_src``/``cmp_dst`` are ("imm", value) or ("reg", n) when the flags
    come from a ``cmp``; with ``flag_source == "step"`` the branch tests the
    flags of the induction step itself.
    """

    head_index: int
    branch_index: int
    predicate: str
    byte: bool
    induction_reg: int
    step_op: str
    step_const: int
    flag_source: str
    cmp_src: tuple | None
    cmp_dst: tuple | None
    logged_regs: tuple[int, ...]
    # whether the flag-setting test sees the induction value after the step
    test_after_step: bool = True

    @property
    def body_range(self) -> tuple[int, int]:
        return self.head_index, self.branch_index

    @property
    def induction_step(self) -> int:
        return self.step_const if self.step_op == "add" else -self.step_const

    @property
    def bound(self) -> int | None:
        for side in (self.cmp_src, self.cmp_dst):
            if side and side[0] == "imm":
                return side[1]
        return None


@dataclass(frozen=True)
class Unit:
    """One original instruction (or injected block) and its emitted items."""

    kind: str
    first: int
    last: int
    orig: int | None = None
    orig_index: int | None = None
    source_line: int | None = None
    loop: int | None = None
    labeled: bool = False


@dataclass(frozen=True)
class LoopRecord:
    loop: StaticLoop
    entry_unit: int
    head_unit: int
    branch_unit: int
    head_addr: int = 0
    branch_addr: int = 0


@dataclass(frozen=True)
class Sidecar:
    cursor_reg: int
    scratch_reg: int | None
    trap_label: str
    entry_size: int
    o1: bool
    o2: bool
    output_bytes: int
    units: tuple[Unit, ...]
    loops: tuple[LoopRecord, ...] = ()


@dataclass(frozen=True)
class InstrumentedProgram:
    program: Program
    sidecar: Sidecar


# ---------------------------------------------------------------------------
# templates


def _sym(name: str, addend: int = 0) -> Operand:
    return Operand(Mode.IMM, value=addend, symbol=name)


def _jump(mnemonic: str, label: str) -> Instruction:
    return Instruction(mnemonic, (Operand(Mode.JUMP, symbol=label),))


def log_store(value: Operand, cursor: int, trap: str, entry_size: int = 2) -> list[Instruction]:
    """Push ``value`` at the cursor, step the cursor down, trap if it left OR."""
    step = "decd" if entry_size == 2 else "dec"
    return [
        Instruction("mov", (value, Operand(Mode.INDIRECT, reg=cursor))),
        Instruction(step, (Operand(Mode.REG, reg=cursor),)),
        Instruction("cmp", (_sym("OR_MIN"), Operand(Mode.REG, reg=cursor))),
        _jump("jn", trap),
    ]


def instrument_entry_check(opts: InstrumentationOptions, m: MemoryLayout | None = None, cursor=None) -> list[Instruction]:
    r = opts.cursor_reg if cursor is None else cursor
    return [
        Instruction("cmp", (_sym("OR_MAX"), Operand(Mode.REG, reg=r))),
        _jump("jne", opts.trap_label),
    ]


def logged_destination(instr: Instruction) -> Operand:
    """The operand whose value is the runtime destination of ``instr``."""
    m = instr.mnemonic
    if m == "ret":
        return Operand(Mode.INDIRECT, reg=SP)
    if m in ("call", "br"):
        src = instr.operands[0]
    elif m == "jmp":
        return Operand(Mode.IMM, symbol=instr.operands[0].symbol, value=instr.operands[0].value)
    elif m == "mov" and instr.dst.mode is Mode.REG and instr.dst.reg == PC:
        src = instr.src
    else:
        raise InstrumentationError(f"computed jump {instr.render()} is not supported", instr.source_line)
    if src.mode is Mode.AUTOINC:
        return Operand(Mode.INDIRECT, reg=src.reg)
    return src


def instrument_indirect_cf(instr: Instruction, opts: InstrumentationOptions, m=None, cursor=None) -> list[Instruction]:
    r = opts.cursor_reg if cursor is None else cursor
    return log_store(logged_destination(instr), r, opts.trap_label, opts.entry_size) + [instr]


def instrument_cond_branch(instr: Instruction, opts: InstrumentationOptions, m=None, cursor=None) -> list[Instruction]:
    r = opts.cursor_reg if cursor is None else cursor
    restore = Instruction("mov", (Operand(Mode.INDEXED, reg=r, value=opts.entry_size), Operand(Mode.REG, reg=SR)))
    return log_store(Operand(Mode.REG, reg=SR), r, opts.trap_label, opts.entry_size) + [restore, instr]


def write_guard(instr: Instruction, opts: InstrumentationOptions, cont_label: str, cursor=None, scratch=None) -> list[Instruction]:
    """Checks emitted after an indirect write; ``cont_label`` must be placed
    on whatever follows."""
    r = opts.cursor_reg if cursor is None else cursor
    dst = instr.dst
    pre: list[Instruction] = []
    if dst.mode is Mode.INDIRECT or (dst.mode is Mode.INDEXED and dst.symbol is None and dst.value == 0):
        probe = dst.reg
    else:
        if scratch is None:
            raise InstrumentationError("indexed write needs a scratch register", instr.source_line)
        probe = scratch
        pre = [
            Instruction("mov", (Operand(Mode.REG, reg=dst.reg), Operand(Mode.REG, reg=scratch))),
            Instruction("add", (Operand(Mode.IMM, value=dst.value, symbol=dst.symbol), Operand(Mode.REG, reg=scratch))),
        ]
    return pre + [
        Instruction("cmp", (Operand(Mode.REG, reg=r), Operand(Mode.REG, reg=probe))),
        _jump("jlo", cont_label),
        Instruction("cmp", (_sym("OR_MAX", opts.entry_size), Operand(Mode.REG, reg=probe))),
        _jump("jlo", opts.trap_label),
    ]


def instrument_indirect_write(instr: Instruction, opts: InstrumentationOptions, m=None, cont_label=".LW0", cursor=None, scratch=None):
    return [instr] + write_guard(instr, opts, cont_label, cursor, scratch)


def instrument_static_loop(loop: StaticLoop, opts: InstrumentationOptions, m=None, cursor=None) -> list[Instruction]:
    r = opts.cursor_reg if cursor is None else cursor
    out: list[Instruction] = []
    for reg in loop.logged_regs:
        out += log_store(Operand(Mode.REG, reg=reg), r, opts.trap_label, opts.entry_size)
    return out


def emit_trap(opts: InstrumentationOptions, m=None) -> tuple[str, list[Instruction]]:
    return opts.trap_label, [Instruction("br", (Operand(Mode.IMM, value=0),))]


# ---------------------------------------------------------------------------
# static analysis


def _references(p: Program) -> dict[str, list[int]]:
    refs: dict[str, list[int]] = {}
    for i, instr in enumerate(p.items):
        for op in instr.operands:
            if op.symbol is not None and op.symbol in p.labels:
                refs.setdefault(op.symbol, []).append(i)
    return refs


def _modifies(instr: Instruction, r: int) -> bool:
    if any(op.mode is Mode.AUTOINC and op.reg == r for op in instr.operands):
        return True
    if r == SP and instr.mnemonic in ("push", "pop", "call", "ret"):
        return True
    dst = instr.dst
    return (
        dst is not None
        and instr.mnemonic != "cmp"
        and dst.mode is Mode.REG
        and dst.reg == r
    )


def _as_step(instr: Instruction, syms) -> tuple[str, int] | None:
    if instr.mnemonic in EMULATED_STEP:
        return EMULATED_STEP[instr.mnemonic]
    if instr.mnemonic in ("add", "sub") and instr.src.mode is Mode.IMM:
        if instr.src.symbol is not None and instr.src.symbol not in syms:
            return None
        return instr.mnemonic, instr.src.resolve(syms) & 0xFFFF
    return None


def _cond_side(op: Operand, syms) -> tuple | None:
    if op.mode is Mode.IMM:
        if op.symbol is not None and op.symbol not in syms:
            return None
        return ("imm", op.resolve(syms) & 0xFFFF)
    if op.mode is Mode.REG and op.reg >= 4:
        return ("reg", op.reg)
    return None


def _falls_through(instr: Instruction) -> bool:
    if instr.mnemonic in ("jmp", "ret", "br", "halt"):
        return False
    dst = instr.dst
    return not (dst is not None and dst.mode is Mode.REG and dst.reg == PC and instr.mnemonic != "cmp")


def _analyze_loop(p: Program, h: int, i: int, refs, syms) -> StaticLoop | None:
    branch = p.items[i]
    body = p.items[h:i]
    if not body:
        return None
    for instr in body:
        if instr.mnemonic == "halt" or classify(instr) in (
            CfClass.STATIC_CF,
            CfClass.INDIRECT_CF,
            CfClass.COND_BRANCH,
        ):
            return None
    for name in p.labels_at(h):
        if any(j != i for j in refs.get(name, ())):
            return None
    for k in range(h + 1, i + 1):
        for name in p.labels_at(k):
            if refs.get(name):
                return None
    if h > 0 and not _falls_through(p.items[h - 1]):
        return None
    setter_at = next((k for k in range(i - 1, h - 1, -1) if sets_flags(p.items[k])), None)
    if setter_at is None:
        return None
    setter = p.items[setter_at]
    if setter.mnemonic == "cmp":
        src, dst = _cond_side(setter.src, syms), _cond_side(setter.dst, syms)
        if src is None or dst is None:
            return None
        regs = tuple(dict.fromkeys(s[1] for s in (src, dst) if s[0] == "reg"))
        flag_source = "cmp"
    else:
        if setter.dst.mode is not Mode.REG or setter.dst.reg < 4 or _as_step(setter, syms) is None:
            return None
        src = dst = None
        regs = (setter.dst.reg,)
        flag_source = "step"
    induction = None
    step = None
    step_at = None
    for r in regs:
        writers = [k for k in range(h, i) if _modifies(p.items[k], r)]
        if not writers:
            continue
        if len(writers) != 1 or induction is not None:
            return None
        w = p.items[writers[0]]
        s = _as_step(w, syms)
        if s is None or w.byte != setter.byte or w.dst.mode is not Mode.REG:
            return None
        induction, step, step_at = r, s, writers[0]
    if induction is None:
        return None
    if flag_source == "step" and step_at != setter_at:
        return None
    return StaticLoop(
        head_index=h,
        branch_index=i,
        predicate=branch.mnemonic,
        byte=setter.byte,
        induction_reg=induction,
        step_op=step[0],
        step_const=step[1],
        flag_source=flag_source,
        cmp_src=src,
        cmp_dst=dst,
        logged_regs=regs,
        test_after_step=setter_at >= step_at,
    )


def detect_static_loops(p: Program, image: ProgramImage | None = None, m: MemoryLayout | None = None) -> list[StaticLoop]:
    """All backward conditional branches whose trip count is predictable."""
    syms = dict(image.symbols) if image is not None else program_symbols(p, m or MemoryLayout())
    refs = _references(p)
    loops = []
    for i, instr in enumerate(p.items):
        if classify(instr) is not CfClass.COND_BRANCH:
            continue
        h = p.labels.get(instr.operands[0].symbol)
        if h is None or h > i:
            continue
        loop = _analyze_loop(p, h, i, refs, syms)
        if loop is not None:
            loops.append(loop)
    return loops


def _check_sr_hazard(p: Program, start: int, what: str):
    for instr in p.items[start:]:
        if reads_flags(instr):
            raise SrHazard(f"{what} clobbers SR read by {instr.render()}", instr.source_line)
        if sets_flags(instr) or classify(instr) in (CfClass.STATIC_CF, CfClass.INDIRECT_CF) or instr.mnemonic == "halt":
            return


def _output_bytes(p: Program, m: MemoryLayout, syms, opts: InstrumentationOptions) -> int:
    hi = 0
    for instr in p.items:
        if classify(instr) is not CfClass.DIRECT_WRITE:
            continue
        addr = instr.dst.resolve(syms)
        width = 1 if instr.byte else 2
        if not instr.byte:
            addr &= 0xFFFE
        if not m.in_or(addr):
            continue
        end = addr + width
        if opts.output_bytes is not None:
            if end > m.or_min + opts.output_bytes:
                raise StaticWriteViolation(
                    f"direct write to 0x{addr:04x} lands in the reserved CF-Log area", instr.source_line
                )
        elif end > m.or_max:
            raise StaticWriteViolation(f"direct write to 0x{addr:04x} hits the CF-Log top", instr.source_line)
        hi = max(hi, end - m.or_min)
    if opts.output_bytes is not None:
        return opts.output_bytes
    return hi + (hi & 1)


# ---------------------------------------------------------------------------
# the pass


class _Emitter:
    def __init__(self):
        self.items: list[Instruction] = []
        self.labels: dict[str, int] = {}
        self.pending: list[str] = []
        self.units: list[Unit] = []

    def emit(self, instrs, labels=()) -> tuple[int, int]:
        first = len(self.items)
        for name in list(self.pending) + list(labels):
            self.labels[name] = first
        self.pending = []
        self.items.extend(instrs)
        return first, len(self.items) - 1

    def unit(self, kind, instrs, labels=(), orig_offset=None, **kw) -> Unit:
        first, last = self.emit(instrs, labels)
        orig = None if orig_offset is None else first + orig_offset
        u = Unit(kind=kind, first=first, last=last, orig=orig, **kw)
        self.units.append(u)
        return u


def instrument(p: Program, m: MemoryLayout, opts: InstrumentationOptions = InstrumentationOptions()) -> InstrumentedProgram:
    if opts.trap_label in p.labels or opts.trap_label in p.equates:
        raise InstrumentationError(f"trap label {opts.trap_label} already used by the program")
    if p.items[-1].mnemonic != "halt":
        raise InstrumentationError("program must end with halt (the legal exit)", p.items[-1].source_line)
    cursor = find_free_register(p, opts.cursor_reg)
    syms = program_symbols(p, m)
    if opts.output_bytes is None and "OUTPUT_BYTES" in p.equates:
        opts = replace(opts, output_bytes=p.equates["OUTPUT_BYTES"])
    output_bytes = _output_bytes(p, m, syms, opts)

    needs_scratch = False
    for instr in p.items:
        cls = classify(instr)
        if cls in (CfClass.STATIC_CF,) and instr.operands[0].symbol not in p.labels:
            raise InstrumentationError(
                f"{instr.render()} leaves the instrumented program", instr.source_line
            )
        if cls is CfClass.INDIRECT_CF:
            logged_destination(instr)
        if cls is CfClass.INDIRECT_WRITE:
            d = instr.dst
            if d.mode is Mode.INDEXED and (d.symbol is not None or d.value != 0):
                needs_scratch = True
    scratch = None
    if needs_scratch:
        preferred = opts.scratch_reg if opts.scratch_reg is not None else (5 if cursor != 5 else 6)
        scratch = find_free_register(p, preferred, exclude={cursor})

    image = layout(p, m)
    loops = detect_static_loops(p, image) if opts.enable_o2 else []
    loop_by_branch = {lp.branch_index: k for k, lp in enumerate(loops)}
    loop_by_head = {lp.head_index: k for k, lp in enumerate(loops)}

    for i, instr in enumerate(p.items):
        if classify(instr) is CfClass.INDIRECT_WRITE:
            _check_sr_hazard(p, i + 1, f"write guard after line {instr.source_line}")
    for lp in loops:
        _check_sr_hazard(p, lp.head_index, "loop entry log")

    taken = set(p.labels) | set(p.equates) | {opts.trap_label}
    guard_id = 0

    def guard_label():
        nonlocal guard_id
        while f"{GUARD_LABEL_PREFIX}{guard_id}" in taken:
            guard_id += 1
        name = f"{GUARD_LABEL_PREFIX}{guard_id}"
        taken.add(name)
        return name

    refs = _references(p)
    em = _Emitter()
    entry_labels = [n for n in p.labels_at(0) if not refs.get(n)]
    em.unit("prologue", instrument_entry_check(opts, cursor=cursor), labels=entry_labels)
    loop_units: dict[int, dict[str, int]] = {}

    for i, instr in enumerate(p.items):
        labels = [n for n in p.labels_at(i) if not (i == 0 and n in entry_labels)]
        kw = dict(orig_index=i, source_line=instr.source_line, labeled=bool(labels))
        if i in loop_by_head:
            k = loop_by_head[i]
            loop_units.setdefault(k, {})["entry"] = len(em.units)
            em.unit("loop_entry", instrument_static_loop(loops[k], opts, cursor=cursor), loop=k)
        if i in loop_by_head:
            loop_units[loop_by_head[i]]["head"] = len(em.units)
        cls = classify(instr)
        if i in loop_by_branch:
            loop_units[loop_by_branch[i]]["branch"] = len(em.units)
            em.unit("loop_branch", [instr], labels, orig_offset=0, loop=loop_by_branch[i], **kw)
        elif instr.mnemonic == "halt":
            em.unit("halt", [instr], labels, orig_offset=0, **kw)
        elif cls is CfClass.COND_BRANCH:
            seq = instrument_cond_branch(instr, opts, cursor=cursor)
            em.unit("cond", seq, labels, orig_offset=len(seq) - 1, **kw)
        elif cls is CfClass.INDIRECT_CF:
            seq = instrument_indirect_cf(instr, opts, cursor=cursor)
            em.unit("indirect", seq, labels, orig_offset=len(seq) - 1, **kw)
        elif cls is CfClass.STATIC_CF:
            if opts.enable_o1:
                em.unit("static", [instr], labels, orig_offset=0, **kw)
            else:
                seq = log_store(logged_destination(instr), cursor, opts.trap_label, opts.entry_size) + [instr]
                em.unit("static_logged", seq, labels, orig_offset=len(seq) - 1, **kw)
        elif cls is CfClass.INDIRECT_WRITE:
            cont = guard_label()
            seq = [instr] + write_guard(instr, opts, cont, cursor, scratch)
            em.unit("write", seq, labels, orig_offset=0, **kw)
            em.pending.append(cont)
        else:
            em.unit("plain", [instr], labels, orig_offset=0, **kw)

    trap_label, trap_body = emit_trap(opts, m)
    em.unit("trap", trap_body, [trap_label])

    out = Program(tuple(em.items), em.labels, dict(p.equates), entry_labels[0] if entry_labels else None)
    out_image = layout(out, m)
    records = []
    for k, lp in enumerate(loops):
        u = loop_units[k]
        records.append(
            LoopRecord(
                loop=lp,
                entry_unit=u["entry"],
                head_unit=u["head"],
                branch_unit=u["branch"],
                head_addr=out_image.addr_of[em.units[u["head"]].first],
                branch_addr=out_image.addr_of[em.units[u["branch"]].first],
            )
        )
    sidecar = Sidecar(
        cursor_reg=cursor,
        scratch_reg=scratch,
        trap_label=trap_label,
        entry_size=opts.entry_size,
        o1=opts.enable_o1,
        o2=opts.enable_o2,
        output_bytes=output_bytes,
        units=tuple(em.units),
        loops=tuple(records),
    )
    return InstrumentedProgram(out, sidecar)


# ---------------------------------------------------------------------------
# sidecar file

SIDECAR_MAGIC = "tinycfa-sidecar 1"


def _opt(v) -> str:
    return "-" if v is None else str(v)


def _side(s) -> str:
    return "-" if s is None else f"{s[0]}:{s[1]}"


def render_sidecar(sc: Sidecar) -> str:
    lines = [
        SIDECAR_MAGIC,
        f"cursor_reg r{sc.cursor_reg}",
        f"scratch_reg {'-' if sc.scratch_reg is None else f'r{sc.scratch_reg}'}",
        f"trap_label {sc.trap_label}",
        f"entry_size {sc.entry_size}",
        f"o1 {int(sc.o1)}",
        f"o2 {int(sc.o2)}",
        f"output_bytes {sc.output_bytes}",
    ]
    for n, u in enumerate(sc.units):
        lines.append(
            f"unit {n} {u.kind} first={u.first} last={u.last} orig={_opt(u.orig)} "
            f"orig_index={_opt(u.orig_index)} line={_opt(u.source_line)} loop={_opt(u.loop)} "
            f"labeled={int(u.labeled)}"
        )
    for n, rec in enumerate(sc.loops):
        lp = rec.loop
        lines.append(
            f"loop {n} head_index={lp.head_index} branch_index={lp.branch_index} pred={lp.predicate} "
            f"byte={int(lp.byte)} induction=r{lp.induction_reg} step={lp.step_op}:{lp.step_const} "
            f"flags={lp.flag_source} after_step={int(lp.test_after_step)} cmp_src={_side(lp.cmp_src)} cmp_dst={_side(lp.cmp_dst)} "
            f"logged={','.join(f'r{r}' for r in lp.logged_regs)} entry_unit={rec.entry_unit} "
            f"head_unit={rec.head_unit} branch_unit={rec.branch_unit} "
            f"head_addr=0x{rec.head_addr:04x} branch_addr=0x{rec.branch_addr:04x}"
        )
    return "\n".join(lines) + "\n"


class SidecarFormatError(ValueError):
    pass


def _kv(fields: list[str]) -> dict[str, str]:
    out = {}
    for f in fields:
        k, _, v = f.partition("=")
        out[k] = v
    return out


def _int_or_none(v: str):
    return None if v == "-" else int(v, 0)


def _parse_side(v: str):
    if v == "-":
        return None
    kind, _, num = v.partition(":")
    return (kind, int(num))


def parse_sidecar(text: str) -> Sidecar:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != SIDECAR_MAGIC:
        raise SidecarFormatError("missing sidecar header")
    head: dict[str, str] = {}
    units, loops = [], []
    try:
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "unit":
                kv = _kv(parts[3:])
                units.append(
                    Unit(
                        kind=parts[2],
                        first=int(kv["first"]),
                        last=int(kv["last"]),
                        orig=_int_or_none(kv["orig"]),
                        orig_index=_int_or_none(kv["orig_index"]),
                        source_line=_int_or_none(kv["line"]),
                        loop=_int_or_none(kv["loop"]),
                        labeled=kv["labeled"] == "1",
                    )
                )
            elif parts[0] == "loop":
                kv = _kv(parts[2:])
                op, _, c = kv["step"].partition(":")
                lp = StaticLoop(
                    head_index=int(kv["head_index"]),
                    branch_index=int(kv["branch_index"]),
                    predicate=kv["pred"],
                    byte=kv["byte"] == "1",
                    induction_reg=int(kv["induction"][1:]),
                    step_op=op,
                    step_const=int(c),
                    flag_source=kv["flags"],
                    cmp_src=_parse_side(kv["cmp_src"]),
                    cmp_dst=_parse_side(kv["cmp_dst"]),
                    logged_regs=tuple(int(r[1:]) for r in kv["logged"].split(",")),
                    test_after_step=kv["after_step"] == "1",
                )
                loops.append(
                    LoopRecord(
                        loop=lp,
                        entry_unit=int(kv["entry_unit"]),
                        head_unit=int(kv["head_unit"]),
                        branch_unit=int(kv["branch_unit"]),
                        head_addr=int(kv["head_addr"], 16),
                        branch_addr=int(kv["branch_addr"], 16),
                    )
                )
            else:
                head[parts[0]] = parts[1]
        scratch = head["scratch_reg"]
        return Sidecar(
            cursor_reg=int(head["cursor_reg"][1:]),
            scratch_reg=None if scratch == "-" else int(scratch[1:]),
            trap_label=head["trap_label"],
            entry_size=int(head["entry_size"]),
            o1=head["o1"] == "1",
            o2=head["o2"] == "1",
            output_bytes=int(head["output_bytes"]),
            units=tuple(units),
            loops=tuple(loops),
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise SidecarFormatError(f"malformed sidecar: {exc}") from None
