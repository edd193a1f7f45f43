"""Instruction-level MCU simulator with a software model of a
proof-of-execution monitor.

The monitor watches every fetch, every memory write and every injected
adversary event. It raises the EXEC flag only when the executable region
ran atomically from its first instruction to its legal exit, and it clears
the flag (sticky until the next fresh start) on any of:

* the PC leaving ER other than through the exit instruction;
* an interrupt while executing;
* a write from outside the program (DMA, external code) while executing,
  or into ER/OR after execution finished;
* a write by the program into ER;
* ER contents at attestation time differing from those at start.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

from . import encoding
from .assembler import MemoryLayout, ProgramImage
from .isa import (
    EMULATED_STEP,
    PC,
    SP,
    SR,
    Instruction,
    Mode,
    alu,
    branch_taken,
    instr_cycles,
)


class LayoutMismatch(ValueError):
    pass


class InvalidFetch(RuntimeError):
    pass


class CycleBudgetExceeded(RuntimeError):
    def __init__(self, state, trace):
        self.state = state
        self.trace = trace
        super().__init__(f"cycle budget exceeded after {state.cycles} cycles")


class Phase(enum.Enum):
    IDLE = "Idle"
    EXECUTING = "Executing"
    DONE = "Done"


@dataclass
class MonitorState:
    phase: Phase = Phase.IDLE
    er_hash_at_start: bytes | None = None
    or_dirty_outside_exec: bool = False
    exec_flag: int = 0
    violation: str | None = None


@dataclass(frozen=True)
class Event:
    kind: str  # interrupt | dma | codewrite
    at_cycle: int
    addr: int = 0
    value: int = 0

    KINDS = ("interrupt", "dma", "codewrite")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def render(self) -> str:
        if self.kind == "interrupt":
            return f"{self.at_cycle} interrupt"
        return f"{self.at_cycle} {self.kind} 0x{self.addr:04x}=0x{self.value:04x}"


def interrupt(at_cycle: int) -> Event:
    return Event("interrupt", at_cycle)


def dma_write(addr: int, value: int, at_cycle: int) -> Event:
    return Event("dma", at_cycle, addr, value)


def code_write(addr: int, value: int, at_cycle: int) -> Event:
    return Event("codewrite", at_cycle, addr, value)


def parse_events(text: str) -> list[Event]:
    """Events script: one ``cycle action [addr=val]`` per line, ``#`` comments."""
    events = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            cycle, kind = int(parts[0], 0), parts[1]
            if kind == "interrupt":
                ev = Event(kind, cycle)
            else:
                a, _, v = parts[2].partition("=")
                ev = Event(kind, cycle, int(a, 0), int(v, 0))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"events line {n}: {exc}") from None
        events.append(ev)
    return events


def render_events(events) -> str:
    return "".join(ev.render() + "\n" for ev in events)


@dataclass
class DeviceState:
    regs: list[int]
    mem: bytearray
    layout: MemoryLayout
    er_min: int
    er_max: int
    monitor: MonitorState = field(default_factory=MonitorState)
    cycles: int = 0
    halted: bool = False
    stop_reason: str | None = None
    last_writes: list = field(default_factory=list)
    last_instr: Instruction | None = None
    _decoded: dict = field(default_factory=dict, repr=False)

    @property
    def exec_bit(self) -> int:
        return self.monitor.exec_flag

    @property
    def pc(self) -> int:
        return self.regs[PC]

    def read_word(self, addr: int) -> int:
        a = addr & 0xFFFE
        return self.mem[a] | (self.mem[a + 1] << 8)

    def read_byte(self, addr: int) -> int:
        return self.mem[addr & 0xFFFF]

    def er_bytes(self) -> bytes:
        return bytes(self.mem[self.er_min : self.er_max + 2])

    def or_bytes(self) -> bytes:
        m = self.layout
        return bytes(self.mem[m.or_min : m.or_max + 2])

    def poke_words(self, addr: int, words) -> None:
        """Harness-side setup write (inputs); not observed by the monitor."""
        for k, w in enumerate(words):
            a = (addr + 2 * k) & 0xFFFE
            self.mem[a] = w & 0xFF
            self.mem[a + 1] = (w >> 8) & 0xFF
        self._decoded.clear()


def er_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def load(image: ProgramImage, m: MemoryLayout, initial_regs: dict[int, int] | None = None) -> DeviceState:
    if image.layout != m:
        raise LayoutMismatch("image was laid out for a different memory layout")
    mem = bytearray(0x10000)
    mem[m.er_min : m.er_min + len(image.code)] = image.code
    regs = [0] * 16
    regs[PC] = m.er_min
    regs[SP] = m.stack_init
    for r, v in (initial_regs or {}).items():
        regs[r] = v & 0xFFFF
    return DeviceState(regs=regs, mem=mem, layout=m, er_min=m.er_min, er_max=image.exit_addr)


def boot_regs(m: MemoryLayout, cursor_reg: int = 4) -> dict[int, int]:
    """Registers the caller application sets before entry: the cursor."""
    return {cursor_reg: m.or_max}


# ---------------------------------------------------------------------------
# monitor


def _in_er(s: DeviceState, addr: int) -> bool:
    return s.er_min <= addr <= s.er_max + 1


def _invalidate(s: DeviceState, reason: str) -> None:
    mon = s.monitor
    mon.exec_flag = 0
    if mon.violation is None:
        mon.violation = reason


def monitor_update(s: DeviceState, fetch_pc: int | None = None, write_set=(), event: Event | None = None,
                   next_pc: int | None = None) -> MonitorState:
    """One monitor transition.

    ``fetch_pc`` is the address of an instruction about to execute,
    ``write_set`` the (addr, width) pairs written by it, ``next_pc`` the PC
    after it, and ``event`` an adversary event being applied.
    """
    mon = s.monitor
    m = s.layout
    if fetch_pc is not None:
        if fetch_pc == s.er_min and mon.phase is not Phase.EXECUTING:
            mon.phase = Phase.EXECUTING
            mon.er_hash_at_start = er_digest(s.er_bytes())
            mon.or_dirty_outside_exec = False
            mon.exec_flag = 0
            mon.violation = None
        elif mon.phase is Phase.EXECUTING and fetch_pc == s.er_max:
            mon.phase = Phase.DONE
            if mon.violation is None:
                mon.exec_flag = 1
    if mon.phase is Phase.EXECUTING:
        for addr, width in write_set:
            if _in_er(s, addr) or _in_er(s, addr + width - 1):
                _invalidate(s, "write into ER")
        if next_pc is not None and not (s.er_min <= next_pc <= s.er_max):
            _invalidate(s, f"PC left ER to 0x{next_pc:04x}")
    if event is not None:
        width = 2
        touches = any(
            _in_er(s, a) or m.in_or(a) for a in (event.addr, event.addr + width - 1)
        )
        if mon.phase is Phase.EXECUTING:
            _invalidate(s, f"{event.kind} during execution")
        elif event.kind != "interrupt" and touches:
            mon.or_dirty_outside_exec = True
            if mon.phase is Phase.DONE:
                _invalidate(s, f"{event.kind} write into ER/OR after execution")
    return mon


def check_before_attest(s: DeviceState) -> None:
    """Condition applied immediately before measurement: ER unchanged."""
    mon = s.monitor
    if mon.er_hash_at_start is None:
        mon.exec_flag = 0
        return
    if er_digest(s.er_bytes()) != mon.er_hash_at_start:
        _invalidate(s, "ER modified since start")


def apply_event(s: DeviceState, ev: Event) -> None:
    if ev.kind != "interrupt":
        a = ev.addr & 0xFFFE
        s.mem[a] = ev.value & 0xFF
        s.mem[a + 1] = (ev.value >> 8) & 0xFF
        if a >= s.er_min - 6:
            s._decoded.clear()
    monitor_update(s, event=ev)


# ---------------------------------------------------------------------------
# execution


def fetch(s: DeviceState, addr: int) -> tuple[Instruction, int]:
    hit = s._decoded.get(addr)
    if hit is not None:
        return hit
    if addr & 1:
        raise InvalidFetch(f"odd PC 0x{addr:04x}")
    if addr < s.layout.er_min:
        raise InvalidFetch(f"fetch from data memory at 0x{addr:04x}")
    try:
        hit = encoding.decode(s.read_word, addr)
    except (encoding.EncodingError, KeyError) as exc:
        raise InvalidFetch(f"undecodable word at 0x{addr:04x}: {exc}") from None
    s._decoded[addr] = hit
    return hit


class _Exec:
    """Per-instruction operand access with write recording."""

    __slots__ = ("s", "writes", "next_pc")

    def __init__(self, s: DeviceState, next_pc: int):
        self.s = s
        self.writes: list[tuple[int, int, int]] = []
        self.next_pc = next_pc

    def reg(self, r: int) -> int:
        return self.next_pc if r == PC else self.s.regs[r]

    def addr(self, op) -> int:
        if op.mode is Mode.INDEXED:
            return (self.reg(op.reg) + op.value) & 0xFFFF
        if op.mode is Mode.ABS:
            return op.value & 0xFFFF
        return self.reg(op.reg)

    def load(self, addr: int, byte: bool) -> int:
        return self.s.read_byte(addr) if byte else self.s.read_word(addr)

    def read(self, op, byte: bool) -> int:
        mode = op.mode
        if mode is Mode.REG:
            v = self.reg(op.reg)
            return v & 0xFF if byte else v
        if mode is Mode.IMM or mode is Mode.JUMP:
            return op.value & (0xFF if byte else 0xFFFF)
        v = self.load(self.addr(op), byte)
        if mode is Mode.AUTOINC:
            step = 1 if byte and op.reg != SP else 2
            self.s.regs[op.reg] = (self.s.regs[op.reg] + step) & 0xFFFF
        return v

    def store(self, addr: int, value: int, byte: bool) -> None:
        mem = self.s.mem
        if byte:
            mem[addr] = value & 0xFF
            self.writes.append((addr, value & 0xFF, 1))
        else:
            a = addr & 0xFFFE
            mem[a] = value & 0xFF
            mem[a + 1] = (value >> 8) & 0xFF
            self.writes.append((a, value & 0xFFFF, 2))
            addr = a
        if addr >= self.s.er_min - 6:
            self.s._decoded.clear()

    def write(self, op, value: int, byte: bool, addr: int | None = None) -> None:
        if op.mode is Mode.REG:
            v = value & 0xFF if byte else value & 0xFFFF
            if op.reg == PC:
                self.next_pc = v
            else:
                self.s.regs[op.reg] = v
            return
        self.store(self.addr(op) if addr is None else addr, value, byte)


def step(s: DeviceState) -> DeviceState:
    """Execute one instruction and feed the monitor."""
    if s.halted:
        raise RuntimeError("device is halted")
    pc = s.regs[PC]
    instr, size = fetch(s, pc)
    monitor_update(s, fetch_pc=pc)
    x = _Exec(s, (pc + size) & 0xFFFF)
    m = instr.mnemonic
    byte = instr.byte
    regs = s.regs
    if m == "halt":
        s.halted = True
        s.stop_reason = "halt"
        x.next_pc = pc
    elif m == "nop":
        pass
    elif m in ("jmp", "jne", "jeq", "jn", "jlo", "jhs", "jge", "jl"):
        if branch_taken(m, regs[SR]):
            x.next_pc = instr.operands[0].value
    elif m == "ret":
        x.next_pc = s.read_word(regs[SP])
        regs[SP] = (regs[SP] + 2) & 0xFFFF
    elif m == "call":
        target = x.read(instr.operands[0], False)
        regs[SP] = (regs[SP] - 2) & 0xFFFF
        x.store(regs[SP], x.next_pc, False)
        x.next_pc = target
    elif m == "br":
        x.next_pc = x.read(instr.operands[0], False)
    elif m == "push":
        v = x.read(instr.operands[0], byte)
        regs[SP] = (regs[SP] - 2) & 0xFFFF
        x.store(regs[SP], v, byte)
    elif m == "pop":
        v = s.read_word(regs[SP])
        regs[SP] = (regs[SP] + 2) & 0xFFFF
        x.write(instr.operands[0], v, byte)
    else:
        if m in EMULATED_STEP:
            core, k = EMULATED_STEP[m]
            src, dst = k, instr.operands[0]
        else:
            core = m
            src, dst = x.read(instr.operands[0], byte), instr.operands[1]
        dst_addr = None if dst.mode is Mode.REG else x.addr(dst)
        if core == "mov":
            result, sr = src, regs[SR]
        else:
            cur = x.reg(dst.reg) if dst.mode is Mode.REG else x.load(dst_addr, byte)
            result, sr = alu(core, src, cur & (0xFF if byte else 0xFFFF), byte, regs[SR])
        regs[SR] = sr
        if core != "cmp":
            x.write(dst, result, byte, dst_addr)
    s.cycles += instr_cycles(instr)
    regs[PC] = x.next_pc
    s.last_writes = x.writes
    s.last_instr = instr
    monitor_update(s, write_set=[(a, w) for a, _, w in x.writes], next_pc=None if s.halted else x.next_pc)
    if s.monitor.violation is not None and s.monitor.phase is Phase.EXECUTING and not s.halted:
        s.halted = True
        s.stop_reason = "violation"
    return s


@dataclass(frozen=True)
class TraceStep:
    cycle: int
    pc: int
    mnemonic: str
    writes: tuple = ()

    def render(self) -> str:
        w = "".join(f" 0x{a:04x}=0x{v:0{2 * n}x}" for a, v, n in self.writes)
        return f"{self.cycle} 0x{self.pc:04x} {self.mnemonic}" + (f" writes{w}" if w else "")


@dataclass
class Trace:
    steps: list[TraceStep] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)

    @property
    def pcs(self) -> list[int]:
        return [t.pc for t in self.steps]

    def render(self) -> str:
        return "".join(t.render() + "\n" for t in self.steps)


def parse_trace(text: str) -> Trace:
    steps = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        writes = []
        if len(parts) > 3 and parts[3] == "writes":
            for w in parts[4:]:
                a, _, v = w.partition("=")
                writes.append((int(a, 16), int(v, 16), (len(v) - 2) // 2))
        steps.append(TraceStep(int(parts[0]), int(parts[1], 16), parts[2], tuple(writes)))
    return Trace(steps)


def run_ex(s: DeviceState, max_cycles: int = 2_000_000, events=(), record=True) -> tuple[DeviceState, Trace]:
    """Run until halt or a monitor violation. Events fire once the cycle
    counter reaches their ``at_cycle``; those still pending when execution
    stops are applied afterwards, in order (post-execution tampering)."""
    if s.regs[PC] != s.er_min:
        raise ValueError("execution must start at ER_min")
    trace = Trace()
    pending = sorted(events, key=lambda e: e.at_cycle)
    k = 0
    steps = trace.steps
    while not s.halted:
        while k < len(pending) and pending[k].at_cycle <= s.cycles:
            apply_event(s, pending[k])
            trace.events.append(pending[k])
            k += 1
        if s.halted:
            break
        if s.cycles >= max_cycles:
            raise CycleBudgetExceeded(s, trace)
        pc, cyc = s.regs[PC], s.cycles
        step(s)
        if record:
            steps.append(TraceStep(cyc, pc, s.last_instr.mnemonic, tuple(s.last_writes)))
    for ev in pending[k:]:
        apply_event(s, ev)
        trace.events.append(ev)
    if s.monitor.violation is not None and s.stop_reason == "halt":
        s.stop_reason = "violation"
    return s, trace


def render_state(s: DeviceState) -> str:
    """Final state dump used by the CLI."""
    mon = s.monitor
    lines = [
        f"exec {s.exec_bit}",
        f"phase {mon.phase.value}",
        f"violation {mon.violation or '-'}",
        f"stop {s.stop_reason or '-'}",
        f"cycles {s.cycles}",
        "regs " + " ".join(f"r{i}=0x{v:04x}" for i, v in enumerate(s.regs)),
    ]
    return "\n".join(lines) + "\n"
