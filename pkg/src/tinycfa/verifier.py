"""Verifier-side CF-Log decoding and abstract replay.

The log carries no tags. Replay walks the instrumented program unit by unit
and each logging unit it reaches consumes the next word, which fixes that
word's meaning (destination, SR snapshot or loop operand). Any tampering or
hijack therefore shows up as a replay failure rather than a parse error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .assembler import ProgramImage
from .attestation import AttestationReport, Challenge, DeviceKey, NonceLog, TokenCheck, verify_report
from .instrumenter import Sidecar, StaticLoop
from .isa import alu, branch_taken

MAX_TRIPS = 0x10000
REPLAY_BUDGET = 20_000_000


class NonTerminatingLoop(ValueError):
    pass


class EntryKind(enum.Enum):
    DESTINATION = "Destination"
    SR_SNAPSHOT = "SrSnapshot"
    LOOP_OPERAND = "LoopOperand"


@dataclass(frozen=True)
class CfLogEntry:
    index: int
    value: int
    kind: EntryKind


class Outcome(enum.Enum):
    ACCEPT = "Accept"
    REJECT_TOKEN = "RejectToken"
    REJECT_EXEC = "RejectExec"
    REJECT_CONTROL_FLOW = "RejectControlFlow"
    REJECT_OVERLAP = "RejectOverlap"


EXIT_CODES = {
    Outcome.ACCEPT: 0,
    Outcome.REJECT_TOKEN: 2,
    Outcome.REJECT_EXEC: 3,
    Outcome.REJECT_CONTROL_FLOW: 4,
    Outcome.REJECT_OVERLAP: 5,
}


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    reason: str | None = None
    log_index: int | None = None
    detail: str = ""
    path: tuple[int, ...] = ()
    entries: tuple[CfLogEntry, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPT

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    def render(self) -> str:
        lines = [f"outcome {self.outcome.value}"]
        if self.reason:
            lines.append(f"reason {self.reason}")
        if self.log_index is not None:
            lines.append(f"log_index {self.log_index}")
        if self.detail:
            lines.append(f"detail {self.detail}")
        lines.append(f"entries {len(self.entries)}")
        if self.outcome is Outcome.ACCEPT:
            lines.append("path " + render_path(self.path))
        return "\n".join(lines) + "\n"


def render_path(path) -> str:
    """Block path with runs of one leader collapsed to ``0xADDR*count``."""
    out, i = [], 0
    while i < len(path):
        j = i
        while j < len(path) and path[j] == path[i]:
            j += 1
        out.append(f"0x{path[i]:04x}" + (f"*{j - i}" if j - i > 1 else ""))
        i = j
    return " ".join(out)


def parse_path(text: str) -> tuple[int, ...]:
    out = []
    for tok in text.split():
        a, _, n = tok.partition("*")
        out += [int(a, 16)] * (int(n) if n else 1)
    return tuple(out)


def parse_verdict(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        k, _, v = line.partition(" ")
        out[k] = v
    return out


@dataclass
class ReplayState:
    unit: int = 0
    log_index: int = 0
    trip_budget: dict[int, int] = field(default_factory=dict)
    consumed_output_bytes: int = 0


class _Reject(Exception):
    def __init__(self, reason: str, log_index: int | None, detail: str = ""):
        self.reason, self.log_index, self.detail = reason, log_index, detail


# ---------------------------------------------------------------------------
# loop trip counts


def induction_trips(start: int, step: int, bound: int, predicate: str, byte: bool = False) -> int:
    """Top-tested trip count: iterations of ``while pred(cmp #bound, v): v += step``."""
    mask = 0xFF if byte else 0xFFFF
    v, n = start & mask, 0
    while True:
        _, sr = alu("cmp", bound, v, byte, 0)
        if not branch_taken(predicate, sr):
            return n
        n += 1
        if n > MAX_TRIPS:
            raise NonTerminatingLoop(f"{predicate} with step {step} never exits")
        v = (v + step) & mask


def simulate_loop_trips(values, loop: StaticLoop) -> int:
    """Body executions of a bottom-tested loop given its logged condition
    registers (in ``loop.logged_regs`` order) at entry."""
    regs = dict(zip(loop.logged_regs, values))
    mask = 0xFF if loop.byte else 0xFFFF
    ind = loop.induction_reg
    v = regs[ind] & mask

    def side(s, cur):
        if s[0] == "imm":
            return s[1]
        return cur if s[1] == ind else regs[s[1]]

    trips = 0
    while True:
        trips += 1
        if trips > MAX_TRIPS:
            raise NonTerminatingLoop(f"loop at item {loop.head_index} never exits")
        nv, step_sr = alu(loop.step_op, loop.step_const, v, loop.byte, 0)
        if loop.flag_source == "step":
            sr = step_sr
        else:
            cur = nv if loop.test_after_step else v
            _, sr = alu("cmp", side(loop.cmp_src, cur), side(loop.cmp_dst, cur), loop.byte, 0)
        v = nv & mask
        if not branch_taken(loop.predicate, sr):
            return trips


# ---------------------------------------------------------------------------
# replay


class ReplayModel:
    """Static facts about an instrumented image and its sidecar."""

    def __init__(self, image: ProgramImage, sidecar: Sidecar):
        self.image = image
        self.sc = sidecar
        self.p = image.program
        self.units = sidecar.units
        self.unit_at_item = {}
        for n, u in enumerate(self.units):
            self.unit_at_item[u.first] = n
        self.unit_addr = [image.addr_of[u.first] for u in self.units]
        self.unit_at_addr = {a: n for n, a in enumerate(self.unit_addr)}
        self.exit_unit = max(n for n, u in enumerate(self.units) if u.kind == "halt")
        self.leaders = self._leaders()
        self.loop_of_branch = {rec.branch_unit: k for k, rec in enumerate(sidecar.loops)}

    def instr(self, n: int):
        return self.p.items[self.units[n].orig]

    def target_unit(self, n: int) -> int:
        sym = self.instr(n).operands[0].symbol
        return self.unit_at_item[self.p.labels[sym]]

    def _leaders(self) -> frozenset[int]:
        lead = {self.unit_addr[0]}
        labeled_items = set(self.p.labels.values())
        cf_kinds = ("cond", "indirect", "static", "static_logged", "loop_branch")
        for n, u in enumerate(self.units):
            if u.kind == "trap":
                continue
            if u.first in labeled_items:
                lead.add(self.unit_addr[n])
            if n > 0 and self.units[n - 1].kind in cf_kinds:
                lead.add(self.unit_addr[n])
        for rec in self.sc.loops:
            lead.add(self.unit_addr[rec.head_unit])
        return frozenset(lead)


def log_entries(report: AttestationReport, count: int) -> list[int]:
    """The first ``count`` words of the log, top-down from OR_max."""
    return [report.or_word(report.or_max - 2 * i) for i in range(count)]


def decode_and_replay(report: AttestationReport, image: ProgramImage, sidecar: Sidecar,
                      model: ReplayModel | None = None) -> Verdict:
    model = model or ReplayModel(image, sidecar)
    units = model.units
    capacity = (report.or_max - report.or_min) // 2
    st = ReplayState()
    entries: list[CfLogEntry] = []
    path: list[int] = []
    shadow: list[int] = []
    leaders = model.leaders
    unit_addr = model.unit_addr
    er_lo, er_hi = image.er_min, image.exit_addr

    def consume(kind: EntryKind) -> int:
        i = st.log_index
        if i >= capacity:
            raise _Reject("LogUnderflow", i, "log exhausted before exit")
        v = report.or_word(report.or_max - 2 * i)
        entries.append(CfLogEntry(i, v, kind))
        st.log_index += 1
        return v

    try:
        steps = 0
        seen_prologue = False
        while True:
            steps += 1
            if steps > REPLAY_BUDGET:
                raise _Reject("ReplayBudget", st.log_index, "replay did not terminate")
            n = st.unit
            u = units[n]
            a = unit_addr[n]
            if a in leaders:
                path.append(a)
            kind = u.kind
            if kind == "prologue":
                if seen_prologue:
                    raise _Reject("UnexpectedDestination", st.log_index, "re-entry of the program prologue")
                seen_prologue = True
                st.unit = n + 1
            elif kind in ("plain", "write"):
                st.unit = n + 1
            elif kind in ("static", "static_logged"):
                instr = model.instr(n)
                t = model.target_unit(n)
                if kind == "static_logged":
                    idx = st.log_index
                    v = consume(EntryKind.DESTINATION)
                    if v != unit_addr[t]:
                        raise _Reject("UnexpectedDestination", idx, f"0x{v:04x} != static 0x{unit_addr[t]:04x}")
                if instr.mnemonic == "call":
                    shadow.append(unit_addr[n + 1])
                st.unit = t
            elif kind == "cond":
                sr = consume(EntryKind.SR_SNAPSHOT)
                instr = model.instr(n)
                st.unit = model.target_unit(n) if branch_taken(instr.mnemonic, sr) else n + 1
            elif kind == "indirect":
                instr = model.instr(n)
                idx = st.log_index
                dest = consume(EntryKind.DESTINATION)
                if instr.mnemonic == "ret":
                    if not shadow or shadow[-1] != dest:
                        want = f"0x{shadow[-1]:04x}" if shadow else "empty stack"
                        raise _Reject("CallStackMismatch", idx, f"return to 0x{dest:04x}, expected {want}")
                    shadow.pop()
                    st.unit = model.unit_at_addr[dest]
                else:
                    t = model.unit_at_addr.get(dest)
                    if not er_lo <= dest <= er_hi or t is None:
                        raise _Reject("NonInstructionAddress", idx, f"0x{dest:04x}")
                    if not units[t].labeled:
                        raise _Reject("UnexpectedDestination", idx, f"0x{dest:04x} is not a labeled entry")
                    if instr.mnemonic == "call":
                        shadow.append(unit_addr[n + 1])
                    st.unit = t
            elif kind == "loop_entry":
                rec = sidecar.loops[u.loop]
                vals = [consume(EntryKind.LOOP_OPERAND) for _ in rec.loop.logged_regs]
                try:
                    st.trip_budget[u.loop] = simulate_loop_trips(vals, rec.loop)
                except NonTerminatingLoop as exc:
                    raise _Reject("NonTerminatingLoop", st.log_index, str(exc)) from None
                st.unit = n + 1
            elif kind == "loop_branch":
                left = st.trip_budget.get(u.loop)
                if left is None:
                    raise _Reject("UnexpectedDestination", st.log_index, "loop body entered without its entry record")
                left -= 1
                if left > 0:
                    st.trip_budget[u.loop] = left
                    st.unit = sidecar.loops[u.loop].head_unit
                else:
                    del st.trip_budget[u.loop]
                    st.unit = n + 1
            elif kind == "halt":
                if n != model.exit_unit:
                    raise _Reject("UnexpectedDestination", st.log_index, "halt outside the legal exit")
                break
            else:
                raise _Reject("UnexpectedDestination", st.log_index, f"replay reached {kind}")
        st.consumed_output_bytes = sidecar.output_bytes
        low = report.or_min + sidecar.output_bytes
        top = report.or_max - 2 * st.log_index
        for addr in range(top, low - 1, -2):
            if report.or_word(addr) != 0:
                raise _Reject("LogOverflow", (report.or_max - addr) // 2, f"unconsumed word at 0x{addr:04x}")
    except _Reject as rj:
        return Verdict(Outcome.REJECT_CONTROL_FLOW, rj.reason, rj.log_index, rj.detail, entries=tuple(entries))
    return Verdict(Outcome.ACCEPT, path=tuple(path), entries=tuple(entries))


def check_output_overlap(report: AttestationReport, sidecar: Sidecar, entries: int) -> bool:
    """True when the regular output stays strictly below the lowest log entry."""
    if entries == 0:
        return report.or_min + sidecar.output_bytes <= report.or_max + 2
    lowest_entry = report.or_max - 2 * (entries - 1)
    return report.or_min + sidecar.output_bytes <= lowest_entry


def full_verify(report: AttestationReport, challenge: Challenge, key: DeviceKey, image: ProgramImage,
                sidecar: Sidecar, nonce_log: NonceLog | None = None, model: ReplayModel | None = None) -> Verdict:
    m = image.layout
    expected = (image.er_min, image.exit_addr, m.or_min, m.or_max)
    if (report.er_min, report.er_max, report.or_min, report.or_max) != expected:
        return Verdict(Outcome.REJECT_TOKEN, "BoundsMismatch")
    if verify_report(report, challenge, key, image.er_bytes, nonce_log) is not TokenCheck.VALID:
        return Verdict(Outcome.REJECT_TOKEN, "TokenInvalid")
    if report.exec_bit != 1:
        return Verdict(Outcome.REJECT_EXEC, "ExecFlagClear")
    v = decode_and_replay(report, image, sidecar, model)
    if not v.accepted:
        return v
    if not check_output_overlap(report, sidecar, len(v.entries)):
        return Verdict(Outcome.REJECT_OVERLAP, "OutputLogOverlap", len(v.entries), entries=v.entries)
    return v


def trace_block_path(pcs, leaders) -> tuple[int, ...]:
    """Emulator trace filtered to block leaders; the replay oracle."""
    return tuple(pc for pc in pcs if pc in leaders)
