"""Command-line front end: instrument, run, challenge, keygen, attest, verify,
bench and an in-process pipeline."""

from __future__ import annotations

import argparse
import base64
import csv
import io
import json
import random
import sys
import zlib
from dataclasses import dataclass
from pathlib import Path

from . import corpus
from .assembler import AssemblyError, LayoutError, MemoryLayout, NoFreeRegister, layout, parse_layout, parse_program, render
from .attestation import (
    Challenge,
    DeviceKey,
    ReportFormatError,
    attest,
    deserialize_report,
    gen_challenge,
    render_report,
    serialize_report,
)
from .device import (
    DeviceState,
    Event,
    InvalidFetch,
    MonitorState,
    Phase,
    CycleBudgetExceeded,
    boot_regs,
    load,
    parse_events,
    render_state,
    run_ex,
)
from .instrumenter import InstrumentationError, InstrumentationOptions, SidecarFormatError, parse_sidecar, render_sidecar
from .isa import UnsupportedMnemonic
from .pipeline import Build, build, execute, round_trip
from .verifier import Outcome, full_verify

EXIT_ERROR = 1


class CliError(Exception):
    pass


def _layout(path: str | None) -> MemoryLayout:
    if path is None:
        return MemoryLayout()
    return parse_layout(Path(path).read_text())


def _reg(text: str) -> int:
    t = text.lower()
    if not t.startswith("r") or not t[1:].isdigit():
        raise argparse.ArgumentTypeError(f"{text!r} is not a register name")
    return int(t[1:])


def _words(text: str) -> list[int]:
    return [int(tok, 0) & 0xFFFF for tok in text.replace(",", " ").split()]


def _inputs(arg: str | None) -> list[int]:
    if not arg:
        return []
    p = Path(arg)
    if p.exists():
        return _words(p.read_text())
    return _words(arg)


def _ext_write(text: str) -> Event:
    """``addr=val@cycle``; ``kind:`` prefix picks dma (default) or codewrite."""
    kind = "dma"
    if ":" in text:
        kind, text = text.split(":", 1)
    spec, _, cycle = text.partition("@")
    addr, _, val = spec.partition("=")
    try:
        return Event(kind, int(cycle, 0), int(addr, 0), int(val, 0))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _options(args) -> InstrumentationOptions:
    return InstrumentationOptions(
        cursor_reg=args.cursor_reg,
        enable_o1=not args.no_O1,
        enable_o2=not args.no_O2,
    )


def _out_dir(args) -> Path:
    d = Path(args.out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# device snapshot files


def dump_state(s: DeviceState) -> str:
    mon = s.monitor
    doc = {
        "format": "tinycfa-state-1",
        "layout": {k: getattr(s.layout, k) for k in ("er_min", "er_max", "or_min", "or_max", "data_min", "data_max", "stack_init")},
        "er": [s.er_min, s.er_max],
        "regs": s.regs,
        "cycles": s.cycles,
        "halted": s.halted,
        "stop_reason": s.stop_reason,
        "monitor": {
            "phase": mon.phase.value,
            "exec": mon.exec_flag,
            "er_hash_at_start": mon.er_hash_at_start.hex() if mon.er_hash_at_start else None,
            "or_dirty_outside_exec": mon.or_dirty_outside_exec,
            "violation": mon.violation,
        },
        "mem": base64.b64encode(zlib.compress(bytes(s.mem), 9)).decode(),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_state(text: str) -> DeviceState:
    doc = json.loads(text)
    if doc.get("format") != "tinycfa-state-1":
        raise CliError("not a device state file")
    mon = doc["monitor"]
    return DeviceState(
        regs=list(doc["regs"]),
        mem=bytearray(zlib.decompress(base64.b64decode(doc["mem"]))),
        layout=MemoryLayout(**doc["layout"]),
        er_min=doc["er"][0],
        er_max=doc["er"][1],
        monitor=MonitorState(
            phase=Phase(mon["phase"]),
            er_hash_at_start=bytes.fromhex(mon["er_hash_at_start"]) if mon["er_hash_at_start"] else None,
            or_dirty_outside_exec=mon["or_dirty_outside_exec"],
            exec_flag=mon["exec"],
            violation=mon["violation"],
        ),
        cycles=doc["cycles"],
        halted=doc["halted"],
        stop_reason=doc["stop_reason"],
    )


# ---------------------------------------------------------------------------
# commands


def cmd_instrument(args) -> int:
    src = Path(args.input)
    m = _layout(args.layout)
    b = build(src.read_text(), m, _options(args), src.stem)
    out = _out_dir(args)
    prog_path = out / f"{src.stem}.tcfa.s430"
    side_path = out / f"{src.stem}.sidecar"
    prog_path.write_text(render(b.program) + "\n")
    side_path.write_text(render_sidecar(b.sidecar))
    print(f"{prog_path} {b.original_image.total_bytes} -> {b.image.total_bytes} bytes, "
          f"cursor r{b.sidecar.cursor_reg}, {len(b.sidecar.loops)} static loop(s)")
    return 0


def cmd_run(args) -> int:
    m = _layout(args.layout)
    image = layout(parse_program(Path(args.program).read_text()), m)
    events = []
    if args.events:
        events += parse_events(Path(args.events).read_text())
    if args.interrupt_at is not None:
        events.append(Event("interrupt", args.interrupt_at))
    events += args.ext_write or []
    regs = boot_regs(m, args.cursor_reg)
    if args.cursor_init is not None:
        regs[args.cursor_reg] = args.cursor_init
    s = load(image, m, regs)
    inputs = _inputs(args.inputs)
    if inputs:
        s.poke_words(m.data_min, inputs)
    s, trace = run_ex(s, args.max_cycles, events)
    out = _out_dir(args)
    (out / "trace.txt").write_text(trace.render())
    (out / "state.json").write_text(dump_state(s))
    sys.stdout.write(render_state(s))
    return 0


def cmd_keygen(args) -> int:
    k = DeviceKey.generate(random.Random(args.seed))
    Path(args.out).write_text(k.key.hex() + "\n")
    return 0


def cmd_challenge(args) -> int:
    c = gen_challenge(random.Random(args.seed))
    Path(args.out).write_text(c.hex() + "\n")
    print(c.hex())
    return 0


def cmd_attest(args) -> int:
    s = load_state(Path(args.state).read_text())
    c = Challenge.from_hex(Path(args.challenge).read_text())
    k = DeviceKey.from_hex(Path(args.key).read_text())
    r = attest(s, c, k)
    Path(args.out).write_bytes(serialize_report(r))
    if args.text:
        Path(args.text).write_text(render_report(r))
    print(f"exec {r.exec_bit} token {r.token.hex()}")
    return 0


def cmd_verify(args) -> int:
    m = _layout(args.layout)
    image = layout(parse_program(Path(args.program).read_text()), m)
    sidecar = parse_sidecar(Path(args.sidecar).read_text())
    r = deserialize_report(Path(args.report).read_bytes())
    c = Challenge.from_hex(Path(args.challenge).read_text())
    k = DeviceKey.from_hex(Path(args.key).read_text())
    v = full_verify(r, c, k, image, sidecar)
    sys.stdout.write(v.render())
    return v.exit_code


def cmd_pipeline(args) -> int:
    m = _layout(args.layout)
    name = args.program
    text = corpus.source(name) if name in corpus.NAMES else Path(name).read_text()
    b = build(text, m, _options(args), Path(name).stem)
    if args.attack:
        inputs = corpus.attack_input(b.image)
    elif args.inputs:
        inputs = _inputs(args.inputs)
    elif name in corpus.NAMES:
        inputs = corpus.bench_input(name)
    else:
        inputs = []
    events = list(args.ext_write or [])
    if args.interrupt_at is not None:
        events.append(Event("interrupt", args.interrupt_at))
    key = DeviceKey.from_hex(Path(args.key).read_text()) if args.key else DeviceKey.generate(random.Random(args.seed + 1))
    rt = round_trip(b, inputs, key, random.Random(args.seed), events, args.cursor_init)
    print(f"exec {rt.report.exec_bit} cycles {rt.state.cycles} stop {rt.state.stop_reason}")
    sys.stdout.write(rt.verdict.render())
    return rt.verdict.exit_code


@dataclass(frozen=True)
class BenchRow:
    program: str
    orig_bytes: int
    instr_bytes: int
    orig_cycles: int
    instr_cycles: int
    no_o2_cycles: int
    cflog_bytes: int
    no_o2_cflog_bytes: int
    benign: str
    attack: str

    @property
    def size_ratio(self) -> float:
        return self.instr_bytes / self.orig_bytes

    @property
    def runtime_overhead(self) -> float:
        return self.instr_cycles / self.orig_cycles - 1

    @property
    def no_o2_overhead(self) -> float:
        return self.no_o2_cycles / self.orig_cycles - 1


BENCH_FIELDS = (
    "program", "orig_bytes", "instr_bytes", "size_ratio", "orig_cycles", "instr_cycles", "runtime_overhead",
    "no_o2_cycles", "no_o2_overhead", "cflog_bytes", "no_o2_cflog_bytes", "benign", "attack",
)


def bench_row(name: str, text: str, m: MemoryLayout = corpus.BENCH_LAYOUT) -> BenchRow:
    on = build(text, m, InstrumentationOptions(), name)
    off = build(text, m, InstrumentationOptions(enable_o2=False), name)
    inputs = corpus.bench_input(name) if name in corpus.NAMES else []
    base, _ = execute(on.original_image, inputs, record=False)
    r_on = round_trip(on, inputs, record=False)
    r_off = round_trip(off, inputs, record=False)
    attack = "-"
    if name == "syringe_pump":
        attack = round_trip(on, corpus.attack_input(on.image), record=False).verdict.outcome.value
    return BenchRow(
        program=name,
        orig_bytes=on.original_image.total_bytes,
        instr_bytes=on.image.total_bytes,
        orig_cycles=base.cycles,
        instr_cycles=r_on.state.cycles,
        no_o2_cycles=r_off.state.cycles,
        cflog_bytes=2 * len(r_on.verdict.entries),
        no_o2_cflog_bytes=2 * len(r_off.verdict.entries),
        benign=r_on.verdict.outcome.value,
        attack=attack,
    )


def _row_values(r: BenchRow) -> list:
    return [
        r.program, r.orig_bytes, r.instr_bytes, f"{r.size_ratio:.3f}", r.orig_cycles, r.instr_cycles,
        f"{r.runtime_overhead:.4f}", r.no_o2_cycles, f"{r.no_o2_overhead:.4f}", r.cflog_bytes,
        r.no_o2_cflog_bytes, r.benign, r.attack,
    ]


def render_bench(rows) -> str:
    table = [list(BENCH_FIELDS)] + [[str(v) for v in _row_values(r)] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(BENCH_FIELDS))]
    return "".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n" for row in table)


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow(_row_values(r))
    return buf.getvalue()


def cmd_bench(args) -> int:
    rows = []
    d = Path(args.corpus) if args.corpus else None
    m = _layout(args.layout) if args.layout else corpus.BENCH_LAYOUT
    for name in corpus.NAMES:
        if d is None:
            text = corpus.source(name)
        else:
            f = d / f"{name}.s430"
            if not f.exists():
                print(f"warning: {f} missing, skipped", file=sys.stderr)
                continue
            text = f.read_text()
        rows.append(bench_row(name, text, m))
    out = _out_dir(args)
    table = render_bench(rows)
    (out / "bench.txt").write_text(table)
    (out / "bench.csv").write_text(bench_csv(rows))
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------


def _add_instr_flags(p):
    p.add_argument("--layout", help="memory layout file (key=hex lines)")
    p.add_argument("--cursor-reg", type=_reg, default=4, help="CF-Log cursor register (default r4)")
    p.add_argument("--no-O1", action="store_true", help="log static control flow too")
    p.add_argument("--no-O2", action="store_true", help="log loop branches every iteration")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tinycfa", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("instrument", help="instrument an assembly file")
    p.add_argument("input")
    _add_instr_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_instrument)

    p = sub.add_parser("run", help="run an (instrumented) program on the simulator")
    p.add_argument("program")
    p.add_argument("--layout")
    p.add_argument("--cursor-reg", type=_reg, default=4)
    p.add_argument("--cursor-init", type=lambda t: int(t, 0), help="override the cursor value at entry")
    p.add_argument("--inputs", help="input words (file or comma list) placed at IN_BUF")
    p.add_argument("--events", help="events script")
    p.add_argument("--interrupt-at", type=int)
    p.add_argument("--ext-write", type=_ext_write, action="append", help="[dma:|codewrite:]addr=val@cycle")
    p.add_argument("--max-cycles", type=int, default=5_000_000)
    p.add_argument("--out", help="output directory for trace.txt and state.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("keygen", help="write a device key")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("challenge", help="write a fresh challenge nonce")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_challenge)

    p = sub.add_parser("attest", help="produce a report from a device state")
    p.add_argument("state")
    p.add_argument("--challenge", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--out", required=True, help="binary report file")
    p.add_argument("--text", help="also write the text rendering here")
    p.set_defaults(func=cmd_attest)

    p = sub.add_parser("verify", help="verify a report against the instrumented program")
    p.add_argument("report")
    p.add_argument("--program", required=True, help="instrumented .s430")
    p.add_argument("--sidecar", required=True)
    p.add_argument("--layout")
    p.add_argument("--challenge", required=True)
    p.add_argument("--key", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="code size, runtime and CF-Log size for the corpus")
    p.add_argument("--corpus", help="directory with the corpus .s430 files (default: bundled)")
    p.add_argument("--layout")
    p.add_argument("--out", help="output directory for bench.txt and bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", help="instrument, run, attest and verify in one go")
    p.add_argument("program", help="corpus name or .s430 file")
    _add_instr_flags(p)
    p.add_argument("--inputs")
    p.add_argument("--attack", action="store_true", help="use the syringe pump overflow input")
    p.add_argument("--interrupt-at", type=int)
    p.add_argument("--ext-write", type=_ext_write, action="append")
    p.add_argument("--cursor-init", type=lambda t: int(t, 0))
    p.add_argument("--key")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which is a verdict code here
        return 0 if exc.code in (0, None) else EXIT_ERROR
    try:
        return args.func(args)
    except (AssemblyError, InstrumentationError, UnsupportedMnemonic) as exc:
        src = getattr(args, "input", None) or getattr(args, "program", "")
        line = getattr(exc, "line", None)
        where = f"{src}:{line}" if line and not str(exc).startswith("line ") else src
        print(f"error: {where}: {exc}", file=sys.stderr)
    except (LayoutError, NoFreeRegister, SidecarFormatError, ReportFormatError, CliError,
            InvalidFetch, CycleBudgetExceeded, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
