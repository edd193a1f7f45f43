import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycfa import corpus, encoding
from tinycfa.assembler import MemoryLayout, layout, parse_program
from tinycfa.device import (
    CycleBudgetExceeded,
    Event,
    LayoutMismatch,
    Phase,
    code_write,
    dma_write,
    interrupt,
    load,
    monitor_update,
    parse_events,
    parse_trace,
    render_events,
    run_ex,
)
from tinycfa.isa import instr_cycles
from tinycfa.pipeline import build, execute

M = MemoryLayout()


def raw(src, m=M, regs=None):
    img = layout(parse_program(src), m)
    return img, load(img, m, regs)


def test_ret_log_sequence():
    img, s = raw("mov @r1, @r4\ndecd r4\nhalt", regs={1: 0x0500, 4: M.or_max})
    s.poke_words(0x0500, [0xE07C])
    s, tr = run_ex(s)
    assert s.read_word(M.or_max) == 0xE07C
    assert s.regs[4] == M.or_max - 2
    assert s.exec_bit == 1
    assert tr.steps[0].writes == ((M.or_max, 0xE07C, 2),)


def test_clean_run_sets_exec():
    img, s = raw("mov #5, r5\nadd r5, r5\nhalt")
    s, _ = run_ex(s)
    assert s.exec_bit == 1 and s.regs[5] == 10 and s.monitor.phase is Phase.DONE
    assert s.stop_reason == "halt"


@pytest.mark.parametrize(
    "src,reason",
    [
        ("br #0x0500\nhalt", "PC left ER"),
        ("mov #0, &0xE000\nhalt", "write into ER"),
    ],
)
def test_program_violations(src, reason):
    _, s = raw(src)
    s, _ = run_ex(s)
    assert s.exec_bit == 0 and reason in s.monitor.violation
    assert s.stop_reason == "violation"


def test_events():
    src = "mov #1, r5\nmov #2, r5\nmov #3, r5\nhalt"
    for ev, exec_bit in [
        (interrupt(1), 0),
        (dma_write(0x0300, 1, 1), 0),
        (dma_write(0x0500, 1, 1), 0),
        (dma_write(0x0300, 1, 10_000), 0),
        (code_write(0xE000, 0, 10_000), 0),
        (dma_write(0x0500, 1, 10_000), 1),
        (interrupt(10_000), 1),
    ]:
        _, s = raw(src)
        s, tr = run_ex(s, events=[ev])
        assert s.exec_bit == exec_bit, ev
        assert tr.events == [ev]


def test_exec_sticky_after_violation_until_restart():
    _, s = raw("nop\nhalt")
    run_ex(s, events=[interrupt(1)])
    assert s.exec_bit == 0
    monitor_update(s, fetch_pc=s.er_max)
    assert s.exec_bit == 0


def test_rerun_clears_state():
    img, s = raw("nop\nhalt")
    s, _ = run_ex(s, events=[interrupt(1)])
    s2 = load(img, M)
    s2, _ = run_ex(s2)
    assert s2.exec_bit == 1


def test_layout_mismatch():
    img = layout(parse_program("halt"), M)
    with pytest.raises(LayoutMismatch):
        load(img, MemoryLayout(or_min=0x0200, or_max=0x02FE))


def test_cycle_budget():
    _, s = raw("l:\nnop\njmp l\nhalt")
    with pytest.raises(CycleBudgetExceeded) as e:
        run_ex(s, max_cycles=100)
    assert e.value.state.cycles >= 100 and e.value.state.exec_bit == 0


def test_cycles_are_sum_of_instruction_costs(builds):
    for name, b in builds.items():
        s, tr = execute(b.image, corpus.bench_input(name))
        total = sum(instr_cycles(encoding.decode(s.read_word, pc)[0]) for pc in tr.pcs)
        assert total == s.cycles
        assert [t.cycle for t in tr.steps] == sorted(t.cycle for t in tr.steps)


def test_trace_format_round_trip(builds):
    b = builds["fire_sensor"]
    _, tr = execute(b.image, corpus.bench_input("fire_sensor"))
    again = parse_trace(tr.render())
    assert again.steps == tr.steps


@given(st.lists(st.tuples(st.integers(0, 10**6), st.sampled_from(["interrupt", "dma", "codewrite"]),
                          st.integers(0, 0xFFFE), st.integers(0, 0xFFFF)), max_size=8))
def test_events_format_round_trip(raw_events):
    evs = [Event(k, c, a & 0xFFFE if k != "interrupt" else 0, v if k != "interrupt" else 0) for c, k, a, v in raw_events]
    assert parse_events(render_events(evs)) == evs


OPS = ["mov", "add", "sub", "and", "bis", "bic", "xor", "cmp"]


@st.composite
def random_programs(draw):
    out = []
    for _ in range(draw(st.integers(1, 30))):
        op = draw(st.sampled_from(OPS))
        r, q = draw(st.integers(5, 15)), draw(st.integers(5, 15))
        form = draw(st.integers(0, 3))
        if form == 0:
            out.append(f"{op} r{q}, r{r}")
        elif form == 1:
            out.append(f"{op} #{draw(st.integers(0, 0xFFFF))}, r{r}")
        elif form == 2:
            addr = draw(st.sampled_from([0x0200, 0x03FE, 0x0500, 0x0600]))
            out.append(f"{op} r{q}, &0x{addr:04x}")
        else:
            out.append(f"{op} &0x{draw(st.sampled_from([0x0400, 0x0600])):04x}, r{r}")
    return "\n".join(out) + "\nhalt"


@settings(max_examples=200)
@given(random_programs(), st.integers(0, 2**32))
def test_fuzz_exec_depends_only_on_monitor(src, seed):
    """Arbitrary data-flow programs cannot write EXEC; a fresh run without
    events ends with EXEC=1, and an interrupt run ends with EXEC=0."""
    img = layout(parse_program(src), M)
    rng = random.Random(seed)
    regs = {r: rng.randrange(0x10000) for r in range(5, 16)}
    s, _ = run_ex(load(img, M, regs))
    assert s.exec_bit == 1
    s, _ = run_ex(load(img, M, regs), events=[interrupt(rng.randrange(1, s.cycles))])
    assert s.exec_bit == 0


def test_instrumented_cursor_init_traps():
    b = build("nop\nhalt", M)
    s, _ = execute(b.image, cursor_value=M.or_max - 2)
    assert s.exec_bit == 0 and "PC left ER" in s.monitor.violation
