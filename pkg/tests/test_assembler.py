import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycfa import corpus
from tinycfa.assembler import (
    AsmSyntaxError,
    DuplicateLabel,
    EmptyProgram,
    LayoutError,
    MemoryLayout,
    NoFreeRegister,
    Program,
    RegionOverflow,
    UndefinedLabel,
    find_free_register,
    layout,
    parse_layout,
    parse_program,
    render,
    render_layout,
)
from tinycfa.isa import CfClass, Instruction, Mode, Operand, classify, instr_size


def test_entry_check_listing():
    p = parse_program("application:\n cmp #OR_MAX, r4\n jne .L11\n.L11:\n halt")
    assert [i.mnemonic for i in p.items] == ["cmp", "jne", "halt"]
    assert p.labels["application"] == 0
    assert p.entry_label == "application"


def test_errors():
    with pytest.raises(EmptyProgram):
        parse_program("")
    with pytest.raises(EmptyProgram):
        parse_program("; only a comment\n")
    with pytest.raises(UndefinedLabel) as e:
        parse_program("foo:\n jmp bar")
    assert e.value.name == "bar"
    with pytest.raises(DuplicateLabel):
        parse_program("a:\n nop\na:\n nop")
    with pytest.raises(AsmSyntaxError):
        parse_program("nop\ndangling:")
    with pytest.raises(AsmSyntaxError):
        parse_program("mov r4, #3")
    with pytest.raises(AsmSyntaxError):
        parse_program("mov r4 r5")
    with pytest.raises(UndefinedLabel):
        parse_program("mov #NOPE, r5")


def test_canonical_render():
    p = parse_program("  MOV.B   r15 ,@r14 ; store\nloop:  dec r5\n  JNZ loop\nhalt")
    assert render(p) == "mov.b r15, @r14\nloop:\ndec r5\njne loop\nhalt"
    assert render(parse_program("nop")) == "nop"


def test_corpus_canonical_fixpoint():
    for name in corpus.NAMES:
        once = render(parse_program(corpus.source(name)))
        assert render(parse_program(once)) == once
        assert parse_program(once) == parse_program(corpus.source(name))


def test_layout_addresses(layout_default):
    p = parse_program("mov #100, r5\nnop\nhalt")
    assert [instr_size(i) for i in p.items] == [4, 2, 2]
    img = layout(p, layout_default)
    assert img.addr_of == (0xE000, 0xE004, 0xE006)
    assert img.total_bytes == 8
    assert img.exit_addr == 0xE006


def test_layout_overflow():
    m = MemoryLayout(er_min=0xE000, er_max=0xE002)
    with pytest.raises(RegionOverflow) as e:
        layout(parse_program("mov #100, r5\nnop\nhalt"), m)
    assert (e.value.needed, e.value.available) == (8, 4)


def test_cfg_degrees(layout_default):
    src = "a:\n jne b\n mov r5, r6\nb:\n call #c\nc:\n ret\n halt"
    img = layout(parse_program(src), layout_default)
    out = {a: img.successors(a) for a in img.addr_of}
    kinds = [sorted(e.kind for e in out[a]) for a in img.addr_of]
    assert kinds == [["cond_not_taken", "cond_taken"], ["fallthrough"], ["static"], ["indirect_unknown"], []]
    valid = set(img.addr_of)
    assert all(e.dst in valid for e in img.cfg if e.kind in ("static", "cond_taken"))


def _regs_program(regs):
    return parse_program("\n".join(f"mov #1, r{r}" for r in regs) + "\nhalt")


def test_find_free_register():
    assert find_free_register(_regs_program([14, 15]), 4) == 4
    assert find_free_register(_regs_program(range(4, 15)), 4) == 15
    with pytest.raises(NoFreeRegister):
        find_free_register(_regs_program(range(4, 16)), 4)
    assert find_free_register(_regs_program([4]), 4) == 5


def test_memory_layout_validation():
    MemoryLayout()
    with pytest.raises(LayoutError):
        MemoryLayout(or_min=0x0201)
    with pytest.raises(LayoutError):
        MemoryLayout(or_min=0x0400, or_max=0x0500)
    with pytest.raises(LayoutError):
        MemoryLayout(or_min=0x0300, or_max=0x0200)
    with pytest.raises(LayoutError):
        MemoryLayout(stack_init=0x0200)


def test_layout_file_roundtrip():
    m = corpus.BENCH_LAYOUT
    assert parse_layout(render_layout(m)) == m
    assert parse_layout("# comment\nor_max=0x03FC\n") == MemoryLayout(or_max=0x03FC)
    with pytest.raises(LayoutError):
        parse_layout("bogus=1")


# ---------------------------------------------------------------------------
# parse/render round trip on generated programs

regs = st.integers(4, 15)
syms = st.sampled_from(["OR_MIN", "OR_MAX", "K"])
value_ops = st.one_of(
    regs.map(lambda r: Operand(Mode.REG, reg=r)),
    st.tuples(st.integers(-100, 100), regs).map(lambda t: Operand(Mode.INDEXED, reg=t[1], value=t[0])),
    regs.map(lambda r: Operand(Mode.INDIRECT, reg=r)),
    regs.map(lambda r: Operand(Mode.AUTOINC, reg=r)),
    st.integers(0, 0xFFFF).map(lambda v: Operand(Mode.IMM, value=v)),
    st.tuples(syms, st.integers(-4, 4)).map(lambda t: Operand(Mode.IMM, value=t[1], symbol=t[0])),
    st.integers(0, 0xFFFE).map(lambda v: Operand(Mode.ABS, value=v)),
)
dst_ops = st.one_of(
    regs.map(lambda r: Operand(Mode.REG, reg=r)),
    st.tuples(st.integers(-100, 100), regs).map(lambda t: Operand(Mode.INDEXED, reg=t[1], value=t[0])),
    regs.map(lambda r: Operand(Mode.INDIRECT, reg=r)),
    st.integers(0, 0xFFFE).map(lambda v: Operand(Mode.ABS, value=v)),
)


@st.composite
def programs(draw):
    n = draw(st.integers(1, 12))
    names = [f"l{k}" for k in range(draw(st.integers(1, 4)))]
    items = []
    for _ in range(n):
        kind = draw(st.sampled_from(["two", "one", "jump", "none", "push"]))
        if kind == "two":
            m = draw(st.sampled_from(["mov", "add", "sub", "cmp", "and", "bis", "bic", "xor"]))
            items.append(Instruction(m, (draw(value_ops), draw(dst_ops)), byte=draw(st.booleans())))
        elif kind == "one":
            m = draw(st.sampled_from(["inc", "incd", "dec", "decd", "pop"]))
            items.append(Instruction(m, (draw(dst_ops),)))
        elif kind == "jump":
            m = draw(st.sampled_from(["jmp", "jne", "jeq", "jn", "jlo", "jhs", "jge", "jl"]))
            items.append(Instruction(m, (Operand(Mode.JUMP, symbol=draw(st.sampled_from(names))),)))
        elif kind == "push":
            items.append(Instruction(draw(st.sampled_from(["push", "call", "br"])), (draw(value_ops),)))
        else:
            items.append(Instruction(draw(st.sampled_from(["nop", "ret", "halt"]))))
    labels = {name: draw(st.integers(0, n - 1)) for name in names}
    return Program(tuple(items), labels, {"K": 0x1234}, None)


@settings(max_examples=300)
@given(programs())
def test_parse_render_roundtrip(p):
    text = render(p)
    q = parse_program(text)
    assert q.items == p.items
    assert q.labels == p.labels and q.equates == p.equates
    assert render(q) == text


@settings(max_examples=200)
@given(programs())
def test_layout_arithmetic(p):
    img = layout(p, MemoryLayout())
    for k in range(len(p.items) - 1):
        assert img.addr_of[k + 1] - img.addr_of[k] == img.sizes[k]
    assert img.addr_of[0] == 0xE000
    assert all(s in (2, 4, 6) for s in img.sizes)
    for i, a in zip(p.items, img.addr_of):
        deg = len(img.successors(a))
        cls = classify(i)
        if i.mnemonic == "halt":
            assert deg == 0
        elif cls is CfClass.COND_BRANCH:
            assert deg == 2
        else:
            assert deg == 1
