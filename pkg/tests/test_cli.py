import pytest

from tinycfa import corpus
from tinycfa.assembler import parse_layout, render_layout
from tinycfa.cli import dump_state, load_state, main
from tinycfa.corpus import BENCH_LAYOUT
from tinycfa.pipeline import build_corpus, execute


def csv_words(words):
    return ",".join(str(w) for w in words)


@pytest.fixture()
def syringe(tmp_path):
    src = tmp_path / "syringe_pump.s430"
    src.write_text(corpus.source("syringe_pump"))
    assert main(["instrument", str(src), "--out", str(tmp_path)]) == 0
    assert main(["keygen", "--seed", "3", "--out", str(tmp_path / "key")]) == 0
    assert main(["challenge", "--seed", "4", "--out", str(tmp_path / "chal")]) == 0
    return tmp_path


def run_and_verify(d, *run_args, key="key"):
    out = d / "run"
    assert main(["run", str(d / "syringe_pump.tcfa.s430"), "--out", str(out), *run_args]) == 0
    assert main(["attest", str(out / "state.json"), "--challenge", str(d / "chal"), "--key", str(d / "key"),
                 "--out", str(d / "report.bin"), "--text", str(d / "report.txt")]) == 0
    return main(["verify", str(d / "report.bin"), "--program", str(d / "syringe_pump.tcfa.s430"),
                 "--sidecar", str(d / "syringe_pump.sidecar"), "--challenge", str(d / "chal"), "--key", str(d / key)])


def test_instrument_outputs_are_idempotent(syringe, tmp_path):
    first = (syringe / "syringe_pump.tcfa.s430").read_text(), (syringe / "syringe_pump.sidecar").read_text()
    assert main(["instrument", str(syringe / "syringe_pump.s430"), "--out", str(syringe)]) == 0
    again = (syringe / "syringe_pump.tcfa.s430").read_text(), (syringe / "syringe_pump.sidecar").read_text()
    assert first == again


def test_benign_accept(syringe, capsys):
    assert run_and_verify(syringe, "--inputs", "2,3,4") == 0
    assert "outcome Accept" in capsys.readouterr().out
    trace = (syringe / "run" / "trace.txt").read_text().splitlines()
    assert trace[0].split()[1] == "0xe000"


def test_attack_rejected(syringe, capsys):
    inputs = corpus.attack_input(build_corpus("syringe_pump").image)
    assert run_and_verify(syringe, "--inputs", csv_words(inputs)) == 4
    assert "CallStackMismatch" in capsys.readouterr().out


def test_exec_rejections(syringe):
    assert run_and_verify(syringe, "--inputs", "2,3,4", "--interrupt-at", "20") == 3
    assert run_and_verify(syringe, "--inputs", "2,3,4", "--cursor-init", "0x03fc") == 3
    assert run_and_verify(syringe, "--inputs", "2,3,4", "--ext-write", "0x0300=1@999999999") == 3
    # the token is computed over the modified ER, so the MAC check fails first
    assert run_and_verify(syringe, "--inputs", "2,3,4", "--ext-write", "codewrite:0xe002=0@999999999") == 2
    assert "exec 0" in (syringe / "report.txt").read_text()


def test_events_file(syringe):
    (syringe / "ev.txt").write_text("15 dma 0x0500=0x0001\n")
    assert run_and_verify(syringe, "--inputs", "2,3,4", "--events", str(syringe / "ev.txt")) == 3


def test_token_rejections(syringe):
    assert main(["keygen", "--seed", "9", "--out", str(syringe / "other")]) == 0
    assert run_and_verify(syringe, "--inputs", "2,3,4", key="other") == 2
    blob = bytearray((syringe / "report.bin").read_bytes())
    blob[-40] ^= 1
    (syringe / "report.bin").write_bytes(bytes(blob))
    assert main(["verify", str(syringe / "report.bin"), "--program", str(syringe / "syringe_pump.tcfa.s430"),
                 "--sidecar", str(syringe / "syringe_pump.sidecar"), "--challenge", str(syringe / "chal"),
                 "--key", str(syringe / "key")]) == 2


def test_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.s430"
    bad.write_text("nop\nfrobnicate r5\nhalt\n")
    assert main(["instrument", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "bad.s430" in err and "line 2" in err
    assert main(["verify"]) == 1
    assert main(["run", str(tmp_path / "missing.s430")]) == 1
    (tmp_path / "junk.bin").write_bytes(b"nope")
    assert main(["attest", str(tmp_path / "junk.bin"), "--challenge", "x", "--key", "y", "--out", "z"]) == 1


def test_layout_flag(tmp_path):
    (tmp_path / "m.layout").write_text(render_layout(BENCH_LAYOUT))
    assert parse_layout((tmp_path / "m.layout").read_text()) == BENCH_LAYOUT
    assert main(["pipeline", "syringe_pump", "--layout", str(tmp_path / "m.layout"), "--no-O2"]) == 0


def test_pipeline(capsys):
    assert main(["pipeline", "fire_sensor"]) == 0
    assert main(["pipeline", "syringe_pump", "--attack"]) == 4
    assert main(["pipeline", "ultrasonic_ranger", "--interrupt-at", "10"]) == 3
    assert main(["pipeline", "ultrasonic_ranger", "--no-O1", "--no-O2", "--inputs", "100"]) == 0


def test_state_round_trip():
    b = build_corpus("fire_sensor")
    s, _ = execute(b.image, corpus.bench_input("fire_sensor"))
    t = load_state(dump_state(s))
    assert t.regs == s.regs and t.mem == s.mem and t.cycles == s.cycles
    assert t.monitor == s.monitor and t.er_max == s.er_max and t.layout == s.layout


def test_bench(tmp_path, capsys):
    assert main(["bench", "--out", str(tmp_path)]) == 0
    table = (tmp_path / "bench.txt").read_text()
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert len(rows) == 1 + len(corpus.NAMES)
    for name in corpus.NAMES:
        assert name in table
