"""Glue for the prover/verifier round trip used by the CLI, scripts and tests."""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import corpus
from .assembler import MemoryLayout, Program, ProgramImage, layout, parse_program
from .attestation import AttestationReport, Challenge, DeviceKey, NonceLog, attest, gen_challenge
from .device import DeviceState, Trace, boot_regs, load, run_ex
from .instrumenter import InstrumentationOptions, Sidecar, instrument
from .verifier import ReplayModel, Verdict, full_verify

DEFAULT_MAX_CYCLES = 5_000_000


@dataclass(frozen=True)
class Build:
    name: str
    layout: MemoryLayout
    options: InstrumentationOptions
    original: Program
    original_image: ProgramImage
    program: Program
    sidecar: Sidecar
    image: ProgramImage

    def model(self) -> ReplayModel:
        cached = self.__dict__.get("_model")
        if cached is None:
            cached = ReplayModel(self.image, self.sidecar)
            object.__setattr__(self, "_model", cached)
        return cached


def build(text: str, m: MemoryLayout | None = None, opts: InstrumentationOptions | None = None, name: str = "program") -> Build:
    m = m or MemoryLayout()
    opts = opts or InstrumentationOptions()
    p = parse_program(text)
    ip = instrument(p, m, opts)
    return Build(name, m, opts, p, layout(p, m), ip.program, ip.sidecar, layout(ip.program, m))


def build_corpus(name: str, m: MemoryLayout | None = None, opts: InstrumentationOptions | None = None) -> Build:
    return build(corpus.source(name), m, opts, name)


def execute(image: ProgramImage, inputs=(), events=(), cursor_reg: int = 4, cursor_value: int | None = None,
            max_cycles: int = DEFAULT_MAX_CYCLES, record: bool = True) -> tuple[DeviceState, Trace]:
    m = image.layout
    regs = boot_regs(m, cursor_reg)
    if cursor_value is not None:
        regs[cursor_reg] = cursor_value
    s = load(image, m, regs)
    if inputs:
        s.poke_words(m.data_min, inputs)
    return run_ex(s, max_cycles, events, record)


@dataclass(frozen=True)
class RoundTrip:
    state: DeviceState
    trace: Trace
    challenge: Challenge
    report: AttestationReport
    verdict: Verdict


def round_trip(b: Build, inputs=(), key: DeviceKey | None = None, rng: random.Random | None = None,
               events=(), cursor_value: int | None = None, nonce_log: NonceLog | None = None,
               record: bool = True) -> RoundTrip:
    """Challenge, run, attest, verify."""
    rng = rng or random.Random(0)
    key = key or DeviceKey.generate(random.Random(1))
    c = gen_challenge(rng, nonce_log)
    s, tr = execute(b.image, inputs, events, b.sidecar.cursor_reg, cursor_value, record=record)
    r = attest(s, c, key)
    v = full_verify(r, c, key, b.image, b.sidecar, nonce_log, b.model())
    return RoundTrip(s, tr, c, r, v)
