"""Bundled application analogs, their benign input sweeps and the
return-address overwrite input for the syringe pump."""

from __future__ import annotations

import random
from importlib import resources

from .assembler import MemoryLayout, ProgramImage

NAMES = ("syringe_pump", "fire_sensor", "ultrasonic_ranger")
BUFFER_WORDS = 5

# OR large enough to hold per-iteration logs of the delay loops, so that
# runs with loop optimization disabled still complete
BENCH_LAYOUT = MemoryLayout(or_min=0x0A00, or_max=0x7FFE, data_min=0x0200, data_max=0x09FE, stack_init=0x09F0)


def source(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown corpus program {name!r}")
    return resources.files(__package__).joinpath("corpus", f"{name}.s430").read_text()


def _syringe() -> list[list[int]]:
    out = []
    for length in range(2, BUFFER_WORDS + 1):
        for dose in (1, 2, 3, 4, 6, 9, 10, 12, 15):
            for split in (0, dose // 2):
                cmds = [split, dose - split] + [7 * k for k in range(length - 2)]
                out.append([length] + cmds)
    return out


def _fire() -> list[list[int]]:
    rng = random.Random(430)
    out = [[1, 60], [1, 59], [1, 0], [2, 60, 60], [3, 120, 0, 61]]
    while len(out) < 60:
        n = rng.randint(1, 8)
        out.append([n] + [rng.randint(0, 120) for _ in range(n)])
    return out


def _ranger() -> list[list[int]]:
    ticks = [0, 1, 57, 58, 59, 115, 116, 1159, 1160, 5799, 5800, 5801]
    rng = random.Random(58)
    while len(ticks) < 60:
        ticks.append(rng.randint(0, 8000))
    return [[t] for t in ticks]


_BENIGN = {"syringe_pump": _syringe, "fire_sensor": _fire, "ultrasonic_ranger": _ranger}
_BENCH = {"syringe_pump": [2, 4, 5], "fire_sensor": [6, 20, 65, 80, 30, 99, 61], "ultrasonic_ranger": [3000]}


def benign_inputs(name: str) -> list[list[int]]:
    return _BENIGN[name]()


def bench_input(name: str) -> list[int]:
    return list(_BENCH[name])


def attack_input(image: ProgramImage, dose: int = 40) -> list[int]:
    """Seven commands into the five-word buffer. Word 5 overwrites
    parse_commands' return slot with ``actuate``, skipping the dose check;
    word 6 lands in the caller's slot so actuation returns to ``report``.
    Execution therefore still reaches the legal exit."""
    return [7, dose // 2, dose - dose // 2, 0, 0, 0, image.label_addr("actuate"), image.label_addr("report")]
