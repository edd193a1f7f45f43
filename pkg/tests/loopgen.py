"""Generated constant-bound counting loops plus an independent trip oracle."""

from dataclasses import dataclass

from hypothesis import strategies as st

STEPS = {"inc": 1, "incd": 2, "dec": -1, "decd": -2}


@dataclass(frozen=True)
class LoopCase:
    start: int
    step_text: str
    step: int
    bound: int
    predicate: str
    flags_from_step: bool = False

    def source(self) -> str:
        test = [f"{self.predicate} loop"] if self.flags_from_step else [f"cmp #{self.bound}, r5", f"{self.predicate} loop"]
        return "\n".join(
            [f"mov #{self.start}, r5", "mov #0, r7", "loop:", "add r5, r7", self.step_text] + test + ["halt"]
        )


def _signed(v):
    return v - 0x10000 if v & 0x8000 else v


def oracle_trips(c: LoopCase, limit: int = 20_000) -> int | None:
    """Body executions of the bottom-tested loop, by direct integer
    semantics. None if it runs past ``limit``."""
    v, n = c.start, 0
    while n < limit:
        n += 1
        v = (v + c.step) & 0xFFFF
        if c.flags_from_step:
            go = v != 0
        else:
            b = c.bound
            go = {
                "jne": v != b,
                "jeq": v == b,
                "jlo": v < b,
                "jhs": v >= b,
                "jl": _signed(v) < _signed(b),
                "jge": _signed(v) >= _signed(b),
            }[c.predicate]
        if not go:
            return n
    return None


@st.composite
def _raw_cases(draw, max_trips):
    name = draw(st.sampled_from(["inc", "incd", "dec", "decd", "add", "sub"]))
    if name in STEPS:
        step, text = STEPS[name], f"{name} r5"
    else:
        k = draw(st.integers(1, 7))
        step = k if name == "add" else -k
        text = f"{name} #{k}, r5"
    from_step = step < 0 and draw(st.booleans())
    if from_step:
        trips = draw(st.integers(1, max_trips // abs(step) or 1))
        return LoopCase(trips * -step, text, step, 0, "jne", True)
    start = draw(st.integers(0, 3000))
    trips = draw(st.integers(1, max_trips))
    end = (start + step * trips) & 0xFFFF
    if step > 0:
        pred = draw(st.sampled_from(["jne", "jlo", "jl"]))
    else:
        pred = draw(st.sampled_from(["jne", "jhs", "jge"]))
    if pred == "jne":
        bound = end
    elif pred in ("jlo", "jl"):
        bound = (end - draw(st.integers(0, step - 1))) & 0xFFFF if step > 1 else end
    else:
        bound = (end + draw(st.integers(0, -step - 1))) & 0xFFFF if step < -1 else end
    if pred in ("jhs", "jge"):
        bound = (bound + 1) & 0xFFFF
    return LoopCase(start, text, step, bound, pred)


def loop_cases(max_trips: int = 10_000):
    """Constant-bound loops that exit within ``max_trips`` body runs."""
    return _raw_cases(max_trips).filter(lambda c: (oracle_trips(c) or max_trips + 1) <= max_trips)


def random_cases(rng, n: int, max_trips: int = 10_000) -> list[LoopCase]:
    """Seeded counterpart of ``loop_cases`` for fixed-size suites."""
    out = []
    while len(out) < n:
        name = rng.choice(["inc", "incd", "dec", "decd", "add", "sub"])
        if name in STEPS:
            step, text = STEPS[name], f"{name} r5"
        else:
            k = rng.randint(1, 7)
            step, text = (k if name == "add" else -k), f"{name} #{k}, r5"
        trips = rng.randint(1, max_trips)
        if step < 0 and rng.random() < 0.3:
            c = LoopCase(max(1, trips // -step) * -step, text, step, 0, "jne", True)
        else:
            start = rng.randint(0, 3000)
            end = (start + step * trips) & 0xFFFF
            pred = rng.choice(["jne", "jlo", "jl"] if step > 0 else ["jne", "jhs", "jge"])
            bound = end if pred == "jne" else (end + 1 if pred in ("jhs", "jge") else end) & 0xFFFF
            c = LoopCase(start, text, step, bound, pred)
        t = oracle_trips(c)
        if t is not None and t <= max_trips:
            out.append(c)
    return out
