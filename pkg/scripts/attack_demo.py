"""Run the syringe pump once with a benign command list and once with the
return-address overwrite, and show what each layer of verification sees."""

import random

from tinycfa import corpus
from tinycfa.attestation import DeviceKey, verify_report
from tinycfa.pipeline import build_corpus, round_trip


def main():
    b = build_corpus("syringe_pump")
    key = DeviceKey.generate(random.Random(1))
    for label, inputs in [("benign", [2, 3, 4]), ("attack", corpus.attack_input(b.image))]:
        rt = round_trip(b, inputs, key)
        token = verify_report(rt.report, rt.challenge, key, b.image.er_bytes)
        print(f"== {label}: inputs {inputs}")
        print(f"   dose delivered   {rt.state.read_word(0x0500)}")
        print(f"   EXEC             {rt.report.exec_bit}")
        print(f"   token only       {token.value}")
        print(f"   full verify      {rt.verdict.outcome.value} {rt.verdict.reason or ''}".rstrip())
        if rt.verdict.log_index is not None:
            e = rt.verdict.entries[rt.verdict.log_index]
            print(f"   offending entry  #{e.index} = 0x{e.value:04x} (actuate = 0x{b.image.label_addr('actuate'):04x})")


if __name__ == "__main__":
    main()
