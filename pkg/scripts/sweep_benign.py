"""Benign input sweep over the corpus: verdicts and replay/trace path agreement."""

import random
import time

from tinycfa import corpus
from tinycfa.attestation import DeviceKey
from tinycfa.pipeline import build_corpus, round_trip
from tinycfa.verifier import trace_block_path


def main():
    key = DeviceKey.generate(random.Random(1))
    for name in corpus.NAMES:
        b = build_corpus(name)
        leaders = b.model().leaders
        t0 = time.perf_counter()
        accepted = mismatches = 0
        log_sizes = []
        vectors = corpus.benign_inputs(name)
        for inp in vectors:
            rt = round_trip(b, inp, key)
            accepted += rt.verdict.accepted
            mismatches += rt.verdict.path != trace_block_path(rt.trace.pcs, leaders)
            log_sizes.append(2 * len(rt.verdict.entries))
        dt = time.perf_counter() - t0
        print(f"{name:18s} vectors {len(vectors):3d} accepted {accepted:3d} path mismatches {mismatches} "
              f"CF-Log bytes {min(log_sizes)}..{max(log_sizes)}  {dt:.2f}s")


if __name__ == "__main__":
    main()
