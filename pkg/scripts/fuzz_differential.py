"""Differential run of random verified programs across every execution path."""

import argparse
import random
import time

from ubpf_forge.fuzz import differential, random_input, random_verified_program


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=200, help="number of programs")
    ap.add_argument("--inputs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    t0 = time.time()
    bad = 0
    for k in range(args.n):
        src, p, vp = random_verified_program(rng)
        msgs = differential(p, vp, [random_input(rng) for _ in range(args.inputs)])
        if msgs:
            bad += 1
            print(f"--- program {k}\n{src}" + "\n".join(msgs[:3]))
    print(f"{args.n} programs x {args.inputs} inputs: {bad} diverging programs, "
          f"{time.time() - t0:.1f}s")
    raise SystemExit(1 if bad else 0)


if __name__ == "__main__":
    main()
