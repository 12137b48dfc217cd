"""Scan blinded images of random programs for surviving original immediates."""

import argparse
import random

from ubpf_forge.engine import lower, original_immediates
from ubpf_forge.fuzz import leaked_immediates, random_verified_program
from ubpf_forge.xform import run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=200, help="number of programs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threshold", type=int, default=0, help="blind only |imm| above this")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    leaks = ops_plain = ops_blind = with_big = 0
    for k in range(args.n):
        _, p, vp = random_verified_program(rng)
        xr = run_pipeline(p, vp)
        plain = lower(xr.program, untrusted_loads=xr.untrusted_loads)
        img = lower(xr.program, blind=True, seed=k, threshold=args.threshold,
                    untrusted_loads=xr.untrusted_loads)
        with_big += any(v > 255 for v in original_immediates(p))
        leaks += len(leaked_immediates(p, img))
        ops_plain += sum(1 for _ in plain.body_ops())
        ops_blind += sum(1 for _ in img.body_ops())
    print(f"programs: {args.n} ({with_big} with immediates > 255)")
    print(f"leaked immediates > 255: {leaks}")
    print(f"body ops: {ops_plain} plain, {ops_blind} blinded "
          f"({ops_blind / max(ops_plain, 1):.2f}x)")


if __name__ == "__main__":
    main()
