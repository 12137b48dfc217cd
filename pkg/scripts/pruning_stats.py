"""States explored with and without pruning on diamond chains of growing length."""

import argparse

from ubpf_forge.corpus import diamond_chain
from ubpf_forge.isa import parse_asm
from ubpf_forge.verifier import VerifierConfig, verify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-n", type=int, default=12)
    args = ap.parse_args()
    print(f"{'n':>3} {'pruned':>8} {'unpruned':>9} {'ratio':>7} {'insns':>7}")
    for n in range(1, args.max_n + 1):
        p = parse_asm(diamond_chain(n))
        on = verify(p)
        off = verify(p, config=VerifierConfig(pruning_enabled=False))
        print(f"{n:>3} {on.states_explored:>8} {off.states_explored:>9} "
              f"{on.states_explored / off.states_explored:>7.2%} {on.insn_processed:>7}")


if __name__ == "__main__":
    main()
