"""Reference programs: the drop-UDP filter, one minimal rejection per safety
property, accepted programs, and generated workloads for the experiments."""

from __future__ import annotations

import struct

from .isa import Program, parse_asm
from .rejection import Property

DROP_UDP = """\
; drop IPv4/UDP frames, pass everything else
    ldxdw r2, [r1+0]          ; data
    ldxdw r3, [r1+8]          ; data_end
    mov64 r4, r2
    add64 r4, 14
    jgt r4, r3, pass          ; need an Ethernet header
    ldxh r5, [r2+12]          ; ethertype, network order
    jne r5, 0x0008, pass      ; 0x0800 read little-endian
    mov64 r4, r2
    add64 r4, 34
    jgt r4, r3, pass          ; need the IPv4 header
    ldxb r5, [r2+23]          ; protocol
    jne r5, 17, pass
    mov64 r0, 1               ; XDP_DROP
    exit
pass:
    mov64 r0, 2               ; XDP_PASS
    exit
"""

_LOOKUP = """\
    stw [r10-4], {key}
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:{m}
    call map_lookup_elem
"""

# one minimal program per safety property: (source, reason kind)
REJECTS: dict[Property, tuple[str, str]] = {
    Property.MEMORY: (".map m array 4 8 4\n" + _LOOKUP.format(key=0, m="m") + """\
    jeq r0, 0, out
    ldxdw r1, [r0+8]          ; one past the 8-byte value
out:
    mov64 r0, 0
    exit
""", "OutOfBounds"),
    Property.TYPE: ("""\
    stw [r10-4], 0
    mov64 r2, r10
    add64 r2, -4
    mov64 r1, 0               ; a scalar where a map is expected
    call map_lookup_elem
    mov64 r0, 0
    exit
""", "ArgTypeMismatch"),
    Property.RESOURCE: ("""\
    call acquire_test_ref
    mov64 r0, 0
    exit
""", "ResourceLeak"),
    Property.INFO_LEAK: ("""\
    ldxdw r0, [r10-8]
    exit
""", "UninitializedStackRead"),
    Property.DATA_RACE: ("""\
    stdw [r1+0], 0
    mov64 r0, 0
    exit
""", "KernelStateWrite"),
    Property.TERMINATION: ("""\
self:
    ja self
""", "ComplexityLimitExceeded"),
    Property.DEADLOCK: (".map a array 4 8 2\n" + _LOOKUP.format(key=0, m="a") + """\
    jeq r0, 0, out
    mov64 r6, r0
""" + _LOOKUP.format(key=1, m="a") + """\
    jeq r0, 0, out
    mov64 r7, r0
    mov64 r1, r6
    call spin_lock
    mov64 r1, r7
    call spin_lock
    mov64 r1, r7
    call spin_unlock
    mov64 r1, r6
    call spin_unlock
out:
    mov64 r0, 0
    exit
""", "SecondLockHeld"),
    Property.CONTEXT: ("""\
    exit
""", "UninitializedReturn"),
}

ACCEPTS: dict[str, str] = {
    "drop_udp": DROP_UDP,
    "pass_all": "    mov64 r0, 2\n    exit\n",
    "countdown": """\
    mov64 r1, 10
loop:
    sub64 r1, 1
    jne r1, 0, loop
    mov64 r0, 2
    exit
""",
    "array_counter": ".map counters array 4 8 4\n" + _LOOKUP.format(key=1, m="counters") + """\
    jeq r0, 0, out
    ldxdw r1, [r0+0]
    add64 r1, 1
    stxdw [r0+0], r1
out:
    mov64 r0, 2
    exit
""",
    "hash_update_delete": """\
.map h hash 4 8 16
    stw [r10-4], 7
    stdw [r10-16], 42
    mov64 r2, r10
    add64 r2, -4
    mov64 r3, r10
    add64 r3, -16
    mov64 r4, 0
    lddw r1, map:h
    call map_update_elem
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:h
    call map_delete_elem
    mov64 r0, 2
    exit
""",
    "spill_fill_pointer": """\
    stxdw [r10-8], r1
    ldxdw r6, [r10-8]
    ldxdw r2, [r6+0]
    ldxdw r3, [r6+8]
    mov64 r4, r2
    add64 r4, 1
    jgt r4, r3, out
    ldxb r0, [r2+0]
    and64 r0, 3
    exit
out:
    mov64 r0, 2
    exit
""",
    "trace_emit": """\
    stdw [r10-16], 1
    stdw [r10-8], 2
    mov64 r1, r10
    add64 r1, -16
    mov64 r2, 16
    call trace_emit
    mov64 r0, 2
    exit
""",
    "acquire_release": """\
    call acquire_test_ref
    mov64 r6, r0
    ldxdw r7, [r6+0]
    mov64 r1, r6
    call release_test_ref
    mov64 r0, 2
    exit
""",
    "lock_update": ".map locked array 4 16 1\n" + _LOOKUP.format(key=0, m="locked") + """\
    jeq r0, 0, out
    mov64 r6, r0
    mov64 r1, r6
    call spin_lock
    ldxdw r1, [r6+8]
    add64 r1, 1
    stxdw [r6+8], r1
    mov64 r1, r6
    call spin_unlock
out:
    mov64 r0, 2
    exit
""",
    "iter_sum": """\
    mov64 r1, r10
    add64 r1, -16
    mov64 r2, 0
    mov64 r3, 100
    call iter_num_new
    mov64 r6, 0
loop:
    mov64 r1, r10
    add64 r1, -16
    call iter_num_next
    jeq r0, 0, done
    add64 r6, 1
    ja loop
done:
    mov64 r1, r10
    add64 r1, -16
    call iter_num_destroy
    mov64 r0, 2
    exit
""",
    "subprog_call": """\
    mov64 r1, 20
    mov64 r2, 22
    call add_pair
    jeq r0, 42, ok
    mov64 r0, 1
    exit
ok:
    mov64 r0, 2
    exit
.subprog add_pair
    mov64 r0, r1
    add64 r0, r2
    exit
""",
    "alu32_mix": """\
    mov32 r1, -1
    rsh32 r1, 28
    lsh64 r1, 1
    mov64 r2, 7
    mod64 r2, 4
    xor64 r1, r2
    and32 r1, 3
    mov64 r0, r1
    exit
""",
    "bounded_var_stack": """\
    ldxdw r2, [r1+0]
    ldxdw r3, [r1+8]
    mov64 r4, r2
    add64 r4, 4
    jgt r4, r3, out
    ldxb r5, [r2+0]
    and64 r5, 3
    mov64 r6, r2
    add64 r6, r5
    ldxb r0, [r6+0]
    exit
out:
    mov64 r0, 2
    exit
""",
}


def unconverging_iter_loop() -> str:
    """Like ``iter_sum`` but the counter feeds a branch, so it stays precise
    and successive iterations never look alike."""
    return ACCEPTS["iter_sum"].replace(
        "    add64 r6, 1\n",
        "    add64 r6, 1\n    jgt r6, 1000000000, done\n")


def diamond_chain(n: int = 12) -> str:
    """``n`` independent if/else diamonds on bits of a packet halfword."""
    out = ["    ldxdw r2, [r1+0]", "    ldxdw r3, [r1+8]", "    mov64 r4, r2",
           "    add64 r4, 2", "    jgt r4, r3, out", "    ldxh r6, [r2+0]", "    mov64 r8, 0"]
    for k in range(n):
        out += [f"    jset r6, {1 << k}, d{k}_b", "    mov64 r7, 1", f"    ja d{k}_end",
                f"d{k}_b:", "    mov64 r7, 2", f"d{k}_end:", "    add64 r8, r7"]
    out += ["out:", "    mov64 r0, 2", "    exit"]
    return "\n".join(out) + "\n"


# Looks up key 1, deletes it, then loads through the stale pointer. The
# verifier allows this (the pointer type survives the delete); at run time the
# load faults and, being an untrusted load, reads as zero: r0 = 0 + 5.
STALE_LOOKUP = """\
.map h hash 4 8 4
    stw [r10-4], 1
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:h
    call map_lookup_elem
    jeq r0, 0, miss
    mov64 r6, r0
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:h
    call map_delete_elem
    ldxdw r0, [r6+0]
    add64 r0, 5
    exit
miss:
    mov64 r0, 99
    exit
"""
STALE_LOOKUP_R0 = 5


def ipv4_frame(proto: int, payload: bytes = bytes(8)) -> bytes:
    """Ethernet + minimal IPv4 header carrying ``proto`` (17 UDP, 6 TCP)."""
    eth = bytes(6) + bytes.fromhex("020000000001") + struct.pack("!H", 0x0800)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), 0, 0, 64, proto, 0,
                     bytes([10, 0, 0, 1]), bytes([10, 0, 0, 2]))
    return eth + ip + payload


def program(src: str) -> Program:
    return parse_asm(src)


__all__ = ["DROP_UDP", "REJECTS", "ACCEPTS", "unconverging_iter_loop", "diamond_chain", "program",
           "STALE_LOOKUP", "STALE_LOOKUP_R0", "ipv4_frame"]
