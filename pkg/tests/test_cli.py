import json
import subprocess
import sys

import pytest

from ubpf_forge.cli import main
from ubpf_forge.corpus import DROP_UDP, diamond_chain, ipv4_frame
from ubpf_forge.isa import encode, parse_asm


@pytest.fixture
def write(tmp_path):
    def _write(text, name="prog.s"):
        path = tmp_path / name
        path.write_bytes(text if isinstance(text, bytes) else text.encode())
        return str(path)
    return _write


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_verify_accept(capsys, write):
    code, out, _ = run(capsys, "verify", write(DROP_UDP))
    assert code == 0 and out.splitlines()[-1] == "ACCEPT"


def test_verify_reject_names_property(capsys, write):
    code, out, _ = run(capsys, "verify", write("ldxdw r0, [r10-8]\nexit"))
    assert code == 2
    assert "Information Leak Safety" in out.splitlines()[-1]


def test_verify_json(capsys, write):
    code, out, _ = run(capsys, "verify", "--json", write("exit"))
    d = json.loads(out)
    assert code == 2 and d["verdict"] == "reject" and d["kind"] == "UninitializedReturn"


def test_verify_stats_pruning(capsys, write):
    path = write(diamond_chain(12))

    def states(*flags):
        code, out, _ = run(capsys, "verify", "--stats", *flags, path)
        assert code == 0
        return int(next(s for s in out.splitlines() if s.startswith("states_explored:"))
                   .split()[1])
    on, off = states(), states("--no-pruning")
    assert on * 10 <= off and off == 2**12 + 1


def test_verify_limit(capsys, write):
    code, out, _ = run(capsys, "verify", "--limit", "1000", write("self: ja self"))
    assert code == 2 and "ComplexityLimitExceeded" in out


def test_run_drop_udp(capsys, write):
    path = write(DROP_UDP)
    for frame, action in ((ipv4_frame(17), "DROP"), (ipv4_frame(6), "PASS"), (bytes(4), "PASS")):
        for engine in ("image", "interp"):
            code, out, _ = run(capsys, "run", path, "--packet", frame.hex(), "--engine", engine)
            assert code == 0 and out.split()[0] == action


def test_run_blinded_and_post_xform(capsys, write):
    code, out, _ = run(capsys, "run", write(DROP_UDP), "--packet", ipv4_frame(17).hex(),
                       "--blind", "--seed", "3", "--emit", "post-xform")
    assert code == 0 and "ldxb" in out and out.splitlines()[-1] == "DROP r0=1"


def test_run_json(capsys, write):
    code, out, _ = run(capsys, "run", write("mov64 r0, 3\nexit"), "--packet", "", "--json")
    assert code == 0 and json.loads(out)["action"] == "TX"


def test_run_rejects_before_dispatch(capsys, write):
    code, out, _ = run(capsys, "run", write("exit"), "--packet", "00")
    assert code == 2 and "REJECT" in out and "r0=" not in out


def test_run_bad_hex(capsys, write):
    code, _, err = run(capsys, "run", write(DROP_UDP), "--packet", "zz")
    assert code == 1 and "hex" in err


def test_asm_disasm_roundtrip(capsys, write, tmp_path):
    out_bin = tmp_path / "p.bin"
    assert run(capsys, "asm", write(DROP_UDP), "-o", out_bin)[0] == 0
    assert out_bin.read_bytes() == encode(parse_asm(DROP_UDP))
    code, text, _ = run(capsys, "disasm", out_bin)
    assert code == 0 and parse_asm(text).insns == parse_asm(DROP_UDP).insns
    # verify accepts bytecode too
    assert run(capsys, "verify", out_bin)[0] == 0


def test_parse_error(capsys, write):
    code, _, err = run(capsys, "verify", write("mov64 r0, 0\nbogus r1\nexit"))
    assert code == 1 and err.startswith("error:") and "line 2" in err


def test_missing_file(capsys):
    assert run(capsys, "verify", "/nonexistent.s")[0] == 1


def test_cfg_dot(capsys, write):
    code, out, _ = run(capsys, "cfg", write(DROP_UDP))
    assert code == 0 and out.startswith("digraph") and "->" in out


def test_cfg_unreachable(capsys, write):
    code, _, err = run(capsys, "cfg", write("mov64 r0, 0\nexit\nmov64 r0, 1\nexit"))
    assert code == 2 and "UnreachableInstruction" in err


def test_absdom_eval(capsys):
    code, out, _ = run(capsys, "absdom", "eval", "add", "0..3", "4", "--bits", "8")
    assert code == 0 and out.strip().endswith("= u[4,7] s[4,7] t(0x4;0x3)")
    code, out, _ = run(capsys, "absdom", "eval", "and", "?", "0xf", "--json")
    d = json.loads(out)
    assert code == 0 and (d["umin"], d["umax"]) == (0, 15) and d["tnum"] == [0, 15]


def test_absdom_eval_tnum(capsys):
    code, out, _ = run(capsys, "absdom", "eval", "add", "1/2", "1/2", "--bits", "8", "--json")
    d = json.loads(out)
    # {1,3} + {1,3} = {2,4,6}
    assert (d["umin"], d["umax"]) == (2, 6)
    assert run(capsys, "absdom", "eval", "frob", "1", "1")[0] == 1
    assert run(capsys, "absdom", "eval", "add", "3/3", "1")[0] == 1


def test_load_pin_objects_unpin(capsys, write, tmp_path):
    state = tmp_path / "state"
    path = write(DROP_UDP)
    assert run(capsys, "--state-dir", state, "load", path, "--pin", "/progs/drop")[0] == 0
    code, out, _ = run(capsys, "--state-dir", state, "objects", "--json")
    rows = json.loads(out)
    assert code == 0 and [(r["kind"], r["pins"]) for r in rows] == [("program", ["/progs/drop"])]
    assert run(capsys, "--state-dir", state, "load", path, "--pin", "/progs/drop")[0] == 1
    assert run(capsys, "--state-dir", state, "unpin", "/progs/drop")[0] == 0
    assert run(capsys, "--state-dir", state, "objects")[1] == ""
    assert run(capsys, "--state-dir", state, "unpin", "/progs/drop")[0] == 1


def test_load_needs_state_dir(capsys, write, monkeypatch):
    monkeypatch.delenv("UBPF_FORGE_STATE", raising=False)
    code, _, err = run(capsys, "load", write(DROP_UDP), "--pin", "/x")
    assert code == 1 and "state" in err


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "--help")[0] == 0


def test_entry_point(tmp_path):
    src = tmp_path / "p.s"
    src.write_text(DROP_UDP)
    r = subprocess.run([sys.executable, "-m", "ubpf_forge.cli", "run", str(src), "--packet",
                        ipv4_frame(17).hex()], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("DROP")
