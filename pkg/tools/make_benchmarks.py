"""Regenerate the long-chain benchmark documents under src/crossdgf/benchmarks/."""

import json
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "crossdgf" / "benchmarks"


def blk(id, calls=(), br="return", cond=None, trig=None):
    b = {"id": id, "calls": list(calls)}
    if cond:
        b["branch"] = {"cond": {"guard": cond[0], "then": cond[1], "else": cond[2]}}
    else:
        b["branch"] = {"uncond": br}
    if trig:
        b["trigger"] = trig
    return b


def chain(prefix, n, last):
    return [blk(f"{prefix}{i}", br=(f"{prefix}{i + 1}" if i + 1 < n else last)) for i in range(n)]


def figure1(decode_len=21):
    return {
        "name": "figure1",
        "entry": "main",
        "functions": [
            {"name": "main", "owner": "client", "blocks": [
                blk("b0", cond=({"len_ge": [2]}, "b1", "b2")),
                blk("b1", ["dispatch"]),
                blk("b2"),
            ]},
            {"name": "dispatch", "owner": "client", "blocks": [blk("b0", ["api"])]},
            {"name": "api", "owner": "library", "blocks": [
                blk("b0", cond=({"byte_le": [0, 1]}, "b1", "b3")),
                blk("b1", ["decode"], br="b2"),
                blk("b2", ["vuln"]),
                blk("b3"),
            ]},
            {"name": "decode", "owner": "library", "blocks": (
                [blk("b0", cond=({"byte_eq": [0, 1]}, "b1", "bx"))]
                + chain("b", decode_len, f"b{decode_len}")[1:]
                + [blk(f"b{decode_len}", ["vuln"]), blk("bx")]
            )},
            {"name": "vuln", "owner": "library", "blocks": [
                blk("b0", cond=({"byte_eq": [0, 1]}, "b1", "b2")),
                blk("b1", trig={"cve": "CVE-FIG1", "condition": {"byte_eq": [1, 5]}}),
                blk("b2"),
            ]},
        ],
    }


def two_path(parse_len=12, slow_len=30, g1=0x64, g2=0x7F, g3=0x20):
    """Library route gated by three byte guards, plus a client decoy and a short library decoy."""
    never = {"and": [{"byte_eq": [1, 0x10]}, {"byte_ge": [1, 0x40]}]}
    return {
        "name": "two_path",
        "entry": "main",
        "functions": [
            {"name": "main", "owner": "client", "blocks": [
                blk("b0", cond=({"len_ge": [4]}, "b1", "short")),
                blk("b1", cond=({"byte_ge": [0, 0x80]}, "lib", "decoy")),
                blk("short", ["slow"], br="done"),
                blk("lib", ["handle"], br="done"),
                blk("decoy", ["quick"], br="done"),
                blk("done"),
            ]},
            # client decoy: statically calls vuln, never does
            {"name": "quick", "owner": "client", "blocks": [
                blk("q0", cond=({"byte_ge": [1, 0x40]}, "q1", "q2")),
                blk("q1", cond=({"byte_ge": [2, 0x40]}, "q3", "q2")),
                blk("q2", cond=({"byte_le": [3, 0x40]}, "q3", "q4")),
                blk("q3", cond=(never, "qcall", "q4")),
                blk("qcall", ["vuln"], br="q4"),
                blk("q4"),
            ]},
            # far path for short inputs: a long walk that could only reach the library much later
            {"name": "slow", "owner": "client", "blocks": (
                chain("s", slow_len, "sg")
                + [blk("sg", cond=({"len_ge": [4]}, "scall", "send")),
                   blk("scall", ["handle"], br="send"),
                   blk("send")]
            )},
            {"name": "handle", "owner": "client", "blocks": [blk("h0", ["api"])]},
            {"name": "api", "owner": "library", "blocks": [
                blk("a0", cond=({"byte_eq": [1, g1]}, "a1", "a3")),
                blk("a1", ["parse"], br="a2"),
                blk("a2"),
                blk("a3", cond=({"byte_ge": [2, 0x80]}, "a4", "a2")),
                blk("a4", ["fast"], br="a2"),
            ]},
            # library decoy: short and statically close to vuln, never gets there
            {"name": "fast", "owner": "library", "blocks": [
                blk("f0", cond=(never, "f1", "f2")),
                blk("f1", ["vuln"], br="f2"),
                blk("f2"),
            ]},
            {"name": "parse", "owner": "library", "blocks": (
                chain("p", parse_len, "pg")
                + [blk("pg", cond=({"byte_eq": [2, g2]}, "pcall", "pend")),
                   blk("pcall", ["vuln"], br="pend"),
                   blk("pend")]
            )},
            {"name": "vuln", "owner": "library", "blocks": [
                blk("v0", cond=({"byte_eq": [3, g3]}, "v1", "v2")),
                blk("v1", trig={"cve": "CVE-TWO", "condition": {"len_ge": [4]}}),
                blk("v2"),
            ]},
        ],
    }


def four_paths():
    """Two-byte inputs; exactly four distinct feasible traces reach vuln's entry.

    byte 1 == 7 lets api call vuln; byte 0 then selects one of four routes.
    The call in api.a3 is present statically but unsatisfiable.
    """
    return {
        "name": "four_paths",
        "entry": "main",
        "functions": [
            {"name": "main", "owner": "client", "blocks": [
                blk("b0", cond=({"byte_ge": [0, 0x80]}, "b1", "b2")),
                blk("b1", ["api"], br="b3"),
                blk("b2", ["api"], br="b3"),
                blk("b3"),
            ]},
            {"name": "api", "owner": "library", "blocks": [
                blk("a0", cond=({"byte_eq": [1, 7]}, "a1", "a2")),
                blk("a1", ["vuln"]),
                blk("a2", cond=({"byte_eq": [1, 7]}, "a3", "a4")),
                blk("a3", ["vuln"], br="a4"),
                blk("a4"),
            ]},
            {"name": "vuln", "owner": "library", "blocks": [
                blk("v0", cond=({"byte_le": [0, 0x3F]}, "v1", "v2")),
                blk("v1"),
                blk("v2", cond=({"byte_eq": [0, 0xFF]}, "v3", "v4")),
                blk("v3"),
                blk("v4"),
            ]},
        ],
    }


def dump(name, doc):
    (OUT / name).write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    dump("figure1.json", figure1())
    dump("two_path.json", two_path())
    dump("four_paths.json", four_paths())
    print("wrote", OUT, file=sys.stderr)
