"""Text trajectory format (``.sgt``).

Layout::

    SGT1 d=<d> steps=<N> tau=<tau> stride=<s> snapshots=<K> atoms=<n_0>,...,<n_K-1>
    snapshot step=<k> time=<t> atoms=<n>
    <x_1> ... <x_d> <weight>            (n lines)
    diag ot_eps=<v> potential=<v> radius=<v> iterations=<i>
    ...
    crc32 <8 hex digits>

Floats are written with 17 significant digits so every binary64 value
round-trips exactly. The checksum is the CRC32 of every byte before the
``crc32`` line.
"""
from __future__ import annotations

import zlib

import numpy as np

from .dynamics import Snapshot, StepDiagnostics, Trajectory
from .errors import ChecksumMismatch, FormatError, FormatVersionMismatch
from .measures import DiscreteMeasure

MAGIC = "SGT"
VERSION = 1


def _f(x):
    return format(float(x), ".17g")


def format_trajectory(traj: Trajectory) -> bytes:
    counts = ",".join(str(s.measure.n) for s in traj.snapshots)
    lines = [f"{MAGIC}{VERSION} d={traj.dimension} steps={traj.steps} tau={_f(traj.tau)} "
             f"stride={traj.snapshot_stride} snapshots={len(traj.snapshots)} atoms={counts}"]
    for s in traj.snapshots:
        lines.append(f"snapshot step={s.step} time={_f(s.time)} atoms={s.measure.n}")
        for p, w in zip(s.measure.points, s.measure.weights):
            lines.append(" ".join(_f(v) for v in p) + " " + _f(w))
        dg = s.diagnostics
        lines.append(f"diag ot_eps={_f(dg.ot_eps)} potential={_f(dg.potential_energy)} "
                     f"radius={_f(dg.support_radius)} iterations={dg.iterations}")
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    return payload + f"crc32 {zlib.crc32(payload):08x}\n".encode("ascii")


def write_trajectory(traj: Trajectory, path):
    data = format_trajectory(traj)
    with open(path, "wb") as fh:
        fh.write(data)


def _fields(line, lineno, expect):
    parts = line.split()
    if not parts or parts[0] != expect:
        raise FormatError(f"line {lineno}: expected {expect!r} record")
    out = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise FormatError(f"line {lineno}: malformed field {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_trajectory(data: bytes) -> Trajectory:
    first = data.split(b"\n", 1)[0].decode("utf-8", errors="replace")
    magic = first.split(" ", 1)[0]
    if not magic.startswith(MAGIC) or not magic[len(MAGIC):].isdigit():
        raise FormatError("not an .sgt trajectory file")
    if int(magic[len(MAGIC):]) != VERSION:
        raise FormatVersionMismatch(f"file format version {magic[len(MAGIC):]}, "
                                    f"this reader supports {VERSION}")
    body, sep, tail = data.rstrip(b"\n").rpartition(b"\n")
    if not sep or not tail.startswith(b"crc32 "):
        raise ChecksumMismatch("missing checksum line (truncated file?)")
    payload = body + b"\n"
    try:
        stored = int(tail[6:].strip(), 16)
    except ValueError:
        raise ChecksumMismatch("unreadable checksum") from None
    if zlib.crc32(payload) != stored:
        raise ChecksumMismatch("payload does not match stored checksum")

    lines = payload.decode("utf-8").splitlines()
    head = {}
    for tok in lines[0].split()[1:]:
        k, _, v = tok.partition("=")
        head[k] = v
    try:
        d = int(head["d"])
        counts = [int(c) for c in head["atoms"].split(",")] if head["atoms"] else []
        nsnap = int(head["snapshots"])
        steps, stride, tau = int(head["steps"]), int(head["stride"]), float(head["tau"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad header: {exc}") from None
    if len(counts) != nsnap:
        raise FormatError("header atom counts do not match snapshot count")
    snaps = []
    pos = 1
    for n in counts:
        rec = _fields(lines[pos], pos + 1, "snapshot")
        block = np.array([[float(v) for v in ln.split()] for ln in lines[pos + 1:pos + 1 + n]])
        if block.shape != (n, d + 1):
            raise FormatError(f"line {pos + 2}: expected {n} atoms with {d} coordinates")
        dg = _fields(lines[pos + 1 + n], pos + 2 + n, "diag")
        diag = StepDiagnostics(float(dg["ot_eps"]), float(dg["potential"]),
                               float(dg["radius"]), int(dg["iterations"]))
        measure = DiscreteMeasure(block[:, :d], block[:, d])
        snaps.append(Snapshot(int(rec["step"]), float(rec["time"]), measure, diag))
        pos += n + 2
    if pos != len(lines):
        raise FormatError("trailing data after last snapshot")
    return Trajectory(d, tau, steps, stride, tuple(snaps))


def read_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        return parse_trajectory(fh.read())
