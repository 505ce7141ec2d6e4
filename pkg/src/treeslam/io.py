"""Line-oriented text formats shared by the pipeline stages.

Numbers are written with 12 significant digits, so files are byte-stable for
a given input and re-read values agree with the in-memory ones to that
precision.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from treeslam.chain import Chain, Correction
from treeslam.cloud import Frame, ViewCone
from treeslam.errors import ParseError
from treeslam.pairs import MatchPair
from treeslam.se3 import RigidTransform


def fmt(x: float) -> str:
    return f"{x:.12g}"


def _rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def _numbers(path: Path, lineno: int, fields: list[str], count: int) -> list[float]:
    if len(fields) != count:
        raise ParseError(path, lineno, f"expected {count} fields, found {len(fields)}")
    try:
        values = [float(v) for v in fields]
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None
    if not np.all(np.isfinite(values)):
        raise ParseError(path, lineno, "non-finite number")
    return values


def _frame_id(path: Path, lineno: int, text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(path, lineno, f"frame id {text!r} is not an integer") from None
    if value < 0:
        raise ParseError(path, lineno, "negative frame id")
    return value


def write_frames(path: Path, frames: Sequence[Frame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            for x, y, z in f.points:
                fh.write(f"{f.id} {fmt(x)} {fmt(y)} {fmt(z)}\n")


def read_frames(path: Path, cone: ViewCone | None = None, count: int | None = None) -> list[Frame]:
    """Frames ``0 .. max id`` (or ``count - 1``); ids without points become empty frames."""
    path = Path(path)
    cone = cone or ViewCone()
    points: dict[int, list[list[float]]] = {}
    for lineno, fields in _rows(path):
        fid = _frame_id(path, lineno, fields[0])
        points.setdefault(fid, []).append(_numbers(path, lineno, fields[1:], 3))
    n = count if count is not None else (max(points) + 1 if points else 0)
    if points and max(points) >= n:
        raise ParseError(path, 0, f"frame id {max(points)} beyond the {n} expected frames")
    return [Frame(k, np.array(points.get(k, []), dtype=float).reshape(-1, 3), cone) for k in range(n)]


def write_poses(path: Path, transforms: Sequence[RigidTransform]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, t in enumerate(transforms):
            fh.write(f"{k} " + " ".join(fmt(v) for v in t.to_row()) + "\n")


def read_poses(path: Path) -> list[RigidTransform]:
    path = Path(path)
    found: dict[int, RigidTransform] = {}
    for lineno, fields in _rows(path):
        fid = _frame_id(path, lineno, fields[0])
        t = RigidTransform.from_row(_numbers(path, lineno, fields[1:], 12))
        if not t.is_valid(1e-6):
            raise ParseError(path, lineno, "rotation is not orthonormal")
        if fid in found:
            raise ParseError(path, lineno, f"duplicate frame id {fid}")
        found[fid] = t.orthonormalized()
    if sorted(found) != list(range(len(found))):
        raise ParseError(path, 0, "pose ids must be 0..n-1")
    return [found[k] for k in range(len(found))]


def write_step_errors(path: Path, chain: Chain) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, e in enumerate(chain.step_errors, start=1):
            fh.write(f"{k} {fmt(e)}\n")


def read_step_errors(path: Path) -> list[float]:
    path = Path(path)
    out = []
    for lineno, fields in _rows(path):
        _frame_id(path, lineno, fields[0])
        out.append(_numbers(path, lineno, fields[1:], 1)[0])
    return out


def write_chain(directory: Path, chain: Chain, stem: str = "poses") -> None:
    write_poses(directory / f"{stem}.txt", chain.totals)
    write_step_errors(directory / f"{stem}_step_errors.txt", chain)


def read_chain(pose_file: Path) -> Chain:
    """Chain from a pose file, with step errors from the sibling file when present."""
    pose_file = Path(pose_file)
    poses = read_poses(pose_file)
    errors_file = pose_file.with_name(pose_file.stem + "_step_errors.txt")
    errors = read_step_errors(errors_file) if errors_file.exists() else []
    if errors and len(errors) != len(poses) - 1:
        raise ParseError(errors_file, 0, f"{len(errors)} step errors for {len(poses)} poses")
    return Chain(tuple(poses), tuple(errors))


def write_corrections(path: Path, log: Sequence[Correction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in log:
            fh.write(f"{c.j} {c.i} {c.rule} " + " ".join(fmt(v) for v in c.delta.to_row()) + "\n")


def read_corrections(path: Path) -> list[tuple[int, int, str, RigidTransform]]:
    path = Path(path)
    out = []
    for lineno, fields in _rows(path):
        j, i = _frame_id(path, lineno, fields[0]), _frame_id(path, lineno, fields[1])
        out.append((j, i, fields[2], RigidTransform.from_row(_numbers(path, lineno, fields[3:], 12))))
    return out


def write_pairs(path: Path, pairs: Sequence[MatchPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.j} {p.i} {fmt(p.overlap)} {fmt(p.error)} {p.status}\n")


def read_pairs(path: Path) -> list[MatchPair]:
    path = Path(path)
    out = []
    for lineno, fields in _rows(path):
        if len(fields) != 5:
            raise ParseError(path, lineno, f"expected 5 fields, found {len(fields)}")
        j, i = _frame_id(path, lineno, fields[0]), _frame_id(path, lineno, fields[1])
        lam, err = _numbers(path, lineno, fields[2:4], 2)
        out.append(MatchPair(i, j, lam, err, fields[4]))
    return out


def write_table(path: Path, rows: np.ndarray, int_columns: Sequence[int] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(" ".join(str(int(v)) if k in int_columns else fmt(v) for k, v in enumerate(row)) + "\n")
