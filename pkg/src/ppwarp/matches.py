"""Reading and writing point correspondences.

File format (UTF-8, ``#`` starts a comment line)::

    SIZES tw th rw rh
    id tx ty rx ry
    ...

``t*`` are target-image pixels, ``r*`` reference-image pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BoundsError, DataError, IoError, ParseError


class Correspondence(NamedTuple):
    id: int
    target: tuple
    reference: tuple


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Matched points stored column-wise: ``target[k] <-> reference[k]``."""

    ids: np.ndarray
    target: np.ndarray
    reference: np.ndarray
    target_size: tuple
    reference_size: tuple

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.target, dtype=float).reshape(-1, 2)
        ref = np.asarray(self.reference, dtype=float).reshape(-1, 2)
        if not (len(ids) == len(tgt) == len(ref)):
            raise DataError("ids, target and reference lengths differ", "matches")
        if len(ids) == 0:
            raise DataError("correspondence set is empty", "matches")
        if len(np.unique(ids)) != len(ids):
            raise DataError("correspondence ids are not unique", "matches")
        for name in ("target_size", "reference_size"):
            w, h = getattr(self, name)
            if int(w) <= 0 or int(h) <= 0:
                raise DataError(f"{name} must be positive, got {w}x{h}", "matches")
            object.__setattr__(self, name, (int(w), int(h)))
        for arr in (ids, tgt, ref):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "reference", ref)

    def __len__(self):
        return len(self.ids)

    @property
    def pairs(self):
        return [
            Correspondence(int(i), tuple(t), tuple(r))
            for i, t, r in zip(self.ids, self.target, self.reference)
        ]

    def subset(self, mask_or_index) -> CorrespondenceSet:
        return CorrespondenceSet(
            self.ids[mask_or_index],
            self.target[mask_or_index],
            self.reference[mask_or_index],
            self.target_size,
            self.reference_size,
        )

    def check_bounds(self):
        for pts, (w, h), side in (
            (self.target, self.target_size, "target"),
            (self.reference, self.reference_size, "reference"),
        ):
            bad = (pts[:, 0] < 0) | (pts[:, 0] > w) | (pts[:, 1] < 0) | (pts[:, 1] > h)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise BoundsError(
                    f"pair {self.ids[k]}: {side} point ({pts[k, 0]:g}, {pts[k, 1]:g}) "
                    f"outside {w}x{h}",
                    pair_id=int(self.ids[k]),
                )

    def __eq__(self, other):
        if not isinstance(other, CorrespondenceSet):
            return NotImplemented
        return (
            self.target_size == other.target_size
            and self.reference_size == other.reference_size
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.target, other.target)
            and np.array_equal(self.reference, other.reference)
        )


def _int(tok, lineno, field):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer, got {tok!r}", lineno, field) from None


def _real(tok, lineno, field):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"expected real number, got {tok!r}", lineno, field) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", lineno, field)
    return v


_PAIR_FIELDS = ("id", "tx", "ty", "rx", "ry")


def parse_correspondences(text: str) -> CorrespondenceSet:
    sizes = None
    ids, rows, seen = [], [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if sizes is None:
            if toks[0] != "SIZES" or len(toks) != 5:
                raise ParseError("expected header 'SIZES tw th rw rh'", lineno)
            sizes = [_int(t, lineno, f) for t, f in zip(toks[1:], ("tw", "th", "rw", "rh"))]
            if min(sizes) <= 0:
                raise ParseError("image sizes must be positive", lineno)
            continue
        if len(toks) != 5:
            raise ParseError(f"expected 5 fields 'id tx ty rx ry', got {len(toks)}", lineno)
        pid = _int(toks[0], lineno, "id")
        if pid in seen:
            raise ParseError(f"duplicate id {pid}", lineno, "id")
        seen.add(pid)
        ids.append(pid)
        rows.append([_real(t, lineno, f) for t, f in zip(toks[1:], _PAIR_FIELDS[1:])])
    if sizes is None:
        raise ParseError("missing SIZES header")
    if not rows:
        raise ParseError("no correspondences")
    arr = np.array(rows)
    cs = CorrespondenceSet(ids, arr[:, :2], arr[:, 2:], tuple(sizes[:2]), tuple(sizes[2:]))
    cs.check_bounds()
    return cs


def load_correspondences(path) -> CorrespondenceSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", "matches") from e
    return parse_correspondences(text)


def format_correspondences(cs: CorrespondenceSet) -> str:
    tw, th = cs.target_size
    rw, rh = cs.reference_size
    lines = [f"SIZES {tw} {th} {rw} {rh}"]
    for i, t, r in zip(cs.ids.tolist(), cs.target.tolist(), cs.reference.tolist()):
        # repr() is the shortest string that round-trips the double exactly
        lines.append(f"{i} {t[0]!r} {t[1]!r} {r[0]!r} {r[1]!r}")
    return "\n".join(lines) + "\n"


def save_correspondences(cs: CorrespondenceSet, path) -> None:
    try:
        Path(path).write_text(format_correspondences(cs), encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", "matches") from e


def load_labels(path) -> dict:
    """Ground-truth labels, one ``id label`` per line (label -1 = outlier)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", "matches") from e
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError("expected 'id label'", lineno)
        out[_int(toks[0], lineno, "id")] = _int(toks[1], lineno, "label")
    return out


def save_labels(ids, labels, path) -> None:
    body = "".join(f"{int(i)} {int(l)}\n" for i, l in zip(ids, labels))
    try:
        Path(path).write_text(body, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", "matches") from e
