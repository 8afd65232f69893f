"""Aligning the block hashes of the current file version with a new chunking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .chunking import block_hash
from .core import BlockId

EMPTY_HASH = block_hash(b"")


@dataclass
class DiffScript:
    # (old block, index into the new hashes); a None index means "set to empty"
    mods: list[tuple[BlockId, Optional[int]]] = field(default_factory=list)
    # (anchor block, contiguous run of new-hash indices inserted right after it);
    # the anchor is ``head`` (normally the genesis block) for insertions at the front
    inserts: list[tuple[Optional[BlockId], list[int]]] = field(default_factory=list)
    equal: list[tuple[BlockId, int]] = field(default_factory=list)

    @property
    def identical(self) -> bool:
        return not self.mods and not self.inserts

    def cost(self) -> int:
        return len(self.mods) + sum(len(run) for _, run in self.inserts)

    def apply(self, cur: Sequence[tuple[BlockId, str]], new: Sequence[str], head=None) -> list[str]:
        """Replay the script on ``cur``; emptied blocks are dropped from the result."""
        mods = dict(self.mods)
        eq = dict(self.equal)
        runs = {anchor: run for anchor, run in self.inserts}
        out = [new[i] for i in runs.get(head, [])]
        for bid, h in cur:
            if bid in eq:
                out.append(new[eq[bid]])
            elif bid in mods:
                if mods[bid] is not None:
                    out.append(new[mods[bid]])
            else:
                out.append(h)
            out.extend(new[i] for i in runs.get(bid, []))
        return out


def edit_distance_table(a: Sequence[str], b: Sequence[str]) -> list[list[int]]:
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + same)
    return d


def match_blocks(cur: Sequence[tuple[BlockId, str]], new: Sequence[str],
                 head: Optional[BlockId] = None) -> DiffScript:
    """Minimum-edit alignment of old block hashes against new segment hashes.

    Deletions become modifications to empty data, since blocks are never
    unlinked.  Each maximal run of inserted hashes is anchored to the old
    block preceding it, or to ``head`` when nothing precedes it.
    """
    old = [h for _, h in cur]
    d = edit_distance_table(old, new)
    i, j = len(old), len(new)
    steps = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and old[i - 1] == new[j - 1] and d[i][j] == d[i - 1][j - 1]:
            steps.append(("eq", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            steps.append(("ins", i - 1, j - 1))
            j -= 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            steps.append(("mod", i - 1, j - 1))
            i, j = i - 1, j - 1
        else:
            steps.append(("del", i - 1, None))
            i -= 1
    steps.reverse()

    script = DiffScript()
    for op, oi, nj in steps:
        if op == "eq":
            script.equal.append((cur[oi][0], nj))
        elif op == "mod":
            script.mods.append((cur[oi][0], nj))
        elif op == "del":
            script.mods.append((cur[oi][0], None))
        else:
            anchor = cur[oi][0] if oi >= 0 else head
            if script.inserts and script.inserts[-1][0] == anchor:
                script.inserts[-1][1].append(nj)
            else:
                script.inserts.append((anchor, [nj]))
    return script
