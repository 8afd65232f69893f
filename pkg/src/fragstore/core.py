"""Identifiers, version tags and block values shared by every layer."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence, Union

ClientId = Union[int, str]

DEFAULT_BLOCK_SIZE = 64 * 1024

# Reserved ts for the tombstone written by file deletion; above any reachable counter.
TOMBSTONE_TS = 2**63 - 1


@dataclass(frozen=True, order=True)
class FileId:
    cfid: ClientId
    cfseq: int

    def __deepcopy__(self, memo):
        return self  # immutable

    def __str__(self) -> str:
        return format_file_id(self)


@dataclass(frozen=True, order=True)
class BlockId:
    fid: FileId
    cid: ClientId
    cseq: int

    def __deepcopy__(self, memo):
        return self  # immutable

    def __str__(self) -> str:
        return format_block_id(self)

    @property
    def is_genesis(self) -> bool:
        # the owner's first block for a file is always its genesis block
        return self.cid == self.fid.cfid and self.cseq == 0


@dataclass(frozen=True)
class Tag:
    ts: int = 0
    wid: Optional[ClientId] = None

    def __deepcopy__(self, memo):
        return self  # immutable

    def __lt__(self, other: Tag) -> bool:
        return tag_less(self, other)

    def __le__(self, other: Tag) -> bool:
        return self == other or tag_less(self, other)

    def __gt__(self, other: Tag) -> bool:
        return tag_less(other, self)

    def __ge__(self, other: Tag) -> bool:
        return self == other or tag_less(other, self)

    @property
    def is_tombstone(self) -> bool:
        return self.ts == TOMBSTONE_TS

    def __str__(self) -> str:
        return format_tag(self)


INITIAL_TAG = Tag(0, None)


def tag_less(a: Tag, b: Tag) -> bool:
    """Lexicographic order on (ts, wid) with a nil writer below every client id."""
    if a.ts != b.ts:
        return a.ts < b.ts
    if a.wid is None or b.wid is None:
        return a.wid is None and b.wid is not None
    return a.wid < b.wid


@dataclass(frozen=True)
class BlockValue:
    next_link: Optional[BlockId] = None
    data: bytes = b""

    def __deepcopy__(self, memo):
        return self  # immutable

    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


EMPTY_VALUE = BlockValue(None, b"")


class BlockCounter:
    """Per-(client, file) block sequence numbers owned by one client."""

    def __init__(self) -> None:
        self._next: dict[FileId, int] = {}

    def peek(self, fid: FileId) -> int:
        return self._next.get(fid, 0)

    def advance_to(self, fid: FileId, value: int) -> None:
        self._next[fid] = max(self.peek(fid), value)

    def take(self, fid: FileId) -> int:
        n = self._next.get(fid, 0)
        self._next[fid] = n + 1
        return n


def next_block_id(fid: FileId, cid: ClientId, counter: BlockCounter) -> BlockId:
    return BlockId(fid, cid, counter.take(fid))


@dataclass(frozen=True)
class ChainEntry:
    block: BlockId
    value: BlockValue
    tag: Tag

    def __deepcopy__(self, memo):
        return self  # immutable


@dataclass(frozen=True)
class FileView:
    fid: FileId
    chain: tuple[ChainEntry, ...]

    def is_link_consistent(self) -> bool:
        return link_consistent([(e.block, e.value) for e in self.chain])

    def content(self) -> bytes:
        return b"".join(e.value.data for e in self.chain[1:])


def link_consistent(chain: Sequence[tuple[BlockId, BlockValue]]) -> bool:
    if not chain:
        return False
    for (_, value), (nxt, _) in zip(chain, chain[1:]):
        if value.next_link != nxt:
            return False
    return chain[-1][1].next_link is None


# -- canonical text rendering (the history checker joins on these strings) --


def format_client(cid: Hashable, prefix: str = "c") -> str:
    return f"{prefix}{cid}"


def format_file_id(fid: FileId, prefix: str = "c") -> str:
    return f"{prefix}{fid.cfid}_{fid.cfseq}"


def format_block_id(bid: Optional[BlockId], prefix: str = "c") -> str:
    if bid is None:
        return "nil"
    return f"{format_file_id(bid.fid, prefix)}-{prefix}{bid.cid}_{bid.cseq}"


def format_tag(tag: Tag) -> str:
    return f"({tag.ts},{'nil' if tag.wid is None else tag.wid})"


def parse_client_id(text: str) -> ClientId:
    return int(text) if text.lstrip("-").isdigit() else text


def parse_file_id(text: str) -> FileId:
    if not text.startswith("c"):
        raise ValueError(f"bad file id {text!r}")
    cfid, _, cfseq = text[1:].rpartition("_")
    return FileId(parse_client_id(cfid), int(cfseq))


def parse_block_id(text: str) -> Optional[BlockId]:
    if text == "nil":
        return None
    fpart, sep, bpart = text.partition("-c")
    if not sep:
        raise ValueError(f"bad block id {text!r}")
    cid, _, cseq = bpart.rpartition("_")
    return BlockId(parse_file_id(fpart), parse_client_id(cid), int(cseq))


def parse_tag(text: str) -> Tag:
    ts, _, wid = text.strip("()").partition(",")
    return Tag(int(ts), None if wid == "nil" else parse_client_id(wid))
