"""Client-side shared-memory facade: caches the last (tag, value) seen per block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import DEFAULT_BLOCK_SIZE, EMPTY_VALUE, INITIAL_TAG, BlockId, BlockValue, Tag
from .errors import InvariantViolation
from .register import ClientContext, CvrResult, cvr_read, cvr_tombstone, cvr_write


@dataclass
class CacheEntry:
    ver: Tag = INITIAL_TAG
    val: Optional[BlockValue] = None


class DSMM:
    def __init__(self, ctx: ClientContext, max_block: Optional[int] = DEFAULT_BLOCK_SIZE) -> None:
        self.ctx = ctx
        self.max_block = max_block
        self.cache: dict[BlockId, CacheEntry] = {}
        self.calls = 0

    def version(self, b: BlockId) -> Tag:
        return self.cache.get(b, CacheEntry()).ver

    def cached(self, b: BlockId) -> Optional[BlockValue]:
        return self.cache.get(b, CacheEntry()).val

    def forget(self) -> None:
        """Drop the cache, as after a client restart."""
        self.cache.clear()

    def _store(self, b: BlockId, tag: Tag, value: BlockValue) -> None:
        entry = self.cache.setdefault(b, CacheEntry())
        if tag < entry.ver:
            raise InvariantViolation(f"cache tag for {b} went backwards: {entry.ver} -> {tag}")
        entry.ver, entry.val = tag, value

    def _check_size(self, val: BlockValue) -> None:
        if self.max_block is not None and len(val.data) > self.max_block:
            raise ValueError(f"block data of {len(val.data)} bytes exceeds the {self.max_block}-byte bound")

    def read(self, b: BlockId):
        self.calls += 1
        entry = self.cache.get(b, CacheEntry())
        value, tag = yield from cvr_read(self.ctx, b, entry.ver, entry.val)
        if tag != INITIAL_TAG:
            self._store(b, tag, value)
        return value

    def write(self, b: BlockId, val: BlockValue):
        """Returns the CvrResult so callers see chg/unchg; ``.value`` is what the
        block now holds from this client's point of view."""
        self._check_size(val)
        self.calls += 1
        entry = self.cache.get(b, CacheEntry())
        res = yield from cvr_write(self.ctx, b, val, entry.ver, entry.val)
        if res.tag != INITIAL_TAG:
            self._store(b, res.tag, res.value)
        return res

    def create(self, b: BlockId, val: BlockValue):
        self._check_size(val)
        self.calls += 1
        res: CvrResult = yield from cvr_write(self.ctx, b, val, INITIAL_TAG)
        if not res.changed:
            raise InvariantViolation(f"create of fresh block {b} was not applied (tag {res.tag})")
        self._store(b, res.tag, res.value)
        return res

    def tombstone(self, b: BlockId, val: BlockValue):
        self.calls += 1
        res = yield from cvr_tombstone(self.ctx, b, val, self.version(b))
        self._store(b, res.tag, res.value)
        return res


__all__ = ["DSMM", "CacheEntry", "EMPTY_VALUE"]
