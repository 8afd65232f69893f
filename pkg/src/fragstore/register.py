"""Replicated coverable read/write register, one instance per block.

The read is the optimized two-phase ABD read: a query phase that encloses
the reader's own tag (servers that are not ahead of it answer without the
block content) and a propagate phase that is skipped when nothing newer
was found.  The write is query-then-propagate; it mints a new tag only when
the caller's version is the maximum the query phase found, and otherwise
turns into a read that returns the prevailing value and tag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    EMPTY_VALUE,
    INITIAL_TAG,
    TOMBSTONE_TS,
    BlockId,
    BlockValue,
    ClientId,
    Tag,
    format_block_id,
    format_client,
    format_tag,
)
from .history import History, value_payload
from .transport import (
    CATALOG,
    CATALOG_REPLY,
    READ,
    READ_REPLY,
    WRITE,
    WRITE_ACK,
    Broadcast,
    Envelope,
)

CHG = "chg"
UNCHG = "unchg"


@dataclass(frozen=True)
class Variant:
    """Protocol switches.  All False is the correct protocol; the others are
    deliberately broken variants used to show the checker catches them."""

    skip_read_propagate: bool = False
    no_wid_tiebreak: bool = False
    no_version_check: bool = False
    forward_create_order: bool = False

    def greater(self, a: Tag, b: Tag) -> bool:
        if self.no_wid_tiebreak:
            return a.ts > b.ts
        return a > b


CORRECT = Variant()


@dataclass
class ClientStats:
    cvr_reads: int = 0
    cvr_writes: int = 0
    # block-data bytes of newer values a read had to fetch
    fetched_bytes: int = 0


@dataclass
class ClientContext:
    cid: ClientId
    history: History
    clock: Callable[[], float] = lambda: 0.0
    variant: Variant = CORRECT
    stats: ClientStats = field(default_factory=ClientStats)

    @property
    def pid(self) -> str:
        return format_client(self.cid)


@dataclass(frozen=True)
class CvrResult:
    value: BlockValue
    tag: Tag
    status: str

    @property
    def changed(self) -> bool:
        return self.status == CHG


class ReplicaState:
    """Per-block (tag, value) held by one server."""

    def __init__(self) -> None:
        self.blocks: dict[BlockId, tuple[Tag, Optional[BlockValue]]] = {}

    def get(self, block: BlockId) -> tuple[Tag, Optional[BlockValue]]:
        return self.blocks.get(block, (INITIAL_TAG, None))

    def put(self, block: BlockId, tag: Tag, value: Optional[BlockValue]) -> None:
        self.blocks[block] = (tag, value)

    def genesis_entries(self) -> tuple:
        return tuple(
            (b, t, v) for b, (t, v) in sorted(self.blocks.items()) if b.is_genesis and v is not None
        )

    def fingerprint(self) -> tuple:
        return tuple(sorted(self.blocks.items()))


def server_receive(state: ReplicaState, m: Envelope, variant: Variant = CORRECT) -> Envelope:
    if m.kind == CATALOG:
        return Envelope(0, m.dst, m.src, CATALOG_REPLY, INITIAL_TAG, None, reply_to=m.msg_id,
                        entries=state.genesis_entries())
    tag, value = state.get(m.block)
    if m.kind == WRITE:
        if variant.greater(m.tag, tag):
            state.put(m.block, m.tag, m.payload)
            tag = m.tag
        return Envelope(0, m.dst, m.src, WRITE_ACK, tag, m.block, reply_to=m.msg_id)
    if m.kind == READ:
        if not variant.greater(tag, m.tag):
            return Envelope(0, m.dst, m.src, READ_REPLY, tag, m.block, reply_to=m.msg_id)
        return Envelope(0, m.dst, m.src, READ_REPLY, tag, m.block, value, reply_to=m.msg_id)
    raise ValueError(f"server cannot handle {m.kind}")


class Replica:
    """A server process: a ReplicaState behind the simulator's handler API."""

    def __init__(self, variant: Variant = CORRECT) -> None:
        self.state = ReplicaState()
        self.variant = variant

    def receive(self, m: Envelope) -> Envelope:
        return server_receive(self.state, m, self.variant)

    def fingerprint(self) -> tuple:
        return self.state.fingerprint()


def _max_reply(replies: list[Envelope], variant: Variant) -> Envelope:
    best = replies[0]
    for r in replies[1:]:
        if variant.greater(r.tag, best.tag) or (r.tag == best.tag and best.payload is None):
            best = r
    return best


def cvr_read(ctx: ClientContext, block: BlockId, local_tag: Tag = INITIAL_TAG,
             local_value: Optional[BlockValue] = None):
    """Generator; returns (value, tag).  Never-written blocks read as EMPTY_VALUE."""
    obj = format_block_id(block)
    ctx.history.invoke(ctx.pid, "cvr_read", obj, tag=format_tag(local_tag))
    ctx.stats.cvr_reads += 1
    replies = yield Broadcast(READ, block, local_tag)
    best = _max_reply(replies, ctx.variant)
    if ctx.variant.greater(best.tag, local_tag) and best.payload is not None:
        if not ctx.variant.skip_read_propagate:
            yield Broadcast(WRITE, block, best.tag, best.payload)
        tag, value = best.tag, best.payload
        ctx.stats.fetched_bytes += len(value.data)
    else:
        tag, value = local_tag, local_value
    ctx.history.respond(ctx.pid, "cvr_read", obj, tag=format_tag(tag),
                        payload=value_payload(value if tag != INITIAL_TAG else None))
    return (value if value is not None else EMPTY_VALUE), tag


def cvr_write(ctx: ClientContext, block: BlockId, value: BlockValue, version: Tag,
              known_value: Optional[BlockValue] = None):
    """Generator; returns a CvrResult.

    ``known_value`` is the caller's cached value for ``version``; it is only
    needed when servers are not ahead of the caller and therefore answer the
    query without content.
    """
    obj = format_block_id(block)
    ctx.history.invoke(ctx.pid, "cvr_write", obj, tag=format_tag(version), payload=value_payload(value))
    ctx.stats.cvr_writes += 1
    replies = yield Broadcast(READ, block, version)
    best = _max_reply(replies, ctx.variant)
    current = best.tag
    if (current == version and not current.is_tombstone) or ctx.variant.no_version_check:
        new_tag = Tag(current.ts + 1, ctx.cid)
        yield Broadcast(WRITE, block, new_tag, value)
        result = CvrResult(value, new_tag, CHG)
    else:
        prevailing = best.payload if best.payload is not None else known_value
        if prevailing is not None and ctx.variant.greater(current, version):
            yield Broadcast(WRITE, block, current, prevailing)
        result = CvrResult(prevailing if prevailing is not None else EMPTY_VALUE, current, UNCHG)
    ctx.history.respond(ctx.pid, "cvr_write", obj, tag=format_tag(result.tag), status=result.status,
                        payload=value_payload(result.value if result.tag != INITIAL_TAG else None))
    return result


def cvr_tombstone(ctx: ClientContext, block: BlockId, value: BlockValue, version: Tag):
    """Generator; installs ``value`` under the reserved maximal tag."""
    obj = format_block_id(block)
    tag = Tag(TOMBSTONE_TS, ctx.cid)
    ctx.history.invoke(ctx.pid, "cvr_delete", obj, tag=format_tag(version), payload=value_payload(value))
    yield Broadcast(WRITE, block, tag, value)
    ctx.history.respond(ctx.pid, "cvr_delete", obj, tag=format_tag(tag), status=CHG,
                        payload=value_payload(value))
    return CvrResult(value, tag, CHG)


def catalog_query(ctx: ClientContext):
    """Generator; returns {genesis block: (tag, value)} merged over a quorum."""
    replies = yield Broadcast(CATALOG, None, INITIAL_TAG)
    merged: dict[BlockId, tuple[Tag, BlockValue]] = {}
    for r in replies:
        for block, tag, value in r.entries:
            if block not in merged or tag > merged[block][0]:
                merged[block] = (tag, value)
    return merged
