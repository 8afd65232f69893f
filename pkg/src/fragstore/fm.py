"""The fragment manager: files as linked lists of coverable blocks.

Every public operation is a generator in the style of :mod:`fragstore.register`
and must be driven by a network (see :class:`fragstore.cluster.Cluster`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .chunking import ChunkParams, block_hash, chunk
from .core import (
    INITIAL_TAG,
    BlockCounter,
    BlockId,
    BlockValue,
    ChainEntry,
    FileId,
    FileView,
    format_block_id,
    format_file_id,
    link_consistent,
    next_block_id,
    parse_block_id,
    parse_file_id,
)
from .diff import match_blocks
from .dsmm import DSMM
from .errors import BrokenChain, DuplicatePath, FileDeleted, InvariantViolation, UnknownFile
from .history import bytes_payload
from .register import CHG, ClientContext, catalog_query

# -- genesis metadata -------------------------------------------------------


def encode_metadata(path: str, fid: FileId, deleted: bool = False) -> bytes:
    out = bytearray()
    for text in (path, format_file_id(fid), "1" if deleted else "0"):
        raw = text.encode("utf-8")
        out += struct.pack(">I", len(raw)) + raw
    return bytes(out)


def decode_metadata(data: bytes) -> tuple[str, FileId, bool]:
    fields = []
    pos = 0
    while pos < len(data):
        (n,) = struct.unpack_from(">I", data, pos)
        fields.append(data[pos + 4:pos + 4 + n].decode("utf-8"))
        pos += 4 + n
    if len(fields) != 3:
        raise ValueError(f"genesis metadata has {len(fields)} fields")
    path, fid, deleted = fields
    return path, parse_file_id(fid), deleted == "1"


def genesis_of(fid: FileId) -> BlockId:
    return BlockId(fid, fid.cfid, 0)


@dataclass(frozen=True)
class CatalogEntry:
    path: str
    fid: FileId
    genesis: BlockId


@dataclass
class UpdateReport:
    # (target block, number of data parts, status) per fm_update issued
    updates: list[tuple[BlockId, int, str]] = field(default_factory=list)
    # planned targets that an earlier unchg refresh removed from the local list
    dropped: list[BlockId] = field(default_factory=list)
    bytes_chunked: int = 0

    @property
    def succeeded(self) -> bool:
        return not self.dropped and all(status == CHG for _, _, status in self.updates)


class FragmentManager:
    def __init__(self, ctx: ClientContext, params: ChunkParams = ChunkParams(),
                 max_block: Optional[int] = None) -> None:
        params.validate()
        self.ctx = ctx
        self.params = params
        self.dsmm = DSMM(ctx, max_block if max_block is not None else params.max_size)
        self.counter = BlockCounter()
        self.file_seq = 0
        self.catalog: dict[str, CatalogEntry] = {}
        self.lists: dict[FileId, list[tuple[BlockId, BlockValue]]] = {}
        self.deleted: set[FileId] = set()

    # -- local state ----------------------------------------------------

    def entry(self, fid: FileId) -> CatalogEntry:
        if fid in self.deleted:
            raise FileDeleted(format_file_id(fid))
        for e in self.catalog.values():
            if e.fid == fid:
                return e
        raise UnknownFile(format_file_id(fid))

    def register(self, path: str, fid: FileId) -> CatalogEntry:
        e = CatalogEntry(path, fid, genesis_of(fid))
        self.catalog[path] = e
        return e

    def local_list(self, fid: FileId) -> list[tuple[BlockId, BlockValue]]:
        if fid not in self.lists:
            raise UnknownFile(f"{format_file_id(fid)} has no local list; read it first")
        return self.lists[fid]

    def local_view(self, fid: FileId) -> FileView:
        return FileView(fid, tuple(ChainEntry(b, v, self.dsmm.version(b)) for b, v in self.local_list(fid)))

    def local_content(self, fid: FileId) -> bytes:
        return b"".join(v.data for _, v in self.local_list(fid)[1:])

    def save_catalog(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for e in self.catalog.values():
                fh.write(f"{e.path}\t{format_file_id(e.fid)}\t{format_block_id(e.genesis)}\n")

    def load_catalog(self, path: Union[str, Path]) -> None:
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                p, fid, gen = line.rstrip("\n").split("\t")
                self.catalog[p] = CatalogEntry(p, parse_file_id(fid), parse_block_id(gen))

    # -- history bracketing --------------------------------------------

    def _invoke(self, op: str, fid: Optional[FileId], payload: str = "-") -> None:
        obj = format_file_id(fid) if fid is not None else "-"
        self.ctx.history.invoke(self.ctx.pid, op, obj, payload=payload)

    def _respond(self, op: str, fid: Optional[FileId], status: str = "ok", payload: str = "-") -> None:
        obj = format_file_id(fid) if fid is not None else "-"
        self.ctx.history.respond(self.ctx.pid, op, obj, status=status, payload=payload)

    # -- catalog operations --------------------------------------------

    def fm_create_file(self, path: str):
        if path in self.catalog:
            raise DuplicatePath(path)
        fid = FileId(self.ctx.cid, self.file_seq)
        self.file_seq += 1
        genesis = genesis_of(fid)
        self.counter.advance_to(fid, genesis.cseq + 1)
        value = BlockValue(None, encode_metadata(path, fid))
        self._invoke("fm_create_file", fid, bytes_payload(path.encode("utf-8")))
        yield from self.dsmm.create(genesis, value)
        self.register(path, fid)
        self.lists[fid] = [(genesis, value)]
        self._respond("fm_create_file", fid)
        return fid

    def fm_delete_file(self, fid: FileId):
        e = self.entry(fid)
        self._invoke("fm_delete_file", fid)
        nxt = self.dsmm.cached(e.genesis)
        link = nxt.next_link if nxt is not None else None
        value = BlockValue(link, encode_metadata(e.path, fid, deleted=True))
        yield from self.dsmm.tombstone(e.genesis, value)
        del self.catalog[e.path]
        self.lists.pop(fid, None)
        self.deleted.add(fid)
        self._respond("fm_delete_file", fid)

    def fm_list(self):
        self._invoke("fm_list", None)
        merged = yield from catalog_query(self.ctx)
        out = []
        for genesis, (tag, value) in sorted(merged.items()):
            path, fid, deleted = decode_metadata(value.data)
            if deleted or tag.is_tombstone:
                continue
            out.append((path, fid, genesis))
            if path not in self.catalog:
                self.register(path, fid)
        self._respond("fm_list", None, payload=str(len(out)))
        return out

    # -- read ----------------------------------------------------------

    def fm_read(self, fid: FileId):
        e = self.entry(fid)
        self._invoke("fm_read", fid)
        try:
            chain = yield from self._read_chain(e)
        except (BrokenChain, FileDeleted) as err:
            self._respond("fm_read", fid, status=type(err).__name__)
            raise
        self.lists[fid] = chain
        content = b"".join(v.data for _, v in chain[1:])
        self._respond("fm_read", fid, payload=bytes_payload(content))
        return content

    def _read_chain(self, e: CatalogEntry):
        gval = yield from self.dsmm.read(e.genesis)
        gtag = self.dsmm.version(e.genesis)
        if gtag == INITIAL_TAG:
            raise BrokenChain(f"genesis {format_block_id(e.genesis)} was never written")
        if gtag.is_tombstone or decode_metadata(gval.data)[2]:
            raise FileDeleted(format_file_id(e.fid))
        chain = [(e.genesis, gval)]
        seen = {e.genesis}
        b = gval.next_link
        while b is not None:
            if b in seen:
                raise BrokenChain(f"cycle at {format_block_id(b)}")
            val = yield from self.dsmm.read(b)
            if self.dsmm.version(b) == INITIAL_TAG:
                raise BrokenChain(f"link to unwritten block {format_block_id(b)}")
            chain.append((b, val))
            seen.add(b)
            b = val.next_link
        return chain

    # -- update --------------------------------------------------------

    def fm_update(self, fid: FileId, b: BlockId, parts: Sequence[bytes]):
        """Replace b's data with parts[0] and splice parts[1:] in right after it."""
        if not parts:
            raise ValueError("fm_update needs at least one data part")
        self.entry(fid)
        chain = self.local_list(fid)
        pos = _index(chain, b)
        old = chain[pos][1]
        k = len(parts) - 1
        self._invoke("fm_update", fid, payload=f"{format_block_id(b)};{k + 1}")
        ids = [next_block_id(fid, self.ctx.cid, self.counter) for _ in range(k)]
        created: list[tuple[BlockId, BlockValue]] = []
        for j in range(k, 0, -1):
            link = ids[j] if j < k else old.next_link
            created.insert(0, (ids[j - 1], BlockValue(link, parts[j])))
        head = BlockValue(ids[0] if k else old.next_link, parts[0])
        if self.ctx.variant.forward_create_order:
            # broken variant: link b to its new successors before they exist
            res = yield from self.dsmm.write(b, head)
            for bid, val in created:
                yield from self.dsmm.create(bid, val)
        else:
            for bid, val in reversed(created):
                yield from self.dsmm.create(bid, val)
            res = yield from self.dsmm.write(b, head)
        if res.changed:
            chain[pos + 1:pos + 1] = created
            chain[pos] = (b, head)
        else:
            yield from self._refresh_after(chain, pos, res.value)
        if not link_consistent(chain):
            raise InvariantViolation(f"local list of {format_file_id(fid)} lost link consistency")
        self._respond("fm_update", fid, status=res.status)
        return res.status

    def _refresh_after(self, chain, pos: int, value: BlockValue):
        """Adopt b's prevailing value and re-link the local list behind it."""
        b = chain[pos][0]
        chain[pos] = (b, value)
        later = {bid: i for i, (bid, _) in enumerate(chain) if i > pos}
        fresh = []
        nxt = value.next_link
        while nxt is not None and nxt not in later:
            val = yield from self.dsmm.read(nxt)
            if self.dsmm.version(nxt) == INITIAL_TAG:
                raise BrokenChain(f"link to unwritten block {format_block_id(nxt)}")
            fresh.append((nxt, val))
            nxt = val.next_link
        tail = chain[later[nxt]:] if nxt is not None else []
        chain[pos + 1:] = fresh + tail

    def fm_block_identify(self, fid: FileId, new_data: bytes):
        """Chunk the new file content, diff it against the local list and
        issue one fm_update per touched block, in chain order."""
        self.entry(fid)
        chain = self.local_list(fid)
        genesis = chain[0][0]
        segments = [s for s in chunk(new_data, self.params) if s.data]
        cur = [(bid, block_hash(v.data)) for bid, v in chain[1:] if v.data]
        script = match_blocks(cur, [s.hash for s in segments], head=genesis)
        report = UpdateReport(bytes_chunked=len(new_data))
        if script.identical:
            return report
        mods = dict(script.mods)
        runs = dict(script.inserts)
        current = dict(chain)
        plan = []
        for bid, _ in chain:
            if bid not in mods and bid not in runs:
                continue
            if bid in mods:
                first = segments[mods[bid]].data if mods[bid] is not None else b""
            else:
                first = current[bid].data
            plan.append((bid, [first] + [segments[i].data for i in runs.get(bid, [])]))
        for bid, parts in plan:
            if all(b != bid for b, _ in chain):
                # the block became unreachable, so there is nothing left to update
                report.dropped.append(bid)
                continue
            status = yield from self.fm_update(fid, bid, parts)
            report.updates.append((bid, len(parts), status))
        return report

    def update_block(self, fid: FileId, b: BlockId, new_data: bytes):
        """Rewrite one known block, re-chunking its new data if it outgrew the bound."""
        parts = [s.data for s in chunk(new_data, self.params)] if new_data else [b""]
        status = yield from self.fm_update(fid, b, parts)
        return status


def _index(chain: Sequence[tuple[BlockId, BlockValue]], b: BlockId) -> int:
    for i, (bid, _) in enumerate(chain):
        if bid == b:
            return i
    raise KeyError(f"{format_block_id(b)} is not in the local list")
