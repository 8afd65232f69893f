"""Socket backend: replicas behind real TCP connections on localhost.

Every server listens on its own port and every client keeps one connection
per server.  Frames carry exactly the envelope fields of the simulator, so
protocol code is shared unchanged.  The header has no message id; a reply is
matched to its request by position, since a server answers the requests of
one connection in order.

Everything runs in one asyncio loop in one process.  Server handlers run
to completion without awaiting, so the requests at one replica are
serialized, and the loop clock is a true global clock for the history.
"""

from __future__ import annotations

import asyncio
import logging
import struct
from collections import deque
from typing import Any, Callable, Optional

from .core import BlockValue, Tag, format_block_id, format_tag, parse_block_id, parse_client_id
from .errors import QuorumUnreachable
from .transport import (
    CATALOG_REPLY,
    Broadcast,
    Envelope,
    FaultPlan,
    OpGen,
    ServerHandler,
    Sleep,
    Task,
    majority,
)

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")


class WireError(ValueError):
    pass


# -- wire encoding -----------------------------------------------------------------


def _field(text: str) -> str:
    if "|" in text or "\n" in text:
        raise WireError(f"field {text!r} cannot be framed")
    return text


def _encode_value(value: BlockValue) -> bytes:
    line = f"{format_block_id(value.next_link)}|{len(value.data)}\n".encode()
    return line + value.data


def encode_envelope(env: Envelope) -> bytes:
    """One frame: 4-byte big-endian length, header line, optional payload.

    A CATALOG-REPLY has no single payload; its ``has_payload`` field counts
    entries instead, each an extra ``block|ts|wid`` line before its value.
    """
    wid = "nil" if env.tag.wid is None else str(env.tag.wid)
    if env.kind == CATALOG_REPLY:
        count = len(env.entries)
    else:
        count = 0 if env.payload is None else 1
    header = "|".join([
        _field(env.kind), _field(env.src), _field(env.dst), format_block_id(env.block),
        str(env.tag.ts), _field(wid), str(count),
    ])
    body = [header.encode() + b"\n"]
    if env.kind == CATALOG_REPLY:
        for block, tag, value in env.entries:
            twid = "nil" if tag.wid is None else str(tag.wid)
            body.append(f"{format_block_id(block)}|{tag.ts}|{_field(twid)}\n".encode())
            body.append(_encode_value(value))
    elif env.payload is not None:
        body.append(_encode_value(env.payload))
    data = b"".join(body)
    return _LEN.pack(len(data)) + data


class _Cursor:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def line(self) -> str:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise WireError("truncated frame: missing line end")
        text = self.data[self.pos:end].decode()
        self.pos = end + 1
        return text

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireError("truncated frame: short data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _tag(ts: str, wid: str) -> Tag:
    return Tag(int(ts), None if wid == "nil" else parse_client_id(wid))


def _decode_value(cur: _Cursor) -> BlockValue:
    parts = cur.line().split("|")
    if len(parts) != 2:
        raise WireError(f"bad payload line {parts!r}")
    link, size = parts
    return BlockValue(parse_block_id(link), cur.take(int(size)))


def decode_envelope(frame: bytes, msg_id: int = 0) -> Envelope:
    """Inverse of :func:`encode_envelope` for a frame without its length prefix."""
    cur = _Cursor(frame)
    parts = cur.line().split("|")
    if len(parts) != 7:
        raise WireError(f"expected 7 header fields, got {len(parts)}")
    kind, src, dst, block, ts, wid, count = parts
    n = int(count)
    payload = None
    entries: tuple = ()
    if kind == CATALOG_REPLY:
        items = []
        for _ in range(n):
            eparts = cur.line().split("|")
            if len(eparts) != 3:
                raise WireError(f"bad catalog entry {eparts!r}")
            items.append((parse_block_id(eparts[0]), _tag(eparts[1], eparts[2]), _decode_value(cur)))
        entries = tuple(items)
    elif n == 1:
        payload = _decode_value(cur)
    elif n != 0:
        raise WireError(f"has_payload must be 0 or 1, got {n}")
    if cur.pos != len(frame):
        raise WireError("trailing bytes after frame")
    return Envelope(msg_id, src, dst, kind, _tag(ts, wid), parse_block_id(block), payload, entries=entries)


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    (n,) = _LEN.unpack(await reader.readexactly(_LEN.size))
    return await reader.readexactly(n)


# -- the network -------------------------------------------------------------------


class _Round:
    def __init__(self, quorum: int, fut: asyncio.Future) -> None:
        self.quorum = quorum
        self.fut = fut
        self.replies: dict[str, Envelope] = {}
        self.failed: set[str] = set()
        self.total = 0

    def check(self) -> None:
        if self.fut.done():
            return
        if len(self.replies) >= self.quorum:
            self.fut.set_result([self.replies[s] for s in sorted(self.replies)])
        elif self.total - len(self.failed) < self.quorum:
            self.fut.set_exception(QuorumUnreachable(
                f"{self.total - len(self.failed)} reachable servers, quorum {self.quorum}"))


class _Link:
    """A client's connection to one server and its unanswered requests."""

    def __init__(self, server: str, reader, writer) -> None:
        self.server = server
        self.reader = reader
        self.writer = writer
        self.outstanding: deque[_Round] = deque()
        self.closed = False


class SocketNetwork:
    """Drop-in for :class:`fragstore.transport.Network` over TCP.

    ``time_scale`` is the number of seconds per simulated time unit; it
    converts Sleep durations and makes :meth:`clock` report the same unit.
    """

    manual = False

    def __init__(self, servers: dict[str, ServerHandler], faults: Optional[FaultPlan] = None,
                 time_scale: float = 0.001, host: str = "127.0.0.1") -> None:
        self.servers = servers
        self.server_ids = sorted(servers)
        self.faults = faults or FaultPlan()
        self.time_scale = time_scale
        self.host = host
        self.loop = asyncio.new_event_loop()
        self.step = 0
        self.trace: list[str] = []
        self.payload_bytes = 0
        self.sent = 0
        self.tasks: list[Task] = []
        self._msg_seq = 0
        self._ports: dict[str, int] = {}
        self._listeners: dict[str, asyncio.AbstractServer] = {}
        self._server_conns: dict[str, list] = {s: [] for s in self.server_ids}
        self._links: dict[tuple[str, str], _Link] = {}
        self._drivers: list[asyncio.Task] = []
        self._down: set[str] = set()
        # servers stopped by the fault plan, as opposed to shut down by close()
        self._failed: set[str] = set()
        self._t0 = self.loop.time()
        self.loop.run_until_complete(self._start())

    # -- lifecycle --------------------------------------------------------

    async def _start(self) -> None:
        for s in self.server_ids:
            srv = await asyncio.start_server(
                lambda r, w, s=s: self._serve(s, r, w), self.host, 0)
            self._listeners[s] = srv
            self._ports[s] = srv.sockets[0].getsockname()[1]
            if self.faults.crashed.get(s) == 0:
                await self._crash(s)

    def close(self) -> None:
        if self.loop.is_closed():
            return
        self.loop.run_until_complete(self._stop())
        self.loop.close()

    async def _stop(self) -> None:
        for link in self._links.values():
            link.closed = True
            link.writer.close()
        for s in self.server_ids:
            await self._crash(s, failure=False)
        pending = [t for t in asyncio.all_tasks(self.loop) if t is not asyncio.current_task()]
        for t in pending:
            t.cancel()
        await asyncio.gather(*pending, return_exceptions=True)

    async def _crash(self, s: str, failure: bool = True) -> None:
        if s in self._down:
            return
        self._down.add(s)
        if failure:
            self._failed.add(s)
            log.info("server %s crashed at step %d", s, self.step)
        srv = self._listeners[s]
        srv.close()
        for w in self._server_conns[s]:
            w.close()
        await srv.wait_closed()

    def crashed(self, pid: str) -> bool:
        return pid in self._failed

    def clock(self) -> float:
        return (self.loop.time() - self._t0) / self.time_scale

    def _new_id(self) -> int:
        self._msg_seq += 1
        return self._msg_seq

    # -- server side ------------------------------------------------------

    async def _serve(self, s: str, reader, writer) -> None:
        self._server_conns[s].append(writer)
        try:
            while s not in self._down:
                env = decode_envelope(await read_frame(reader), self._new_id())
                self.step += 1
                self.trace.append(f"{self.step} {env.msg_id} {env.src} {env.dst} {env.kind} "
                                  f"{format_block_id(env.block)} {format_tag(env.tag)}")
                reply = self.servers[s].receive(env)
                if reply is not None:
                    self._count(reply)
                    writer.write(encode_envelope(reply))
                    await writer.drain()
                self._crash_due()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            writer.close()

    def _crash_due(self) -> None:
        for s, at in self.faults.crashed.items():
            if s not in self._down and at <= self.step:
                self.loop.create_task(self._crash(s))

    def _count(self, env: Envelope) -> None:
        self.sent += 1
        self.payload_bytes += env.payload_bytes()

    # -- client side ------------------------------------------------------

    async def _link(self, pid: str, s: str) -> Optional[_Link]:
        link = self._links.get((pid, s))
        if link is not None:
            return None if link.closed else link
        if s in self._down:
            return None
        try:
            reader, writer = await asyncio.open_connection(self.host, self._ports[s])
        except OSError:
            return None
        link = _Link(s, reader, writer)
        self._links[(pid, s)] = link
        self.loop.create_task(self._listen(link))
        return link

    async def _listen(self, link: _Link) -> None:
        try:
            while True:
                env = decode_envelope(await read_frame(link.reader), self._new_id())
                rnd = link.outstanding.popleft()
                if not rnd.fut.done():
                    rnd.replies[link.server] = env
                    rnd.check()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            link.closed = True
            for rnd in link.outstanding:
                rnd.failed.add(link.server)
                rnd.check()
            link.outstanding.clear()

    async def _broadcast(self, pid: str, req: Broadcast) -> list[Envelope]:
        rnd = _Round(req.quorum or majority(len(self.server_ids)), self.loop.create_future())
        rnd.total = len(self.server_ids)
        for s in self.server_ids:
            link = await self._link(pid, s)
            if link is None:
                rnd.failed.add(s)
                continue
            env = Envelope(self._new_id(), pid, s, req.kind, req.tag, req.block, req.payload)
            self._count(env)
            link.outstanding.append(rnd)
            try:
                link.writer.write(encode_envelope(env))
            except (ConnectionError, RuntimeError):
                link.outstanding.pop()
                rnd.failed.add(s)
        rnd.check()
        return await rnd.fut

    async def _drive(self, task: Task, delay: float) -> None:
        if delay:
            await asyncio.sleep(delay * self.time_scale)
        value: Any = None
        exc: Optional[BaseException] = None
        while True:
            try:
                req = task.gen.throw(exc) if exc is not None else task.gen.send(value)
            except StopIteration as stop:
                self._finish(task, result=stop.value)
                return
            except Exception as err:  # noqa: BLE001 - surfaced on the task
                self._finish(task, error=err)
                return
            value, exc = None, None
            if isinstance(req, Sleep):
                await asyncio.sleep(req.duration * self.time_scale)
            elif isinstance(req, Broadcast):
                try:
                    value = await self._broadcast(task.pid, req)
                    task.rounds_done += 1
                except QuorumUnreachable as err:
                    exc = err
            else:
                exc = TypeError(f"unexpected request {req!r}")

    def _finish(self, task: Task, result: Any = None, error: Optional[BaseException] = None) -> None:
        task.done = True
        task.result = result
        task.error = error
        if task.on_done is not None:
            task.on_done(task)

    # -- driver API shared with the simulator ------------------------------

    def spawn(self, pid: str, gen: OpGen, delay: float = 0.0,
              on_done: Optional[Callable[[Task], None]] = None) -> Task:
        task = Task(len(self.tasks), pid, gen, on_done=on_done)
        self.tasks.append(task)
        self._drivers.append(self.loop.create_task(self._drive(task, delay)))
        return task

    def run(self, until: Optional[Callable[[], bool]] = None, max_steps: Optional[int] = None) -> int:
        """Run until every spawned operation has finished."""
        drivers, self._drivers = self._drivers, []
        if drivers:
            self.loop.run_until_complete(asyncio.gather(*drivers))
        return self.step

    def call(self, pid: str, gen: OpGen) -> Any:
        task = self.spawn(pid, gen)
        self.run()
        if task.error is not None:
            raise task.error
        return task.result

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.trace:
                fh.write(line + "\n")
