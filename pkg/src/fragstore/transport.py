"""Message passing between clients and replica servers.

Client operations are plain generators.  They yield a :class:`Broadcast`
(send to every server, resume with the first quorum of replies) or a
:class:`Sleep`, and whatever drives them (the simulator here, or the socket
backend in :mod:`fragstore.netsock`) feeds the replies back in.  Nothing in
protocol code blocks; the generator frame is the continuation state.
"""

from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Generator, Iterable, Optional, Protocol, Union

from .core import BlockId, BlockValue, Tag, format_block_id, format_tag
from .errors import QuorumUnreachable

log = logging.getLogger(__name__)

READ = "READ"
READ_REPLY = "READ-REPLY"
WRITE = "WRITE"
WRITE_ACK = "WRITE-ACK"
CATALOG = "CATALOG"
CATALOG_REPLY = "CATALOG-REPLY"

REQUEST_KINDS = (READ, WRITE, CATALOG)
REPLY_KIND = {READ: READ_REPLY, WRITE: WRITE_ACK, CATALOG: CATALOG_REPLY}


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    src: str
    dst: str
    kind: str
    tag: Tag
    block: Optional[BlockId]
    payload: Optional[BlockValue] = None
    # simulator-side correlation of a reply with its request; not on the wire
    reply_to: Optional[int] = None
    # CATALOG-REPLY only: (genesis block, tag, value) per genesis block held
    entries: tuple = ()

    def __deepcopy__(self, memo):
        return self  # immutable

    def payload_bytes(self) -> int:
        n = len(self.payload.data) if self.payload is not None else 0
        return n + sum(len(v.data) for _, _, v in self.entries)

    def content_key(self) -> tuple:
        return (self.src, self.dst, self.kind, self.tag, self.block, self.payload, self.entries)


@dataclass(frozen=True)
class Broadcast:
    kind: str
    block: Optional[BlockId]
    tag: Tag
    payload: Optional[BlockValue] = None
    quorum: Optional[int] = None


@dataclass(frozen=True)
class Sleep:
    duration: float


Request = Union[Broadcast, Sleep]
OpGen = Generator[Request, Any, Any]


def majority(n_servers: int) -> int:
    return n_servers // 2 + 1


def uniform_delay(low: int = 1, high: int = 10) -> Callable[[random.Random, Envelope], float]:
    def law(rng: random.Random, env: Envelope) -> float:
        return rng.randint(low, high)

    return law


@dataclass
class FaultPlan:
    """Crash faults and the delivery-delay law.

    ``crashed`` maps a server id to the delivery step at which it fail-stops
    (0 means crashed from the start); a plain set is accepted as shorthand.
    """

    crashed: Union[dict, set, frozenset] = field(default_factory=dict)
    delay_law: Callable[[random.Random, Envelope], float] = field(default_factory=uniform_delay)
    duplicate_rate: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.crashed, dict):
            self.crashed = {s: 0 for s in self.crashed}

    def tolerable(self, n_servers: int) -> bool:
        return len(self.crashed) <= (n_servers + 1) // 2 - 1


class ServerHandler(Protocol):
    def receive(self, m: Envelope) -> Optional[Envelope]: ...

    def fingerprint(self) -> Any: ...


@dataclass
class Round:
    index: int
    request_ids: set
    quorum: int
    replies: dict = field(default_factory=dict)


@dataclass(eq=False)
class Task:
    tid: int
    pid: str
    gen: OpGen
    done: bool = False
    result: Any = None
    error: Optional[BaseException] = None
    round: Optional[Round] = None
    rounds_done: int = 0
    # reply contents of every completed round; the generator state is a
    # deterministic function of this, which the explorer relies on
    inputs: list = field(default_factory=list)
    on_done: Optional[Callable[["Task"], None]] = None

    def fingerprint(self) -> tuple:
        current = None
        if self.round is not None:
            current = tuple(sorted(_reply_key(e) for e in self.round.replies.values()))
        err = type(self.error).__name__ if self.error else None
        return (self.tid, self.done, err, tuple(self.inputs), current)


def _reply_key(env: Envelope) -> tuple:
    if env.kind == WRITE_ACK:
        # clients never look inside an acknowledgement
        return (env.src, env.kind)
    return (env.src, env.kind, env.tag, env.payload, env.entries)


def _round_input(replies: list[Envelope]) -> tuple:
    if all(e.kind == WRITE_ACK for e in replies):
        return (WRITE_ACK,)
    if all(e.kind == READ_REPLY for e in replies):
        # a reader acts on the highest tag only (content preferred on ties),
        # so that reply alone determines what it does next
        best = max(replies, key=lambda e: (e.tag, e.payload is not None))
        return (READ_REPLY, best.tag, best.payload)
    return tuple(sorted((_reply_key(e)[1:] for e in replies), key=repr))


class Network:
    """Deterministic single-threaded network simulator.

    In the default mode every message gets a delivery time drawn from the
    fault plan's delay law and ``sim_step`` delivers the earliest (ties broken
    by a seeded random priority), so delivery order can differ from send
    order.  With ``manual=True`` nothing is delivered until the caller picks a
    pending message via :meth:`deliver`; the interleaving explorer uses that.
    """

    def __init__(
        self,
        servers: dict[str, ServerHandler],
        seed: int = 0,
        faults: Optional[FaultPlan] = None,
        manual: bool = False,
    ) -> None:
        self.servers = servers
        self.server_ids = sorted(servers)
        self.faults = faults or FaultPlan()
        self.rng = random.Random(seed)
        self.manual = manual
        self.now: float = 0.0
        self.step = 0
        self.trace: list[str] = []
        self.quorums: list[frozenset] = []
        self.payload_bytes = 0
        self.sent = 0
        self.dropped = 0
        self.tasks: list[Task] = []
        self._msg_seq = 0
        self._heap: list = []
        self._pending: dict[int, tuple] = {}
        self._timers: list = []
        self._awaiting: dict[int, tuple[Task, int]] = {}
        self._logical: dict[int, tuple] = {}
        self._seen: dict[str, set] = {}
        self._order = 0

    # -- sending --------------------------------------------------------

    def _new_id(self) -> int:
        self._msg_seq += 1
        return self._msg_seq

    def clock(self) -> float:
        return self.now

    def crashed(self, pid: str) -> bool:
        at = self.faults.crashed.get(pid)
        return at is not None and at <= self.step

    def live_servers(self) -> list[str]:
        return [s for s in self.server_ids if not self.crashed(s)]

    def send(self, env: Envelope) -> Envelope:
        if env.msg_id <= 0:
            env = replace(env, msg_id=self._new_id())
        self.sent += 1
        self.payload_bytes += env.payload_bytes()
        self._enqueue(env)
        if not self.manual and self.faults.duplicate_rate and self.rng.random() < self.faults.duplicate_rate:
            # at-least-once channel: the receiver de-duplicates by msg_id
            self._enqueue(env)
        return env

    def _enqueue(self, env: Envelope) -> None:
        self._order += 1
        if self.manual:
            entry = (self.now, 0.0, self._order, env)
        else:
            entry = (self.now + self.faults.delay_law(self.rng, env), self.rng.random(), self._order, env)
        self._pending[self._order] = entry
        if not self.manual:
            heapq.heappush(self._heap, entry)

    # -- delivery -------------------------------------------------------

    def pending(self) -> list[tuple[int, Envelope]]:
        """Pending messages as (handle, envelope), in send order."""
        return [(k, e[3]) for k, e in sorted(self._pending.items())]

    def transition_key(self, env: Envelope) -> tuple:
        """Identity of a delivery that is stable across replays of a schedule."""
        ref = env.reply_to if env.reply_to is not None else env.msg_id
        return (self._logical.get(ref), env.kind, env.src, env.dst, env.block)

    def quiescent(self) -> bool:
        return not self._pending and not self._timers

    def sim_step(self) -> Optional[Envelope]:
        """Deliver exactly one pending message; None when quiescent."""
        while True:
            if self._timers and (not self._heap or self._timers[0][0] <= self._heap[0][0]):
                when, _, task, value = heapq.heappop(self._timers)
                self.now = max(self.now, when)
                self._advance(task, value)
                continue
            if not self._heap:
                self._fail_stuck()
                if self._heap or self._timers:
                    continue
                return None
            entry = heapq.heappop(self._heap)
            if self._pending.pop(entry[2], None) is None:
                continue
            self.now = max(self.now, entry[0])
            if self._receive(entry[3]):
                return entry[3]

    def deliver(self, handle: int) -> Optional[Envelope]:
        """Manual mode: deliver the pending message with this handle."""
        entry = self._pending.pop(handle)
        return entry[3] if self._receive(entry[3]) else None

    def _receive(self, env: Envelope) -> bool:
        if self.crashed(env.dst):
            self.dropped += 1
            return False
        seen = self._seen.setdefault(env.dst, set())
        if env.msg_id in seen:
            return False
        seen.add(env.msg_id)
        self.step += 1
        self.trace.append(
            f"{self.step} {env.msg_id} {env.src} {env.dst} {env.kind} "
            f"{format_block_id(env.block)} {format_tag(env.tag)}"
        )
        handler = self.servers.get(env.dst)
        if handler is not None:
            reply = handler.receive(env)
            if reply is not None:
                reply = replace(reply, msg_id=self._new_id(), reply_to=env.msg_id)
                if env.msg_id in self._logical:
                    self._logical[reply.msg_id] = self._logical[env.msg_id] + ("reply",)
                if self.manual and env.msg_id not in self._awaiting:
                    # the round this answers already completed: delivery would be a no-op
                    return True
                self.send(reply)
        elif env.reply_to is not None and env.reply_to in self._awaiting:
            task, index = self._awaiting[env.reply_to]
            rnd = task.round
            if rnd is not None and rnd.index == index and env.src not in rnd.replies:
                rnd.replies[env.src] = env
                if len(rnd.replies) >= rnd.quorum:
                    self._complete_round(task)
        return True

    def _complete_round(self, task: Task) -> None:
        rnd = task.round
        for rid in rnd.request_ids:
            self._awaiting.pop(rid, None)
        replies = [rnd.replies[s] for s in sorted(rnd.replies)]
        self.quorums.append(frozenset(rnd.replies))
        task.round = None
        task.rounds_done += 1
        task.inputs.append(_round_input(replies))
        if self.manual:
            # replies to this round, and queries it no longer needs, would be
            # no-ops when delivered; writes still pending keep their effect
            stale = [k for k, e in self._pending.items()
                     if e[3].reply_to in rnd.request_ids
                     or (e[3].msg_id in rnd.request_ids and e[3].kind in (READ, CATALOG))]
            for k in stale:
                del self._pending[k]
        self._advance(task, replies)

    def _fail_stuck(self) -> None:
        for task in self.tasks:
            if not task.done and task.round is not None:
                self._drop_round(task)
                self._advance(task, exc=QuorumUnreachable(f"{task.pid}: no quorum of live servers"))

    def _drop_round(self, task: Task) -> None:
        for rid in task.round.request_ids:
            self._awaiting.pop(rid, None)
        task.round = None

    # -- tasks ----------------------------------------------------------

    def spawn(
        self,
        pid: str,
        gen: OpGen,
        delay: float = 0.0,
        on_done: Optional[Callable[[Task], None]] = None,
    ) -> Task:
        task = Task(len(self.tasks), pid, gen, on_done=on_done)
        self.tasks.append(task)
        if self.manual and delay == 0:
            self._advance(task)
        else:
            self._order += 1
            heapq.heappush(self._timers, (self.now + delay, self._order, task, None))
        return task

    def _advance(self, task: Task, value: Any = None, exc: Optional[BaseException] = None) -> None:
        while True:
            try:
                req = task.gen.throw(exc) if exc is not None else task.gen.send(value)
            except StopIteration as stop:
                self._finish(task, result=stop.value)
                return
            except Exception as err:  # noqa: BLE001 - surfaced on the task
                self._finish(task, error=err)
                return
            exc = None
            value = None
            if isinstance(req, Sleep):
                if self.manual:
                    continue
                self._order += 1
                heapq.heappush(self._timers, (self.now + req.duration, self._order, task, None))
                return
            if isinstance(req, Broadcast):
                quorum = req.quorum or majority(len(self.server_ids))
                live = self.live_servers()
                if len(live) < quorum:
                    exc = QuorumUnreachable(
                        f"{len(live)} live of {len(self.server_ids)} servers, quorum {quorum}"
                    )
                    continue
                rnd = Round(task.rounds_done, set(), quorum)
                task.round = rnd
                for s in self.server_ids:
                    env = self.send(Envelope(0, task.pid, s, req.kind, req.tag, req.block, req.payload))
                    rnd.request_ids.add(env.msg_id)
                    self._awaiting[env.msg_id] = (task, rnd.index)
                    self._logical[env.msg_id] = (task.tid, rnd.index)
                return
            raise TypeError(f"unexpected request {req!r}")

    def _finish(self, task: Task, result: Any = None, error: Optional[BaseException] = None) -> None:
        task.done = True
        task.result = result
        task.error = error
        if task.on_done is not None:
            task.on_done(task)

    # -- drivers --------------------------------------------------------

    def run(self, until: Optional[Callable[[], bool]] = None, max_steps: int = 10_000_000) -> int:
        n = 0
        while n < max_steps:
            if until is not None and until():
                break
            if self.sim_step() is None:
                break
            n += 1
        return n

    def call(self, pid: str, gen: OpGen) -> Any:
        task = self.spawn(pid, gen)
        self.run(until=lambda: task.done)
        if not task.done:
            raise RuntimeError(f"operation of {pid} did not complete")
        if task.error is not None:
            raise task.error
        return task.result

    def broadcast_collect(self, sender: str, template: Broadcast, quorum: Optional[int] = None) -> list[Envelope]:
        if quorum is not None:
            template = replace(template, quorum=quorum)

        def one_round():
            replies = yield template
            return replies

        return self.call(sender, one_round())

    def forget_delivered(self) -> None:
        """Drop per-message bookkeeping; only valid once nothing is pending."""
        if not self.quiescent():
            raise RuntimeError("messages still pending")
        self._seen.clear()
        self._logical.clear()
        self._awaiting.clear()
        self.trace.clear()
        self.quorums.clear()

    def fingerprint(self) -> tuple:
        servers = tuple((s, self.servers[s].fingerprint()) for s in self.server_ids)
        pend = []
        for _, (_, _, _, env) in self._pending.items():
            ref = env.reply_to if env.reply_to is not None else env.msg_id
            pend.append((env.content_key(), self._logical.get(ref)))
        pend.sort(key=repr)
        return (servers, tuple(pend), tuple(t.fingerprint() for t in self.tasks))

    def canonical_fingerprint(self) -> tuple[tuple, dict[str, str]]:
        """Fingerprint up to renaming servers, plus the renaming applied.

        Servers are interchangeable to the protocol, so states that differ
        only by a permutation of server ids behave identically.  Each server
        is summarised by everything that mentions it; sorting those summaries
        fixes the order up to servers with identical summaries, and swapping
        such servers changes nothing.
        """
        def anon(env: Envelope, s: str) -> tuple:
            return (env.src if env.src != s else "*", env.dst if env.dst != s else "*") + env.content_key()[2:]

        summaries = {}
        for s in self.server_ids:
            pend = sorted(
                (hash((anon(e[3], s), self._logical.get(e[3].reply_to or e[3].msg_id)))
                 for e in self._pending.values() if s in (e[3].src, e[3].dst)))
            replies = sorted(
                hash((t.tid, _reply_key(t.round.replies[s])[1:])) for t in self.tasks
                if t.round is not None and s in t.round.replies)
            summaries[s] = hash((self.servers[s].fingerprint(), self.faults.crashed.get(s),
                                 tuple(pend), tuple(replies)))
        order = sorted(self.server_ids, key=lambda s: summaries[s])
        ren = {s: f"s{i}" for i, s in enumerate(order)}
        servers = tuple(self.servers[s].fingerprint() for s in order)
        crashed = tuple(self.faults.crashed.get(s) for s in order)
        pend = []
        for _, (_, _, _, env) in self._pending.items():
            ref = env.reply_to if env.reply_to is not None else env.msg_id
            pend.append(((ren.get(env.src, env.src), ren.get(env.dst, env.dst)) + env.content_key()[2:],
                         self._logical.get(ref)))
        pend.sort(key=repr)
        tasks = []
        for t in self.tasks:
            fp = t.fingerprint()
            if t.round is not None:
                fp = fp[:4] + (tuple(sorted(((ren[s],) + _reply_key(e)[1:] for s, e in t.round.replies.items()),
                                            key=repr)),)
            tasks.append(fp)
        return (servers, crashed, tuple(pend), tuple(tasks)), ren

    def close(self) -> None:
        """Nothing to release; present so both backends share one driver API."""

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.trace:
                fh.write(line + "\n")


def drain(net: Network, tasks: Iterable[Task]) -> None:
    tasks = list(tasks)
    net.run(until=lambda: all(t.done for t in tasks))
