"""Exhaustive exploration of message interleavings.

A scenario is a quiescent :class:`Cluster` (the setup, already run) plus a
function that starts concurrent client operations on a copy of it.  The
explorer switches the network to manual delivery and walks the choices of
next pending message depth-first.  Generators cannot be copied, so each
branch other than the last re-creates its world by copying the setup
snapshot, restarting the operations and replaying the choice path.

Three reductions keep this tractable, and none loses a reachable end state
(up to renaming servers) or a client-visible event order:

* sleep sets (partial-order reduction): deliveries to different servers,
  or to one server about different blocks, commute, so only one order of
  each such pair is expanded.  Deliveries to
  clients are all treated as dependent on each other because they are what
  produces history events;
* state caching: a state seen before is only expanded along the
  transitions that were asleep on every earlier visit but are awake now;
* symmetry: the protocol never treats one server differently from
  another, so states equal up to a permutation of server ids have
  permuted futures and share one cache entry.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Hashable, Optional

from .cluster import Cluster
from .transport import Task

if TYPE_CHECKING:
    from .checker import Verdict


@dataclass
class ExploreStats:
    states: int = 0
    terminals: int = 0
    pruned: int = 0
    replays: int = 0
    max_depth: int = 0


class ExplorationLimit(RuntimeError):
    pass


def snapshot(cluster: Cluster) -> Cluster:
    """Freeze a cluster whose setup operations have finished as the root of an exploration."""
    net = cluster.net
    net.run()
    if not net.quiescent():
        raise ValueError("setup must leave the network quiescent")
    if any(not t.done for t in net.tasks):
        raise ValueError("setup left an operation running")
    net.tasks.clear()
    net.forget_delivered()
    net.manual = True
    net.rng = None  # manual delivery draws no randomness
    return copy.deepcopy(cluster)


def history_shape(world: Cluster) -> tuple:
    return tuple((e.process, e.op, e.action, e.object, e.tag, e.status, e.payload) for e in world.history)


def explore(
    root: Cluster,
    start: Callable[[Cluster], list[Task]],
    on_terminal: Callable[[Cluster, list[Task]], None],
    key: Optional[Callable[[Cluster], Hashable]] = None,
    max_states: Optional[int] = None,
    keep_client_order: bool = True,
    private: Optional[Callable[[tuple], bool]] = None,
    por: bool = True,
) -> ExploreStats:
    """Visit every distinct end state reachable by reordering deliveries.

    ``root`` comes from :func:`snapshot`; ``start`` spawns the concurrent
    operations on a fresh copy and returns their tasks; ``on_terminal`` is
    called once per distinct quiescent end state.  ``key`` identifies
    states for caching (default: network fingerprint up to server
    renaming, plus the history so far, so distinct histories are never
    merged).  A custom ``key`` disables the symmetry reduction.

    With ``keep_client_order=False`` deliveries to different clients also
    count as independent and the default key ignores the history.  Every
    reachable end state is still visited, but only one history per end
    state, which is enough for properties of the final state.

    ``private`` marks deliveries (by transition key; index 4 is the block)
    that no other task can ever observe, e.g. those about blocks a task has
    just created and nobody else reads concurrently.  When every pending
    delivery of some task is private, only that task's deliveries are
    expanded at that state (a persistent set), which is sound exactly when
    the marking is truthful.

    ``por=False`` turns sleep sets off (every order of every pair is
    expanded); with a custom ``key`` that also leaves plain state caching,
    a reference to compare the reductions against.
    """
    stats = ExploreStats()
    seen: dict[Hashable, frozenset] = {}
    servers = set(root.net.server_ids)
    if key is not None:
        user_key = key
        canonical = lambda w: (user_key(w), {})  # noqa: E731
    elif keep_client_order:
        def canonical(w):
            k, ren = w.net.canonical_fingerprint()
            return (k, history_shape(w)), ren
    else:
        canonical = lambda w: w.net.canonical_fingerprint()  # noqa: E731

    def rename(t: tuple, ren: dict) -> tuple:
        return (t[0], t[1], ren.get(t[2], t[2]), ren.get(t[3], t[3]), t[4])

    def independent(a: tuple, b: tuple) -> bool:
        if a[3] == b[3]:
            # a replica keeps independent state per block; catalog queries see them all
            return a[3] in servers and a[4] != b[4] and None not in (a[4], b[4])
        return not keep_client_order or a[3] in servers or b[3] in servers

    def deliver(world: Cluster, tkey: tuple) -> None:
        net = world.net
        for handle, env in net.pending():
            if net.transition_key(env) == tkey:
                net.deliver(handle)
                return
        raise RuntimeError(f"replay diverged: {tkey} is not pending")

    def fresh(path: list[tuple]) -> tuple[Cluster, list[Task]]:
        world = copy.deepcopy(root)
        tasks = start(world)
        for tkey in path:
            deliver(world, tkey)
        stats.replays += 1
        return world, tasks

    def visit(world: Cluster, tasks: list[Task], path: list[tuple], sleep: frozenset) -> None:
        k, ren = canonical(world)
        net = world.net
        pending = [net.transition_key(env) for _, env in net.pending()]
        enabled = _persistent(pending, private)
        # sleep sets are stored with servers renamed like the state key
        csleep = frozenset(rename(t, ren) for t in sleep)
        if k in seen:
            # only what slept on every earlier visit but is awake now is new
            stored = seen[k]
            todo = [t for t in enabled if rename(t, ren) in stored and rename(t, ren) not in csleep]
            seen[k] = stored & csleep
            if not todo:
                stats.pruned += 1
                return
        else:
            seen[k] = csleep
            stats.states += 1
            stats.max_depth = max(stats.max_depth, len(path))
            if max_states is not None and stats.states > max_states:
                raise ExplorationLimit(f"more than {max_states} states")
            if not pending:
                stats.terminals += 1
                on_terminal(world, tasks)
                return
            todo = [t for t in enabled if t not in sleep]
        done: list[tuple] = []
        for i, t in enumerate(todo):
            if i == len(todo) - 1:
                w, ts = world, tasks
            else:
                w, ts = fresh(path)
            deliver(w, t)
            child_sleep = frozenset(s for s in list(sleep) + done if por and independent(s, t))
            visit(w, ts, path + [t], child_sleep)
            done.append(t)

    world, tasks = fresh([])
    visit(world, tasks, [], frozenset())
    return stats


def _persistent(pending: list[tuple], private: Optional[Callable[[tuple], bool]]) -> list[tuple]:
    if private is None:
        return pending
    by_task: dict = {}
    for t in pending:
        by_task.setdefault(t[0][0] if t[0] else None, []).append(t)
    for tid, ts in by_task.items():
        if tid is not None and all(private(t) for t in ts):
            return ts
    return pending


def finish(cluster: Cluster) -> None:
    """Deliver everything still pending in send order (a fixed schedule)."""
    net = cluster.net
    while net.pending():
        net.deliver(net.pending()[0][0])


def run_fifo(cluster: Cluster, pid: str, gen):
    """Run one operation to completion on a manual-mode network in FIFO order."""
    task = cluster.net.spawn(pid, gen)
    finish(cluster)
    if not task.done:
        raise RuntimeError(f"operation of {pid} did not complete")
    if task.error is not None:
        raise task.error
    return task.result


@dataclass
class RaceOutcome:
    statuses: tuple[str, ...]
    verdict: "Verdict"


def update_race(n_servers: int = 3, variant=None) -> tuple[list[RaceOutcome], ExploreStats]:
    """Two writers splice into the same block concurrently, under every interleaving.

    Setup: a file whose chain is genesis -> b, known to both writers and a
    reader.  Each writer replaces b and inserts one new block after it.  In
    every distinct end state the reader reads the file once more and the
    update-atomicity check runs.  Created blocks are only ever observed by
    their creator until b links to them, which makes them private in the
    sense of :func:`explore`.  The property depends only on the final
    replicas and the writers' results, both part of the state key, so one
    history per end state suffices.
    """
    from .checker import check_update_atomicity
    from .register import CORRECT

    c = Cluster(n_servers, seed=0, variant=variant or CORRECT)
    owner, w1, w2, reader = (c.client(i) for i in range(4))
    fid = c.run(owner, owner.fm_create_file("/race"))
    genesis, meta = owner.local_list(fid)[0]
    c.run(owner, owner.fm_update(fid, genesis, [meta.data, b"base"]))
    b = owner.local_list(fid)[1][0]
    for fm in (w1, w2, reader):
        fm.register("/race", fid)
        c.run(fm, fm.fm_read(fid))
    root = snapshot(c)

    def start(world: Cluster) -> list[Task]:
        one, two = world.clients[1], world.clients[2]
        return [world.net.spawn(one.ctx.pid, one.fm_update(fid, b, [b"A0", b"A1"])),
                world.net.spawn(two.ctx.pid, two.fm_update(fid, b, [b"B0", b"B1"]))]

    outcomes: list[RaceOutcome] = []

    def on_terminal(world: Cluster, tasks: list[Task]) -> None:
        for t in tasks:
            if t.error is not None:
                raise t.error
        rd = world.clients[3]
        run_fifo(world, rd.ctx.pid, rd.fm_read(fid))
        outcomes.append(RaceOutcome(tuple(t.result for t in tasks), check_update_atomicity(world.history, fid)))

    stats = explore(root, start, on_terminal, keep_client_order=False,
                    private=lambda t: t[4] is not None and t[4] != b)
    return outcomes, stats
