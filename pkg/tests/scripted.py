"""Hand-scheduled executions shared by several test modules."""

from fragstore.cluster import Cluster
from fragstore.core import INITIAL_TAG, BlockId, BlockValue, FileId, Tag
from fragstore.explore import finish
from fragstore.register import CORRECT, cvr_read, cvr_write
from fragstore.transport import WRITE

B = BlockId(FileId(0, 0), 0, 1)


def drive(net, pid, until):
    """Deliver only messages to or from ``pid`` until ``until()`` holds."""
    while not until():
        mine = [h for h, e in net.pending() if pid in (e.src, e.dst)]
        if not mine:
            raise RuntimeError(f"{pid} is stuck")
        net.deliver(mine[0])


def responded(history, pid, op, obj=None):
    return lambda: any(e.process == pid and e.op == op and e.action == "respond"
                       and (obj is None or e.object == obj) for e in history)


def two_readers_two_writers():
    """File genesis -> b0 -> b1 holding (D0, D1).

    The slow reader rho2 reads b0 and stalls.  Writer pi1 replaces b0 with
    D0' and finishes; reader rho1 then reads (D0', D1); writer pi2 replaces b1
    with D1'; finally rho2 reads b1 and returns (D0, D1').  Every block
    behaves atomically, but no single order of whole-file operations explains
    both reads.
    """
    c = Cluster(3, seed=0)
    owner = c.client(0)
    fid = c.run(owner, owner.fm_create_file("/fig"))
    g, meta = owner.local_list(fid)[0]
    c.run(owner, owner.fm_update(fid, g, [meta.data, b"D0", b"D1"]))
    b0, b1 = (b for b, _ in owner.local_list(fid)[1:])
    pi1, pi2, rho1, rho2 = (c.client(i) for i in (1, 2, 3, 4))
    for fm in (pi1, pi2):
        fm.register("/fig", fid)
        c.run(fm, fm.fm_read(fid))
    for fm in (rho1, rho2):
        fm.register("/fig", fid)
    c.net.run()
    net = c.net
    net.manual = True
    h = c.history

    slow = net.spawn(rho2.ctx.pid, rho2.fm_read(fid))
    drive(net, rho2.ctx.pid, responded(h, rho2.ctx.pid, "cvr_read", str(b0)))
    w1 = net.spawn(pi1.ctx.pid, pi1.fm_update(fid, b0, [b"D0'"]))
    drive(net, pi1.ctx.pid, lambda: w1.done)
    r1 = net.spawn(rho1.ctx.pid, rho1.fm_read(fid))
    drive(net, rho1.ctx.pid, lambda: r1.done)
    w2 = net.spawn(pi2.ctx.pid, pi2.fm_update(fid, b1, [b"D1'"]))
    drive(net, pi2.ctx.pid, lambda: w2.done)
    drive(net, rho2.ctx.pid, lambda: slow.done)
    finish(c)
    results = {"pi1": w1.result, "pi2": w2.result, "rho1": r1.result, "rho2": slow.result}
    return h, fid, results


def drive_via(net, pid, servers, until):
    """Like :func:`drive`, but only over links between ``pid`` and ``servers``."""
    while not until():
        mine = [h for h, e in net.pending()
                if (e.src == pid and e.dst in servers) or (e.dst == pid and e.src in servers)]
        if not mine:
            raise RuntimeError(f"{pid} is stuck")
        net.deliver(mine[0])


def write_held_at_one_replica(variant=None):
    """Writer c1 reaches only s0 with its new value; reader c2 then reads
    through {s0, s1} and reader c3, strictly later, through {s1, s2}.  The
    second read sees the new value only if the first one wrote it back.

    Returns the history and the two values read.
    """
    c = Cluster(3, seed=0, variant=variant or CORRECT)
    x = c.context(9)
    c.net.call(x.pid, cvr_write(x, B, BlockValue(None, b"old"), INITIAL_TAG))
    net = c.net
    net.manual = True
    w, r1, r2 = c.context(1), c.context(2), c.context(3)
    net.spawn(w.pid, cvr_write(w, B, BlockValue(None, b"new"), Tag(1, 9)))
    drive_via(net, w.pid, {"s0", "s1"},
              lambda: any(e.src == w.pid and e.kind == WRITE for _, e in net.pending()))
    drive_via(net, w.pid, {"s0"}, lambda: not any(e.src == w.pid and e.dst == "s0" for _, e in net.pending()))
    first = net.spawn(r1.pid, cvr_read(r1, B))
    drive_via(net, r1.pid, {"s0", "s1"}, lambda: first.done)
    second = net.spawn(r2.pid, cvr_read(r2, B))
    drive_via(net, r2.pid, {"s1", "s2"}, lambda: second.done)
    finish(c)
    return c.history, first.result[0].data, second.result[0].data
