"""Offline consistency checking of recorded histories.

Operations are recovered from the flat event log with a per-process stack,
so block operations issued inside a file operation become its children.
Real-time precedence is ``a.response.seq < b.invoke.seq``.

Per-block linearizability uses a Wing-Gong style search memoized on
(linearized set, register state).  The register's sequential
specification, with states (tag, value digest):

* ``cvr_read`` returns the current pair;
* a ``chg`` write mints a tag above the current one and installs it;
* an ``unchg`` write returns the current pair, which must differ from the
  version it supplied (tombstones excepted);
* ``cvr_delete`` installs its tombstone unconditionally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Optional, Sequence, Union

from .core import INITIAL_TAG, BlockId, Tag, format_block_id, format_file_id, parse_file_id, parse_tag
from .errors import HistoryIncomplete, ScaleExceeded
from .history import INVOKE, RESPOND, Event, History

BLOCK_OPS = ("cvr_read", "cvr_write", "cvr_delete")
FILE_OPS = ("fm_read", "fm_update", "fm_create_file", "fm_delete_file")
DEFAULT_MAX_OPS = 12
DEFAULT_BUDGET = 200_000


@dataclass
class Operation:
    index: int
    process: str
    op: str
    obj: str
    invoke: Event
    response: Optional[Event] = None
    parent: Optional[int] = None
    children: list[int] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.response is not None

    @property
    def status(self) -> str:
        return self.response.status if self.response else "-"

    @property
    def supplied(self) -> Tag:
        return parse_tag(self.invoke.tag)

    @property
    def result(self) -> Tag:
        return parse_tag(self.response.tag)

    def precedes(self, other: "Operation") -> bool:
        return self.response is not None and self.response.seq < other.invoke.seq

    def events(self) -> list[Event]:
        return [self.invoke] + ([self.response] if self.response else [])


@dataclass
class SerializationWitness:
    order: list[Operation]
    states: list[Hashable]

    def describe(self) -> str:
        return " ".join(f"{o.process}:{o.op}@{o.invoke.seq}" for o in self.order)


@dataclass
class Verdict:
    ok: bool
    violated_property: Optional[str] = None
    counterexample: list[Event] = field(default_factory=list)
    witness: Optional[SerializationWitness] = None
    detail: str = ""
    # every violation found, for checks that test several properties
    violations: list[tuple[str, str]] = field(default_factory=list)

    @classmethod
    def passed(cls, witness=None) -> "Verdict":
        return cls(True, witness=witness)

    @classmethod
    def from_violations(cls, violations: list[tuple[str, str]], events: list[Event] = ()) -> "Verdict":
        if not violations:
            return cls(True)
        prop, detail = violations[0]
        return cls(False, prop, list(events), detail=detail, violations=violations)

    def has(self, prop: str) -> bool:
        return any(p == prop for p, _ in self.violations) or self.violated_property == prop


# -- operation recovery -------------------------------------------------------


def parse_operations(history: Union[History, Iterable[Event]], allow_incomplete: bool = False) -> list[Operation]:
    ops: list[Operation] = []
    stacks: dict[str, list[int]] = {}
    for ev in history:
        stack = stacks.setdefault(ev.process, [])
        if ev.action == INVOKE:
            op = Operation(len(ops), ev.process, ev.op, ev.object, ev, parent=stack[-1] if stack else None)
            if op.parent is not None:
                ops[op.parent].children.append(op.index)
            ops.append(op)
            stack.append(op.index)
        elif ev.action == RESPOND:
            if not stack:
                raise HistoryIncomplete(f"response without invocation at seq {ev.seq}")
            op = ops[stack.pop()]
            if (op.op, op.obj) != (ev.op, ev.object):
                raise HistoryIncomplete(f"response at seq {ev.seq} does not match open {op.op} {op.obj}")
            op.response = ev
        else:
            raise ValueError(f"unknown action {ev.action!r} at seq {ev.seq}")
    open_ops = [o for o in ops if not o.complete]
    if open_ops and not allow_incomplete:
        o = open_ops[0]
        raise HistoryIncomplete(f"{o.process} {o.op} {o.obj} invoked at seq {o.invoke.seq} never responded")
    return ops


def block_objects(ops: Sequence[Operation]) -> list[str]:
    return sorted({o.obj for o in ops if o.op in BLOCK_OPS})


def file_of(block_obj: str) -> str:
    return block_obj.partition("-c")[0]


def block_histories(history: History) -> dict[str, History]:
    out: dict[str, list[Event]] = {}
    for ev in history:
        if ev.op in BLOCK_OPS:
            out.setdefault(ev.object, []).append(ev)
    return {b: History(evs) for b, evs in sorted(out.items())}


def _events_of(ops: Iterable[Operation]) -> list[Event]:
    unique = {o.index: o for o in ops}
    return sorted((e for o in unique.values() for e in o.events()), key=lambda e: e.seq)


# -- generic linearizability search --------------------------------------------


def linearize(
    ops: Sequence[Operation],
    step: Callable[[Hashable, Operation], Optional[Hashable]],
    initial: Hashable,
    edges: Iterable[tuple[int, int]] = (),
    budget: Optional[int] = DEFAULT_BUDGET,
) -> Optional[SerializationWitness]:
    """Find an order of ``ops`` that respects real-time precedence plus
    ``edges`` (pairs of positions in ``ops``) and that ``step`` accepts."""
    n = len(ops)
    preds = [0] * n
    for j, b in enumerate(ops):
        for i, a in enumerate(ops):
            if i != j and a.precedes(b):
                preds[j] |= 1 << i
    for i, j in edges:
        preds[j] |= 1 << i
    full = (1 << n) - 1
    failed: set = set()
    order: list[int] = []
    states: list[Hashable] = []
    nodes = 0

    def dfs(mask: int, state: Hashable) -> bool:
        nonlocal nodes
        if mask == full:
            return True
        if (mask, state) in failed:
            return False
        nodes += 1
        if budget is not None and nodes > budget:
            raise ScaleExceeded(f"search exceeded {budget} states over {n} operations")
        for j in range(n):
            if mask >> j & 1 or preds[j] & ~mask:
                continue
            nxt = step(state, ops[j])
            if nxt is None:
                continue
            order.append(j)
            states.append(nxt)
            if dfs(mask | 1 << j, nxt):
                return True
            order.pop()
            states.pop()
        failed.add((mask, state))
        return False

    if dfs(0, initial):
        return SerializationWitness([ops[j] for j in order], states)
    return None


def minimize(ops: list[Operation], fails: Callable[[list[Operation]], bool]) -> list[Operation]:
    """Greedily drop operations while the remainder still fails."""
    keep = list(ops)
    i = 0
    while i < len(keep):
        trial = keep[:i] + keep[i + 1:]
        if trial and fails(trial):
            keep = trial
        else:
            i += 1
    return keep


# -- per-block register ---------------------------------------------------------

BlockState = tuple[Tag, str]
BLOCK_INITIAL: BlockState = (INITIAL_TAG, "absent")


def block_step(state: BlockState, op: Operation) -> Optional[BlockState]:
    tag, _ = state
    if op.op == "cvr_read":
        return state if (op.result, op.response.payload) == state else None
    if op.op == "cvr_delete":
        return (op.result, op.invoke.payload)
    if op.status == "chg":
        return (op.result, op.invoke.payload) if op.result > tag else None
    if (op.result, op.response.payload) != state:
        return None
    if op.supplied == op.result and not op.result.is_tombstone:
        return None
    return state


def _block_ops(history, block: Optional[str]) -> list[Operation]:
    ops = history if isinstance(history, list) else parse_operations(history)
    ops = [o for o in ops if o.op in BLOCK_OPS]
    objs = {o.obj for o in ops}
    if block is None and len(objs) > 1:
        raise ValueError(f"history spans {len(objs)} blocks; pass block=")
    if block is not None:
        ops = [o for o in ops if o.obj == block]
    return ops


def check_block_linearizable(
    history: Union[History, list[Operation]],
    block: Optional[str] = None,
    max_ops: Optional[int] = DEFAULT_MAX_OPS,
    edges: Iterable[tuple[int, int]] = (),
    budget: Optional[int] = DEFAULT_BUDGET,
) -> Verdict:
    ops = _block_ops(history, block)
    if max_ops is not None and len(ops) > max_ops:
        raise ScaleExceeded(f"{len(ops)} operations on one block exceeds the cap of {max_ops}")
    edges = list(edges)
    witness = linearize(ops, block_step, BLOCK_INITIAL, edges, budget)
    if witness is not None:
        return Verdict.passed(witness)

    def fails(sub: list[Operation]) -> bool:
        pos = {o.index: i for i, o in enumerate(sub)}
        sub_edges = [(pos[ops[i].index], pos[ops[j].index]) for i, j in edges
                     if ops[i].index in pos and ops[j].index in pos]
        return linearize(sub, block_step, BLOCK_INITIAL, sub_edges, budget) is None

    core = minimize(ops, fails)
    obj = ops[0].obj if ops else "-"
    return Verdict(False, "linearizability", _events_of(core),
                   detail=f"no valid serialization of {len(ops)} operations on {obj}",
                   violations=[("linearizability", obj)])


# -- coverability ---------------------------------------------------------------


def check_coverability(history: Union[History, list[Operation]], block: Optional[str] = None) -> Verdict:
    """Consolidation, continuity and evolution over the successful writes."""
    ops = _block_ops(history, block)
    wins = [o for o in ops if o.op == "cvr_write" and o.status == "chg" and not o.result.is_tombstone]
    minted = {}
    violations = []
    witness_ops: list[Operation] = []

    def flag(prop: str, detail: str, *culprits: Operation) -> None:
        violations.append((prop, detail))
        witness_ops.extend(culprits)

    for w in wins:
        if w.result in minted:
            flag("consolidation", f"tag {w.result} minted twice", minted[w.result], w)
        minted[w.result] = w
    for a in wins:
        for b in wins:
            if a.precedes(b) and not a.result < b.result:
                flag("consolidation", f"{b.result} minted after completed write of {a.result}", a, b)
    for w in wins:
        v = w.supplied
        if v != INITIAL_TAG:
            src = minted.get(v)
            if src is None or w.precedes(src):
                flag("continuity", f"write minting {w.result} supplied unminted version {v}", w)
        if w.result.ts != v.ts + 1:
            flag("evolution", f"write supplied {v} but minted {w.result}", w)
    stamps = sorted({t.ts for t in minted})
    if stamps and stamps != list(range(1, stamps[-1] + 1)):
        flag("evolution", f"minted counters {stamps} are not contiguous from 1", *wins)
    return Verdict.from_violations(violations, _events_of(witness_ops))


# -- file level -------------------------------------------------------------------


def _payload_next(payload: str) -> str:
    return payload.split(";", 1)[0]


def _file_ops(ops: Sequence[Operation], fid: str) -> list[Operation]:
    return [o for o in ops if o.op in FILE_OPS and o.obj == fid]


def _read_list(ops: Sequence[Operation], r: Operation) -> list[tuple[str, Tag, str]]:
    return [(ops[c].obj, ops[c].result, ops[c].response.payload)
            for c in r.children if ops[c].op == "cvr_read"]


def _genesis_obj(fid: str) -> str:
    f = parse_file_id(fid)
    return format_block_id(BlockId(f, f.cfid, 0))


def _chain_problem(fid: str, chain: list[tuple[str, Tag, str]]) -> Optional[str]:
    if not chain or chain[0][0] != _genesis_obj(fid):
        return "read did not start at the genesis block"
    for (b, _, payload), (nb, _, _) in zip(chain, chain[1:]):
        if payload == "absent":
            return f"{b} read as never written"
        if _payload_next(payload) != nb:
            return f"{b} links to {_payload_next(payload)} but the read continued at {nb}"
    last = chain[-1][2]
    if last == "absent":
        return f"{chain[-1][0]} read as never written"
    if _payload_next(last) != "nil":
        return f"chain stops at {chain[-1][0]} which links to {_payload_next(last)}"
    return None


def check_fragmented(history: Union[History, list[Operation]], fid, max_ops: Optional[int] = DEFAULT_MAX_OPS,
                     budget: Optional[int] = DEFAULT_BUDGET) -> Verdict:
    """Per-block linearizability under blockwise file-level precedence, plus
    chain completeness of every read and monotonicity of sequential reads."""
    fid = fid if isinstance(fid, str) else format_file_id(fid)
    ops = history if isinstance(history, list) else parse_operations(history)
    violations: list[tuple[str, str]] = []
    culprits: list[Operation] = []

    def root(o: Operation) -> Operation:
        while o.parent is not None:
            o = ops[o.parent]
        return o

    for b in [x for x in block_objects(ops) if file_of(x) == fid]:
        bops = [o for o in ops if o.op in BLOCK_OPS and o.obj == b]
        edges = [(i, j) for i, x in enumerate(bops) for j, y in enumerate(bops)
                 if i != j and root(x) is not x and root(y) is not y and root(x).precedes(root(y))]
        v = check_block_linearizable(bops, max_ops=max_ops, edges=edges, budget=budget)
        if not v.ok:
            violations.append(("linearizability", f"block {b}"))
            culprits.extend(o for o in bops if o.invoke in v.counterexample)

    read_violations, read_culprits = _read_violations(ops, fid)
    violations += read_violations
    culprits += read_culprits
    events = _events_of(_with_children(ops, culprits))
    return Verdict.from_violations(violations, events)


def _read_violations(ops: Sequence[Operation], fid: str) -> tuple[list[tuple[str, str]], list[Operation]]:
    violations: list[tuple[str, str]] = []
    culprits: list[Operation] = []
    reads = [r for r in _file_ops(ops, fid) if r.op == "fm_read"]
    good = []
    for r in reads:
        if r.status == "BrokenChain":
            violations.append(("chain-completeness", f"read at seq {r.invoke.seq} hit a broken chain"))
            culprits.append(r)
            continue
        if r.status != "ok":
            continue
        chain = _read_list(ops, r)
        problem = _chain_problem(fid, chain)
        if problem:
            violations.append(("chain-completeness", f"read at seq {r.invoke.seq}: {problem}"))
            culprits.append(r)
        else:
            good.append((r, {b: t for b, t, _ in chain}))
    for r1, l1 in good:
        for r2, l2 in good:
            if not r1.precedes(r2):
                continue
            for b, t in l1.items():
                if b not in l2:
                    violations.append(("monotonic-membership",
                                       f"{b} read at seq {r1.invoke.seq} missing from read at seq {r2.invoke.seq}"))
                    culprits.extend([r1, r2])
                elif l2[b] < t:
                    violations.append(("monotonic-version",
                                       f"{b} went from {t} to {l2[b]} between reads at seq "
                                       f"{r1.invoke.seq} and {r2.invoke.seq}"))
                    culprits.extend([r1, r2])
    return violations, culprits


def check_file_reads(history: Union[History, list[Operation]], fid) -> Verdict:
    """Only the read-side part of :func:`check_fragmented`: chain
    completeness and monotonicity of sequential reads.  It needs no search,
    so it scales to histories of any length."""
    fid = fid if isinstance(fid, str) else format_file_id(fid)
    ops = history if isinstance(history, list) else parse_operations(history)
    violations, culprits = _read_violations(ops, fid)
    return Verdict.from_violations(violations, _events_of(_with_children(ops, culprits)))


def _with_children(ops: Sequence[Operation], roots: Iterable[Operation]) -> list[Operation]:
    out: dict[int, Operation] = {}
    todo = list(roots)
    while todo:
        o = todo.pop()
        if o.index not in out:
            out[o.index] = o
            todo.extend(ops[c] for c in o.children)
    return list(out.values())


def check_update_atomicity(history: Union[History, list[Operation]], fid) -> Verdict:
    """An update's created blocks show up in some later read iff it returned chg."""
    fid = fid if isinstance(fid, str) else format_file_id(fid)
    ops = history if isinstance(history, list) else parse_operations(history)
    fops = _file_ops(ops, fid)
    reads = [(r, {ops[c].obj for c in r.children if ops[c].op == "cvr_read"})
             for r in fops if r.op == "fm_read" and r.status == "ok"]
    violations = []
    culprits = []
    for u in fops:
        if u.op != "fm_update":
            continue
        target = u.invoke.payload.split(";", 1)[0]
        created = [ops[c].obj for c in u.children if ops[c].op == "cvr_write" and ops[c].obj != target]
        later = [seen for r, seen in reads if u.precedes(r)]
        if not created or not later:
            continue
        reachable = any(b in seen for seen in later for b in created)
        if reachable != (u.status == "chg"):
            what = "unreachable despite chg" if u.status == "chg" else "reachable despite unchg"
            violations.append(("update-atomicity", f"update at seq {u.invoke.seq}: created blocks {what}"))
            culprits.append(u)
    return Verdict.from_violations(violations, _events_of(_with_children(ops, culprits)))


# -- whole-object linearizability ---------------------------------------------------


def _whole_step(fid: str, ops: Sequence[Operation]):
    genesis = _genesis_obj(fid)

    def chain_of(blocks: dict) -> Optional[list[tuple[str, str]]]:
        out = []
        b = genesis
        seen = set()
        while b != "nil":
            if b not in blocks or b in seen:
                return None
            seen.add(b)
            out.append((b, blocks[b]))
            b = _payload_next(blocks[b])
        return out

    def step(state, op: Operation):
        blocks, deleted = dict(state[0]), state[1]
        kids = [ops[c] for c in op.children]
        if op.op == "fm_read":
            if op.status == "FileDeleted":
                return state if deleted else None
            if op.status != "ok" or deleted:
                return None
            got = [(k.obj, k.response.payload) for k in kids if k.op == "cvr_read"]
            return state if chain_of(blocks) == got else None
        if op.op == "fm_update":
            if op.status != "chg":
                return state
            for k in kids:
                if k.op == "cvr_write" and k.status == "chg":
                    blocks[k.obj] = k.invoke.payload
            return (tuple(sorted(blocks.items())), deleted)
        if op.op in ("fm_create_file", "fm_delete_file"):
            for k in kids:
                if k.op in ("cvr_write", "cvr_delete"):
                    blocks[k.obj] = k.invoke.payload
            return (tuple(sorted(blocks.items())), deleted or op.op == "fm_delete_file")
        return state

    return step


def check_whole_object(history: Union[History, list[Operation]], fid,
                       budget: Optional[int] = DEFAULT_BUDGET) -> Verdict:
    """Linearizability of the file as one object whose value is its block chain."""
    fid = fid if isinstance(fid, str) else format_file_id(fid)
    ops = history if isinstance(history, list) else parse_operations(history)
    fops = [o for o in _file_ops(ops, fid) if o.parent is None]
    step = _whole_step(fid, ops)
    initial = ((), False)
    witness = linearize(fops, step, initial, budget=budget)
    if witness is not None:
        return Verdict.passed(witness)
    core = minimize(fops, lambda sub: linearize(sub, step, initial, budget=budget) is None)
    return Verdict(False, "whole-object-linearizability", _events_of(_with_children(ops, core)),
                   detail=f"no serialization of {len(fops)} file operations on {fid}",
                   violations=[("whole-object-linearizability", fid)])


# -- full suite ---------------------------------------------------------------------


@dataclass
class Report:
    # (check, object, verdict); checks that hit the scale cap are listed apart
    results: list[tuple[str, str, Verdict]] = field(default_factory=list)
    skipped: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(v.ok for _, _, v in self.results)

    def failures(self) -> list[tuple[str, str, Verdict]]:
        return [r for r in self.results if not r[2].ok]

    def count(self, prop: str) -> int:
        return sum(1 for _, _, v in self.results for p, _ in v.violations if p == prop)

    def render(self) -> str:
        lines = ["check\tobject\tok\tproperty\tdetail"]
        for check, obj, v in self.results:
            lines.append(f"{check}\t{obj}\t{'true' if v.ok else 'false'}\t"
                         f"{v.violated_property or '-'}\t{v.detail or '-'}")
        for check, obj, why in self.skipped:
            lines.append(f"{check}\t{obj}\tskipped\t-\t{why}")
        bad = self.failures()
        lines.append("")
        lines.append(f"# {len(self.results)} checks, {len(bad)} failed, {len(self.skipped)} skipped: "
                     f"{'OK' if not bad else 'VIOLATIONS FOUND'}")
        for check, obj, v in bad:
            for prop, detail in v.violations or [(v.violated_property, v.detail)]:
                lines.append(f"# {check} {obj}: {prop}: {detail}")
        return "\n".join(lines) + "\n"


def check_history(history: History, max_ops: Optional[int] = None,
                  budget: Optional[int] = DEFAULT_BUDGET, whole_object: bool = False) -> Report:
    """Run every applicable check over a full history.

    ``max_ops=None`` lifts the per-block operation cap; the search budget
    still bounds the work and over-budget blocks are reported as skipped.
    """
    ops = parse_operations(history)
    report = Report()
    for b in block_objects(ops):
        bops = [o for o in ops if o.op in BLOCK_OPS and o.obj == b]
        try:
            report.results.append(("linearizability", b, check_block_linearizable(bops, max_ops=max_ops,
                                                                                  budget=budget)))
        except ScaleExceeded as err:
            report.skipped.append(("linearizability", b, str(err)))
        report.results.append(("coverability", b, check_coverability(bops)))
    files = sorted({o.obj for o in ops if o.op in FILE_OPS})
    for f in files:
        try:
            report.results.append(("fragmented", f, check_fragmented(ops, f, max_ops=max_ops, budget=budget)))
        except ScaleExceeded as err:
            report.skipped.append(("fragmented", f, str(err)))
            report.results.append(("file-reads", f, check_file_reads(ops, f)))
        report.results.append(("update-atomicity", f, check_update_atomicity(ops, f)))
        if whole_object:
            try:
                report.results.append(("whole-object", f, check_whole_object(ops, f, budget=budget)))
            except ScaleExceeded as err:
                report.skipped.append(("whole-object", f, str(err)))
    return report
