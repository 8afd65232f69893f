from collections import deque

from hypothesis import given, settings
from hypothesis import strategies as st

from fragstore.core import BlockId, FileId
from fragstore.diff import DiffScript, match_blocks

F = FileId("x", 7)
HEAD = BlockId(F, "x", 0)


def ids(n):
    return [BlockId(F, "x", i + 1) for i in range(n)]


def bfs_edit_distance(a: tuple, b: tuple) -> int:
    """Fewest single insert/delete/replace steps turning a into b, by search."""
    alphabet = set(b)
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        seq, d = frontier.popleft()
        if seq == b:
            return d
        nxt = []
        for i in range(len(seq)):
            nxt.append(seq[:i] + seq[i + 1:])
            nxt.extend(seq[:i] + (s,) + seq[i + 1:] for s in alphabet if s != seq[i])
        for i in range(len(seq) + 1):
            nxt.extend(seq[:i] + (s,) + seq[i:] for s in alphabet)
        for s in nxt:
            if s not in seen and len(s) <= max(len(a), len(b)):
                seen.add(s)
                frontier.append((s, d + 1))
    raise AssertionError("unreachable")


def test_identical_sequences():
    cur = list(zip(ids(3), ["a", "b", "c"]))
    script = match_blocks(cur, ["a", "b", "c"], head=HEAD)
    assert script.identical
    assert not script.mods and not script.inserts
    assert [i for _, i in script.equal] == [0, 1, 2]


def test_replace_and_insert_after_one_block():
    b2 = BlockId(F, "x", 2)
    script = match_blocks([(b2, "4bad")], ["d595", "8223"], head=HEAD)
    assert script.mods == [(b2, 0)]
    assert script.inserts == [(b2, [1])]


def test_prepend_anchors_at_head():
    cur = list(zip(ids(2), ["a", "b"]))
    script = match_blocks(cur, ["z", "a", "b"], head=HEAD)
    assert script.inserts == [(HEAD, [0])]
    assert script.mods == []


def test_deletion_empties_the_block():
    cur = list(zip(ids(3), ["a", "b", "c"]))
    script = match_blocks(cur, ["a", "c"], head=HEAD)
    assert script.mods == [(cur[1][0], None)]
    assert script.apply(cur, ["a", "c"], head=HEAD) == ["a", "c"]


def test_empty_script_cost():
    assert DiffScript().cost() == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=4), st.lists(st.sampled_from("abc"), max_size=4))
def test_script_is_minimal_and_reproduces_new(old, new):
    cur = list(zip(ids(len(old)), old))
    script = match_blocks(cur, new, head=HEAD)
    assert script.apply(cur, new, head=HEAD) == new
    assert script.cost() == bfs_edit_distance(tuple(old), tuple(new))


@settings(max_examples=200)
@given(st.lists(st.sampled_from("abcdef"), max_size=8), st.lists(st.sampled_from("abcdef"), max_size=8))
def test_script_reproduces_longer_sequences(old, new):
    cur = list(zip(ids(len(old)), old))
    script = match_blocks(cur, new, head=HEAD)
    assert script.apply(cur, new, head=HEAD) == new
    # each old block is used exactly once: kept, modified or emptied
    touched = [b for b, _ in script.equal] + [b for b, _ in script.mods]
    assert sorted(touched) == sorted(b for b, _ in cur)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("ab"), max_size=8), st.lists(st.sampled_from("ab"), max_size=8))
def test_script_is_minimal_up_to_eight_blocks(old, new):
    cur = list(zip(ids(len(old)), old))
    assert match_blocks(cur, new, head=HEAD).cost() == bfs_edit_distance(tuple(old), tuple(new))
