import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fragstore.checker import parse_operations
from fragstore.chunking import ChunkParams
from fragstore.cluster import Cluster
from fragstore.core import BlockId, FileId, format_block_id
from fragstore.errors import DuplicatePath, FileDeleted, UnknownFile
from fragstore.fm import decode_metadata, encode_metadata, genesis_of

SMALL = ChunkParams(64, 256, 1024)


def new_file(c, cid=0, path="/f"):
    fm = c.client(cid)
    fid = c.run(fm, fm.fm_create_file(path))
    return fm, fid


def block_ops(history, op):
    return [o for o in parse_operations(history) if o.op == op]


@given(st.text(max_size=40), st.integers(0, 99), st.integers(0, 99), st.booleans())
def test_metadata_round_trip(path, cfid, seq, deleted):
    fid = FileId(cfid, seq)
    assert decode_metadata(encode_metadata(path, fid, deleted)) == (path, fid, deleted)


def test_first_file_ids():
    c = Cluster(3, seed=0)
    fm, fid = new_file(c, cid=5)
    assert fid == FileId(5, 0)
    assert genesis_of(fid) == BlockId(fid, 5, 0)
    assert fm.local_list(fid)[0][0] == BlockId(fid, 5, 0)


def test_new_file_reads_empty():
    c = Cluster(3, seed=0)
    fm, fid = new_file(c)
    assert c.run(fm, fm.fm_read(fid)) == b""


def test_create_then_list():
    c = Cluster(3, seed=0)
    new_file(c, path="/a")
    other = c.client(1)
    assert [p for p, _, _ in c.run(other, other.fm_list())] == ["/a"]


def test_list_empty_system():
    c = Cluster(3, seed=0)
    fm = c.client(0)
    assert c.run(fm, fm.fm_list()) == []


def test_three_creates_listed():
    c = Cluster(3, seed=1)
    for i in range(3):
        new_file(c, cid=i, path=f"/p{i}")
    fm = c.client(9)
    entries = c.run(fm, fm.fm_list())
    assert sorted(p for p, _, _ in entries) == ["/p0", "/p1", "/p2"]
    assert len({fid for _, fid, _ in entries}) == 3


def test_duplicate_path_rejected_locally():
    c = Cluster(3, seed=0)
    fm, _ = new_file(c)
    with pytest.raises(DuplicatePath):
        c.run(fm, fm.fm_create_file("/f"))


def test_delete_then_read_and_list():
    c = Cluster(3, seed=2)
    fm, fid = new_file(c)
    reader = c.client(1)
    reader.register("/f", fid)
    c.run(reader, reader.fm_read(fid))
    c.run(fm, fm.fm_delete_file(fid))
    with pytest.raises(FileDeleted):
        c.run(reader, reader.fm_read(fid))
    assert c.run(reader, reader.fm_list()) == []
    with pytest.raises(FileDeleted):
        fm.entry(fid)


def test_unknown_file():
    c = Cluster(3)
    fm = c.client(0)
    with pytest.raises(UnknownFile):
        fm.entry(FileId(3, 3))


def test_single_block_update():
    c = Cluster(3, seed=0)
    fm, fid = new_file(c)
    g = fm.local_list(fid)[0][0]
    meta = fm.local_list(fid)[0][1].data
    assert c.run(fm, fm.fm_update(fid, g, [meta, b"hello"])) == "chg"
    reader = c.client(1)
    reader.register("/f", fid)
    assert c.run(reader, reader.fm_read(fid)) == b"hello"


def test_splice_creates_back_to_front():
    c = Cluster(3, seed=0)
    fm, fid = new_file(c)
    g, meta = fm.local_list(fid)[0]
    c.run(fm, fm.fm_update(fid, g, [meta.data, b"b"]))
    b = fm.local_list(fid)[1][0]
    start = len(c.history)
    assert c.run(fm, fm.fm_update(fid, b, [b"B", b"one", b"two"])) == "chg"
    writes = [o for o in parse_operations(c.history) if o.op == "cvr_write" and o.invoke.seq >= start]
    b1, b2 = BlockId(fid, 0, 2), BlockId(fid, 0, 3)
    assert [o.obj for o in writes] == [format_block_id(b2), format_block_id(b1), format_block_id(b)]
    assert writes[-1].invoke.payload.startswith(format_block_id(b1) + ";")
    assert [v.data for _, v in fm.local_list(fid)[1:]] == [b"B", b"one", b"two"]


def test_identify_identical_content_is_a_no_op():
    c = Cluster(3, seed=0, params=SMALL)
    fm, fid = new_file(c)
    data = random.Random(3).randbytes(3000)
    c.run(fm, fm.fm_block_identify(fid, data))
    before = len(block_ops(c.history, "fm_update"))
    report = c.run(fm, fm.fm_block_identify(fid, data))
    assert report.updates == []
    assert len(block_ops(c.history, "fm_update")) == before


def test_identify_prepend_to_a_block():
    # seed found by search: 300 bytes prepended to block 2 re-chunk into exactly
    # a modified block 2 plus one new block after it
    rng = random.Random(1)
    c = Cluster(3, seed=0, params=SMALL)
    fm, fid = new_file(c, path="/doc")
    data = rng.randbytes(1500)
    c.run(fm, fm.fm_block_identify(fid, data))
    chain = fm.local_list(fid)
    b2 = chain[2][0]
    off = len(chain[1][1].data)
    new = data[:off] + rng.randbytes(300) + data[off:]
    start = len(c.history)
    report = c.run(fm, fm.fm_block_identify(fid, new))
    assert report.updates == [(b2, 2, "chg")]
    writes = [o for o in parse_operations(c.history) if o.op == "cvr_write" and o.invoke.seq >= start]
    assert len(writes) == 2
    assert writes[0].obj != format_block_id(b2) and writes[0].status == "chg"
    assert writes[1].obj == format_block_id(b2)
    assert fm.local_content(fid) == new


def test_identify_deleting_a_block_keeps_it_empty():
    c = Cluster(3, seed=0, params=SMALL)
    fm, fid = new_file(c)
    data = random.Random(3).randbytes(3000)
    c.run(fm, fm.fm_block_identify(fid, data))
    chain = list(fm.local_list(fid))
    victim = chain[2]
    new = b"".join(v.data for b, v in chain[1:] if b != victim[0])
    report = c.run(fm, fm.fm_block_identify(fid, new))
    assert report.updates == [(victim[0], 1, "chg")]
    after = fm.local_list(fid)
    assert [b for b, _ in after] == [b for b, _ in chain]
    assert dict(after)[victim[0]].data == b""
    assert fm.local_content(fid) == new


def test_identify_round_trips_random_edits():
    c = Cluster(3, seed=4, params=SMALL)
    fm, fid = new_file(c)
    reader = c.client(1)
    reader.register("/f", fid)
    rng = random.Random(10)
    data = rng.randbytes(4000)
    for _ in range(15):
        at = rng.randrange(len(data) + 1)
        data = data[:at] + rng.randbytes(rng.randint(0, 200)) + data[at + rng.randint(0, 200):]
        c.run(fm, fm.fm_block_identify(fid, data))
        assert c.run(reader, reader.fm_read(fid)) == data


def test_stale_writer_relinks_after_losing():
    c = Cluster(3, seed=6)
    a, fid = new_file(c)
    g, meta = a.local_list(fid)[0]
    c.run(a, a.fm_update(fid, g, [meta.data, b"base"]))
    b = a.local_list(fid)[1][0]
    other = c.client(1)
    other.register("/f", fid)
    c.run(other, other.fm_read(fid))
    assert c.run(a, a.fm_update(fid, b, [b"A", b"A-tail"])) == "chg"
    # other's cache of b is stale: its update degrades and it adopts a's chain
    assert c.run(other, other.fm_update(fid, b, [b"B", b"B-tail"])) == "unchg"
    assert other.local_content(fid) == b"AA-tail"
    assert c.run(other, other.fm_read(fid)) == b"AA-tail"


def test_catalog_save_and_load(tmp_path):
    c = Cluster(3, seed=0)
    fm, fid = new_file(c, path="/saved")
    fm.save_catalog(tmp_path / "cat.tsv")
    fresh = c.client(7)
    fresh.load_catalog(tmp_path / "cat.tsv")
    assert fresh.entry(fid).genesis == genesis_of(fid)
    assert c.run(fresh, fresh.fm_read(fid)) == b""
