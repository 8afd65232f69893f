"""Experiment driver: scenarios, metrics and plot-ready series."""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Union

from .chunking import ChunkParams
from .cluster import Cluster, server_ids
from .core import BlockId, BlockValue, FileId
from .dsmm import DSMM
from .errors import BadConfig
from .fm import FragmentManager
from .history import History
from .register import CORRECT, ClientContext, Variant
from .transport import FaultPlan, Sleep, uniform_delay

FRAGMENTED = "fragmented"
WHOLE_FILE = "whole-file"
RANDOM = "random"
DISJOINT = "disjoint"


@dataclass
class ScenarioConfig:
    servers: int = 3
    writers: int = 2
    readers: int = 2
    ops: int = 20
    rint: int = 4000
    wint: int = 4000
    file_size: int = 64 * 1024
    min_block: int = 2 * 1024
    avg_block: int = 8 * 1024
    max_block: int = 64 * 1024
    seed: int = 0
    baseline: str = FRAGMENTED
    workload: str = RANDOM
    transport: str = "sim"
    crashes: int = 0
    delay_min: int = 1
    delay_max: int = 20
    max_edit: int = 512
    # bytes the FM chunks per simulated time unit (models computation latency)
    chunk_rate: float = 4096.0

    def validate(self) -> None:
        if self.writers < 0 or self.readers < 0 or self.writers + self.readers < 1:
            raise BadConfig("need at least one writer or reader")
        if self.servers < 3:
            raise BadConfig("need at least 3 servers")
        if self.rint <= 0 or self.wint <= 0:
            raise BadConfig("scheduling intervals must be positive")
        if self.ops < 0 or self.file_size < 0 or self.max_edit < 1:
            raise BadConfig("ops, file_size and max_edit must be non-negative")
        if self.baseline not in (FRAGMENTED, WHOLE_FILE):
            raise BadConfig(f"unknown baseline {self.baseline!r}")
        if self.workload not in (RANDOM, DISJOINT):
            raise BadConfig(f"unknown workload {self.workload!r}")
        if self.transport not in ("sim", "socket"):
            raise BadConfig(f"unknown transport {self.transport!r}")
        if self.crashes > (self.servers + 1) // 2 - 1:
            raise BadConfig(f"{self.crashes} crashes leave no majority of {self.servers} servers")
        if not 1 <= self.delay_min <= self.delay_max:
            raise BadConfig("need 1 <= delay_min <= delay_max")
        try:
            self.chunk_params().validate()
        except ValueError as err:
            raise BadConfig(str(err)) from err

    def chunk_params(self) -> ChunkParams:
        return ChunkParams(self.min_block, self.avg_block, self.max_block)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ScenarioConfig":
        """Parse ``key=value`` lines (``#`` comments; dashes or underscores in keys)."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in types:
                raise BadConfig(f"line {lineno}: bad entry {line!r}")
            kw[key] = _coerce(types[key], value.strip())
        kw.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "ScenarioConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _coerce(typ, value: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


@dataclass
class OpSample:
    client: str
    kind: str
    start: float
    end: float
    compute: float = 0.0
    success: Optional[bool] = None
    payload_bytes: int = 0

    @property
    def latency(self) -> float:
        return self.end - self.start

    @property
    def communication(self) -> float:
        return self.latency - self.compute


@dataclass
class Metrics:
    config: ScenarioConfig
    samples: list[OpSample] = field(default_factory=list)
    # block-data bytes the readers had to fetch
    payload_bytes: int = 0
    # every data byte put on the wire, requests and replies included
    wire_bytes: int = 0
    blocks: int = 0

    def of(self, kind: str) -> list[OpSample]:
        return [s for s in self.samples if s.kind == kind]

    @property
    def update_success_ratio(self) -> Optional[float]:
        ups = self.of("update")
        if not ups:
            return None
        return sum(1 for s in ups if s.success) / len(ups)

    def mean(self, kind: str, attr: str = "latency") -> Optional[float]:
        xs = [getattr(s, attr) for s in self.of(kind)]
        return statistics.fmean(xs) if xs else None

    def summary(self) -> dict[str, Optional[float]]:
        return {
            "update_success_ratio": self.update_success_ratio,
            "read_latency": self.mean("read"),
            "update_latency": self.mean("update"),
            "update_comm_latency": self.mean("update", "communication"),
            "update_compute_latency": self.mean("update", "compute"),
            "read_payload_bytes": self.mean("read", "payload_bytes"),
            "reads": len(self.of("read")),
            "updates": len(self.of("update")),
            "payload_bytes": self.payload_bytes,
            "wire_bytes": self.wire_bytes,
            "blocks": self.blocks,
        }

    def to_tsv(self) -> str:
        lines = ["metric\tvalue"]
        for k, v in asdict(self.config).items():
            lines.append(f"config.{k}\t{v}")
        for k, v in self.summary().items():
            lines.append(f"{k}\t{_fmt(v)}")
        lines.append("")
        lines.append("client\tkind\tstart\tend\tlatency\tcommunication\tcompute\tsuccess\tpayload_bytes")
        for s in self.samples:
            ok = "n/a" if s.success is None else str(s.success).lower()
            lines.append(f"{s.client}\t{s.kind}\t{s.start:g}\t{s.end:g}\t{s.latency:g}\t"
                         f"{s.communication:g}\t{s.compute:g}\t{ok}\t{s.payload_bytes}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class ScenarioResult:
    metrics: Metrics
    history: History
    cluster: Optional[Cluster] = None
    trace: list[str] = field(default_factory=list)


# -- workload helpers -----------------------------------------------------------


def random_edit(rng: random.Random, data: bytes, max_edit: int) -> bytes:
    """Insert, replace or delete 1..max_edit bytes at a random offset."""
    n = rng.randint(1, max_edit)
    kind = rng.choice(("insert", "replace", "delete")) if data else "insert"
    at = rng.randint(0, len(data))
    blob = rng.randbytes(n)
    if kind == "insert":
        return data[:at] + blob + data[at:]
    if kind == "replace":
        return data[:at] + blob + data[at + n:]
    return data[:at] + data[at + n:]


def _crash_plan(cfg: ScenarioConfig, rng: random.Random) -> FaultPlan:
    law = uniform_delay(cfg.delay_min, cfg.delay_max)
    victims = rng.sample(server_ids(cfg.servers), cfg.crashes)
    return FaultPlan({s: rng.randint(0, 50 * max(1, cfg.ops)) for s in victims}, delay_law=law)


def client_ids(cfg: ScenarioConfig) -> tuple[list[int], list[int]]:
    writers = list(range(1, cfg.writers + 1))
    readers = list(range(cfg.writers + 1, cfg.writers + cfg.readers + 1))
    return writers, readers


# -- fragmented arm --------------------------------------------------------------


def _setup_file(cluster: Cluster, owner: FragmentManager, rng: random.Random, size: int) -> tuple[FileId, bytes]:
    fid = cluster.run(owner, owner.fm_create_file("/data"))
    content = rng.randbytes(size)
    if content:
        cluster.run(owner, owner.fm_block_identify(fid, content))
    return fid, content


def run_scenario(cfg: ScenarioConfig, variant: Variant = CORRECT) -> ScenarioResult:
    cfg.validate()
    if cfg.baseline == WHOLE_FILE:
        return run_baseline_wholefile(cfg, variant)
    rng = random.Random(cfg.seed)
    cluster = Cluster(cfg.servers, seed=cfg.seed, faults=_crash_plan(cfg, rng), variant=variant,
                      params=cfg.chunk_params(), transport=cfg.transport)
    writers, readers = client_ids(cfg)
    owner = cluster.client(0)
    fid, _ = _setup_file(cluster, owner, rng, cfg.file_size)
    for cid in writers + readers:
        fm = cluster.client(cid)
        cluster.run(fm, fm.fm_list())
        cluster.run(fm, fm.fm_read(fid))
    cluster.net.run()
    metrics = Metrics(cfg, blocks=len(owner.local_list(fid)) - 1)
    wire0 = cluster.net.payload_bytes

    blocks = [b for b, _ in owner.local_list(fid)[1:]]
    for i, cid in enumerate(writers):
        fm = cluster.client(cid)
        own = blocks[i::len(writers)] if cfg.workload == DISJOINT else None
        if cfg.workload == DISJOINT and not own:
            raise BadConfig(f"{len(blocks)} blocks cannot give each of {len(writers)} writers its own")
        cluster.spawn(fm, _fragmented_writer(cfg, fm, fid, random.Random(rng.random()), metrics, own))
    for cid in readers:
        fm = cluster.client(cid)
        cluster.spawn(fm, _fragmented_reader(cfg, fm, fid, random.Random(rng.random()), metrics))
    cluster.net.run()
    cluster.close()
    _raise_task_errors(cluster)
    metrics.payload_bytes = sum(s.payload_bytes for s in metrics.of("read"))
    metrics.wire_bytes = cluster.net.payload_bytes - wire0
    return ScenarioResult(metrics, cluster.history, cluster, cluster.net.trace)


def _raise_task_errors(cluster: Cluster) -> None:
    for t in cluster.net.tasks:
        if t.error is not None:
            raise t.error
        if not t.done:
            raise RuntimeError(f"client {t.pid} never finished")


def _fragmented_writer(cfg, fm: FragmentManager, fid, rng, metrics: Metrics, own: Optional[list[BlockId]]):
    clock = fm.ctx.clock
    for _ in range(cfg.ops):
        yield Sleep(rng.randint(1, cfg.wint))
        start = clock()
        if own is not None:
            b = rng.choice(own)
            data = random_edit(rng, dict(fm.local_list(fid))[b].data, cfg.max_edit)
            compute = len(data) / cfg.chunk_rate
            yield Sleep(compute)
            status = yield from fm.update_block(fid, b, data)
            ok = status == "chg"
        else:
            data = random_edit(rng, fm.local_content(fid), cfg.max_edit)
            compute = len(data) / cfg.chunk_rate
            yield Sleep(compute)
            report = yield from fm.fm_block_identify(fid, data)
            ok = report.succeeded
        metrics.samples.append(OpSample(fm.ctx.pid, "update", start, clock(), compute, ok))


def _fragmented_reader(cfg, fm: FragmentManager, fid, rng, metrics: Metrics):
    clock = fm.ctx.clock
    for _ in range(cfg.ops):
        yield Sleep(rng.randint(1, cfg.rint))
        start = clock()
        before = fm.ctx.stats.fetched_bytes
        yield from fm.fm_read(fid)
        metrics.samples.append(OpSample(fm.ctx.pid, "read", start, clock(),
                                        payload_bytes=fm.ctx.stats.fetched_bytes - before))


# -- whole-file arm --------------------------------------------------------------


class WholeFileClient:
    """The comparison arm: the whole file is one coverable register value."""

    def __init__(self, ctx: ClientContext, fid: FileId) -> None:
        self.ctx = ctx
        self.block = BlockId(fid, fid.cfid, 0)
        self.dsmm = DSMM(ctx, max_block=None)
        self.content = b""

    def read(self):
        val = yield from self.dsmm.read(self.block)
        self.content = val.data
        return val.data

    def update(self, data: bytes):
        res = yield from self.dsmm.write(self.block, BlockValue(None, data))
        self.content = res.value.data
        return res.status


def run_baseline_wholefile(cfg: ScenarioConfig, variant: Variant = CORRECT) -> ScenarioResult:
    cfg = replace(cfg, baseline=WHOLE_FILE)
    cfg.validate()
    rng = random.Random(cfg.seed)
    cluster = Cluster(cfg.servers, seed=cfg.seed, faults=_crash_plan(cfg, rng), variant=variant,
                      transport=cfg.transport)
    writers, readers = client_ids(cfg)
    fid = FileId(0, 0)
    owner = WholeFileClient(cluster.context(0), fid)
    content = rng.randbytes(cfg.file_size)
    cluster.net.call(owner.ctx.pid, owner.dsmm.create(owner.block, BlockValue(None, content)))
    clients = {cid: WholeFileClient(cluster.context(cid), fid) for cid in writers + readers}
    for c in clients.values():
        cluster.net.call(c.ctx.pid, c.read())
    cluster.net.run()
    # region boundaries a disjoint-workload writer confines its edits to
    n_regions = max(1, math.ceil(cfg.file_size / cfg.avg_block))
    metrics = Metrics(cfg, blocks=1)
    wire0 = cluster.net.payload_bytes
    for i, cid in enumerate(writers):
        regions = list(range(i, n_regions, len(writers))) if cfg.workload == DISJOINT else None
        cluster.net.spawn(clients[cid].ctx.pid,
                          _whole_writer(cfg, clients[cid], random.Random(rng.random()), metrics, regions))
    for cid in readers:
        cluster.net.spawn(clients[cid].ctx.pid, _whole_reader(cfg, clients[cid], random.Random(rng.random()), metrics))
    cluster.net.run()
    cluster.close()
    _raise_task_errors(cluster)
    metrics.payload_bytes = sum(s.payload_bytes for s in metrics.of("read"))
    metrics.wire_bytes = cluster.net.payload_bytes - wire0
    return ScenarioResult(metrics, cluster.history, cluster, cluster.net.trace)


def _whole_writer(cfg, client: WholeFileClient, rng, metrics: Metrics, regions: Optional[list[int]]):
    clock = client.ctx.clock
    for _ in range(cfg.ops):
        yield Sleep(rng.randint(1, cfg.wint))
        start = clock()
        data = client.content
        if regions is not None:
            r = rng.choice(regions)
            lo, hi = r * cfg.avg_block, min(len(data), (r + 1) * cfg.avg_block)
            data = data[:lo] + random_edit(rng, data[lo:hi], cfg.max_edit) + data[hi:]
        else:
            data = random_edit(rng, data, cfg.max_edit)
        status = yield from client.update(data)
        metrics.samples.append(OpSample(client.ctx.pid, "update", start, clock(), 0.0, status == "chg"))


def _whole_reader(cfg, client: WholeFileClient, rng, metrics: Metrics):
    clock = client.ctx.clock
    for _ in range(cfg.ops):
        yield Sleep(rng.randint(1, cfg.rint))
        start = clock()
        before = client.ctx.stats.fetched_bytes
        yield from client.read()
        metrics.samples.append(OpSample(client.ctx.pid, "read", start, clock(),
                                        payload_bytes=client.ctx.stats.fetched_bytes - before))


# -- sweeps and plot data ---------------------------------------------------------

FAMILIES = {
    "scalability": ("writers", [1, 2, 4, 8]),
    "filesize": ("file_size", [16 * 1024, 64 * 1024, 256 * 1024, 1024 * 1024]),
    "blocksize": ("max_block", [16 * 1024, 32 * 1024, 64 * 1024]),
}

PLOT_METRICS = ("update_success_ratio", "read_latency", "update_latency", "update_comm_latency",
                "update_compute_latency", "read_payload_bytes")


@dataclass
class Point:
    scenario: str
    arm: str
    x: float
    metrics: Metrics


def sweep(family: str, base: ScenarioConfig, seeds: Iterable[int] = range(5),
          arms: Iterable[str] = (FRAGMENTED, WHOLE_FILE), xs: Optional[list] = None) -> list[Point]:
    if family not in FAMILIES:
        raise BadConfig(f"unknown experiment family {family!r}")
    attr, default_xs = FAMILIES[family]
    points = []
    for x in xs or default_xs:
        for arm in arms:
            for seed in seeds:
                cfg = replace(base, **{attr: x}, baseline=arm, seed=seed)
                if attr == "max_block":
                    cfg = replace(cfg, avg_block=min(cfg.avg_block, x), min_block=min(cfg.min_block, x))
                points.append(Point(family, arm, x, run_scenario(cfg).metrics))
    return points


def emit_plot_data(points: Iterable[Point], out_dir: Union[str, Path]) -> list[Path]:
    """One TAB-separated ``x value stderr`` file per (scenario, arm, metric),
    averaging over the seeds at each x."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str, str], dict[float, list[float]]] = {}
    for p in points:
        summary = p.metrics.summary()
        for metric in PLOT_METRICS:
            v = summary[metric]
            if v is not None:
                groups.setdefault((p.scenario, p.arm, metric), {}).setdefault(p.x, []).append(v)
    written = []
    for (scenario, arm, metric), by_x in sorted(groups.items()):
        path = out / f"{scenario}_{arm}_{metric}.tsv"
        with open(path, "w") as fh:
            for x in sorted(by_x):
                mean, err = mean_stderr(by_x[x])
                fh.write(f"{x:g}\t{mean:.6g}\t{err:.6g}\n")
        written.append(path)
    return written


def mean_stderr(xs: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(xs)
    if len(xs) < 2:
        return mean, 0.0
    return mean, statistics.stdev(xs) / math.sqrt(len(xs))


def read_series(path: Union[str, Path]) -> list[tuple[float, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        x, v, e = line.split("\t")
        rows.append((float(x), float(v), float(e)))
    return rows
