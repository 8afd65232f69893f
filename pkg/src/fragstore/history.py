"""Invocation/response history log.

One event per line, TAB-separated::

    seq  process  op  action  object  tag  status  payload

``payload`` is ``-`` when not applicable, ``absent`` for the never-written
initial block value, and ``<next_link>;<len>;<sha256>`` for a block value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from .core import BlockValue, format_block_id

INVOKE = "invoke"
RESPOND = "respond"
NA = "-"


@dataclass(frozen=True)
class Event:
    seq: int
    process: str
    op: str
    action: str
    object: str
    tag: str = NA
    status: str = NA
    payload: str = NA

    def __deepcopy__(self, memo):
        return self  # immutable

    def line(self) -> str:
        return "\t".join(
            [str(self.seq), self.process, self.op, self.action, self.object, self.tag, self.status, self.payload]
        )

    @classmethod
    def parse(cls, line: str) -> "Event":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 8:
            raise ValueError(f"expected 8 fields, got {len(parts)}: {line!r}")
        return cls(int(parts[0]), *parts[1:])


def value_payload(value: Optional[BlockValue]) -> str:
    if value is None:
        return "absent"
    return f"{format_block_id(value.next_link)};{len(value.data)};{value.digest()}"


def bytes_payload(data: bytes) -> str:
    return f"{len(data)};{hashlib.sha256(data).hexdigest()}"


class History:
    def __init__(self, events: Iterable[Event] = ()) -> None:
        self.events: list[Event] = list(events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def record(self, process: str, op: str, action: str, obj: str, tag: str = NA, status: str = NA,
               payload: str = NA) -> Event:
        ev = Event(len(self.events), process, op, action, obj, tag, status, payload)
        self.events.append(ev)
        return ev

    def invoke(self, process: str, op: str, obj: str, **kw) -> Event:
        return self.record(process, op, INVOKE, obj, **kw)

    def respond(self, process: str, op: str, obj: str, **kw) -> Event:
        return self.record(process, op, RESPOND, obj, **kw)

    def dump(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(ev.line() + "\n")

    def dumps(self) -> str:
        return "".join(ev.line() + "\n" for ev in self.events)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "History":
        with open(path) as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "History":
        return cls(Event.parse(line) for line in text.splitlines() if line.strip())
