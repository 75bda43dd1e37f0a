"""Append-only event log: the single source of truth for a finished run.

Record format (UTF-8, LF endings)::

    t_s|event_kind|node|detail

``t_s`` is the simulation time with microsecond precision. ``detail`` is
a space-separated list of ``key=value`` pairs whose values never contain
spaces or ``|``. Multi-valued fields use ``;`` and ``:`` as inner
separators (e.g. ``edges=rsu1:v03;v03:v05``).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Record:
    t: float
    kind: str
    node: str
    detail: dict[str, str]


def format_detail(detail: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in detail.items())


def format_record(t: float, kind: str, node: str, detail: dict) -> str:
    return f"{t:.6f}|{kind}|{node}|{format_detail(detail)}"


def parse_record(line: str) -> Record:
    t_s, kind, node, detail_s = line.split("|", 3)
    detail = {}
    if detail_s:
        for token in detail_s.split(" "):
            key, _, value = token.partition("=")
            detail[key] = value
    return Record(float(t_s), kind, node, detail)


class EventLog:
    """In-memory list of formatted records; immutable once the run ends."""

    def __init__(self):
        self._lines: list[str] = []

    def add(self, t: float, event_kind: str, node: str, **detail):
        self._lines.append(format_record(t, event_kind, node, detail))

    def lines(self) -> list[str]:
        return list(self._lines)

    def records(self) -> list[Record]:
        return [parse_record(line) for line in self._lines]

    def as_text(self) -> str:
        return "\n".join(self._lines) + "\n" if self._lines else ""

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.as_text())

    def __len__(self):
        return len(self._lines)


def read_log(path) -> list[Record]:
    with open(path, "r", encoding="utf-8") as fh:
        return [parse_record(line.rstrip("\n")) for line in fh if line.strip()]
