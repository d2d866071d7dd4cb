"""Episode traces as JSON lines: one header line, one line per step, one footer line."""

from __future__ import annotations

import json
from pathlib import Path

from advhighway.attacker import EpisodeTrace
from advhighway.sim import RoadConfig, TrafficConfig

TRACE_FORMAT = "advhighway.trace"
TRACE_VERSION = 1


class TraceError(ValueError):
    pass


def write_trace(trace: EpisodeTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": "header", "format": TRACE_FORMAT, "version": TRACE_VERSION, **trace.header}
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in trace.records:
            fh.write(json.dumps({"kind": "step", **rec}, sort_keys=True) + "\n")
        fh.write(json.dumps({"kind": "footer", **trace.footer}, sort_keys=True) + "\n")
    return path


def read_trace(path: str | Path) -> EpisodeTrace:
    path = Path(path)
    header, records, footer = None, [], None
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                doc = json.loads(line)
                kind = doc.pop("kind")
            except (json.JSONDecodeError, KeyError, AttributeError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed trace line ({exc})") from exc
            if kind == "header":
                if doc.get("format") != TRACE_FORMAT:
                    raise TraceError(f"{path}:{lineno}: not a trace file")
                header = doc
            elif kind == "step":
                records.append(doc)
            elif kind == "footer":
                footer = doc
            else:
                raise TraceError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if header is None or footer is None:
        raise TraceError(f"{path}: missing header or footer")
    return EpisodeTrace(header, records, footer)


def trace_configs(trace: EpisodeTrace) -> tuple[RoadConfig, TrafficConfig]:
    """Road and traffic settings embedded in the header."""
    return RoadConfig(**trace.header["road"]), TrafficConfig(**trace.header["traffic"])
