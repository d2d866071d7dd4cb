"""Failure-code histograms and the crash-count table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

N_CODES = 8
HIST_FORMAT = "advhighway.fc_histogram"


class ReportError(ValueError):
    """Malformed histogram or table input; the message names file and line."""


@dataclass
class FcHistogram:
    """AV crash counts per failure code, split into attacker-involved and total."""

    n_env_cars: int
    with_attacker: bool
    config_hash: str = ""
    episodes: int = 0
    total: list[int] = field(default_factory=lambda: [0] * N_CODES)
    attacker: list[int] = field(default_factory=lambda: [0] * N_CODES)
    at_fault: list[int] = field(default_factory=lambda: [0] * N_CODES)
    terminations: dict[str, int] = field(default_factory=dict)

    def add(self, failure_code: int, attacker_involved: bool, av_at_fault: bool) -> None:
        self.total[failure_code] += 1
        self.attacker[failure_code] += int(attacker_involved)
        self.at_fault[failure_code] += int(av_at_fault)

    def merge(self, other: "FcHistogram") -> None:
        for i in range(N_CODES):
            self.total[i] += other.total[i]
            self.attacker[i] += other.attacker[i]
            self.at_fault[i] += other.at_fault[i]
        self.episodes += other.episodes
        for k, v in other.terminations.items():
            self.terminations[k] = self.terminations.get(k, 0) + v

    @property
    def crashes(self) -> int:
        return sum(self.total)

    @property
    def av_at_fault_crashes(self) -> int:
        return sum(self.total[2:])

    def check(self) -> None:
        """Bookkeeping identities; raises ReportError."""
        if any(a > t for a, t in zip(self.attacker, self.total)):
            raise ReportError("attacker-involved count exceeds total")
        if self.at_fault[:2] != [0, 0] or self.at_fault[2:] != self.total[2:]:
            raise ReportError("codes 2..7 must be exactly the AV-at-fault crashes")

    def to_dict(self) -> dict:
        return {"format": HIST_FORMAT, "n_env_cars": self.n_env_cars,
                "with_attacker": self.with_attacker, "config_hash": self.config_hash,
                "episodes": self.episodes, "total": self.total, "attacker": self.attacker,
                "at_fault": self.at_fault, "terminations": dict(sorted(self.terminations.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "FcHistogram":
        h = cls(int(d["n_env_cars"]), bool(d["with_attacker"]), str(d["config_hash"]),
                int(d["episodes"]), [int(x) for x in d["total"]], [int(x) for x in d["attacker"]],
                [int(x) for x in d["at_fault"]], {k: int(v) for k, v in d["terminations"].items()})
        if not (len(h.total) == len(h.attacker) == len(h.at_fault) == N_CODES):
            raise ValueError("expected 8 failure-code counts")
        return h


def save_histogram(h: FcHistogram, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(h.to_dict(), indent=1) + "\n")
    return path


def load_histogram(path: str | Path) -> FcHistogram:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != HIST_FORMAT:
        raise ReportError(f"{path}:1: not a failure-code histogram")
    try:
        h = FcHistogram.from_dict(doc)
        h.check()
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"{path}:1: {exc}") from exc
    return h


# --------------------------------------------------------------------------
# table

def _row_label(h: FcHistogram) -> str:
    return "w. attacker" if h.with_attacker else "w/o attacker"


def render_table(hists: list[FcHistogram], extended: bool = False) -> str:
    """CSV-shaped table; rows ordered w/o before w, then by car count; cells ``attacker/total``."""
    hashes = {h.config_hash for h in hists}
    if len(hashes) > 1:
        raise ReportError(f"histograms come from different configs: {sorted(hashes)}")
    codes = range(0 if extended else 1, N_CODES)
    lines = ["setting,cars,episodes," + ",".join(f"FC{c}" for c in codes)]
    for h in sorted(hists, key=lambda h: (h.with_attacker, h.n_env_cars)):
        cells = [f"{h.attacker[c]}/{h.total[c]}" for c in codes]
        lines.append(",".join([_row_label(h), str(h.n_env_cars), str(h.episodes), *cells]))
    return "\n".join(lines) + "\n"


def parse_table(text: str, source: str = "<table>") -> list[dict]:
    """Inverse of :func:`render_table`: rows as dicts with per-code (attacker, total) pairs."""
    lines = text.splitlines()
    if not lines:
        raise ReportError(f"{source}:1: empty table")
    head = lines[0].split(",")
    if head[:3] != ["setting", "cars", "episodes"] or not head[3:]:
        raise ReportError(f"{source}:1: unexpected header {lines[0]!r}")
    try:
        codes = [int(c.removeprefix("FC")) for c in head[3:]]
    except ValueError as exc:
        raise ReportError(f"{source}:1: bad code column ({exc})") from exc
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != len(head):
            raise ReportError(f"{source}:{lineno}: expected {len(head)} fields, got {len(parts)}")
        label, cars, episodes, *cells = parts
        if label not in ("w/o attacker", "w. attacker"):
            raise ReportError(f"{source}:{lineno}: unknown setting {label!r}")
        counts = {}
        try:
            for c, cell in zip(codes, cells):
                a, t = cell.split("/")
                counts[c] = (int(a), int(t))
            rows.append({"with_attacker": label == "w. attacker", "n_env_cars": int(cars),
                         "episodes": int(episodes), "counts": counts})
        except ValueError as exc:
            raise ReportError(f"{source}:{lineno}: bad cell ({exc})") from exc
    return rows
