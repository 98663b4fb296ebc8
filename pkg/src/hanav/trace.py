"""Episode traces: an append-only record stream persisted as JSON Lines.

A trace is one header record, one step record per simulation tick, and
one footer record carrying the outcome.  Serialization rounds floats to
six decimals and sorts keys, so identical episodes produce byte-equal
files.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .world import ScenarioSpec

__all__ = ["Trace", "TraceError", "spec_hash", "OUTCOMES"]

OUTCOMES = ("success", "collision", "stuck", "abort", "timeout")


class TraceError(Exception):
    """Malformed or truncated trace stream."""


def spec_hash(spec: ScenarioSpec) -> str:
    """Stable digest of the scenario document plus its map."""
    doc = json.dumps(spec.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(
        doc.encode() + b"\n" + spec.grid.render().encode()).hexdigest()


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        r = round(value, 6)
        return 0.0 if r == 0 else r        # avoid "-0.0" in output
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    return value


@dataclass
class Trace:
    """Header, per-step records, footer."""

    header: dict
    steps: list[dict] = field(default_factory=list)
    footer: dict = field(default_factory=dict)

    @property
    def outcome(self) -> str:
        return self.footer.get("outcome", "")

    def to_jsonl(self) -> str:
        records = [self.header, *self.steps, self.footer]
        lines = [json.dumps(_rounded(r), sort_keys=True, separators=(",", ":"))
                 for r in records]
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        header: dict | None = None
        footer: dict | None = None
        steps: list[dict] = []
        for ln, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {ln}: invalid JSON") from exc
            kind = rec.get("kind")
            if kind == "header":
                if header is not None:
                    raise TraceError(f"line {ln}: second header")
                header = rec
            elif kind == "step":
                steps.append(rec)
            elif kind == "footer":
                footer = rec
            else:
                raise TraceError(f"line {ln}: unknown record kind {kind!r}")
        if header is None or footer is None:
            raise TraceError("trace is missing its header or footer")
        return cls(header=header, steps=steps, footer=footer)

    @classmethod
    def load(cls, path: str) -> "Trace":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())

    def events(self) -> list[dict]:
        out = []
        for step in self.steps:
            out.extend(step.get("events", []))
        return out

    def modes(self) -> list[str]:
        return [step["mode"] for step in self.steps]
