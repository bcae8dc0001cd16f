"""Ground atoms and action instances.

Atoms are immutable ``pred(arg1, ..., argN)`` facts over object identifiers.
They serve as world-state entries, condition-node propositions, and schema
effect entries alike.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class Atom:
    """A ground atom: predicate symbol applied to object identifiers."""

    pred: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.pred}({', '.join(self.args)})"

    def to_doc(self) -> dict:
        return {"pred": self.pred, "args": list(self.args)}

    @classmethod
    def from_doc(cls, doc: dict) -> "Atom":
        return cls(str(doc["pred"]), tuple(str(a) for a in doc["args"]))

    @classmethod
    def of(cls, pred: str, *args: str) -> "Atom":
        return cls(pred, tuple(args))


@dataclass(frozen=True, order=True)
class ActionInstance:
    """An action symbol applied to an ordered list of objects."""

    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.args)})"

    def to_doc(self) -> dict:
        return {"name": self.name, "args": list(self.args)}

    @classmethod
    def from_doc(cls, doc: dict) -> "ActionInstance":
        return cls(str(doc["name"]), tuple(str(a) for a in doc["args"]))

    @classmethod
    def of(cls, name: str, *args: str) -> "ActionInstance":
        return cls(name, tuple(args))
