"""Uncommon-state taxonomy and the fixed-order binary state vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

TURN_YELLOW = (1.0, 0.85, 0.0)
STOP_RED = (1.0, 0.0, 0.0)


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class StateDef:
    """One binary state.

    ``effect`` is ``"open"`` (articulate the single movable part in ``parts``)
    or ``"recolor"`` (tint every semantic part in ``parts`` with ``color``).
    """

    name: str
    effect: str
    parts: tuple
    color: tuple = ()


@dataclass(frozen=True)
class Taxonomy:
    version: str
    states: tuple

    def __post_init__(self):
        names = [s.name for s in self.states]
        if len(set(names)) != len(names):
            raise TaxonomyError("duplicate state names")
        for s in self.states:
            if s.effect not in ("open", "recolor"):
                raise TaxonomyError(f"state {s.name!r}: unknown effect {s.effect!r}")
            if s.effect == "open" and len(s.parts) != 1:
                raise TaxonomyError(f"state {s.name!r}: an open state drives exactly one part")

    @property
    def names(self) -> tuple:
        return tuple(s.name for s in self.states)

    def __len__(self):
        return len(self.states)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown state {name!r}") from None

    def get(self, name: str) -> StateDef:
        return self.states[self.index(name)]

    def open_state_for(self, part_id: str):
        for s in self.states:
            if s.effect == "open" and s.parts[0] == part_id:
                return s
        return None

    def to_dict(self) -> dict:
        return {"version": self.version,
                "states": [{"name": s.name, "effect": s.effect, "parts": list(s.parts),
                            "color": list(s.color)} for s in self.states]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Taxonomy":
        try:
            states = tuple(StateDef(d["name"], d["effect"], tuple(d["parts"]),
                                    tuple(d.get("color", ()))) for d in doc["states"])
            return cls(doc["version"], states)
        except (KeyError, TypeError) as e:
            raise TaxonomyError(f"malformed taxonomy document: {e}") from None


# Column order of the published annotation table.
VUS_TAXONOMY = Taxonomy("vus-12/1", (
    StateDef("bonnet-lifted", "open", ("bonnet",)),
    StateDef("trunk-lifted", "open", ("trunk",)),
    StateDef("front-left-door-open", "open", ("front_left_door",)),
    StateDef("front-right-door-open", "open", ("front_right_door",)),
    StateDef("back-left-door-open", "open", ("back_left_door",)),
    StateDef("back-right-door-open", "open", ("back_right_door",)),
    StateDef("headlight-turn-left", "recolor", ("headlight_left",), TURN_YELLOW),
    StateDef("headlight-turn-right", "recolor", ("headlight_right",), TURN_YELLOW),
    StateDef("taillight-turn-left", "recolor", ("taillight_left",), TURN_YELLOW),
    StateDef("taillight-turn-right", "recolor", ("taillight_right",), TURN_YELLOW),
    StateDef("stop", "recolor", ("taillight_left", "taillight_right"), STOP_RED),
    StateDef("alarm", "recolor", ("taillight_left", "taillight_right"), STOP_RED),
))

CANONICAL_MOVABLE = ("bonnet", "trunk", "front_left_door", "front_right_door",
                     "back_left_door", "back_right_door")
CANONICAL_SEMANTIC = ("headlight_left", "headlight_right", "taillight_left", "taillight_right")


def encode_state(active: Iterable[str], taxonomy: Taxonomy = VUS_TAXONOMY) -> tuple:
    active = set(active)
    for name in active:
        taxonomy.index(name)
    return tuple(name in active for name in taxonomy.names)


def decode_state(vector: Sequence, taxonomy: Taxonomy = VUS_TAXONOMY) -> set:
    if len(vector) != len(taxonomy):
        raise TaxonomyError(f"state vector has {len(vector)} items, expected {len(taxonomy)}")
    return {name for name, bit in zip(taxonomy.names, vector) if bit}
