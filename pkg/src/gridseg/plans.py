"""Segmentation plan representation shared by the attacker and defender layers.

A plan is a feasible administrator decision in expanded-forest form: the
roster of new enclaves per tier, the relay assignment over all
substation-tier enclaves, the parent edge of every non-root enclave, and
the entity membership of each new enclave.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import TIER_BA, TIER_CC, TIER_SS, CommNetwork


@dataclass(frozen=True)
class SegmentationPlan:
    """Defender decision: relay assignment, parent edges, new-enclave entities."""

    new_enclaves: dict[str, tuple[str, ...]] = field(default_factory=dict)
    relay_owner: dict[str, str] = field(default_factory=dict)
    parent: dict[str, str] = field(default_factory=dict)
    entity_of_new: dict[str, str] = field(default_factory=dict)

    def all_new(self) -> tuple[str, ...]:
        out: list[str] = []
        for tier in (TIER_SS, TIER_CC, TIER_BA):
            out.extend(self.new_enclaves.get(tier, ()))
        return tuple(out)

    def enclave_entity(self, comm: CommNetwork) -> dict[str, str]:
        combined = dict(comm.enclave_entity)
        combined.update(self.entity_of_new)
        return combined

    def canonical_key(self) -> tuple:
        """Deterministic encoding used for ordering and tie-breaking."""
        return (
            tuple(sorted(self.relay_owner.items())),
            tuple(sorted(self.parent.items())),
            tuple(sorted(self.entity_of_new.items())),
        )

    def childless_new_parents(self, comm: CommNetwork) -> tuple[str, ...]:
        """New non-substation enclaves that ended up with no children."""
        with_children = set(self.parent.values())
        flagged = [e for tier in (TIER_CC, TIER_BA)
                   for e in self.new_enclaves.get(tier, ())
                   if e not in with_children]
        return tuple(sorted(flagged))

    def comm_indicators(self, comm: CommNetwork) -> set[tuple[str, str]]:
        """Derived (enclave, entity-below) communication pairs."""
        entity = self.enclave_entity(comm)
        return {(parent, entity[child]) for child, parent in self.parent.items()}

    def to_json_dict(self) -> dict:
        return {
            "new_enclaves": {t: list(v) for t, v in sorted(self.new_enclaves.items()) if v},
            "relay_owner": dict(sorted(self.relay_owner.items())),
            "parent": dict(sorted(self.parent.items())),
            "entity_of_new": dict(sorted(self.entity_of_new.items())),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SegmentationPlan":
        return SegmentationPlan(
            new_enclaves={t: tuple(v) for t, v in d.get("new_enclaves", {}).items()},
            relay_owner=dict(d.get("relay_owner", {})),
            parent=dict(d.get("parent", {})),
            entity_of_new=dict(d.get("entity_of_new", {})),
        )


def identity_plan(comm: CommNetwork) -> SegmentationPlan:
    """The zero-budget plan: every relay stays with its entity's enclave.

    Requires each entity to own exactly one existing enclave, which holds
    for every shipped instance.
    """
    enclave_of_entity: dict[str, str] = {}
    for e in comm.enclaves:
        ent = comm.enclave_entity[e]
        if ent in enclave_of_entity:
            raise ValueError(f"entity {ent} has several enclaves; identity plan undefined")
        enclave_of_entity[ent] = e
    relay_owner = {r.id: enclave_of_entity[r.substation] for r in comm.relays}
    parent: dict[str, str] = {}
    for e in comm.enclaves:
        ent = comm.enclave_entity[e]
        up = comm.parent_entity.get(ent)
        if up is not None:
            parent[e] = enclave_of_entity[up]
    return SegmentationPlan(new_enclaves={}, relay_owner=relay_owner,
                            parent=parent, entity_of_new={})
