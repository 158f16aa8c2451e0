"""Frame-relation graph: loading, parent extraction, scenario connectivity.

The graph is a directed multigraph of (child, relation, parent) edges over
named frames. Frames whose name ends in ``_scenario`` (or that carry an
explicit flag in the input file) act as grouping containers; several query
modes restrict which edges count when extracting a frame's parents.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Reserved frame ids, never graph nodes.
NOFRAME = 0  # event has no frame annotation
PAD_FRAME = 1
ABSTAIN = 2  # no parent extractable for a predicted frame
N_RESERVED_FRAMES = 3

RESERVED_FRAME_NAMES = ("<NOFRAME>", "<PAD>", "<ABSTAIN>")


class RelationType(enum.Enum):
    INHERITANCE = "Inheritance"
    USING = "Using"
    PRECEDES = "Precedes"
    METAPHOR = "Metaphor"
    SEE_ALSO = "See_also"
    CAUSATIVE_OF = "Causative_of"
    INCHOATIVE_OF = "Inchoative_of"
    PERSPECTIVE_ON = "Perspective_on"
    SUBFRAME = "Subframe"
    REFRAMING_MAPPING = "ReFraming_Mapping"


# The six relations admitted by grouping mode.
GROUPING_RELATIONS = frozenset(
    {
        RelationType.INHERITANCE,
        RelationType.USING,
        RelationType.PRECEDES,
        RelationType.CAUSATIVE_OF,
        RelationType.INCHOATIVE_OF,
        RelationType.SUBFRAME,
    }
)

_RELATION_BY_NAME = {r.value: r for r in RelationType}


class GraphLoadError(ValueError):
    """Malformed frame-graph input."""


@dataclass(frozen=True)
class RelationFilter:
    """Which edges count when extracting parents.

    mode is one of "single", "grouping", "scenario_only", "all"; relation is
    set only for mode="single".
    """

    mode: str
    relation: RelationType | None = None

    def __post_init__(self):
        if self.mode not in ("single", "grouping", "scenario_only", "all"):
            raise ValueError(f"unknown filter mode: {self.mode!r}")
        if (self.mode == "single") != (self.relation is not None):
            raise ValueError("mode='single' requires a relation; other modes forbid one")

    @staticmethod
    def single(relation: RelationType) -> "RelationFilter":
        return RelationFilter("single", relation)

    @staticmethod
    def grouping() -> "RelationFilter":
        return RelationFilter("grouping")

    @staticmethod
    def scenario_only() -> "RelationFilter":
        return RelationFilter("scenario_only")

    @staticmethod
    def all() -> "RelationFilter":
        return RelationFilter("all")

    @staticmethod
    def parse(name: str) -> "RelationFilter":
        """Parse a CLI-style filter name (lowercase relation, grouping, scenario_only, all)."""
        name = name.strip().lower()
        if name == "grouping":
            return RelationFilter.grouping()
        if name == "scenario_only":
            return RelationFilter.scenario_only()
        if name == "all":
            return RelationFilter.all()
        for rel in RelationType:
            if rel.value.lower() == name:
                return RelationFilter.single(rel)
        raise ValueError(f"unknown relation filter: {name!r}")

    def cli_name(self) -> str:
        if self.mode == "single":
            return self.relation.value.lower()
        return self.mode


@dataclass
class FrameGraph:
    """Immutable after load; safe for concurrent reads."""

    names: list[str] = field(default_factory=lambda: list(RESERVED_FRAME_NAMES))
    ids: dict[str, int] = field(
        default_factory=lambda: {n: i for i, n in enumerate(RESERVED_FRAME_NAMES)}
    )
    edges: list[tuple[int, RelationType, int]] = field(default_factory=list)
    scenario: dict[int, bool] = field(default_factory=dict)
    # child id -> list of (relation, parent id); built at load for O(1) lookup
    _adj: dict[int, list[tuple[RelationType, int]]] = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        """Number of real frames (reserved specials excluded)."""
        return len(self.names) - N_RESERVED_FRAMES

    def name_of(self, fid: int) -> str:
        return self.names[fid]

    def id_of(self, name: str) -> int:
        return self.ids[name]

    def is_scenario(self, fid: int) -> bool:
        return self.scenario.get(fid, False)

    def intern(self, name: str) -> int:
        fid = self.ids.get(name)
        if fid is None:
            fid = len(self.names)
            self.names.append(name)
            self.ids[name] = fid
            self.scenario[fid] = name.lower().endswith("_scenario")
        return fid

    def add_edge(self, child: int, relation: RelationType, parent: int) -> None:
        if child == parent:
            raise GraphLoadError(f"self-loop edge on {self.names[child]!r}")
        self.edges.append((child, relation, parent))
        self._adj.setdefault(child, []).append((relation, parent))

    def parents_of(self, fid: int) -> list[tuple[RelationType, int]]:
        return self._adj.get(fid, [])


def _admits(graph: FrameGraph, filt: RelationFilter, relation: RelationType, parent: int) -> bool:
    if filt.mode == "single":
        return relation == filt.relation
    if filt.mode == "grouping":
        return relation in GROUPING_RELATIONS
    if filt.mode == "scenario_only":
        return graph.is_scenario(parent)
    return True  # all


def abstract_frames(graph: FrameGraph, frame: int, filt: RelationFilter) -> set[int]:
    """Distinct parents reachable by one admitted edge; empty for NOFRAME."""
    if frame == NOFRAME:
        return set()
    if frame in (PAD_FRAME, ABSTAIN):
        raise ValueError("reserved frame id has no parents")
    return {p for rel, p in graph.parents_of(frame) if _admits(graph, filt, rel, p)}


def sample_abstract_frame(
    graph: FrameGraph, frame: int, filt: RelationFilter, rng: np.random.Generator
) -> int:
    """Uniform choice over abstract_frames(...); ABSTAIN when none exist."""
    parents = sorted(abstract_frames(graph, frame, filt))
    if not parents:
        return ABSTAIN
    if len(parents) == 1:
        return parents[0]
    return parents[int(rng.integers(len(parents)))]


def scenario_connected(graph: FrameGraph, f_i: int, f_j: int) -> bool:
    """True iff some scenario-flagged frame parents both f_i and f_j (any relation)."""
    filt = RelationFilter.all()
    shared = abstract_frames(graph, f_i, filt) & abstract_frames(graph, f_j, filt)
    return any(graph.is_scenario(s) for s in shared)


def load_frame_graph(path) -> FrameGraph:
    """Load a tab-separated edge list: child<TAB>relation<TAB>parent[<TAB>scenario=0|1].

    The optional fourth column sets the parent's explicit scenario flag
    (overriding the name-suffix rule). Lines starting with '#' are skipped.
    """
    graph = FrameGraph()
    explicit: dict[int, bool] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise GraphLoadError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
            child_name, rel_name, parent_name = parts[0], parts[1], parts[2]
            if not child_name or not rel_name or not parent_name:
                raise GraphLoadError(f"{path}:{lineno}: empty field")
            relation = _RELATION_BY_NAME.get(rel_name)
            if relation is None:
                raise GraphLoadError(f"{path}:{lineno}: unknown relation {rel_name!r}")
            child = graph.intern(child_name)
            parent = graph.intern(parent_name)
            if child == parent:
                raise GraphLoadError(f"{path}:{lineno}: self-loop on {child_name!r}")
            graph.add_edge(child, relation, parent)
            if len(parts) == 4:
                flag_field = parts[3].strip()
                if not flag_field.startswith("scenario=") or flag_field[-1] not in "01":
                    raise GraphLoadError(f"{path}:{lineno}: bad scenario flag {flag_field!r}")
                explicit[parent] = flag_field.endswith("1")
    graph.scenario.update(explicit)  # explicit flag wins over name suffix
    return graph


def save_frame_graph(graph: FrameGraph, path) -> None:
    """Inverse of load_frame_graph (edge-set and flag equality on round trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        for child, relation, parent in graph.edges:
            flag = int(graph.is_scenario(parent))
            fh.write(
                f"{graph.name_of(child)}\t{relation.value}\t{graph.name_of(parent)}"
                f"\tscenario={flag}\n"
            )
