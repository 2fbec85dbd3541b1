"""The recovered flowchart as a typed directed graph.

Nodes are the non-arrow, non-text detections; edges come from anchored
arrows. Node order is canonical (top-to-bottom, then left-to-right, then
id), which makes every downstream rendering deterministic. The JSON
export is byte-stable and round-trips exactly.
"""

import json
from dataclasses import dataclass

from .errors import SchemaError
from .fuse import object_text
from .geometry import Box, NormalizedPoint, normalized_center
from .ingest import NODE_CLASSES, ObjectClass

SCHEMA_VERSION = "1"

__all__ = ["Node", "Edge", "FlowGraph", "build_graph", "export_json", "import_json", "round6"]


def round6(x: float) -> float:
    """Round to 6 significant digits, the precision coordinates carry on disk.

    Applied at construction time so that export and re-import reproduce a
    graph exactly.
    """
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class Node:
    id: str
    category: ObjectClass
    text: str
    box: Box
    center: NormalizedPoint

    def __post_init__(self):
        if self.category not in NODE_CLASSES:
            raise ValueError(f"node {self.id}: {self.category.value} is not a node category")
        # Coordinates carry exactly the on-disk precision, so a node that
        # went through JSON compares equal to the one that produced it.
        object.__setattr__(self, "box", Box(*(round6(v) for v in self.box.as_tuple())))
        object.__setattr__(
            self, "center", NormalizedPoint(round6(self.center.x), round6(self.center.y))
        )


@dataclass(frozen=True)
class Edge:
    source_id: str
    target_id: str
    arrow_id: str
    label: str | None = None


def _canonical_node_key(node: Node):
    return (node.center.y, node.center.x, node.id)


@dataclass(frozen=True)
class FlowGraph:
    nodes: tuple
    edges: tuple
    diagnostics: tuple = ()
    source_id: str = ""

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        id_set = set(ids)
        if len(id_set) != len(ids):
            raise ValueError("duplicate node ids in graph")
        for e in self.edges:
            if e.source_id not in id_set or e.target_id not in id_set:
                raise ValueError(
                    f"edge {e.source_id}->{e.target_id} references a missing node"
                )
        keys = [_canonical_node_key(n) for n in self.nodes]
        if keys != sorted(keys):
            raise ValueError("nodes are not in canonical order; build with FlowGraph.create")

    @classmethod
    def create(cls, nodes, edges, diagnostics=(), source_id="") -> "FlowGraph":
        """Build a graph, sorting nodes and edges into canonical order."""
        nodes = tuple(sorted(nodes, key=_canonical_node_key))
        index = {n.id: i for i, n in enumerate(nodes)}
        for e in edges:
            if e.source_id not in index or e.target_id not in index:
                raise ValueError(
                    f"edge {e.source_id}->{e.target_id} references a missing node"
                )
        edges = tuple(
            sorted(
                edges,
                key=lambda e: (index[e.source_id], index[e.target_id], e.label or "", e.arrow_id),
            )
        )
        return cls(nodes, edges, tuple(diagnostics), source_id)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id!r}")

    def _check_known(self, node_id: str):
        if all(n.id != node_id for n in self.nodes):
            raise KeyError(f"no node with id {node_id!r}")

    def out_edges(self, node_id: str) -> list:
        self._check_known(node_id)
        return [e for e in self.edges if e.source_id == node_id]

    def in_edges(self, node_id: str) -> list:
        self._check_known(node_id)
        return [e for e in self.edges if e.target_id == node_id]

    def successors(self, node_id: str) -> list:
        """Distinct successor ids, in canonical node order."""
        targets = {e.target_id for e in self.out_edges(node_id)}
        return [n.id for n in self.nodes if n.id in targets]

    def predecessors(self, node_id: str) -> list:
        """Distinct predecessor ids, in canonical node order."""
        sources = {e.source_id for e in self.in_edges(node_id)}
        return [n.id for n in self.nodes if n.id in sources]


def build_graph(doc, assignments, links, extra_diagnostics=()) -> FlowGraph:
    """Assemble the typed graph for one document.

    Text-class detections carry no structure of their own and are not
    nodes; arrow-family detections become edges, not nodes. Self-loops
    are kept but flagged in the diagnostics. Links that reference
    anything other than a node (possible only with hand-built inputs)
    are dropped with a diagnostic rather than corrupting the graph.
    """
    nodes = []
    for obj in doc.objects:
        if obj.cls not in NODE_CLASSES:
            continue
        nodes.append(
            Node(
                id=obj.id,
                category=obj.cls,
                text=object_text(obj.id, assignments, doc.tokens),
                box=obj.box,
                center=normalized_center(obj.box, doc.image_w, doc.image_h),
            )
        )
    node_ids = {n.id for n in nodes}

    diagnostics = [str(d) for d in extra_diagnostics]
    edges = []
    for link in links:
        if link.source_id not in node_ids or link.target_id not in node_ids:
            diagnostics.append(
                f"dropped-link [{link.arrow_id}]: endpoint is not a node "
                f"({link.source_id} -> {link.target_id})"
            )
            continue
        if link.source_id == link.target_id:
            diagnostics.append(
                f"self-loop [{link.arrow_id}]: {link.source_id} -> {link.target_id}"
            )
        edges.append(
            Edge(
                source_id=link.source_id,
                target_id=link.target_id,
                arrow_id=link.arrow_id,
                label=link.label,
            )
        )
    return FlowGraph.create(nodes, edges, diagnostics, doc.source_id)


def export_json(g: FlowGraph) -> str:
    """Canonical textual form: fixed key order, 6-significant-digit coordinates."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "source_id": g.source_id,
        "nodes": [
            {
                "id": n.id,
                "category": n.category.value,
                "text": n.text,
                "box": [round6(v) for v in n.box.as_tuple()],
                "center": [round6(n.center.x), round6(n.center.y)],
            }
            for n in g.nodes
        ],
        "edges": [
            {
                "source": e.source_id,
                "target": e.target_id,
                "label": e.label,
                "arrow_id": e.arrow_id,
            }
            for e in g.edges
        ],
        "diagnostics": list(g.diagnostics),
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def import_json(text: str) -> FlowGraph:
    """Parse a graph JSON document produced by :func:`export_json`.

    Raises:
        SchemaError: on malformed JSON (with line/column) or schema
            violations (with the offending path).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"graph JSON is unparseable at line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaError("graph JSON must be an object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported graph schema_version {doc.get('schema_version')!r}")

    nodes = []
    for i, rec in enumerate(doc.get("nodes", [])):
        where = f"nodes[{i}]"
        try:
            category = ObjectClass.parse(rec["category"])
            box = Box(*(float(v) for v in rec["box"]))
            cx, cy = rec["center"]
            nodes.append(
                Node(
                    id=str(rec["id"]),
                    category=category,
                    text=str(rec["text"]),
                    box=box,
                    center=NormalizedPoint(float(cx), float(cy)),
                )
            )
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None

    edges = []
    for i, rec in enumerate(doc.get("edges", [])):
        where = f"edges[{i}]"
        try:
            label = rec.get("label")
            if label is not None:
                label = str(label)
            edges.append(
                Edge(
                    source_id=str(rec["source"]),
                    target_id=str(rec["target"]),
                    arrow_id=str(rec["arrow_id"]),
                    label=label,
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{where}: {exc}") from None

    diagnostics = tuple(str(d) for d in doc.get("diagnostics", []))
    try:
        return FlowGraph.create(nodes, edges, diagnostics, str(doc.get("source_id", "")))
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
