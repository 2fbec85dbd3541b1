"""Shared fixture builders for the test suite."""

from flowrec.geometry import Box, NormalizedPoint
from flowrec.graph import Edge, FlowGraph, Node
from flowrec.ingest import ObjectClass, OcrToken

IMAGE_W, IMAGE_H = 1000, 800


def _node(nid, category, text, cx, cy, w=160, h=60):
    return Node(
        id=nid,
        category=category,
        text=text,
        box=Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
        center=NormalizedPoint(cx / IMAGE_W, cy / IMAGE_H),
    )


def inventory_graph() -> FlowGraph:
    """A small order-fulfilment chart: one decision, one merge."""
    nodes = [
        _node("n1", ObjectClass.TERMINATOR, "Start", 500, 80),
        _node("n2", ObjectClass.PROCESS, "Check inventory", 500, 240),
        _node("n3", ObjectClass.DECISION, "In stock?", 500, 400),
        _node("n4", ObjectClass.PROCESS, "Ship order", 300, 560),
        _node("n5", ObjectClass.PROCESS, "Reorder", 700, 560),
        _node("n6", ObjectClass.TERMINATOR, "End", 500, 720),
    ]
    edges = [
        Edge("n1", "n2", "a1"),
        Edge("n2", "n3", "a2"),
        Edge("n3", "n4", "a3", "Yes"),
        Edge("n3", "n5", "a4", "No"),
        Edge("n4", "n6", "a5"),
        Edge("n5", "n6", "a6"),
    ]
    return FlowGraph.create(nodes, edges, source_id="inventory-demo")


def inventory_tokens() -> list:
    """OCR tokens for the inventory chart, including the two branch labels."""
    return [
        OcrToken("t1", "Start", Box(460, 70, 540, 90)),
        OcrToken("t2", "Check inventory", Box(430, 230, 570, 250)),
        OcrToken("t3", "In stock?", Box(455, 390, 545, 410)),
        OcrToken("t4", "Ship order", Box(255, 550, 345, 570)),
        OcrToken("t5", "Reorder", Box(665, 550, 735, 570)),
        OcrToken("t6", "End", Box(480, 710, 520, 730)),
        OcrToken("t7", "Yes", Box(370, 470, 400, 486)),
        OcrToken("t8", "No", Box(610, 470, 636, 486)),
    ]
