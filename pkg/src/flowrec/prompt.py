"""Prompt renderings of a recovered graph for a vision-language model.

Three variants: a graph-structured description (category, text, and
neighbors per step), a coordinate listing (every node and OCR token with
its normalized center), and a baseline that sends the bare question.
The wording here is part of the artifact's contract: golden tests pin
it byte for byte.
"""

import enum
from dataclasses import dataclass

from .geometry import normalized_center
from .graph import FlowGraph

__all__ = [
    "PromptVariant",
    "RenderedPrompt",
    "render_graph_prompt",
    "render_coord_prompt",
    "baseline_prompt",
    "render_prompt",
    "compose_vlm_input",
    "write_prompt",
    "NO_TEXT",
]

NO_TEXT = "(no text)"
NONE_ENTRY = "(none)"


class PromptVariant(enum.Enum):
    GRAPH_STRUCTURED = "graph"
    COORDINATE_RICH = "coord"
    BASELINE_NONE = "none"

    @classmethod
    def parse(cls, name: str) -> "PromptVariant":
        for member in cls:
            if member.value == name.strip().lower():
                return member
        raise ValueError(f"unknown prompt variant {name!r}")


@dataclass(frozen=True)
class RenderedPrompt:
    variant: PromptVariant
    text: str
    source_id: str = ""

    def __post_init__(self):
        if self.variant is not PromptVariant.BASELINE_NONE and not self.text:
            raise ValueError(f"{self.variant.value} prompt must have text")


def _display(text: str) -> str:
    return text if text else NO_TEXT


def _neighbor_entry(node, label) -> str:
    entry = _display(node.text)
    if label is not None:
        entry += f" (label: {label})"
    return entry


def render_graph_prompt(g: FlowGraph) -> RenderedPrompt:
    """Describe the graph one step at a time, with neighbors on both sides.

    Every node produces exactly four items: its category, its text, the
    steps feeding into it, and the steps it feeds. Edge labels ride along
    in parentheses. Node order, and the order of entries within the
    neighbor lists, follow the canonical node order.
    """
    by_id = {n.id: n for n in g.nodes}
    index = {n.id: i for i, n in enumerate(g.nodes)}

    blocks = []
    for i, node in enumerate(g.nodes, start=1):
        incoming = sorted(
            g.in_edges(node.id), key=lambda e: (index[e.source_id], e.label or "", e.arrow_id)
        )
        outgoing = sorted(
            g.out_edges(node.id), key=lambda e: (index[e.target_id], e.label or "", e.arrow_id)
        )
        preceding = "; ".join(_neighbor_entry(by_id[e.source_id], e.label) for e in incoming)
        subsequent = "; ".join(_neighbor_entry(by_id[e.target_id], e.label) for e in outgoing)
        blocks.append(
            f"Step {i}\n"
            f"Category: {node.category.value}\n"
            f"Text: {_display(node.text)}\n"
            f"Preceding steps: {preceding or NONE_ENTRY}\n"
            f"Subsequent steps: {subsequent or NONE_ENTRY}"
        )

    header = "This flowchart consists of the following steps."
    text = header + "\n\n" + "\n\n".join(blocks) if blocks else header
    return RenderedPrompt(PromptVariant.GRAPH_STRUCTURED, text, g.source_id)


def render_coord_prompt(g: FlowGraph, tokens, image_w: float, image_h: float) -> RenderedPrompt:
    """List every node and OCR token with its normalized center.

    Coordinates are printed to three decimals, x then y, origin at the
    top-left. No adjacency is included; this variant leaves the wiring
    for the model to infer from positions.
    """
    lines = ["Flowchart contents with normalized center coordinates (x, y).", ""]
    lines.append("Objects:")
    if g.nodes:
        for node in g.nodes:
            lines.append(
                f'- {node.category.value} "{_display(node.text)}" at '
                f"({node.center.x:.3f}, {node.center.y:.3f})"
            )
    else:
        lines.append(f"- {NONE_ENTRY}")

    lines.append("")
    lines.append("Text fragments:")
    placed = []
    for t in tokens:
        c = normalized_center(t.box, image_w, image_h)
        placed.append((c.y, c.x, t.id, t.text, c))
    placed.sort(key=lambda item: item[:3])
    if placed:
        for _, _, _, text, c in placed:
            lines.append(f'- "{text}" at ({c.x:.3f}, {c.y:.3f})')
    else:
        lines.append(f"- {NONE_ENTRY}")

    return RenderedPrompt(PromptVariant.COORDINATE_RICH, "\n".join(lines), g.source_id)


def baseline_prompt(source_id: str = "") -> RenderedPrompt:
    """The no-context variant: nothing is prepended to the question."""
    return RenderedPrompt(PromptVariant.BASELINE_NONE, "", source_id)


def render_prompt(variant: PromptVariant, g: FlowGraph, tokens=(), image_w=0, image_h=0):
    if variant is PromptVariant.GRAPH_STRUCTURED:
        return render_graph_prompt(g)
    if variant is PromptVariant.COORDINATE_RICH:
        return render_coord_prompt(g, tokens, image_w, image_h)
    return baseline_prompt(g.source_id)


def compose_vlm_input(question: str, prompt: RenderedPrompt) -> str:
    """The full text message sent alongside the image."""
    if prompt.variant is PromptVariant.BASELINE_NONE:
        return question
    return f"{prompt.text}\n\n{question}"


def write_prompt(path, prompt: RenderedPrompt):
    """Write prompt text as UTF-8 with a trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(prompt.text)
        if not prompt.text.endswith("\n"):
            fh.write("\n")
