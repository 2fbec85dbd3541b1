"""End-to-end wiring: a parsed document in, a typed graph out."""

from . import assembly, fuse
from .assembly import AssemblyConfig
from .graph import FlowGraph, build_graph
from .ingest import NODE_CLASSES, Document, ObjectClass

__all__ = ["reconstruct"]


def reconstruct(
    doc: Document,
    cfg: AssemblyConfig | None = None,
    *,
    post_correct: bool = False,
    cluster_fragments: bool = False,
    cluster_gap: float = 8.0,
) -> FlowGraph:
    """Run text fusion, arrow assembly, and graph construction on one document.

    The two optional passes are off by default: ``post_correct``
    revisits ambiguous endpoint links, ``cluster_fragments`` merges
    over-segmented OCR tokens (with ``cluster_gap`` in pixels) before
    fusion.
    """
    if cfg is None:
        cfg = AssemblyConfig()
    w, h = doc.image_w, doc.image_h

    tokens = list(doc.tokens)
    if cluster_fragments:
        tokens = fuse.cluster_fragments(tokens, cluster_gap)

    assignments = fuse.assign_texts(tokens, doc.objects)

    arrows = doc.objects_of(ObjectClass.ARROW)
    starts = doc.objects_of(ObjectClass.ARROW_START)
    ends = doc.objects_of(ObjectClass.ARROW_END)
    anchored, unmatched = assembly.anchor_arrows(arrows, starts, ends, cfg, w, h)

    assigned_ids = {a.token_id for a in assignments if a.object_id is not None}
    unassigned_tokens = [t for t in tokens if t.id not in assigned_ids]
    anchored, unattached = assembly.attach_edge_labels(unassigned_tokens, anchored, cfg, w, h)

    node_objects = [o for o in doc.objects if o.cls in NODE_CLASSES]
    links, link_diags = assembly.link_objects(node_objects, anchored, cfg, w, h)
    if post_correct:
        links = assembly.post_correct(node_objects, anchored, links, cfg, w, h)

    diagnostics = list(link_diags)
    for arrow_id in unmatched:
        diagnostics.append(f"unmatched-arrow [{arrow_id}]: no feasible start/end keypoint pair")
    for token_id in unattached:
        diagnostics.append(f"unattached-token [{token_id}]: no arrow within labeling range")

    # A doc whose tokens were clustered sees merged ids; build the graph
    # against the working token list, not the raw document tokens.
    working = Document(
        image_w=w,
        image_h=h,
        objects=doc.objects,
        tokens=tuple(tokens),
        source_id=doc.source_id,
    )
    return build_graph(working, assignments, links, diagnostics)
