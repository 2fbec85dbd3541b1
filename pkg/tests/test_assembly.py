"""Arrow anchoring, label attachment, linking, and the greedy-vs-exhaustive oracle."""

import itertools
import random

import pytest

from flowrec.assembly import (
    AnchoredArrow,
    AssemblyConfig,
    anchor_arrows,
    attach_edge_labels,
    link_objects,
    nearest_arrow,
    post_correct,
)
from flowrec.geometry import Box, edge_distance, iou, near_edge, span_box
from flowrec.ingest import DetectedObject, ObjectClass, OcrToken

# Pixel-denominated thresholds keep the hand examples readable.
PX = AssemblyConfig(eps_arrow=5, eps_object=5, eps_label=20, eps_relative=False)
W, H = 400, 400


def arrow(aid, box):
    return DetectedObject(aid, ObjectClass.ARROW, box, 1.0)


def start(sid, cx, cy, r=4):
    return DetectedObject(sid, ObjectClass.ARROW_START, Box(cx - r, cy - r, cx + r, cy + r), 1.0)


def end(eid, cx, cy, r=4):
    return DetectedObject(eid, ObjectClass.ARROW_END, Box(cx - r, cy - r, cx + r, cy + r), 1.0)


def vertical_arrow_instance():
    """One downward arrow from (50, 100) to (50, 200) with keypoints on its box."""
    a = arrow("a1", Box(46, 100, 54, 200))
    s = start("s1", 50, 100)
    e = end("e1", 50, 200)
    return a, s, e


class TestAnchorArrows:
    def test_single_clean_match(self):
        a, s, e = vertical_arrow_instance()
        anchored, unmatched = anchor_arrows([a], [s], [e], PX, W, H)
        assert unmatched == []
        assert len(anchored) == 1
        m = anchored[0]
        assert (m.arrow_id, m.start_id, m.end_id) == ("a1", "s1", "e1")
        assert m.span_iou > 0.5

    def test_far_keypoint_is_infeasible(self):
        a, s, _ = vertical_arrow_instance()
        far_end = end("e1", 300, 300)
        anchored, unmatched = anchor_arrows([a], [s], [far_end], PX, W, H)
        assert anchored == []
        assert unmatched == ["a1"]

    def test_span_iou_exactly_at_threshold_is_infeasible(self):
        # Keypoints hug one end of the arrow box: both centers are near
        # the perimeter but their span covers almost none of the arrow.
        a = arrow("a1", Box(0, 0, 10, 200))
        s = start("s1", 5, 0)
        e = end("e1", 5, 20)
        span = span_box(s.box, e.box)
        assert iou(span, a.box) < 0.5
        anchored, unmatched = anchor_arrows([a], [s], [e], PX, W, H)
        assert unmatched == ["a1"]

    def test_one_to_one_consumption(self):
        # Two parallel arrows, two start and two end keypoints; each
        # keypoint must be used exactly once.
        a1 = arrow("a1", Box(46, 100, 54, 200))
        a2 = arrow("a2", Box(146, 100, 154, 200))
        s1, e1 = start("s1", 50, 100), end("e1", 50, 200)
        s2, e2 = start("s2", 150, 100), end("e2", 150, 200)
        anchored, unmatched = anchor_arrows([a1, a2], [s1, s2], [e1, e2], PX, W, H)
        assert unmatched == []
        pairs = {(m.arrow_id, m.start_id, m.end_id) for m in anchored}
        assert pairs == {("a1", "s1", "e1"), ("a2", "s2", "e2")}

    def test_tie_broken_by_arrow_id(self):
        # Two identical arrows compete for one keypoint pair.
        a1 = arrow("a1", Box(46, 100, 54, 200))
        a2 = arrow("a2", Box(46, 100, 54, 200))
        s, e = start("s1", 50, 100), end("e1", 50, 200)
        anchored, unmatched = anchor_arrows([a2, a1], [s], [e], PX, W, H)
        assert [m.arrow_id for m in anchored] == ["a1"]
        assert unmatched == ["a2"]

    def test_greedy_prefers_higher_span_iou(self):
        # One arrow, two end candidates: e_tip spans nearly the whole
        # arrow box, e_mid stops partway down the shaft.
        a = arrow("a1", Box(46, 100, 54, 200))
        s = start("s1", 50, 100)
        e_mid = end("e_mid", 50, 160)
        e_tip = end("e_tip", 50, 196)
        span_mid = iou(span_box(s.box, e_mid.box), a.box)
        span_tip = iou(span_box(s.box, e_tip.box), a.box)
        assert span_tip > span_mid > 0.5
        anchored, _ = anchor_arrows([a], [s], [e_mid, e_tip], PX, W, H)
        assert anchored[0].end_id == "e_tip"

    def test_output_order_follows_input_arrows(self):
        a1 = arrow("z-arrow", Box(46, 100, 54, 200))
        a2 = arrow("b-arrow", Box(146, 100, 154, 200))
        s1, e1 = start("s1", 50, 100), end("e1", 50, 200)
        s2, e2 = start("s2", 150, 100), end("e2", 150, 200)
        anchored, _ = anchor_arrows([a1, a2], [s1, s2], [e1, e2], PX, W, H)
        assert [m.arrow_id for m in anchored] == ["z-arrow", "b-arrow"]


# ---------------------------------------------------------------------------
# Exhaustive-search oracle: maximize match count, then total span IoU.
# ---------------------------------------------------------------------------

def feasible_triples(arrows, starts, ends, cfg, w, h):
    eps = cfg.resolve(w, h)
    triples = []
    for ai, a in enumerate(arrows):
        for si, s in enumerate(starts):
            if not near_edge(s.box, a.box, eps.arrow):
                continue
            for ei, e in enumerate(ends):
                if not near_edge(e.box, a.box, eps.arrow):
                    continue
                overlap = iou(span_box(s.box, e.box), a.box)
                if overlap > cfg.span_iou_min:
                    triples.append((ai, si, ei, overlap))
    return triples


def exhaustive_best(arrows, starts, ends, cfg, w, h):
    """Best (count, total IoU) over every one-to-one subset of feasible triples."""
    triples = feasible_triples(arrows, starts, ends, cfg, w, h)
    best = (0, 0.0)

    def extend(i, used_a, used_s, used_e, count, total):
        nonlocal best
        if (count, total) > best:
            best = (count, total)
        if i == len(triples):
            return
        remaining = len({t[0] for t in triples[i:] if t[0] not in used_a})
        if count + remaining < best[0]:
            return
        ai, si, ei, overlap = triples[i]
        if ai not in used_a and si not in used_s and ei not in used_e:
            extend(
                i + 1,
                used_a | {ai},
                used_s | {si},
                used_e | {ei},
                count + 1,
                total + overlap,
            )
        extend(i + 1, used_a, used_s, used_e, count, total)

    extend(0, frozenset(), frozenset(), frozenset(), 0, 0.0)
    return best


def random_instance(rng, max_arrows=4):
    """A structured random instance: arrows with jittered keypoints, plus strays."""
    arrows, starts, ends = [], [], []
    n = rng.randint(1, max_arrows)
    for i in range(n):
        x = rng.uniform(20, 340)
        y = rng.uniform(20, 240)
        length = rng.uniform(40, 120)
        a_box = Box(x - 4, y, x + 4, y + length)
        arrows.append(arrow(f"a{i}", a_box))
        jx, jy = rng.uniform(-6, 6), rng.uniform(-6, 6)
        starts.append(start(f"s{i}", x + jx, y + jy))
        jx, jy = rng.uniform(-6, 6), rng.uniform(-6, 6)
        ends.append(end(f"e{i}", x + jx, y + length + jy))
    # Occasionally add an unrelated keypoint.
    if rng.random() < 0.3:
        starts.append(start("s_stray", rng.uniform(0, 400), rng.uniform(300, 400)))
    if rng.random() < 0.3:
        ends.append(end("e_stray", rng.uniform(0, 400), rng.uniform(300, 400)))
    return arrows, starts, ends


class TestGreedyAgainstExhaustive:
    def test_match_count_is_optimal_on_small_instances(self):
        rng = random.Random(7)
        mismatches = 0
        for trial in range(300):
            arrows, starts, ends = random_instance(rng)
            anchored, _ = anchor_arrows(arrows, starts, ends, PX, W, H)
            best_count, _ = exhaustive_best(arrows, starts, ends, PX, W, H)
            if len(anchored) != best_count:
                mismatches += 1
        # Greedy can in principle trail the optimum; it must be rare.
        assert mismatches <= 3


class TestAttachEdgeLabels:
    def _anchored(self):
        a, s, e = vertical_arrow_instance()
        anchored, _ = anchor_arrows([a], [s], [e], PX, W, H)
        return anchored

    def test_label_within_radius_attaches(self):
        anchored = self._anchored()
        label = OcrToken("t1", "Yes", Box(56, 145, 80, 155))  # just right of the shaft
        out, unattached = attach_edge_labels([label], anchored, PX, W, H)
        assert unattached == []
        assert out[0].label == "Yes"

    def test_label_too_far_is_reported(self):
        anchored = self._anchored()
        label = OcrToken("t1", "Yes", Box(300, 300, 330, 312))
        out, unattached = attach_edge_labels([label], anchored, PX, W, H)
        assert out[0].label is None
        assert unattached == ["t1"]

    def test_multiple_tokens_concatenate_in_reading_order(self):
        anchored = self._anchored()
        t1 = OcrToken("t1", "not", Box(56, 145, 70, 155))
        t2 = OcrToken("t2", "available", Box(66, 158, 80, 168))
        out, _ = attach_edge_labels([t2, t1], anchored, PX, W, H)
        assert out[0].label == "not available"

    def test_point_inside_two_boxes_prefers_smaller(self):
        big = AnchoredArrow("big", Box(0, 0, 200, 200), "s1", Box(0, 0, 8, 8), "e1", Box(192, 192, 200, 200), 0.9)
        small = AnchoredArrow("small", Box(90, 90, 110, 110), "s2", Box(90, 90, 98, 98), "e2", Box(102, 102, 110, 110), 0.9)
        from flowrec.geometry import Point

        chosen, dist = nearest_arrow(Point(100, 100), [big, small])
        assert chosen.arrow_id == "small"
        assert dist == 0.0


class TestLinkObjects:
    def _scene(self):
        src = DetectedObject("proc", ObjectClass.PROCESS, Box(20, 40, 80, 100), 1.0)
        tgt = DetectedObject("term", ObjectClass.TERMINATOR, Box(20, 200, 80, 260), 1.0)
        a = arrow("a1", Box(46, 100, 54, 200))
        s = start("s1", 50, 100)
        e = end("e1", 50, 200)
        anchored, _ = anchor_arrows([a], [s], [e], PX, W, H)
        return [src, tgt], anchored

    def test_links_nearest_boundaries(self):
        objects, anchored = self._scene()
        links, diags = link_objects(objects, anchored, PX, W, H)
        assert diags == []
        assert len(links) == 1
        assert (links[0].source_id, links[0].target_id) == ("proc", "term")

    def test_dangling_arrow_produces_diagnostic(self):
        _, anchored = self._scene()
        links, diags = link_objects([], anchored, PX, W, H)
        assert links == []
        assert len(diags) == 1
        assert diags[0].code == "dangling-arrow"

    def test_arrow_class_objects_are_never_candidates(self):
        objects, anchored = self._scene()
        decoy = DetectedObject("decoy", ObjectClass.ARROW_END, Box(40, 90, 60, 110), 1.0)
        links, _ = link_objects(objects + [decoy], anchored, PX, W, H)
        assert links[0].source_id == "proc"


class TestPostCorrect:
    def _ambiguous_scene(self):
        # Endpoint at the origin; A's boundary is 2.0 away, B's is 2.4
        # away (within the 25% margin) but B overlaps the endpoint box
        # far better.
        a_obj = DetectedObject("A", ObjectClass.PROCESS, Box(2, -1, 8, 1), 1.0)
        b_obj = DetectedObject("B", ObjectClass.PROCESS, Box(-6, -4, -2.4, 4), 1.0)
        tgt = DetectedObject("T", ObjectClass.TERMINATOR, Box(-10, 96, 10, 120), 1.0)
        anchored = [
            AnchoredArrow("a1", Box(-4, -4, 4, 100), "s1", Box(-4, -4, 4, 4), "e1", Box(-4, 92, 4, 100), 0.9)
        ]
        links, _ = link_objects([a_obj, b_obj, tgt], anchored, PX, W, H)
        return [a_obj, b_obj, tgt], anchored, links

    def test_prefers_overlapping_candidate(self):
        objects, anchored, links = self._ambiguous_scene()
        assert links[0].source_id == "A"  # nearest by boundary distance
        corrected = post_correct(objects, anchored, links, PX, W, H)
        assert corrected[0].source_id == "B"

    def test_idempotent(self):
        objects, anchored, links = self._ambiguous_scene()
        once = post_correct(objects, anchored, links, PX, W, H)
        twice = post_correct(objects, anchored, once, PX, W, H)
        assert once == twice

    def test_unambiguous_links_untouched(self):
        src = DetectedObject("proc", ObjectClass.PROCESS, Box(20, 40, 80, 100), 1.0)
        tgt = DetectedObject("term", ObjectClass.TERMINATOR, Box(20, 200, 80, 260), 1.0)
        a, s, e = vertical_arrow_instance()
        anchored, _ = anchor_arrows([a], [s], [e], PX, W, H)
        links, _ = link_objects([src, tgt], anchored, PX, W, H)
        assert post_correct([src, tgt], anchored, links, PX, W, H) == links


class TestConfig:
    def test_relative_resolution_scales_by_diagonal(self):
        cfg = AssemblyConfig()  # 2% / 2% / 5%, relative
        eps = cfg.resolve(300, 400)  # diagonal 500
        assert eps.arrow == pytest.approx(10.0)
        assert eps.object == pytest.approx(10.0)
        assert eps.label == pytest.approx(25.0)

    def test_absolute_mode_passes_through(self):
        eps = PX.resolve(300, 400)
        assert (eps.arrow, eps.object, eps.label) == (5, 5, 20)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            AssemblyConfig(eps_arrow=-1)
        with pytest.raises(ValueError):
            AssemblyConfig(span_iou_min=1.5)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
