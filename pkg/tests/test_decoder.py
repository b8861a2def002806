"""Decoder: NMS, connection scoring, matching and assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbpose.decoder import (
    DecoderParams,
    PartCandidate,
    ScoredConnection,
    assemble,
    decode,
    match_limb,
    nms,
    score_connection,
)
from wbpose.encoder import AnnotatedScene, EncoderParams, Person, Visibility, encode
from wbpose.skeleton import PartGroup, load_topology

from oracles import oracle_greedy_match, oracle_nms

L = Visibility.LABELED


def gaussian_channel(h, w, peaks, sigma=1.5):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ch = np.zeros((h, w))
    for px, py, amp in peaks:
        ch = np.maximum(ch, amp * np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / sigma**2))
    return ch


def one_part_topo():
    return load_topology({
        "manifest_version": 1,
        "background_channel": False,
        "parts": [{"id": 0, "name": "nose", "group": "body", "side": "center"}],
        "limbs": [],
        "anchors": [],
        "oks_kappa": {"0": 0.026},
    })


def two_part_topo():
    return load_topology({
        "manifest_version": 1,
        "background_channel": False,
        "parts": [
            {"id": 0, "name": "neck", "group": "body", "side": "center"},
            {"id": 1, "name": "nose", "group": "body", "side": "center"},
        ],
        "limbs": [{"id": 0, "src": 0, "dst": 1}],
        "anchors": [],
        "oks_kappa": {"0": 0.079, "1": 0.026},
    })


def test_nms_two_gaussians_against_grid_scan_oracle():
    topo = one_part_topo()
    ch = gaussian_channel(20, 20, [(5.0, 9.0, 1.0), (11.0, 9.0, 0.8)])
    params = DecoderParams(nms_threshold=0.1, nms_window=3)
    cands = nms(ch[None], topo, params)
    expected = oracle_nms(ch, 0.1, 3)
    assert len(cands) == len(expected) == 2
    got = sorted((round(c.y), round(c.x)) for c in cands)
    want = sorted((i, j) for i, j, _ in expected)
    assert got == want
    for c in cands:
        true = (5.0, 9.0) if c.x < 8 else (11.0, 9.0)
        assert np.hypot(c.x - true[0], c.y - true[1]) <= 0.5


def test_nms_subpixel_refinement_recovers_offsets():
    topo = one_part_topo()
    ch = gaussian_channel(20, 20, [(7.3, 9.6, 1.0)], sigma=1.2)
    (cand,) = nms(ch[None], topo, DecoderParams(nms_threshold=0.1))
    # Log-space quadratic fit is exact for an isolated Gaussian.
    assert abs(cand.x - 7.3) < 1e-6
    assert abs(cand.y - 9.6) < 1e-6


def test_nms_plateau_is_not_a_strict_maximum():
    topo = one_part_topo()
    ch = np.zeros((9, 9))
    ch[4, 4] = ch[4, 5] = 0.9
    assert nms(ch[None], topo, DecoderParams(nms_threshold=0.1)) == []


def test_nms_candidates_sorted_and_ids_sequential():
    topo = one_part_topo()
    ch = gaussian_channel(24, 24, [(5.0, 5.0, 0.6), (16.0, 16.0, 1.0), (5.0, 16.0, 0.8)])
    cands = nms(ch[None], topo, DecoderParams(nms_threshold=0.1))
    scores = [c.score for c in cands]
    assert scores == sorted(scores, reverse=True)
    assert [c.candidate_id for c in cands] == list(range(len(cands)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), thr=st.floats(0.05, 0.6))
def test_nms_threshold_monotonicity(seed, thr):
    topo = one_part_topo()
    rng = np.random.default_rng(seed)
    peaks = [(rng.uniform(2, 17), rng.uniform(2, 17), rng.uniform(0.3, 1.0)) for _ in range(4)]
    ch = gaussian_channel(20, 20, peaks)
    low = nms(ch[None], topo, DecoderParams(nms_threshold=thr))
    high = nms(ch[None], topo, DecoderParams(nms_threshold=min(thr * 2, 0.95)))
    assert len(high) <= len(low)


def test_window_must_be_odd():
    with pytest.raises(ValueError):
        DecoderParams(nms_window=4)


def scene_tensors(topo, people, size=(96, 96)):
    sc = AnnotatedScene(image_size=size, people=people, coverage=frozenset(PartGroup))
    return encode(sc, topo, EncoderParams(stride=8))


def test_connection_true_pair_scores_high_and_valid():
    topo = two_part_topo()
    t = scene_tensors(topo, [Person({0: (16.0, 40.0, L), 1: (72.0, 40.0, L)})])
    params = DecoderParams()
    cands = nms(t.s_star, topo, params)
    src = next(c for c in cands if c.part_id == 0)
    dst = next(c for c in cands if c.part_id == 1)
    conn = score_connection(t.l_star, topo.limbs[0], src, dst, params)
    assert conn.valid
    assert conn.paf_score > 0.9


def test_connection_zero_length_invalid():
    topo = two_part_topo()
    t = scene_tensors(topo, [Person({0: (16.0, 40.0, L), 1: (72.0, 40.0, L)})])
    c = PartCandidate(0, 0, 2.0, 5.0, 1.0)
    conn = score_connection(t.l_star, topo.limbs[0], c, PartCandidate(1, 1, 2.0, 5.0, 1.0))
    assert conn.paf_score == 0.0 and not conn.valid


def test_true_pairs_outrank_cross_pairs_two_people():
    topo = two_part_topo()
    t = scene_tensors(
        topo,
        [
            Person({0: (16.0, 24.0, L), 1: (72.0, 24.0, L)}),
            Person({0: (16.0, 72.0, L), 1: (72.0, 72.0, L)}),
        ],
    )
    params = DecoderParams()
    cands = nms(t.s_star, topo, params)
    srcs = [c for c in cands if c.part_id == 0]
    dsts = [c for c in cands if c.part_id == 1]
    assert len(srcs) == len(dsts) == 2
    conns = {
        (s.candidate_id, d.candidate_id): score_connection(t.l_star, topo.limbs[0], s, d, params)
        for s in srcs
        for d in dsts
    }
    true_pairs = [
        (s.candidate_id, d.candidate_id)
        for s in srcs
        for d in dsts
        if abs(s.y - d.y) < 1.0
    ]
    cross_pairs = [k for k in conns if k not in true_pairs]
    worst_true = min(conns[k].paf_score for k in true_pairs)
    best_cross = max(conns[k].paf_score for k in cross_pairs)
    assert worst_true > best_cross
    assert all(conns[k].valid for k in true_pairs)
    assert all(not conns[k].valid for k in cross_pairs)


def test_match_limb_equals_sort_and_sweep_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        scores = rng.permutation(16).astype(float) / 16.0
        conns = [
            ScoredConnection(0, i, 100 + j, float(scores[i * 4 + j]), True)
            for i in range(4)
            for j in range(4)
        ]
        got = [(c.src_candidate_id, c.dst_candidate_id) for c in match_limb(conns)]
        want = oracle_greedy_match(
            [(c.paf_score, c.src_candidate_id, c.dst_candidate_id) for c in conns]
        )
        assert got == want


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), ns=st.integers(1, 5), nd=st.integers(1, 5))
def test_match_limb_exclusivity_and_validity(seed, ns, nd):
    rng = np.random.default_rng(seed)
    conns = [
        ScoredConnection(3, i, 50 + j, float(rng.random()), bool(rng.random() < 0.8))
        for i in range(ns)
        for j in range(nd)
    ]
    acc = match_limb(conns)
    assert all(c.valid for c in acc)
    srcs = [c.src_candidate_id for c in acc]
    dsts = [c.dst_candidate_id for c in acc]
    assert len(set(srcs)) == len(srcs) and len(set(dsts)) == len(dsts)
    assert len(acc) <= min(ns, len(set(d.dst_candidate_id for d in conns)))


def wrist_fixture(topo):
    """Candidates for elbow -> wrist -> thumb chain around anchor l_wrist."""
    elbow = topo.part_by_name("l_elbow").part_id
    wrist = topo.part_by_name("l_wrist").part_id
    thumb = topo.part_by_name("hand_l_thumb_1").part_id
    body_limb = next(l for l in topo.limbs if l.src == elbow and l.dst == wrist)
    hand_limb = next(l for l in topo.limbs if l.src == wrist and l.dst == thumb)
    cands = [
        PartCandidate(0, elbow, 1.0, 1.0, 0.9),
        PartCandidate(1, wrist, 2.0, 2.0, 0.9),
        PartCandidate(2, thumb, 3.0, 3.0, 0.9),
        PartCandidate(3, wrist, 9.0, 9.0, 0.8),  # a second wrist candidate
    ]
    return cands, body_limb, hand_limb


def test_assembly_merges_groups_through_shared_anchor_candidate(topo):
    cands, body_limb, hand_limb = wrist_fixture(topo)
    accepted = [
        ScoredConnection(body_limb.limb_id, 0, 1, 0.9, True),
        ScoredConnection(hand_limb.limb_id, 1, 2, 0.8, True),
    ]
    poses = assemble(cands, accepted, topo, DecoderParams(min_parts=2, min_score=0.0))
    merged = [p for p in poses if len(p.parts) == 3]
    assert len(merged) == 1
    assert set(merged[0].candidate_ids.values()) == {0, 1, 2}


def test_assembly_keeps_distinct_wrist_candidates_apart(topo):
    cands, body_limb, hand_limb = wrist_fixture(topo)
    accepted = [
        ScoredConnection(body_limb.limb_id, 0, 1, 0.9, True),
        ScoredConnection(hand_limb.limb_id, 3, 2, 0.8, True),  # hand hangs off wrist #2
    ]
    poses = assemble(cands, accepted, topo, DecoderParams(min_parts=2, min_score=0.0))
    assert len(poses) == 2
    sets = sorted((set(p.candidate_ids.values()) for p in poses), key=min)
    assert sets == [{0, 1}, {2, 3}]


def test_assembly_refuses_conflicting_union(topo):
    # Two clusters both holding a (different) wrist candidate must not merge.
    elbow = topo.part_by_name("l_elbow").part_id
    wrist = topo.part_by_name("l_wrist").part_id
    shoulder = topo.part_by_name("l_shoulder").part_id
    limb_se = next(l for l in topo.limbs if l.src == shoulder and l.dst == elbow)
    limb_ew = next(l for l in topo.limbs if l.src == elbow and l.dst == wrist)
    cands = [
        PartCandidate(0, shoulder, 0.0, 0.0, 1.0),
        PartCandidate(1, wrist, 1.0, 1.0, 1.0),
        PartCandidate(2, elbow, 2.0, 2.0, 1.0),
        PartCandidate(3, wrist, 3.0, 3.0, 1.0),
    ]
    accepted = [
        ScoredConnection(limb_ew.limb_id, 2, 3, 0.9, True),  # elbow joins wrist #3
        ScoredConnection(limb_se.limb_id, 0, 2, 0.5, True),  # shoulder+wrist #1 would conflict
    ]
    clusters_before = assemble(
        [cands[0], cands[1]], [], topo, DecoderParams(min_parts=1, min_score=0.0)
    )
    assert len(clusters_before) == 2
    # Pre-joining shoulder and wrist #1 by hand: simulate via an extra limb
    # connecting them is impossible in the tree, so instead check the direct
    # conflict: cluster {elbow, wrist3} + cluster {wrist1} merge fine, but a
    # cluster already holding wrist1 refuses to absorb wrist3.
    poses = assemble(cands, accepted, topo, DecoderParams(min_parts=1, min_score=0.0))
    by_size = sorted(len(p.parts) for p in poses)
    assert by_size == [1, 3]  # wrist #1 alone; shoulder-elbow-wrist3 together


def test_decode_single_person_recovers_all_parts(topo):
    template = topo.template_pose
    people = [
        Person({pid: (240.0 + 260.0 * x, 40.0 + 260.0 * y, L) for pid, (x, y) in template.items()})
    ]
    sc = AnnotatedScene(image_size=(480, 480), people=people, coverage=frozenset(PartGroup))
    t = encode(sc, topo, EncoderParams(stride=8))
    poses = decode(t, topo, DecoderParams())
    assert len(poses) == 1
    assert set(poses[0].parts) == set(range(topo.n_parts))
    for pid, (x, y, _) in poses[0].parts.items():
        tx, ty = people[0].parts[pid][0] / 8.0, people[0].parts[pid][1] / 8.0
        assert np.hypot(x - tx, y - ty) <= 0.5


def test_decode_deterministic(topo):
    template = topo.template_pose
    people = [
        Person({pid: (120.3 + 199.7 * x, 30.6 + 199.7 * y, L) for pid, (x, y) in template.items()}),
        Person({pid: (330.1 + 199.7 * x, 240.4 + 199.7 * y, L) for pid, (x, y) in template.items()}),
    ]
    sc = AnnotatedScene(image_size=(480, 480), people=people, coverage=frozenset(PartGroup))
    t = encode(sc, topo, EncoderParams(stride=8))
    a = decode(t, topo, DecoderParams())
    b = decode(t, topo, DecoderParams())
    assert len(a) == len(b) == 2
    for pa, pb in zip(a, b):
        assert pa.parts == pb.parts and pa.person_score == pb.person_score
    c = decode(t, topo, DecoderParams(threads=4))
    for pa, pc in zip(a, c):
        assert pa.parts == pc.parts


def test_min_parts_and_min_score_filter():
    topo = two_part_topo()
    t = scene_tensors(topo, [Person({0: (16.0, 40.0, L), 1: (72.0, 40.0, L)})])
    # Default min_parts=4 drops the 2-part pose entirely.
    assert decode(t, topo, DecoderParams()) == []
    kept = decode(t, topo, DecoderParams(min_parts=2, min_score=0.5))
    assert len(kept) == 1 and set(kept[0].parts) == {0, 1}
    dropped = decode(t, topo, DecoderParams(min_parts=2, min_score=1e9))
    assert dropped == []
