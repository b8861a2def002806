"""Map-to-skeleton decoding: peaks, limb scoring, matching and assembly.

Pipeline: strict-local-max NMS per part channel with subpixel refinement,
line-integral scoring of every candidate pair along each limb's PAF, greedy
bipartite matching per limb, then union-find assembly of accepted
connections into per-person clusters. Anchor parts (wrists, ankles, eyes)
carry a single candidate shared by the body and the non-body group, so
clusters meeting at the same anchor candidate merge by identity.

All positions are subpixel map-cell coordinates (x, y); multiply by the grid
stride to get pixels. The decode is deterministic: candidates are ordered by
descending score with (row, col) tie-breaks, connections by descending score
with candidate-id tie-breaks.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import binary_dilation, maximum_filter
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .encoder import TargetTensors
from .skeleton import Limb, SkeletonTopology


@dataclass(frozen=True)
class DecoderParams:
    nms_threshold: float = 0.05
    nms_window: int = 3
    n_samples: int = 10
    sample_threshold: float = 0.05
    valid_fraction: float = 0.8
    min_parts: int = 4
    min_score: float | None = None  # None -> 0.2 * min_parts
    threads: int = 1

    def __post_init__(self) -> None:
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be odd and >= 3")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not 0.0 < self.valid_fraction <= 1.0:
            raise ValueError("valid_fraction must be in (0, 1]")

    @property
    def resolved_min_score(self) -> float:
        return 0.2 * self.min_parts if self.min_score is None else self.min_score

    @property
    def min_valid_samples(self) -> int:
        # ceil with a guard against float dust in valid_fraction * n_samples
        return math.ceil(self.valid_fraction * self.n_samples - 1e-9)


@dataclass(frozen=True)
class PartCandidate:
    candidate_id: int
    part_id: int
    x: float  # subpixel map coords
    y: float
    score: float


@dataclass(frozen=True)
class ScoredConnection:
    limb_id: int
    src_candidate_id: int
    dst_candidate_id: int
    paf_score: float
    valid: bool


@dataclass
class Pose:
    # part_id -> (x, y, score), map coords
    parts: dict[int, tuple[float, float, float]]
    candidate_ids: dict[int, int]
    person_score: float


@dataclass
class DecodeStats:
    candidates: int = 0
    connections_scored: int = 0
    connections_valid: int = 0
    nms_ns: int = 0
    scoring_ns: int = 0
    assembly_ns: int = 0


def _parabola_offsets(vl: np.ndarray, vc: np.ndarray, vr: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Vertex of the 1D quadratic fit through the 3-neighborhood, clamped to
    +-0.5. Fit in log space where all three values are positive (exact for
    Gaussian bumps), otherwise on the raw values."""
    pos = ok & (vl > 0.0) & (vc > 0.0) & (vr > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        al = np.log(np.where(pos, vl, 1.0))
        ac = np.log(np.where(pos, vc, 1.0))
        ar = np.log(np.where(pos, vr, 1.0))
        den_log = al + ar - 2.0 * ac
        d_log = np.where(np.abs(den_log) > 1e-12, (al - ar) / (2.0 * den_log), 0.0)
        den_lin = vl + vr - 2.0 * vc
        d_lin = np.where(np.abs(den_lin) > 1e-12, (vl - vr) / (2.0 * den_lin), 0.0)
    delta = np.where(pos, d_log, np.where(ok, d_lin, 0.0))
    return np.clip(delta, -0.5, 0.5)


def _nms_arrays(conf: np.ndarray, topo: SkeletonTopology, params: DecoderParams):
    """Flat candidate arrays (part_ids, xs, ys, scores), part-major and
    ordered by (-score, y, x) within each part; candidate id == row index."""
    n_parts = topo.n_parts
    parts_maps = np.asarray(conf, dtype=np.float64)[:n_parts]
    w = params.nms_window
    footprint = np.ones((1, w, w), dtype=bool)
    footprint[0, w // 2, w // 2] = False
    neighbor_max = maximum_filter(parts_maps, footprint=footprint, mode="constant", cval=-np.inf)
    peak_mask = (parts_maps > neighbor_max) & (parts_maps >= params.nms_threshold)

    H, W = parts_maps.shape[1:]
    pids, ys, xs = np.nonzero(peak_mask)
    vc = parts_maps[pids, ys, xs]
    ok_x = (xs > 0) & (xs < W - 1)
    dx = _parabola_offsets(
        parts_maps[pids, ys, np.clip(xs - 1, 0, W - 1)],
        vc,
        parts_maps[pids, ys, np.clip(xs + 1, 0, W - 1)],
        ok_x,
    )
    ok_y = (ys > 0) & (ys < H - 1)
    dy = _parabola_offsets(
        parts_maps[pids, np.clip(ys - 1, 0, H - 1), xs],
        vc,
        parts_maps[pids, np.clip(ys + 1, 0, H - 1), xs],
        ok_y,
    )
    order = np.lexsort((xs, ys, -vc, pids))
    return pids[order], (xs + dx)[order], (ys + dy)[order], vc[order]


def nms(conf: np.ndarray, topo: SkeletonTopology, params: DecoderParams) -> list[PartCandidate]:
    """Strict local maxima at or above nms_threshold on every part channel
    (the background channel, if present, is skipped), refined per axis."""
    pids, xs, ys, scores = _nms_arrays(conf, topo, params)
    return [
        PartCandidate(i, int(pids[i]), float(xs[i]), float(ys[i]), float(scores[i]))
        for i in range(pids.size)
    ]


def _flat_pair_scores(flat_x, flat_y, base, shape, sx, sy, dx, dy, params: DecoderParams):
    """Line-integral scores for flat pair-endpoint arrays.

    flat_x / flat_y are raveled PAF component maps and base is each pair's
    offset into them: 0 for a single channel pair, channel_id * H * W per
    pair on the batched path. The first bilinear corner's linear index is
    built once and the other three derived by integer adds; everything after
    the gather is elementwise, so both callers produce bit-identical scores.
    """
    H, W = shape
    vecx = dx - sx
    vecy = dy - sy
    length = np.hypot(vecx, vecy)
    nonzero = length > 1e-12
    safe_len = np.where(nonzero, length, 1.0)
    ux = vecx / safe_len
    uy = vecy / safe_len

    t = np.linspace(0.0, 1.0, params.n_samples)
    px = sx[:, None] + t[None, :] * vecx[:, None]  # (P, S)
    py = sy[:, None] + t[None, :] * vecy[:, None]
    x0 = np.clip(np.floor(px).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.floor(py).astype(np.int64), 0, H - 1)
    stepx = (x0 < W - 1).astype(np.int64)  # x1 - x0, zero at the border
    stepy = (y0 < H - 1).astype(np.int64) * W
    fx = np.clip(px - x0, 0.0, 1.0)
    fy = np.clip(py - y0, 0.0, 1.0)
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    off = np.asarray(base, dtype=np.int64)
    if off.ndim == 1:
        off = off[:, None]
    lin00 = off + y0 * W + x0
    lin10 = lin00 + stepx
    lin01 = lin00 + stepy
    lin11 = lin01 + stepx
    vx = (flat_x.take(lin00) * w00 + flat_x.take(lin10) * w10
          + flat_x.take(lin01) * w01 + flat_x.take(lin11) * w11)
    vy = (flat_y.take(lin00) * w00 + flat_y.take(lin10) * w10
          + flat_y.take(lin01) * w01 + flat_y.take(lin11) * w11)
    dots = vx * ux[:, None] + vy * uy[:, None]  # (P, S)

    scores = dots.mean(axis=1)
    valid_counts = (dots > params.sample_threshold).sum(axis=1)
    valid = nonzero & (valid_counts >= params.min_valid_samples)
    scores = np.where(nonzero, scores, 0.0)
    return scores, valid


def _pair_grid(src: Sequence[PartCandidate], dst: Sequence[PartCandidate]):
    """Flat endpoint/id arrays for the src x dst grid, row-major in src."""
    ns, nd = len(src), len(dst)
    sx = np.repeat(np.array([c.x for c in src], dtype=np.float64), nd)
    sy = np.repeat(np.array([c.y for c in src], dtype=np.float64), nd)
    dx = np.tile(np.array([c.x for c in dst], dtype=np.float64), ns)
    dy = np.tile(np.array([c.y for c in dst], dtype=np.float64), ns)
    sid = np.repeat(np.array([c.candidate_id for c in src], dtype=np.int64), nd)
    did = np.tile(np.array([c.candidate_id for c in dst], dtype=np.int64), ns)
    return sx, sy, dx, dy, sid, did


def _limb_pair_arrays(
    paf: np.ndarray,
    limb: Limb,
    src: Sequence[PartCandidate],
    dst: Sequence[PartCandidate],
    params: DecoderParams,
):
    """(scores, valid, src_ids, dst_ids) for every src x dst pair of one limb."""
    paf_x = np.ascontiguousarray(paf[2 * limb.limb_id], dtype=np.float64)
    paf_y = np.ascontiguousarray(paf[2 * limb.limb_id + 1], dtype=np.float64)
    sx, sy, dx, dy, sid, did = _pair_grid(src, dst)
    scores, valid = _flat_pair_scores(
        paf_x.reshape(-1), paf_y.reshape(-1), np.int64(0), paf_x.shape,
        sx, sy, dx, dy, params,
    )
    return scores, valid, sid, did


def _score_limb_pairs(
    paf: np.ndarray,
    limb: Limb,
    src: Sequence[PartCandidate],
    dst: Sequence[PartCandidate],
    params: DecoderParams,
) -> list[ScoredConnection]:
    """Score every src x dst candidate pair along the limb's PAF channels."""
    if not src or not dst:
        return []
    scores, valid, sid, did = _limb_pair_arrays(paf, limb, src, dst, params)
    return [
        ScoredConnection(limb.limb_id, int(s), int(d), float(v), bool(ok))
        for s, d, v, ok in zip(sid, did, scores, valid)
    ]


def score_connection(
    paf: np.ndarray,
    limb: Limb,
    src: PartCandidate,
    dst: PartCandidate,
    params: DecoderParams | None = None,
) -> ScoredConnection:
    """Line-integral score of a single candidate pair; a zero-length segment
    has no direction and is scored 0 / invalid."""
    params = params or DecoderParams()
    return _score_limb_pairs(paf, limb, [src], [dst], params)[0]


def match_limb(connections: Sequence[ScoredConnection]) -> list[ScoredConnection]:
    """Greedy matching by descending paf_score; each candidate is used at
    most once per limb. Ties break on (src_candidate_id, dst_candidate_id)."""
    order = sorted(
        (c for c in connections if c.valid),
        key=lambda c: (-c.paf_score, c.src_candidate_id, c.dst_candidate_id),
    )
    used_src: set[int] = set()
    used_dst: set[int] = set()
    accepted: list[ScoredConnection] = []
    for conn in order:
        if conn.src_candidate_id in used_src or conn.dst_candidate_id in used_dst:
            continue
        used_src.add(conn.src_candidate_id)
        used_dst.add(conn.dst_candidate_id)
        accepted.append(conn)
    return accepted


def _match_all_limbs(
    limb_ids: np.ndarray,
    scores: np.ndarray,
    valid: np.ndarray,
    src_ids: np.ndarray,
    dst_ids: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """match_limb applied to every limb in one pass, without materializing
    pairs as objects. Sorting limb-major with the per-limb ordering contract
    (-score, src_id, dst_id) as secondary keys reproduces the independent
    per-limb greedy matchings exactly, concatenated in limb order; used-sets
    are keyed on (limb, candidate) because matching is per limb while
    candidate ids are global. Returns accepted (src, dst, score) arrays."""
    vi = np.nonzero(valid)[0]
    if vi.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    order = vi[np.lexsort((dst_ids[vi], src_ids[vi], -scores[vi], limb_ids[vi]))]
    # Pack (limb, candidate) into one int so the greedy loop hashes plain
    # ints; candidate ids are dense row indices, so any stride above their
    # max keeps keys collision-free.
    stride = int(max(src_ids.max(), dst_ids.max())) + 1
    src_key = (limb_ids[order] * stride + src_ids[order]).tolist()
    dst_key = (limb_ids[order] * stride + dst_ids[order]).tolist()
    used_src: set[int] = set()
    used_dst: set[int] = set()
    taken: list[int] = []
    for j, (s, d) in enumerate(zip(src_key, dst_key)):
        if s in used_src or d in used_dst:
            continue
        used_src.add(s)
        used_dst.add(d)
        taken.append(j)
    idx = order[np.asarray(taken, dtype=np.int64)]
    return src_ids[idx], dst_ids[idx], scores[idx]


def _assemble_arrays(
    cand_part: np.ndarray,
    cand_x: np.ndarray,
    cand_y: np.ndarray,
    cand_score: np.ndarray,
    cand_ids: np.ndarray,
    acc_src: np.ndarray,
    acc_dst: np.ndarray,
    acc_score: np.ndarray,
    params: DecoderParams,
) -> list[Pose]:
    """Union-find over candidate rows with per-cluster part maps; acc_src /
    acc_dst index into the candidate arrays, cand_ids carries the reported
    candidate ids."""
    n = cand_part.shape[0]
    parent = list(range(n))
    parts: dict[int, dict[int, int]] = {}  # root row -> part_id -> cand row
    conn_score: dict[int, float] = {}

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for k in range(acc_src.shape[0]):
        s, d, sc = int(acc_src[k]), int(acc_dst[k]), float(acc_score[k])
        ra, rb = find(s), find(d)
        if ra == rb:
            conn_score[ra] = conn_score.get(ra, 0.0) + sc
            continue
        pa = parts.get(ra)
        if pa is None:
            pa = parts[ra] = {int(cand_part[ra]): ra}
        pb = parts.get(rb)
        if pb is None:
            pb = parts[rb] = {int(cand_part[rb]): rb}
        small, big = (ra, rb) if len(pa) <= len(pb) else (rb, ra)
        small_map, big_map = parts[small], parts[big]
        # One candidate per part per cluster: a union that would give the
        # cluster two different candidates of the same part is refused, so
        # the loser stays a separate pose.
        conflict = False
        for part_id, row in small_map.items():
            existing = big_map.get(part_id)
            if existing is not None and existing != row:
                conflict = True
                break
        if conflict:
            continue
        parent[small] = big
        big_map.update(small_map)
        conn_score[big] = conn_score.get(big, 0.0) + conn_score.get(small, 0.0) + sc
        del parts[small]
        conn_score.pop(small, None)

    poses: list[Pose] = []

    def emit(part_map: dict[int, int], extra: float) -> None:
        score = sum(float(cand_score[r]) for r in part_map.values()) + extra
        if len(part_map) < params.min_parts or score < params.resolved_min_score:
            return
        poses.append(
            Pose(
                parts={
                    int(cand_part[r]): (float(cand_x[r]), float(cand_y[r]), float(cand_score[r]))
                    for r in part_map.values()
                },
                candidate_ids={p: int(cand_ids[r]) for p, r in sorted(part_map.items())},
                person_score=float(score),
            )
        )

    for root, part_map in parts.items():
        emit(part_map, conn_score.get(root, 0.0))
    if params.min_parts <= 1:
        for i in range(n):
            if parent[i] == i and i not in parts:
                emit({int(cand_part[i]): i}, conn_score.get(i, 0.0))
    poses.sort(key=lambda p: (-p.person_score, min(p.candidate_ids.values(), default=0)))
    return poses


def _is_forest(topo: SkeletonTopology) -> bool:
    parent = list(range(topo.n_parts))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for limb in topo.limbs:
        ra, rb = find(limb.src), find(limb.dst)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def _assemble_forest(
    cand_part: np.ndarray,
    cand_x: np.ndarray,
    cand_y: np.ndarray,
    cand_score: np.ndarray,
    acc_src: np.ndarray,
    acc_dst: np.ndarray,
    acc_score: np.ndarray,
    params: DecoderParams,
) -> list[Pose]:
    """Assembly when the limb graph is a forest and each limb contributed a
    bipartite matching: removing a limb edge disconnects its two endpoint
    subtrees, so the clusters being merged always hold disjoint part sets and
    the conflict rule of _assemble_arrays can never fire. That reduces
    assembly to connected components over the accepted connections, with
    each component's connection scores summed into its pose score."""
    n = cand_part.shape[0]
    if acc_src.size:
        graph = coo_matrix(
            (np.ones(acc_src.size, dtype=np.int8), (acc_src, acc_dst)),
            shape=(n, n),
        )
        n_comp, labels = connected_components(graph, directed=False)
        extra = np.bincount(labels[acc_src], weights=acc_score, minlength=n_comp)
    else:
        labels = np.arange(n, dtype=np.int64)
        extra = np.zeros(n)

    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    poses: list[Pose] = []
    for rows in np.split(order, cuts):
        if rows.size < params.min_parts:
            continue
        score = float(cand_score[rows].sum()) + float(extra[labels[rows[0]]])
        if score < params.resolved_min_score:
            continue
        pids = cand_part[rows].tolist()
        poses.append(
            Pose(
                parts=dict(zip(pids, zip(
                    cand_x[rows].tolist(), cand_y[rows].tolist(), cand_score[rows].tolist()
                ))),
                candidate_ids=dict(zip(pids, rows.tolist())),
                person_score=score,
            )
        )
    poses.sort(key=lambda p: (-p.person_score, min(p.candidate_ids.values(), default=0)))
    return poses


def assemble(
    candidates: Sequence[PartCandidate],
    accepted: Sequence[ScoredConnection],
    topo: SkeletonTopology,
    params: DecoderParams | None = None,
) -> list[Pose]:
    """Clusters of accepted connections become poses. person_score is the sum
    of member candidate scores and internal connection scores; clusters with
    fewer than min_parts parts or a lower score are dropped."""
    params = params or DecoderParams()
    row_of = {c.candidate_id: k for k, c in enumerate(candidates)}
    return _assemble_arrays(
        np.array([c.part_id for c in candidates], dtype=np.int64),
        np.array([c.x for c in candidates], dtype=np.float64),
        np.array([c.y for c in candidates], dtype=np.float64),
        np.array([c.score for c in candidates], dtype=np.float64),
        np.array([c.candidate_id for c in candidates], dtype=np.int64),
        np.array([row_of[c.src_candidate_id] for c in accepted], dtype=np.int64),
        np.array([row_of[c.dst_candidate_id] for c in accepted], dtype=np.int64),
        np.array([c.paf_score for c in accepted], dtype=np.float64),
        params,
    )


def decode_with_stats(
    tensors: TargetTensors | tuple[np.ndarray, np.ndarray],
    topo: SkeletonTopology,
    params: DecoderParams | None = None,
) -> tuple[list[Pose], DecodeStats]:
    params = params or DecoderParams()
    if isinstance(tensors, TargetTensors):
        conf, paf = tensors.s_star, tensors.l_star
    else:
        conf, paf = tensors
    if conf.shape[0] not in (topo.n_parts, topo.confidence_channels):
        raise ValueError(f"confidence tensor has {conf.shape[0]} channels, topology wants "
                         f"{topo.confidence_channels}")
    if paf.shape[0] != topo.paf_channels:
        raise ValueError(f"paf tensor has {paf.shape[0]} channels, topology wants {topo.paf_channels}")
    stats = DecodeStats()

    t0 = time.perf_counter_ns()
    cand_part, cand_x, cand_y, cand_score = _nms_arrays(conf, topo, params)
    stats.nms_ns = time.perf_counter_ns() - t0
    stats.candidates = int(cand_part.size)
    counts = np.bincount(cand_part, minlength=topo.n_parts)
    bases = np.zeros(topo.n_parts + 1, dtype=np.int64)
    np.cumsum(counts, out=bases[1:])

    t0 = time.perf_counter_ns()
    acc_src = np.empty(0, dtype=np.int64)
    acc_dst = np.empty(0, dtype=np.int64)
    acc_score = np.empty(0)
    live_limbs = [
        limb for limb in topo.limbs if counts[limb.src] and counts[limb.dst]
    ]
    if live_limbs:
        paf64 = np.asarray(paf, dtype=np.float64)
        paf_x_all, paf_y_all = paf64[0::2], paf64[1::2]
        H, W = paf_x_all.shape[1:]

        # Flatten every (limb, src, dst) pair into one set of arrays, built
        # arithmetically: pair p of limb l is (src row a0+p//nd, dst row
        # b0+p%nd), row-major in src. Candidate rows are part-major, so each
        # part is a slice [bases[p], bases[p+1]) of the flat arrays.
        src_parts = np.array([l.src for l in live_limbs], dtype=np.int64)
        dst_parts = np.array([l.dst for l in live_limbs], dtype=np.int64)
        a0, b0 = bases[src_parts], bases[dst_parts]
        ns, nd = counts[src_parts], counts[dst_parts]
        totals = ns * nd
        starts = np.zeros(totals.size, dtype=np.int64)
        np.cumsum(totals[:-1], out=starts[1:])
        limb_of = np.repeat(np.arange(totals.size), totals)
        within = np.arange(int(totals.sum())) - np.repeat(starts, totals)
        nd_rep = np.repeat(nd, totals)
        ij = within // nd_rep
        sid = np.repeat(a0, totals) + ij
        did = np.repeat(b0, totals) + (within - ij * nd_rep)
        sx, sy = cand_x[sid], cand_y[sid]
        dx, dy = cand_x[did], cand_y[did]
        ch = np.repeat(np.array([l.limb_id for l in live_limbs], dtype=np.int64), totals)
        stats.connections_scored = int(sx.size)

        # Exact prefilter: a sample whose rounded cell has no PAF support
        # within its 3x3 neighbourhood reads zeros from all four bilinear
        # corners, so it cannot clear a positive sample threshold. Probing a
        # subset of s of the n sample positions, a pair that is valid overall
        # (>= min_valid_samples passing) must hit support on at least
        # min_valid_samples - (n - s) probes; pairs below that cutoff can be
        # dropped without changing the decode result. Endpoint samples sit on
        # part candidates where some limb band usually starts, so only
        # interior positions are probed; the bound holds for any subset.
        n_s, m_v = params.n_samples, params.min_valid_samples
        lo, hi = (1, n_s - 2) if n_s >= 4 else (0, n_s - 1)
        n_probes = min(hi - lo + 1, max(2, n_s - m_v + 3))
        probe_idx = np.unique(
            np.round(np.linspace(lo, hi, n_probes)).astype(np.int64)
        )
        cutoff = m_v - (n_s - probe_idx.size)
        if params.sample_threshold >= 0.0 and cutoff > 0:
            support = binary_dilation(
                (paf_x_all != 0.0) | (paf_y_all != 0.0),
                structure=np.ones((1, 3, 3), dtype=bool),
            )
            # float32 with floor(x + 0.5) in place of rint: the probe cell
            # only has to stay within one cell of the float64 sample, and the
            # float32 error is far below the half-cell slack. One (pairs,
            # probes) scratch buffer carries both position passes and the
            # integer work runs in place, since this block touches every
            # pair and is the widest part of the decode.
            t = np.linspace(0.0, 1.0, n_s)[probe_idx].astype(np.float32)
            half = np.float32(0.5)
            buf = np.multiply(t[None, :], (dx - sx).astype(np.float32)[:, None])
            buf += sx.astype(np.float32)[:, None]
            buf += half
            qx = buf.astype(np.int32)
            np.clip(qx, 0, W - 1, out=qx)
            np.multiply(t[None, :], (dy - sy).astype(np.float32)[:, None], out=buf)
            buf += sy.astype(np.float32)[:, None]
            buf += half
            qy = buf.astype(np.int32)
            np.clip(qy, 0, H - 1, out=qy)
            qy += (ch.astype(np.int32) * np.int32(H))[:, None]
            qy *= np.int32(W)
            qy += qx
            hits = support.ravel().take(qy).sum(axis=1)
            keep = np.flatnonzero(hits >= cutoff)
        else:
            keep = np.arange(sx.size)

        if keep.size:
            flat_x = paf_x_all.reshape(-1)
            flat_y = paf_y_all.reshape(-1)
            base_k = ch[keep] * (H * W)
            sx_k, sy_k = sx[keep], sy[keep]
            dx_k, dy_k = dx[keep], dy[keep]

            def score_slab(rows: np.ndarray):
                return _flat_pair_scores(
                    flat_x, flat_y, base_k[rows], (H, W),
                    sx_k[rows], sy_k[rows], dx_k[rows], dy_k[rows], params,
                )

            if params.threads > 1 and keep.size >= params.threads:
                # Chunk-parallel over the survivor set; the math is
                # elementwise, so chunking cannot change results.
                slabs = np.array_split(np.arange(keep.size), params.threads)
                with ThreadPoolExecutor(max_workers=params.threads) as pool:
                    parts = list(pool.map(score_slab, slabs))
                scores_k = np.concatenate([p[0] for p in parts])
                valid_k = np.concatenate([p[1] for p in parts])
            else:
                scores_k, valid_k = _flat_pair_scores(
                    flat_x, flat_y, base_k, (H, W), sx_k, sy_k, dx_k, dy_k, params
                )
            stats.connections_valid = int(valid_k.sum())

            acc_src, acc_dst, acc_score = _match_all_limbs(
                limb_of[keep], scores_k, valid_k, sid[keep], did[keep]
            )
    stats.scoring_ns = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    if _is_forest(topo):
        poses = _assemble_forest(
            cand_part, cand_x, cand_y, cand_score, acc_src, acc_dst, acc_score, params
        )
    else:
        poses = _assemble_arrays(
            cand_part, cand_x, cand_y, cand_score,
            np.arange(cand_part.size, dtype=np.int64),
            acc_src, acc_dst, acc_score, params,
        )
    stats.assembly_ns = time.perf_counter_ns() - t0
    return poses, stats


def decode(
    tensors: TargetTensors | tuple[np.ndarray, np.ndarray],
    topo: SkeletonTopology,
    params: DecoderParams | None = None,
) -> list[Pose]:
    return decode_with_stats(tensors, topo, params)[0]
