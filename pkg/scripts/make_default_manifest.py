"""Regenerate the packaged default whole-body topology manifest.

Layout: 25 body+foot parts (6 of them foot), 70 face parts split into a left
and a right half-tree rooted at the respective body eye, and 2x20 hand parts
rooted at the body wrists. Wrists, ankles and eyes are the anchors; each is a
cut vertex for the sub-tree it roots. A canonical template pose (unit height,
deliberately oversized face and hands so every limb stays resolvable on an
8 px grid) is embedded for the synthetic scene generator.

Run from the repo root:  python scripts/make_default_manifest.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "wbpose" / "data" / "wholebody135.json"

# COCO per-keypoint falloff constants for the body; neck and mid hip reuse the
# shoulder / hip values. Foot values follow the common whole-body convention.
KAPPA_BODY = {
    "nose": 0.026, "neck": 0.079,
    "r_shoulder": 0.079, "r_elbow": 0.072, "r_wrist": 0.062,
    "l_shoulder": 0.079, "l_elbow": 0.072, "l_wrist": 0.062,
    "mid_hip": 0.107,
    "r_hip": 0.107, "r_knee": 0.087, "r_ankle": 0.089,
    "l_hip": 0.107, "l_knee": 0.087, "l_ankle": 0.089,
    "r_eye": 0.025, "l_eye": 0.025, "r_ear": 0.035, "l_ear": 0.035,
}
KAPPA_FOOT = {"big_toe": 0.068, "small_toe": 0.066, "heel": 0.066}
KAPPA_FACE = 0.025
KAPPA_HAND = 0.035


def polar(cx, cy, r, deg):
    a = math.radians(deg)
    return (cx + r * math.cos(a), cy + r * math.sin(a))


def build():
    parts = []
    limbs = []
    kappa = {}
    template = {}

    def add_part(name, group, side, xy, k):
        pid = len(parts)
        parts.append({"id": pid, "name": name, "group": group, "side": side})
        kappa[str(pid)] = k
        template[str(pid)] = [round(xy[0], 5), round(xy[1], 5)]
        return pid

    def add_limb(src, dst):
        limbs.append({"id": len(limbs), "src": src, "dst": dst})

    # --- body + foot (ids 0..24, the usual 25-part ordering) ---------------
    body_xy = {
        "nose": (0.0, 0.10), "neck": (0.0, 0.22),
        "r_shoulder": (-0.16, 0.25), "r_elbow": (-0.22, 0.38), "r_wrist": (-0.26, 0.50),
        "l_shoulder": (0.16, 0.25), "l_elbow": (0.22, 0.38), "l_wrist": (0.26, 0.50),
        "mid_hip": (0.0, 0.54), "r_hip": (-0.09, 0.55), "r_knee": (-0.10, 0.72),
        "r_ankle": (-0.11, 0.90), "l_hip": (0.09, 0.55), "l_knee": (0.10, 0.72),
        "l_ankle": (0.11, 0.90), "r_eye": (-0.055, 0.07), "l_eye": (0.055, 0.07),
        "r_ear": (-0.105, 0.095), "l_ear": (0.105, 0.095),
        "l_big_toe": (0.165, 0.965), "l_small_toe": (0.205, 0.945), "l_heel": (0.085, 0.985),
        "r_big_toe": (-0.165, 0.965), "r_small_toe": (-0.205, 0.945), "r_heel": (-0.085, 0.985),
    }
    order = [
        ("nose", "body", "center"), ("neck", "body", "center"),
        ("r_shoulder", "body", "right"), ("r_elbow", "body", "right"), ("r_wrist", "body", "right"),
        ("l_shoulder", "body", "left"), ("l_elbow", "body", "left"), ("l_wrist", "body", "left"),
        ("mid_hip", "body", "center"),
        ("r_hip", "body", "right"), ("r_knee", "body", "right"), ("r_ankle", "body", "right"),
        ("l_hip", "body", "left"), ("l_knee", "body", "left"), ("l_ankle", "body", "left"),
        ("r_eye", "body", "right"), ("l_eye", "body", "left"),
        ("r_ear", "body", "right"), ("l_ear", "body", "left"),
        ("l_big_toe", "foot", "left"), ("l_small_toe", "foot", "left"), ("l_heel", "foot", "left"),
        ("r_big_toe", "foot", "right"), ("r_small_toe", "foot", "right"), ("r_heel", "foot", "right"),
    ]
    pid_of = {}
    for name, group, side in order:
        k = KAPPA_FOOT[name[2:]] if group == "foot" else KAPPA_BODY[name]
        pid_of[name] = add_part(name, group, side, body_xy[name], k)

    body_edges = [
        ("neck", "mid_hip"), ("neck", "r_shoulder"), ("neck", "l_shoulder"),
        ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"),
        ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"),
        ("mid_hip", "r_hip"), ("r_hip", "r_knee"), ("r_knee", "r_ankle"),
        ("mid_hip", "l_hip"), ("l_hip", "l_knee"), ("l_knee", "l_ankle"),
        ("neck", "nose"), ("nose", "r_eye"), ("r_eye", "r_ear"),
        ("nose", "l_eye"), ("l_eye", "l_ear"),
    ]
    foot_edges = [
        ("l_ankle", "l_big_toe"), ("l_big_toe", "l_small_toe"), ("l_ankle", "l_heel"),
        ("r_ankle", "r_big_toe"), ("r_big_toe", "r_small_toe"), ("r_ankle", "r_heel"),
    ]
    for a, b in body_edges + foot_edges:
        add_limb(pid_of[a], pid_of[b])

    # --- face: one 35-part tree per side, rooted at the body eye -----------
    # Arcs around the eye; the face is oversized on purpose so that chained
    # landmarks stay > 0.014 units apart (> 1 px for a 90 px tall person).
    def face_side(side):
        s = 1.0 if side == "left" else -1.0
        tag = "l" if side == "left" else "r"
        eye = pid_of[f"{tag}_eye"]
        ex, ey = body_xy[f"{tag}_eye"]

        def arc(r, deg0, deg1, n):
            step = (deg1 - deg0) / (n - 1)
            return [polar(ex, ey, r, s * (deg0 + i * step)) for i in range(n)]

        names, coords, chains = [], [], []
        eyelid = arc(0.045, -150, 100, 6)
        brow = arc(0.085, -150, -30, 5)
        cheek = arc(0.125, 30, 170, 8)
        jaw = arc(0.175, 100, 160, 4)
        nose_pts = [(ex - s * 0.018, ey + 0.030), (ex - s * 0.030, ey + 0.055),
                    (ex - s * 0.040, ey + 0.080), (ex - s * 0.045, ey + 0.105)]
        mx, my = ex - s * 0.050, ey + 0.160
        lip = [polar(mx, my, 0.035, s * d) for d in range(-90, 91, 30)]
        pupil = [(ex + s * 0.015, ey + 0.012)]

        for label, pts in [("eyelid", eyelid), ("brow", brow), ("cheek", cheek),
                           ("jaw", jaw), ("nose", nose_pts), ("lip", lip), ("pupil", pupil)]:
            ids = []
            for i, xy in enumerate(pts):
                suffix = "" if label == "pupil" else f"_{i}"
                ids.append(add_part(f"face_{tag}_{label}{suffix}", "face", side, xy, KAPPA_FACE))
            names.append(label)
            coords.append(ids)
            chains.append(ids)
        eyelid_ids, brow_ids, cheek_ids, jaw_ids, nose_ids, lip_ids, pupil_ids = chains

        # Chain edges inside each arc, plus roots hanging off the eye.
        def chain(root, ids):
            prev = root
            for pid in ids:
                add_limb(prev, pid)
                prev = pid

        chain(eye, eyelid_ids)
        chain(eyelid_ids[0], brow_ids)
        chain(eye, cheek_ids)
        chain(cheek_ids[-1], jaw_ids)
        chain(eye, nose_ids)
        chain(nose_ids[-1], lip_ids)
        chain(eye, pupil_ids)

    face_side("left")
    face_side("right")

    # --- hands: 4-joint chains for 5 fingers, rooted at the body wrist -----
    def hand_side(side):
        s = 1.0 if side == "left" else -1.0
        tag = "l" if side == "left" else "r"
        wrist = pid_of[f"{tag}_wrist"]
        wx, wy = body_xy[f"{tag}_wrist"]
        fingers = [("thumb", 15), ("index", 45), ("middle", 72), ("ring", 99), ("pinky", 128)]
        for fname, deg in fingers:
            prev = wrist
            for j, r in enumerate((0.048, 0.082, 0.115, 0.148), start=1):
                xy = polar(wx, wy, r, s * deg if s > 0 else 180 - deg)
                pid = add_part(f"hand_{tag}_{fname}_{j}", "hand", side, xy, KAPPA_HAND)
                add_limb(prev, pid)
                prev = pid

    hand_side("left")
    hand_side("right")

    anchors = [
        {"part": pid_of["l_ankle"], "groups": ["body", "foot"]},
        {"part": pid_of["r_ankle"], "groups": ["body", "foot"]},
        {"part": pid_of["l_wrist"], "groups": ["body", "hand"]},
        {"part": pid_of["r_wrist"], "groups": ["body", "hand"]},
        {"part": pid_of["l_eye"], "groups": ["body", "face"]},
        {"part": pid_of["r_eye"], "groups": ["body", "face"]},
    ]

    manifest = {
        "manifest_version": 1,
        "background_channel": True,
        "parts": parts,
        "limbs": limbs,
        "anchors": anchors,
        "oks_kappa": kappa,
        "template_pose": template,
    }

    # Sanity: counts, limb lengths and tree structure.
    assert len(parts) == 135, len(parts)
    assert len(limbs) == 134, len(limbs)
    by_group = {}
    for p in parts:
        by_group[p["group"]] = by_group.get(p["group"], 0) + 1
    assert by_group == {"body": 19, "foot": 6, "face": 70, "hand": 40}, by_group
    min_len = min(
        math.dist(template[str(l["src"])], template[str(l["dst"])]) for l in limbs
    )
    assert min_len > 0.014, f"template limb too short: {min_len}"
    degree_in = {}
    for l in limbs:
        degree_in[l["dst"]] = degree_in.get(l["dst"], 0) + 1
    assert all(v == 1 for v in degree_in.values()), "limb graph is not a tree"
    return manifest


if __name__ == "__main__":
    manifest = build()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")
