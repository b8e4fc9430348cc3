"""Vectorized numpy implementations of the hot grid kernels.

Every function here has a loop twin in ``_numba.py`` with the identical
signature; ``winnav.kernels`` picks one of the two at import time.
"""

import numpy as np

from ._common import DIRS, SHEAR_A, SHEAR_B


def _round_half_down(v):
    return np.ceil(v - 0.5).astype(np.int64)


def rotate_offsets(fwd, right, heading):
    """Map agent-frame (forward, right) cell offsets to world (drow, dcol)."""
    x = np.asarray(right, dtype=np.int64).copy()
    y = np.asarray(fwd, dtype=np.int64).copy()
    heading = int(heading) % 8
    if heading % 2 == 1:
        x = x + _round_half_down(SHEAR_A * y)
        y = y + _round_half_down(SHEAR_B * x)
        x = x + _round_half_down(SHEAR_A * y)
    for _ in range(heading // 2):
        x, y = y, -x
    return -y, x


def unrotate_offsets(drow, dcol, heading):
    """Exact inverse of :func:`rotate_offsets`."""
    x = np.asarray(dcol, dtype=np.int64).copy()
    y = -np.asarray(drow, dtype=np.int64)
    heading = int(heading) % 8
    for _ in range(heading // 2):
        x, y = -y, x
    if heading % 2 == 1:
        x = x - _round_half_down(SHEAR_A * y)
        y = y - _round_half_down(SHEAR_B * x)
        x = x - _round_half_down(SHEAR_A * y)
    return y, x


def raycast(block, opening, room, row, col, dirs):
    """Cast lattice rays from (row, col) along the given direction indices.

    Returns ``(steps, last_room, door_step)``: number of free cells passed
    before the first blocking cell, the room id of the last room cell on the
    ray, and the step index of the first door opening (-1 when none).
    """
    H, W = block.shape
    L = max(H, W) + 1
    dirs = np.asarray(dirs, dtype=np.int64)
    d = DIRS[dirs]
    k = np.arange(1, L + 1)
    rr = row + d[:, 0:1] * k
    cc = col + d[:, 1:2] * k
    inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    rr_c = np.clip(rr, 0, H - 1)
    cc_c = np.clip(cc, 0, W - 1)
    blocked = ~inside | block[rr_c, cc_c]
    first = blocked.argmax(axis=1)
    valid = np.arange(L)[None, :] < first[:, None]
    rooms = np.where(valid, room[rr_c, cc_c], -1)
    idx = np.where(rooms >= 0, np.arange(L)[None, :], -1).max(axis=1)
    last = rooms[np.arange(len(dirs)), np.maximum(idx, 0)]
    last_room = np.where(idx >= 0, last, room[row, col])
    op = opening[rr_c, cc_c] & valid
    door_step = np.where(op.any(axis=1), op.argmax(axis=1) + 1, -1)
    return first.astype(np.int64), last_room.astype(np.int64), door_step.astype(np.int64)


def gather_labels(label_img, row, col, drow, dcol, fill):
    H, W = label_img.shape
    r = row + drow
    c = col + dcol
    inside = (r >= 0) & (r < H) & (c >= 0) & (c < W)
    out = np.full(r.shape, fill, dtype=np.int64)
    out[inside] = label_img[r[inside], c[inside]]
    return out


def fuse_into(probs, weight, map_probs, row, col, drow, dcol, cell_w):
    """Confidence-weighted running average, in place. Offsets must be unique."""
    G0, G1 = weight.shape
    r = row + drow
    c = col + dcol
    keep = (r >= 0) & (r < G0) & (c >= 0) & (c < G1) & (cell_w > 0)
    r, c, w, p = r[keep], c[keep], cell_w[keep], map_probs[keep]
    old_w = weight[r, c]
    new_w = old_w + w
    probs[r, c] = (old_w[:, None] * probs[r, c] + w[:, None] * p) / new_w[:, None]
    weight[r, c] = new_w


def project(here, types, depth, door_depth, g, s, unknown):
    """Label agent-frame cells crossed by each sector ray; returns (g, g) ints."""
    c0 = g // 2
    labels = np.full((g, g), unknown, dtype=np.int64)
    best = np.full((g, g), np.inf)
    j = np.arange(g)
    for k in range(8):
        dr, dc = DIRS[k]
        step = s * (1.4142135623730951 if dr != 0 and dc != 0 else 1.0)
        rr = c0 + dr * j
        cc = c0 + dc * j
        dist = j * step
        ok = (rr >= 0) & (rr < g) & (cc >= 0) & (cc < g) & (dist <= depth[k] + 1e-9)
        lab = np.where(dist < door_depth[k] - 1e-9, here, types[k])
        rr, cc, dist, lab = rr[ok], cc[ok], dist[ok], lab[ok]
        closer = dist < best[rr, cc]
        labels[rr[closer], cc[closer]] = lab[closer]
        best[rr[closer], cc[closer]] = dist[closer]
    return labels


def wedge_pool(probs, weight, row, col, drow, dcol, wedge, n_wedges):
    """Confidence-weighted pooling of grid cells grouped into direction wedges.

    Returns ``(pooled (n_wedges, C), mean_conf (n_wedges,))``; unobserved
    wedges pool to the zero vector.
    """
    G0, G1 = weight.shape
    C = probs.shape[2]
    r = row + drow
    c = col + dcol
    inside = (r >= 0) & (r < G0) & (c >= 0) & (c < G1)
    w = np.zeros(len(r))
    w[inside] = weight[r[inside], c[inside]]
    conf = w / (1.0 + w)
    pooled = np.zeros((n_wedges, C))
    total = np.zeros(n_wedges)
    count = np.zeros(n_wedges)
    pr = np.zeros((len(r), C))
    pr[inside] = probs[r[inside], c[inside]]
    np.add.at(pooled, wedge, conf[:, None] * pr)
    np.add.at(total, wedge, conf)
    np.add.at(count, wedge, 1.0)
    nz = total > 0
    pooled[nz] /= total[nz, None]
    mean_conf = np.where(count > 0, total / np.maximum(count, 1.0), 0.0)
    return pooled, mean_conf


def nearest_room_labels(cells, room_types, outside_label):
    """Category image: room cells take their room type, wall cells the type
    of the nearest room cell (squared-distance ties go to the lower room id)."""
    H, W = cells.shape
    out = np.full((H, W), outside_label, dtype=np.int64)
    room_mask = cells >= 0
    out[room_mask] = room_types[cells[room_mask]]
    wr, wc = np.nonzero(cells == -1)
    if len(wr) == 0 or not room_mask.any():
        return out
    rr, rc = np.nonzero(room_mask)
    rid = cells[rr, rc]
    d2 = (wr[:, None] - rr[None, :]) ** 2 + (wc[:, None] - rc[None, :]) ** 2
    key = d2 * (len(room_types) + 1) + rid[None, :]
    best = key.argmin(axis=1)
    out[wr, wc] = room_types[rid[best]]
    return out
