"""Loop kernels compiled with numba; signatures mirror ``_numpy.py``."""

import math

import numpy as np
from numba import njit

from ._common import DIRS, SHEAR_A, SHEAR_B

_SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def _rhd(v):
    return np.int64(math.ceil(v - 0.5))


@njit(cache=True)
def _rotate(x, y, heading):
    if heading % 2 == 1:
        x = x + _rhd(SHEAR_A * y)
        y = y + _rhd(SHEAR_B * x)
        x = x + _rhd(SHEAR_A * y)
    for _ in range(heading // 2):
        x, y = y, -x
    return -y, x


@njit(cache=True)
def _rotate_arrays(fwd, right, heading):
    n = fwd.shape[0]
    dr = np.empty(n, np.int64)
    dc = np.empty(n, np.int64)
    for i in range(n):
        a, b = _rotate(right[i], fwd[i], heading)
        dr[i] = a
        dc[i] = b
    return dr, dc


@njit(cache=True)
def _unrotate_arrays(drow, dcol, heading):
    n = drow.shape[0]
    f = np.empty(n, np.int64)
    r = np.empty(n, np.int64)
    for i in range(n):
        x = dcol[i]
        y = -drow[i]
        for _ in range(heading // 2):
            x, y = -y, x
        if heading % 2 == 1:
            x = x - _rhd(SHEAR_A * y)
            y = y - _rhd(SHEAR_B * x)
            x = x - _rhd(SHEAR_A * y)
        f[i] = y
        r[i] = x
    return f, r


def rotate_offsets(fwd, right, heading):
    fwd = np.ascontiguousarray(fwd, dtype=np.int64)
    right = np.ascontiguousarray(right, dtype=np.int64)
    dr, dc = _rotate_arrays(fwd.ravel(), right.ravel(), int(heading) % 8)
    return dr.reshape(fwd.shape), dc.reshape(fwd.shape)


def unrotate_offsets(drow, dcol, heading):
    drow = np.ascontiguousarray(drow, dtype=np.int64)
    dcol = np.ascontiguousarray(dcol, dtype=np.int64)
    f, r = _unrotate_arrays(drow.ravel(), dcol.ravel(), int(heading) % 8)
    return f.reshape(drow.shape), r.reshape(drow.shape)


@njit(cache=True)
def _raycast(block, opening, room, row, col, dirs):
    H, W = block.shape
    K = dirs.shape[0]
    steps = np.zeros(K, np.int64)
    last_room = np.empty(K, np.int64)
    door_step = np.full(K, -1, np.int64)
    for i in range(K):
        dr = DIRS[dirs[i], 0]
        dc = DIRS[dirs[i], 1]
        last = room[row, col]
        k = 1
        while True:
            r = row + dr * k
            c = col + dc * k
            if r < 0 or r >= H or c < 0 or c >= W or block[r, c]:
                break
            if room[r, c] >= 0:
                last = room[r, c]
            if opening[r, c] and door_step[i] < 0:
                door_step[i] = k
            k += 1
        steps[i] = k - 1
        last_room[i] = last
    return steps, last_room, door_step


def raycast(block, opening, room, row, col, dirs):
    return _raycast(block, opening, room, int(row), int(col),
                    np.ascontiguousarray(dirs, dtype=np.int64))


@njit(cache=True)
def _gather(label_img, row, col, drow, dcol, fill):
    H, W = label_img.shape
    n = drow.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        r = row + drow[i]
        c = col + dcol[i]
        if r >= 0 and r < H and c >= 0 and c < W:
            out[i] = label_img[r, c]
        else:
            out[i] = fill
    return out


def gather_labels(label_img, row, col, drow, dcol, fill):
    drow = np.ascontiguousarray(drow, dtype=np.int64)
    dcol = np.ascontiguousarray(dcol, dtype=np.int64)
    out = _gather(label_img, int(row), int(col), drow.ravel(), dcol.ravel(), int(fill))
    return out.reshape(drow.shape)


@njit(cache=True)
def _fuse(probs, weight, map_probs, row, col, drow, dcol, cell_w):
    G0, G1 = weight.shape
    C = probs.shape[2]
    for i in range(drow.shape[0]):
        w = cell_w[i]
        if w <= 0:
            continue
        r = row + drow[i]
        c = col + dcol[i]
        if r < 0 or r >= G0 or c < 0 or c >= G1:
            continue
        old = weight[r, c]
        new = old + w
        for k in range(C):
            probs[r, c, k] = (old * probs[r, c, k] + w * map_probs[i, k]) / new
        weight[r, c] = new


def fuse_into(probs, weight, map_probs, row, col, drow, dcol, cell_w):
    _fuse(probs, weight, np.ascontiguousarray(map_probs, dtype=np.float64), int(row), int(col),
          np.ascontiguousarray(drow, dtype=np.int64), np.ascontiguousarray(dcol, dtype=np.int64),
          np.ascontiguousarray(cell_w, dtype=np.float64))


@njit(cache=True)
def _project(here, types, depth, door_depth, g, s, unknown):
    c0 = g // 2
    labels = np.full((g, g), unknown, np.int64)
    best = np.full((g, g), np.inf)
    for k in range(8):
        dr = DIRS[k, 0]
        dc = DIRS[k, 1]
        step = s * (_SQRT2 if dr != 0 and dc != 0 else 1.0)
        for j in range(g):
            r = c0 + dr * j
            c = c0 + dc * j
            if r < 0 or r >= g or c < 0 or c >= g:
                break
            dist = j * step
            if dist > depth[k] + 1e-9:
                break
            lab = here if dist < door_depth[k] - 1e-9 else types[k]
            if dist < best[r, c]:
                best[r, c] = dist
                labels[r, c] = lab
    return labels


def project(here, types, depth, door_depth, g, s, unknown):
    return _project(int(here), np.ascontiguousarray(types, dtype=np.int64),
                    np.ascontiguousarray(depth, dtype=np.float64),
                    np.ascontiguousarray(door_depth, dtype=np.float64),
                    int(g), float(s), int(unknown))


@njit(cache=True)
def _wedge_pool(probs, weight, row, col, drow, dcol, wedge, n_wedges):
    G0, G1 = weight.shape
    C = probs.shape[2]
    pooled = np.zeros((n_wedges, C))
    total = np.zeros(n_wedges)
    count = np.zeros(n_wedges)
    for i in range(drow.shape[0]):
        q = wedge[i]
        count[q] += 1.0
        r = row + drow[i]
        c = col + dcol[i]
        if r < 0 or r >= G0 or c < 0 or c >= G1:
            continue
        w = weight[r, c]
        if w <= 0:
            continue
        conf = w / (1.0 + w)
        total[q] += conf
        for k in range(C):
            pooled[q, k] += conf * probs[r, c, k]
    mean_conf = np.zeros(n_wedges)
    for q in range(n_wedges):
        if total[q] > 0:
            for k in range(C):
                pooled[q, k] /= total[q]
        if count[q] > 0:
            mean_conf[q] = total[q] / count[q]
    return pooled, mean_conf


def wedge_pool(probs, weight, row, col, drow, dcol, wedge, n_wedges):
    return _wedge_pool(probs, weight, int(row), int(col),
                       np.ascontiguousarray(drow, dtype=np.int64),
                       np.ascontiguousarray(dcol, dtype=np.int64),
                       np.ascontiguousarray(wedge, dtype=np.int64), int(n_wedges))


@njit(cache=True)
def _nearest(cells, room_types, outside_label):
    H, W = cells.shape
    n_rooms = room_types.shape[0]
    out = np.full((H, W), outside_label, np.int64)
    for r in range(H):
        for c in range(W):
            if cells[r, c] >= 0:
                out[r, c] = room_types[cells[r, c]]
    for r in range(H):
        for c in range(W):
            if cells[r, c] != -1:
                continue
            best_key = -1
            best_room = -1
            for rr in range(H):
                for cc in range(W):
                    rid = cells[rr, cc]
                    if rid < 0:
                        continue
                    key = ((r - rr) ** 2 + (c - cc) ** 2) * (n_rooms + 1) + rid
                    if best_key < 0 or key < best_key:
                        best_key = key
                        best_room = rid
            if best_room >= 0:
                out[r, c] = room_types[best_room]
    return out


def nearest_room_labels(cells, room_types, outside_label):
    return _nearest(np.ascontiguousarray(cells, dtype=np.int64),
                    np.ascontiguousarray(room_types, dtype=np.int64), int(outside_label))
