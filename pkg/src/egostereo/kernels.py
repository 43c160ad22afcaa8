"""Hot numeric kernels for the synthetic renderer and heatmap splatting.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version. ``backend=None`` picks numba unless ``EGOSTEREO_DISABLE_NUMBA`` is
set. Both versions implement the same arithmetic; results agree to rounding.
"""
import numpy as np

from ._accel import njit, resolve_backend

# Room faces: x-min, x-max, y-min (floor), y-max (ceiling), z-min, z-max.
FACE_NONE = -1


# ---------------------------------------------------------------------------
# Ray vs. axis-aligned box, origin inside the box
# ---------------------------------------------------------------------------

@njit
def _cast_room_nb(origins, dirs, box_min, box_max):
    n = dirs.shape[0]
    t_out = np.empty(n)
    face_out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        face = -1
        for ax in range(3):
            d = dirs[i, ax]
            o = origins[i, ax]
            if d > 0.0:
                t = (box_max[ax] - o) / d
                f = 2 * ax + 1
            elif d < 0.0:
                t = (box_min[ax] - o) / d
                f = 2 * ax
            else:
                continue
            if t < best:
                best = t
                face = f
        if face < 0:
            t_out[i] = np.nan
        else:
            t_out[i] = best
        face_out[i] = face
    return t_out, face_out


def _cast_room_np(origins, dirs, box_min, box_max):
    n = dirs.shape[0]
    t_all = np.full((n, 3), np.inf)
    f_all = np.full((n, 3), FACE_NONE, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = dirs > 0.0
        neg = dirs < 0.0
        t_pos = (box_max[None, :] - origins) / dirs
        t_neg = (box_min[None, :] - origins) / dirs
    t_all[pos] = t_pos[pos]
    t_all[neg] = t_neg[neg]
    axes = np.broadcast_to(np.arange(3), (n, 3))
    f_all[pos] = 2 * axes[pos] + 1
    f_all[neg] = 2 * axes[neg]
    k = np.argmin(t_all, axis=1)
    rows = np.arange(n)
    t = t_all[rows, k]
    face = f_all[rows, k]
    t = np.where(face < 0, np.nan, t)
    return t, face


def cast_room(origins, dirs, box_min, box_max, backend=None):
    """Exit distance of rays leaving an axis-aligned box from the inside.

    ``origins`` is (3,) or (N, 3); ``dirs`` is (N, 3). Rays whose direction is
    NaN or zero get ``t = nan`` and face ``-1``.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape))
    box_min = np.ascontiguousarray(box_min, dtype=np.float64)
    box_max = np.ascontiguousarray(box_max, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _cast_room_nb(origins, dirs, box_min, box_max)
    return _cast_room_np(origins, dirs, box_min, box_max)


# ---------------------------------------------------------------------------
# Ray vs. set of capsules (stick-figure body)
# ---------------------------------------------------------------------------

@njit
def _cast_capsules_nb(origin, dirs, seg_a, seg_b, radius):
    n = dirs.shape[0]
    k_count = seg_a.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        rx = dirs[i, 0]
        ry = dirs[i, 1]
        rz = dirs[i, 2]
        if not (rx == rx and ry == ry and rz == rz):
            continue
        best = np.inf
        best_k = -1
        for k in range(k_count):
            ra = radius[k]
            bax = seg_b[k, 0] - seg_a[k, 0]
            bay = seg_b[k, 1] - seg_a[k, 1]
            baz = seg_b[k, 2] - seg_a[k, 2]
            oax = origin[0] - seg_a[k, 0]
            oay = origin[1] - seg_a[k, 1]
            oaz = origin[2] - seg_a[k, 2]
            baba = bax * bax + bay * bay + baz * baz
            bard = bax * rx + bay * ry + baz * rz
            baoa = bax * oax + bay * oay + baz * oaz
            rdoa = rx * oax + ry * oay + rz * oaz
            oaoa = oax * oax + oay * oay + oaz * oaz
            a = baba - bard * bard
            if a > 1e-12 * baba:
                b = baba * rdoa - baoa * bard
                c = baba * oaoa - baoa * baoa - ra * ra * baba
                h = b * b - a * c
                if h >= 0.0:
                    t = (-b - np.sqrt(h)) / a
                    y = baoa + t * bard
                    if t > 0.0 and y > 0.0 and y < baba and t < best:
                        best = t
                        best_k = k
            # end-cap spheres
            for end in range(2):
                if end == 0:
                    ocx = oax
                    ocy = oay
                    ocz = oaz
                else:
                    ocx = origin[0] - seg_b[k, 0]
                    ocy = origin[1] - seg_b[k, 1]
                    ocz = origin[2] - seg_b[k, 2]
                b = rx * ocx + ry * ocy + rz * ocz
                c = ocx * ocx + ocy * ocy + ocz * ocz - ra * ra
                h = b * b - c
                if h >= 0.0:
                    t = -b - np.sqrt(h)
                    if t > 0.0 and t < best:
                        best = t
                        best_k = k
        t_out[i] = best
        idx_out[i] = best_k
    return t_out, idx_out


def _cast_capsules_np(origin, dirs, seg_a, seg_b, radius):
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    best_k = np.full(n, -1, dtype=np.int64)
    valid = np.isfinite(dirs).all(axis=1)
    rd = np.where(valid[:, None], dirs, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        for k in range(seg_a.shape[0]):
            ra = radius[k]
            ba = seg_b[k] - seg_a[k]
            oa = origin - seg_a[k]
            baba = ba @ ba
            bard = rd @ ba
            baoa = ba @ oa
            rdoa = rd @ oa
            oaoa = oa @ oa
            a = baba - bard * bard
            b = baba * rdoa - baoa * bard
            c = baba * oaoa - baoa * baoa - ra * ra * baba
            h = b * b - a * c
            ok = (a > 1e-12 * baba) & (h >= 0.0)
            t = (-b - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, a, 1.0)
            y = baoa + t * bard
            hit = ok & (t > 0.0) & (y > 0.0) & (y < baba) & (t < best) & valid
            best = np.where(hit, t, best)
            best_k = np.where(hit, k, best_k)
            for oc in (oa, origin - seg_b[k]):
                b = rd @ oc
                c = oc @ oc - ra * ra
                h = b * b - c
                ok = h >= 0.0
                t = -b - np.sqrt(np.where(ok, h, 0.0))
                hit = ok & (t > 0.0) & (t < best) & valid
                best = np.where(hit, t, best)
                best_k = np.where(hit, k, best_k)
    return best, best_k


def cast_capsules(origin, dirs, seg_a, seg_b, radius, backend=None):
    """Nearest hit of each ray against a union of capsules.

    Returns ``(t, index)``; rays that miss every capsule get ``inf`` and ``-1``.
    The ray origin must lie outside all capsules.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    seg_a = np.ascontiguousarray(seg_a, dtype=np.float64).reshape(-1, 3)
    seg_b = np.ascontiguousarray(seg_b, dtype=np.float64).reshape(-1, 3)
    radius = np.ascontiguousarray(np.broadcast_to(np.asarray(radius, dtype=np.float64), seg_a.shape[:1]))
    if resolve_backend(backend) == "numba":
        return _cast_capsules_nb(origin, dirs, seg_a, seg_b, radius)
    return _cast_capsules_np(origin, dirs, seg_a, seg_b, radius)


# ---------------------------------------------------------------------------
# Gaussian heatmaps
# ---------------------------------------------------------------------------

@njit
def _gaussian_heatmaps_nb(centers, sigma, height, width):
    j_count = centers.shape[0]
    out = np.zeros((j_count, height, width))
    inv = 1.0 / (2.0 * sigma * sigma)
    for j in range(j_count):
        cx = centers[j, 0]
        cy = centers[j, 1]
        if not (cx == cx and cy == cy):
            continue
        for r in range(height):
            dy = r - cy
            for c in range(width):
                dx = c - cx
                out[j, r, c] = np.exp(-(dx * dx + dy * dy) * inv)
    return out


def _gaussian_heatmaps_np(centers, sigma, height, width):
    rows = np.arange(height, dtype=np.float64)[None, :, None]
    cols = np.arange(width, dtype=np.float64)[None, None, :]
    cx = centers[:, 0][:, None, None]
    cy = centers[:, 1][:, None, None]
    dx = cols - cx
    dy = rows - cy
    out = np.exp(-(dx * dx + dy * dy) * (1.0 / (2.0 * sigma * sigma)))
    absent = ~np.isfinite(centers).all(axis=1)
    out[absent] = 0.0
    return out


def gaussian_heatmaps(centers, sigma, height, width, backend=None):
    """Unnormalised Gaussians (peak 1) at ``centers`` given as (x, y) pixels.

    Rows of ``centers`` containing NaN produce all-zero channels.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    if resolve_backend(backend) == "numba":
        return _gaussian_heatmaps_nb(centers, float(sigma), int(height), int(width))
    return _gaussian_heatmaps_np(centers, float(sigma), int(height), int(width))
