"""Pure numpy geometry kernels.

Reference implementation of the hot loops. ``_ckernels.pyx`` mirrors every
function here with the same signature and semantics; ``kernels`` picks one at
import time.

Conventions shared by both backends:

* ``segs`` is an ``(M, >=4)`` float64 array of ``x0, y0, x1, y1`` rows.
* ``discs`` is a ``(K, >=3)`` float64 array of ``x, y, radius`` rows.
* Missing hits are ``inf``.  A ray starting inside a disc hits it at 0.
"""
import numpy as np

_PARALLEL_EPS = 1e-12


def ray_hit_matrix(ox, oy, angles, segs, discs):
    """Distance along each ray to every obstacle, shape ``(n_rays, M + K)``."""
    angles = np.asarray(angles, dtype=np.float64)
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    n = angles.shape[0]
    m = segs.shape[0]
    k = discs.shape[0]
    out = np.full((n, m + k), np.inf)

    if m:
        ax = segs[:, 0][None, :]
        ay = segs[:, 1][None, :]
        ex = (segs[:, 2] - segs[:, 0])[None, :]
        ey = (segs[:, 3] - segs[:, 1])[None, :]
        wx = ax - ox
        wy = ay - oy
        denom = dx * ey - dy * ex
        ok = np.abs(denom) > _PARALLEL_EPS
        safe = np.where(ok, denom, 1.0)
        t = (wx * ey - wy * ex) / safe
        u = (wx * dy - wy * dx) / safe
        hit = ok & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
        out[:, :m] = np.where(hit, t, np.inf)

    if k:
        fx = ox - discs[:, 0][None, :]
        fy = oy - discs[:, 1][None, :]
        r = discs[:, 2][None, :]
        b = fx * dx + fy * dy
        c = fx * fx + fy * fy - r * r
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t = -b - root
        hit = (disc >= 0.0) & (t >= 0.0)
        res = np.where(hit, t, np.inf)
        inside = np.broadcast_to(c <= 0.0, res.shape)
        res = np.where(inside, 0.0, res)
        out[:, m:] = res
    return out


def ray_cast(ox, oy, angles, segs, discs):
    """Nearest hit distance per ray (``inf`` when nothing is hit)."""
    angles = np.asarray(angles, dtype=np.float64)
    if segs.shape[0] + discs.shape[0] == 0:
        return np.full(angles.shape[0], np.inf)
    return ray_hit_matrix(ox, oy, angles, segs, discs).min(axis=1)


def points_min_distance(points, segs, discs, chunk=4096):
    """Distance from each point to the nearest obstacle boundary.

    Points inside a disc get 0. Returns ``inf`` for an empty obstacle set.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = points.shape[0]
    out = np.full(n, np.inf)
    m = segs.shape[0]
    k = discs.shape[0]
    if m + k == 0:
        return out
    for start in range(0, n, chunk):
        px = points[start:start + chunk, 0][:, None]
        py = points[start:start + chunk, 1][:, None]
        best = np.full(px.shape[0], np.inf)
        if m:
            ax = segs[:, 0][None, :]
            ay = segs[:, 1][None, :]
            ex = (segs[:, 2] - segs[:, 0])[None, :]
            ey = (segs[:, 3] - segs[:, 1])[None, :]
            ll = ex * ex + ey * ey
            s = ((px - ax) * ex + (py - ay) * ey) / np.where(ll > 0.0, ll, 1.0)
            s = np.clip(s, 0.0, 1.0)
            qx = ax + s * ex - px
            qy = ay + s * ey - py
            best = np.minimum(best, np.sqrt(qx * qx + qy * qy).min(axis=1))
        if k:
            cx = discs[:, 0][None, :] - px
            cy = discs[:, 1][None, :] - py
            d = np.sqrt(cx * cx + cy * cy) - discs[:, 2][None, :]
            best = np.minimum(best, np.maximum(d, 0.0).min(axis=1))
        out[start:start + chunk] = best
    return out
