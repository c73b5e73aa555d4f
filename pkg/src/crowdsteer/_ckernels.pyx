# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

cnp.import_array()

cdef double PARALLEL_EPS = 1e-12


cdef inline double _ray_segment(double ox, double oy, double dx, double dy,
                                double ax, double ay, double bx, double by) nogil:
    cdef double ex = bx - ax
    cdef double ey = by - ay
    cdef double denom = dx * ey - dy * ex
    cdef double wx, wy, t, u
    if fabs(denom) <= PARALLEL_EPS:
        return INFINITY
    wx = ax - ox
    wy = ay - oy
    t = (wx * ey - wy * ex) / denom
    u = (wx * dy - wy * dx) / denom
    if t >= 0.0 and u >= 0.0 and u <= 1.0:
        return t
    return INFINITY


cdef inline double _ray_disc(double ox, double oy, double dx, double dy,
                             double cx, double cy, double r) nogil:
    cdef double fx = ox - cx
    cdef double fy = oy - cy
    cdef double b = fx * dx + fy * dy
    cdef double c = fx * fx + fy * fy - r * r
    cdef double disc, t
    if c <= 0.0:
        return 0.0
    disc = b * b - c
    if disc < 0.0:
        return INFINITY
    t = -b - sqrt(disc)
    if t >= 0.0:
        return t
    return INFINITY


def ray_hit_matrix(double ox, double oy, angles, segs, discs):
    cdef const double[:] ang = np.ascontiguousarray(angles, dtype=np.float64)
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64)
    cdef const double[:, :] d = np.ascontiguousarray(discs, dtype=np.float64)
    cdef Py_ssize_t n = ang.shape[0]
    cdef Py_ssize_t m = s.shape[0]
    cdef Py_ssize_t k = d.shape[0]
    out_arr = np.empty((n, m + k), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy
    with nogil:
        for i in range(n):
            dx = cos(ang[i])
            dy = sin(ang[i])
            for j in range(m):
                out[i, j] = _ray_segment(ox, oy, dx, dy, s[j, 0], s[j, 1], s[j, 2], s[j, 3])
            for j in range(k):
                out[i, m + j] = _ray_disc(ox, oy, dx, dy, d[j, 0], d[j, 1], d[j, 2])
    return out_arr


def ray_cast(double ox, double oy, angles, segs, discs):
    cdef const double[:] ang = np.ascontiguousarray(angles, dtype=np.float64)
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64)
    cdef const double[:, :] d = np.ascontiguousarray(discs, dtype=np.float64)
    cdef Py_ssize_t n = ang.shape[0]
    cdef Py_ssize_t m = s.shape[0]
    cdef Py_ssize_t k = d.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy, best, t
    with nogil:
        for i in range(n):
            dx = cos(ang[i])
            dy = sin(ang[i])
            best = INFINITY
            for j in range(m):
                t = _ray_segment(ox, oy, dx, dy, s[j, 0], s[j, 1], s[j, 2], s[j, 3])
                if t < best:
                    best = t
            for j in range(k):
                t = _ray_disc(ox, oy, dx, dy, d[j, 0], d[j, 1], d[j, 2])
                if t < best:
                    best = t
            out[i] = best
    return out_arr


def points_min_distance(points, segs, discs, chunk=None):
    cdef const double[:, :] p = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64).reshape(-1, 2))
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64)
    cdef const double[:, :] d = np.ascontiguousarray(discs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t m = s.shape[0]
    cdef Py_ssize_t k = d.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef Py_ssize_t i, j
    cdef double px, py, ex, ey, ll, t, qx, qy, dist, best
    with nogil:
        for i in range(n):
            px = p[i, 0]
            py = p[i, 1]
            best = INFINITY
            for j in range(m):
                ex = s[j, 2] - s[j, 0]
                ey = s[j, 3] - s[j, 1]
                ll = ex * ex + ey * ey
                if ll > 0.0:
                    t = ((px - s[j, 0]) * ex + (py - s[j, 1]) * ey) / ll
                else:
                    t = 0.0
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                qx = s[j, 0] + t * ex - px
                qy = s[j, 1] + t * ey - py
                dist = sqrt(qx * qx + qy * qy)
                if dist < best:
                    best = dist
            for j in range(k):
                qx = d[j, 0] - px
                qy = d[j, 1] - py
                dist = sqrt(qx * qx + qy * qy) - d[j, 2]
                if dist < 0.0:
                    dist = 0.0
                if dist < best:
                    best = dist
            out[i] = best
    return out_arr
