# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: rotor power terms, path costs, exhaustive route search.

Mirrors ``safefleet.kernels.pure`` expression for expression. Arithmetic is
kept in the same order as the fallback (and the extension is built with
-ffp-contract=off) so both backends emit the same doubles.
"""

from libc.math cimport sqrt, pow, INFINITY


def hover_terms(double cd, double rho, double sol, double area,
                double omega, double radius, double k, double weight):
    cdef double blade = cd / 8.0 * rho * sol * area * pow(omega, 3.0) * pow(radius, 3.0)
    cdef double induced = (1.0 + k) * pow(weight, 1.5) / sqrt(2.0 * rho * area)
    return blade, induced


def propulsion_terms(double v, double blade_p0, double induced_pi,
                     double v0, double u_tip, double d0,
                     double rho, double sol, double area):
    cdef double ratio2 = v * v / (2.0 * v0 * v0)
    cdef double induced = induced_pi * sqrt(sqrt(1.0 + pow(v, 4.0) / (4.0 * pow(v0, 4.0))) - ratio2)
    cdef double blade = blade_p0 * (1.0 + 3.0 * v * v / (u_tip * u_tip))
    cdef double parasite = 0.5 * d0 * rho * sol * area * pow(v, 3.0)
    return induced, blade, parasite


cdef double _path_cost(double start_x, double start_y,
                       double* xs, double* ys, int n,
                       bint do_return, double return_x, double return_y) noexcept nogil:
    cdef double cx = start_x
    cdef double cy = start_y
    cdef double total = 0.0
    cdef double dx, dy
    cdef int i
    for i in range(n):
        dx = xs[i] - cx
        dy = ys[i] - cy
        total += sqrt(dx * dx + dy * dy)
        cx = xs[i]
        cy = ys[i]
    if do_return:
        dx = return_x - cx
        dy = return_y - cy
        total += sqrt(dx * dx + dy * dy)
    return total


def path_cost(double start_x, double start_y, xs, ys, bint do_return,
              double return_x=0.0, double return_y=0.0):
    cdef int n = len(xs)
    if n > 8:
        raise ValueError(f"at most 8 stops supported, got {n}")
    cdef double bx[8]
    cdef double by[8]
    cdef int i
    for i in range(n):
        bx[i] = xs[i]
        by[i] = ys[i]
    return _path_cost(start_x, start_y, bx, by, n, do_return, return_x, return_y)


def best_route(double start_x, double start_y, xs, ys, bint do_return,
               double return_x=0.0, double return_y=0.0):
    """Exhaustive minimum over all stop permutations; lexicographic ties-first.

    Returns (cost, index order) exactly like the pure fallback.
    """
    cdef int n = len(xs)
    if n > 8:
        raise ValueError(f"at most 8 stops supported, got {n}")
    cdef double dx, dy
    if n == 0:
        if do_return:
            dx = return_x - start_x
            dy = return_y - start_y
            return sqrt(dx * dx + dy * dy), ()
        return 0.0, ()

    cdef double bx[8]
    cdef double by[8]
    cdef double px[8]
    cdef double py[8]
    cdef int perm[8]
    cdef int best[8]
    cdef int i, j, k, tmp
    for i in range(n):
        bx[i] = xs[i]
        by[i] = ys[i]
        perm[i] = i

    cdef double best_cost = INFINITY
    cdef double cost
    cdef bint more = True
    while more:
        for i in range(n):
            px[i] = bx[perm[i]]
            py[i] = by[perm[i]]
        cost = _path_cost(start_x, start_y, px, py, n, do_return, return_x, return_y)
        if cost < best_cost:
            best_cost = cost
            for i in range(n):
                best[i] = perm[i]
        # next lexicographic permutation of perm[0..n)
        more = False
        i = n - 2
        while i >= 0:
            if perm[i] < perm[i + 1]:
                j = n - 1
                while perm[j] <= perm[i]:
                    j -= 1
                tmp = perm[i]; perm[i] = perm[j]; perm[j] = tmp
                # reverse suffix
                j = i + 1
                k = n - 1
                while j < k:
                    tmp = perm[j]; perm[j] = perm[k]; perm[k] = tmp
                    j += 1
                    k -= 1
                more = True
                break
            i -= 1

    return best_cost, tuple(best[i] for i in range(n))
