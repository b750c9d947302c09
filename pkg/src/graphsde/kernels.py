"""Compiled single-particle step kernels and ensemble drivers.

Everything here is numba-compiled and free of Python-object traffic: graphs
and coefficient fields arrive as packed arrays, random variates come from the
counter-based streams in :mod:`graphsde.rng`, and each particle's trajectory
is a pure function of ``(seed, particle index)``.  Ensemble drivers partition
particles into fixed-size chunks (independent of the worker count), so
per-chunk integer statistics merge to bit-identical totals under any
scheduling.

Step semantics
--------------
A macro step advances one particle by ``dt``.  A free Euler-Maruyama proposal
that lands beyond a vertex is split: the quadratic first-passage solve yields
the fraction ``alpha`` of the step that reaches the vertex exactly, the exit
edge is resampled from the vertex's jump weights, and the remaining
``(1 - alpha) * dt`` is simulated recursively.  The star kernel resolves
at-vertex excursions with one-sided (|W|) proposals; the general kernel keeps
signed proposals from edge endpoints, which subsumes the one-sided excursion
(a W pointing off the edge re-hits the vertex after zero elapsed time and
resamples the exit slot).  ``M`` counts vertex resolutions within the step
and is capped; a capped step parks the particle at the vertex and flags
truncation rather than silently continuing.

Draw buffering
--------------
Steps read raw 64-bit words through a small per-particle lookahead buffer:
the words for draw indices ``kbase .. kbase+BUF-1`` are generated in one
batch (cheap, since independent counters pipeline through Philox), then
consumed one draw at a time.  Buffering changes only *when* a word is
computed, never its value, so results are identical to unbuffered draws.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .rng import raw64, u64_to_normal, u64_to_uniform

#: Particles per scheduling chunk.  Fixed so that chunk decomposition (and
#: therefore per-chunk statistics) does not depend on the worker count.
CHUNK = 4096

#: Raw draws generated per buffer refill.
BUF = 64

# initial-placement codes used by the ensemble drivers
INIT_POINT = 0
INIT_PER_EDGE_UNIFORM = 1

_HOT = dict(inline="always", cache=True, fastmath=True, error_model="numpy")


@njit(**_HOT)
def _fetch(seed, pid, k, kbase, buf):
    """Raw word for draw ``k``; refills the lookahead buffer when exhausted."""
    off = k - kbase
    if off >= BUF:
        kbase = k
        for j in range(BUF):
            buf[j] = raw64(seed, pid, kbase + j)
        off = 0
    return buf[off], k + 1, kbase


@njit(**_HOT)
def drift_at(dkind, dcoef, tab_off, tab_x, tab_mu, e, x):
    kd = dkind[e]
    if kd == 0:
        return dcoef[e]
    if kd == 1:
        return dcoef[e] * x
    lo = tab_off[e]
    hi = tab_off[e + 1]
    if x <= tab_x[lo]:
        return tab_mu[lo]
    if x >= tab_x[hi - 1]:
        return tab_mu[hi - 1]
    j = lo + 1
    while tab_x[j] < x:
        j += 1
    x0 = tab_x[j - 1]
    t = (x - x0) / (tab_x[j] - x0)
    return tab_mu[j - 1] + t * (tab_mu[j] - tab_mu[j - 1])


@njit(**_HOT)
def solve_first_passage_s(a, b, c):
    """First s >= 0 where a*s^2 + b*s + c crosses from >= 0 to <= 0.

    The path starts at c >= 0 (distance to the vertex) and ends at
    a + b + c <= 0 when the caller detected an overshoot, so a crossing in
    [0, 1] exists.  Chooses the stable quadratic branch, returns s clamped to
    [0, 1], or -1.0 if the inputs admit no crossing (precondition violated).
    """
    if c < 0.0:
        return 0.0
    if c == 0.0:
        # starting on the vertex: an inward push crosses immediately, an
        # outward push first returns at the nonzero root
        if b <= 0.0:
            return 0.0
        if a >= 0.0:
            return -1.0
        s = -b / a
        return s if s < 1.0 else 1.0
    if a == 0.0:
        if b >= 0.0:
            return -1.0
        s = -c / b
        return s if s < 1.0 else 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        disc = 0.0
    sq = np.sqrt(disc)
    if b >= 0.0:
        q = -0.5 * (b + sq)
    else:
        q = -0.5 * (b - sq)
    s = -1.0
    r1 = q / a
    if r1 >= 0.0:
        s = r1
    if q != 0.0:
        r2 = c / q
        if r2 >= 0.0 and (s < 0.0 or r2 < s):
            s = r2
    if s < 0.0:
        return -1.0
    return s if s < 1.0 else 1.0


@njit(**_HOT)
def _pick_slot(v_off, v_cumw, v, u):
    lo = v_off[v]
    hi = v_off[v + 1]
    slot = hi - 1
    for j in range(lo, hi):
        if u <= v_cumw[j]:
            slot = j
            break
    return slot


@njit(**_HOT)
def step_star(
    edge,
    x,
    dt,
    seed,
    pid,
    k,
    kbase,
    buf,
    v_off,
    v_edges,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
    reflect_len,
):
    """One macro step on a star graph (single vertex 0, semi-infinite edges).

    Returns ``(edge, x, M, truncated, k, kbase)`` where ``M`` is the number
    of at-vertex excursion attempts resolved within the step and ``k`` the
    advanced draw counter.  ``reflect_len > 0`` enables an optional mirror
    wall at that radius (off by default; matches a truncated-domain
    convention rather than the semi-infinite one).
    """
    M = 0
    if x > 0.0:
        r, k, kbase = _fetch(seed, pid, k, kbase, buf)
        w = u64_to_normal(r)
        mu = drift_at(dkind, dcoef, tab_off, tab_x, tab_mu, edge, x)
        a = mu * dt
        b = sigma[edge] * np.sqrt(dt) * w
        xn = x + a + b
        if xn > 0.0:
            if reflect_len > 0.0 and xn > reflect_len:
                xn = 2.0 * reflect_len - xn
                if xn < 0.0:
                    xn = 0.0
            return edge, xn, 0, False, k, kbase
        s = solve_first_passage_s(a, b, x)
        if s < 0.0:
            s = 1.0
        dt = (1.0 - s * s) * dt
        if dt < 0.0:
            dt = 0.0
    # at the vertex: sample the exit edge, attempt a one-sided excursion,
    # consume the excursion's return time on failure, repeat
    while True:
        M += 1
        r, k, kbase = _fetch(seed, pid, k, kbase, buf)
        u = u64_to_uniform(r)
        slot = _pick_slot(v_off, v_cumw, 0, u)
        edge = v_edges[slot]
        r, k, kbase = _fetch(seed, pid, k, kbase, buf)
        w = u64_to_normal(r)
        mu0 = drift_at(dkind, dcoef, tab_off, tab_x, tab_mu, edge, 0.0)
        sig0 = sigma[edge]
        xn = mu0 * dt + sig0 * np.sqrt(dt) * abs(w)
        if xn >= 0.0:
            if reflect_len > 0.0 and xn > reflect_len:
                xn = 2.0 * reflect_len - xn
                if xn < 0.0:
                    xn = 0.0
            return edge, xn, M, False, k, kbase
        alpha = (w * w * sig0 * sig0) / (mu0 * mu0 * dt)
        dt = (1.0 - alpha) * dt
        if dt <= 0.0:
            return edge, 0.0, M, False, k, kbase
        if M >= cap:
            return edge, 0.0, M, True, k, kbase


@njit(**_HOT)
def step_general(
    edge,
    x,
    dt,
    seed,
    pid,
    k,
    kbase,
    buf,
    edge_init,
    edge_term,
    edge_len,
    v_off,
    v_edges,
    v_orient,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
):
    """One macro step on a general metric graph with finite edge lengths.

    Both endpoints are live: the proposal is accepted strictly inside
    ``(0, l_e)``, otherwise the step splits at the hit endpoint and the exit
    slot of the hit vertex is resampled before the next proposal.  Returns
    ``(edge, x, M, truncated, k, kbase)`` with ``M`` the number of vertex
    hits.
    """
    M = 0
    while True:
        l = edge_len[edge]
        if x <= 0.0 or x >= l:
            v = edge_init[edge] if x <= 0.0 else edge_term[edge]
            r, k, kbase = _fetch(seed, pid, k, kbase, buf)
            u = u64_to_uniform(r)
            slot = _pick_slot(v_off, v_cumw, v, u)
            edge = v_edges[slot]
            l = edge_len[edge]
            x = 0.0 if v_orient[slot] == 0 else l
        r, k, kbase = _fetch(seed, pid, k, kbase, buf)
        w = u64_to_normal(r)
        mu = drift_at(dkind, dcoef, tab_off, tab_x, tab_mu, edge, x)
        a = mu * dt
        b = sigma[edge] * np.sqrt(dt) * w
        xn = x + a + b
        if 0.0 < xn < l:
            return edge, xn, M, False, k, kbase
        M += 1
        if xn <= 0.0:
            s = solve_first_passage_s(a, b, x)
            x = 0.0
        else:
            s = solve_first_passage_s(-a, -b, l - x)
            x = l
        if s < 0.0:
            s = 1.0
        dt = (1.0 - s * s) * dt
        if dt <= 0.0:
            return edge, x, M, False, k, kbase
        if M >= cap:
            return edge, x, M, True, k, kbase


@njit(**_HOT)
def _place_particle(seed, pid, init_kind, init_edge, init_x, init_xmax, edge_len):
    k = 0
    if init_kind == INIT_POINT:
        return init_edge, init_x, k
    u = u64_to_uniform(raw64(seed, pid, k))
    k += 1
    m = edge_len.shape[0]
    edge = int(u * m)
    if edge >= m:
        edge = m - 1
    u2 = u64_to_uniform(raw64(seed, pid, k))
    k += 1
    span = init_xmax
    if edge_len[edge] < span:
        span = edge_len[edge]
    return edge, u2 * span, k


@njit(parallel=True, cache=True, fastmath=True, error_model="numpy")
def ensemble_star(
    seed,
    n_particles,
    n_steps,
    dt,
    init_kind,
    init_edge,
    init_x,
    init_xmax,
    edge_len,
    v_off,
    v_edges,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
    reflect_len,
    out_edge,
    out_x,
    out_cross,
    out_events,
    out_trunc,
    m_hist,
):
    n_chunks = m_hist.shape[0]
    for cidx in prange(n_chunks):
        buf = np.empty(BUF, dtype=np.uint64)
        lo = cidx * CHUNK
        hi = lo + CHUNK
        if hi > n_particles:
            hi = n_particles
        for i in range(lo, hi):
            edge, x, k = _place_particle(
                seed, i, init_kind, init_edge, init_x, init_xmax, edge_len
            )
            kbase = k - BUF
            crossings = 0
            events = 0
            truncs = 0
            for _ in range(n_steps):
                edge, x, M, trunc, k, kbase = step_star(
                    edge, x, dt, seed, i, k, kbase, buf,
                    v_off, v_edges, v_cumw,
                    dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                    cap, reflect_len,
                )
                if M > 0:
                    crossings += M
                    events += 1
                    mm = M
                    if mm > cap:
                        mm = cap
                    m_hist[cidx, mm] += 1
                    if trunc:
                        truncs += 1
            out_edge[i] = edge
            out_x[i] = x
            out_cross[i] = crossings
            out_events[i] = events
            out_trunc[i] = truncs


@njit(parallel=True, cache=True, fastmath=True, error_model="numpy")
def ensemble_general(
    seed,
    n_particles,
    n_steps,
    dt,
    init_kind,
    init_edge,
    init_x,
    init_xmax,
    edge_init,
    edge_term,
    edge_len,
    v_off,
    v_edges,
    v_orient,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
    out_edge,
    out_x,
    out_cross,
    out_events,
    out_trunc,
    m_hist,
):
    n_chunks = m_hist.shape[0]
    for cidx in prange(n_chunks):
        buf = np.empty(BUF, dtype=np.uint64)
        lo = cidx * CHUNK
        hi = lo + CHUNK
        if hi > n_particles:
            hi = n_particles
        for i in range(lo, hi):
            edge, x, k = _place_particle(
                seed, i, init_kind, init_edge, init_x, init_xmax, edge_len
            )
            kbase = k - BUF
            crossings = 0
            events = 0
            truncs = 0
            for _ in range(n_steps):
                edge, x, M, trunc, k, kbase = step_general(
                    edge, x, dt, seed, i, k, kbase, buf,
                    edge_init, edge_term, edge_len,
                    v_off, v_edges, v_orient, v_cumw,
                    dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                    cap,
                )
                if M > 0:
                    crossings += M
                    events += 1
                    mm = M
                    if mm > cap:
                        mm = cap
                    m_hist[cidx, mm] += 1
                    if trunc:
                        truncs += 1
            out_edge[i] = edge
            out_x[i] = x
            out_cross[i] = crossings
            out_events[i] = events
            out_trunc[i] = truncs


@njit(parallel=True, cache=True, fastmath=True, error_model="numpy")
def vertex_trials_star(
    seed,
    n_trials,
    dt,
    v_off,
    v_edges,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
    out_M,
    out_edge,
    out_x,
    out_trunc,
):
    """One macro step per trial, started at the star vertex."""
    for i in prange(n_trials):
        buf = np.empty(BUF, dtype=np.uint64)
        edge, x, M, trunc, _, _ = step_star(
            0, 0.0, dt, seed, i, 0, -BUF, buf,
            v_off, v_edges, v_cumw,
            dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
            cap, 0.0,
        )
        out_M[i] = M
        out_edge[i] = edge
        out_x[i] = x
        out_trunc[i] = 1 if trunc else 0


@njit(parallel=True, cache=True, fastmath=True, error_model="numpy")
def vertex_trials_general(
    seed,
    n_trials,
    dt,
    start_edge,
    start_x,
    edge_init,
    edge_term,
    edge_len,
    v_off,
    v_edges,
    v_orient,
    v_cumw,
    dkind,
    dcoef,
    tab_off,
    tab_x,
    tab_mu,
    sigma,
    cap,
    out_M,
    out_edge,
    out_x,
    out_trunc,
):
    """One macro step per trial, started at a designated vertex endpoint."""
    for i in prange(n_trials):
        buf = np.empty(BUF, dtype=np.uint64)
        edge, x, M, trunc, _, _ = step_general(
            start_edge, start_x, dt, seed, i, 0, -BUF, buf,
            edge_init, edge_term, edge_len,
            v_off, v_edges, v_orient, v_cumw,
            dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
            cap,
        )
        out_M[i] = M
        out_edge[i] = edge
        out_x[i] = x
        out_trunc[i] = 1 if trunc else 0
