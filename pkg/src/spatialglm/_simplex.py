"""Network simplex kernel for the dense transportation problem.

Solves  min <X, C>  s.t.  X 1 = a,  X' 1 = b,  X >= 0  exactly (to floating
point) on the complete bipartite graph.  Classic primal network simplex with
an artificial root node, block pivot search, and subtree-local potential
updates; tailored to the balanced, uncapacitated transportation case where
no arc upper bounds exist.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# status codes returned by _solve
OK = 0
PIVOT_LIMIT = 1
UNBOUNDED = 2


@njit(cache=True)
def _solve(a, b, C, big, tol, max_pivots):  # pragma: no cover - jitted
    ns = a.shape[0]
    nt = b.shape[0]
    V = ns + nt + 1
    root = V - 1
    m_real = ns * nt
    n_arcs = m_real + V - 1

    parent = np.empty(V, np.int64)
    pred = np.empty(V, np.int64)
    fwd = np.empty(V, np.bool_)
    flow = np.zeros(V, np.float64)
    pcost = np.zeros(V, np.float64)
    pot = np.zeros(V, np.float64)
    depth = np.zeros(V, np.int64)

    # children as doubly linked sibling lists
    head = np.full(V, -1, np.int64)
    nxt = np.full(V, -1, np.int64)
    prv = np.full(V, -1, np.int64)
    stack = np.empty(V, np.int64)

    # initial tree: every node hangs off the root through its artificial arc
    for v in range(V - 1):
        parent[v] = root
        pred[v] = m_real + v
        pcost[v] = big
        depth[v] = 1
        if v < ns:
            fwd[v] = True  # source -> root
            flow[v] = a[v]
            pot[v] = big
        else:
            fwd[v] = False  # root -> sink
            flow[v] = b[v - ns]
            pot[v] = -big
        nxt[v] = head[root]
        if head[root] != -1:
            prv[head[root]] = v
        head[root] = v
        prv[v] = -1
    parent[root] = -1
    pred[root] = -1

    block = 64
    if n_arcs > 64 * 64:
        block = int(np.sqrt(n_arcs)) + 1
    pos = 0

    pivots = 0
    while True:
        # --- entering arc: best reduced cost within scanned blocks ---
        best = -1
        best_rc = -tol
        scanned = 0
        while scanned < n_arcs:
            cnt = 0
            while cnt < block and scanned < n_arcs:
                aid = pos
                if aid < m_real:
                    i = aid // nt
                    j = aid - i * nt
                    rc = C[i, j] - pot[i] + pot[ns + j]
                else:
                    v = aid - m_real
                    if v < ns:
                        rc = big - pot[v] + pot[root]
                    else:
                        rc = big - pot[root] + pot[v]
                if rc < best_rc:
                    # skip arcs already in the tree (float noise guard)
                    if aid < m_real:
                        te = aid // nt
                        he = ns + (aid - te * nt)
                    else:
                        v = aid - m_real
                        te = v if v < ns else root
                        he = root if v < ns else v
                    if pred[te] != aid and pred[he] != aid:
                        best_rc = rc
                        best = aid
                pos += 1
                if pos == n_arcs:
                    pos = 0
                cnt += 1
                scanned += 1
            if best >= 0:
                break
        if best < 0:
            break  # optimal

        pivots += 1
        if pivots > max_pivots:
            return np.nan, np.nan, PIVOT_LIMIT, pivots

        if best < m_real:
            te = best // nt
            he = ns + (best - te * nt)
            ecost = C[te, best - te * nt]
        else:
            v = best - m_real
            te = v if v < ns else root
            he = root if v < ns else v
            ecost = big

        # --- ratio test along the cycle closed by the entering arc ---
        # cycle direction pushes flow te -> he, returning he ~> lca ~> te
        theta = np.inf
        leave = -1
        on_te_side = True
        uu = te
        vv = he
        while depth[uu] > depth[vv]:
            if fwd[uu] and flow[uu] < theta:  # arc uu->parent opposes push
                theta = flow[uu]
                leave = uu
                on_te_side = True
            uu = parent[uu]
        while depth[vv] > depth[uu]:
            if (not fwd[vv]) and flow[vv] < theta:  # arc parent->vv opposes push
                theta = flow[vv]
                leave = vv
                on_te_side = False
            vv = parent[vv]
        while uu != vv:
            if fwd[uu] and flow[uu] < theta:
                theta = flow[uu]
                leave = uu
                on_te_side = True
            if (not fwd[vv]) and flow[vv] < theta:
                theta = flow[vv]
                leave = vv
                on_te_side = False
            uu = parent[uu]
            vv = parent[vv]
        if leave < 0:
            return np.nan, np.nan, UNBOUNDED, pivots

        # --- apply flow change along both sides of the cycle ---
        x = te
        y = he
        while depth[x] > depth[y]:
            flow[x] += -theta if fwd[x] else theta
            x = parent[x]
        while depth[y] > depth[x]:
            flow[y] += theta if fwd[y] else -theta
            y = parent[y]
        while x != y:
            flow[x] += -theta if fwd[x] else theta
            flow[y] += theta if fwd[y] else -theta
            x = parent[x]
            y = parent[y]

        # --- structural update: detach subtree under the leaving arc and
        # re-root it at the entering arc's inside endpoint ---
        if on_te_side:
            q_in = te
            q_out = he
            delta = ecost - pot[te] + pot[he]  # potentials in T* shift by rc
        else:
            q_in = he
            q_out = te
            delta = -(ecost - pot[te] + pot[he])

        node = q_in
        new_parent = q_out
        new_arc = best
        new_fwd = q_in == te
        new_flow = theta
        new_cost = ecost
        while True:
            old_parent = parent[node]
            old_arc = pred[node]
            old_fwd = fwd[node]
            old_flow = flow[node]
            old_cost = pcost[node]
            # unlink node from its old parent's child list
            if prv[node] != -1:
                nxt[prv[node]] = nxt[node]
            else:
                head[old_parent] = nxt[node]
            if nxt[node] != -1:
                prv[nxt[node]] = prv[node]
            # relink under the new parent
            parent[node] = new_parent
            pred[node] = new_arc
            fwd[node] = new_fwd
            flow[node] = new_flow
            pcost[node] = new_cost
            nxt[node] = head[new_parent]
            if head[new_parent] != -1:
                prv[head[new_parent]] = node
            head[new_parent] = node
            prv[node] = -1
            if node == leave:
                break
            new_parent = node
            new_arc = old_arc
            new_fwd = not old_fwd
            new_flow = old_flow
            new_cost = old_cost
            node = old_parent

        # --- refresh potentials and depths inside the moved subtree ---
        sp = 0
        stack[sp] = q_in
        sp += 1
        pot[q_in] += delta
        depth[q_in] = depth[q_out] + 1
        while sp > 0:
            sp -= 1
            p = stack[sp]
            c = head[p]
            while c != -1:
                pot[c] += delta
                depth[c] = depth[p] + 1
                stack[sp] = c
                sp += 1
                c = nxt[c]

    cost = 0.0
    art = 0.0
    for v in range(V - 1):
        if pred[v] < m_real:
            cost += flow[v] * pcost[v]
        elif flow[v] > art:
            art = flow[v]
    return cost, art, OK, pivots


def transport_cost(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> float:
    """Exact minimum transportation cost between mass vectors a and b."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError("cost matrix shape does not match mass vectors")
    cmax = float(C.max()) if C.size else 0.0
    big = cmax + 1.0
    tol = 1e-11 * big
    max_pivots = 200 * (a.size + b.size + 10)
    cost, art, status, _ = _solve(a, b, C, big, tol, max_pivots)
    if status == PIVOT_LIMIT:
        raise RuntimeError("network simplex exceeded its pivot budget")
    if status == UNBOUNDED:
        raise RuntimeError("network simplex found an unbounded cycle (bad input)")
    total = max(float(a.sum()), float(b.sum()), 1.0)
    if art > 1e-7 * total:
        raise RuntimeError(f"transportation problem infeasible (residual {art:g})")
    return float(cost)
