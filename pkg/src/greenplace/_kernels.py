"""Compiled inner loops for the ACO and PSO solvers.

Everything here works on host *indices* (0..M-1) and integer resource
arrays of shape (M, 4). Random numbers are always drawn by the caller and
passed in, so the kernels are pure and reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def fits(res, i, d):
    for r in range(4):
        if res[i, r] < d[r]:
            return False
    return True


@njit(cache=True)
def objective(load, count, capacity, alpha, beta, normalized):
    """Active-host count and residual wastage over CPU, RAM and BW."""
    n_active = 0
    waste = 0.0
    for i in range(load.shape[0]):
        if count[i] > 0:
            n_active += 1
            for r in range(3):
                residual = capacity[i, r] - load[i, r]
                if normalized:
                    waste += residual / capacity[i, r]
                else:
                    waste += residual
    return alpha * n_active + beta * waste


@njit(cache=True)
def objective_of_assignments(assign, base_load, base_count, demand, capacity,
                             alpha, beta, normalized):
    """Objective for each row of ``assign`` (rows x N host indices) on top of a base load."""
    n_rows, n = assign.shape
    out = np.empty(n_rows)
    for s in range(n_rows):
        load = base_load.copy()
        count = base_count.copy()
        for j in range(n):
            i = assign[s, j]
            count[i] += 1
            for r in range(4):
                load[i, r] += demand[j, r]
        out[s] = objective(load, count, capacity, alpha, beta, normalized)
    return out


@njit(cache=True)
def choose(weights, u1, u2, q0):
    """Pseudo-random proportional rule over non-negative weights.

    Returns -1 when every weight is zero.
    """
    m = weights.shape[0]
    best = -1
    best_w = 0.0
    total = 0.0
    for i in range(m):
        w = weights[i]
        total += w
        if w > best_w:
            best_w = w
            best = i
    if best < 0:
        return -1
    if u1 < q0:
        return best
    threshold = u2 * total
    acc = 0.0
    last = -1
    for i in range(m):
        w = weights[i]
        if w > 0.0:
            acc += w
            last = i
            if acc > threshold:
                return i
    return last


@njit(cache=True)
def construct(demand, vm_type, free0, active0, cpu_capacity, idle, dynamic,
              carbon_factor, tau_pow, beta_heur, q0, eps, uniforms):
    """Build one solution per ant.

    ``tau_pow`` is the pheromone matrix already raised to its exponent.

    ``uniforms`` has shape (ants, N, 2). Returns (ants, N) host indices with
    -1 rows for ants that got stuck, and the index of the VM each stuck ant
    failed on (-1 when it completed).
    """
    n_ants = uniforms.shape[0]
    n, m = demand.shape[0], free0.shape[0]
    out = np.full((n_ants, n), -1, dtype=np.int64)
    stuck = np.full(n_ants, -1, dtype=np.int64)
    weights = np.empty(m)
    for a in range(n_ants):
        res = free0.copy()
        active = active0.copy()
        for j in range(n):
            d = demand[j]
            for i in range(m):
                if fits(res, i, d):
                    delta = dynamic[i] * d[0] / cpu_capacity[i]
                    if not active[i]:
                        delta += idle[i]
                    eta = 1.0 / (eps + delta * carbon_factor)
                    if beta_heur == 2.0:
                        h = eta * eta
                    elif beta_heur == 1.0:
                        h = eta
                    else:
                        h = eta ** beta_heur
                    weights[i] = tau_pow[i, vm_type[j]] * h
                else:
                    weights[i] = 0.0
            pick = choose(weights, uniforms[a, j, 0], uniforms[a, j, 1], q0)
            if pick < 0:
                stuck[a] = j
                for jj in range(n):
                    out[a, jj] = -1
                break
            out[a, j] = pick
            active[pick] = True
            for r in range(4):
                res[pick, r] -= d[r]
    return out, stuck


@njit(cache=True)
def perturb(current, free, demand, p_perturb, uniforms):
    """Initial swarm: row 0 is ``current``; other rows move each VM with
    probability ``p_perturb`` to a uniformly chosen feasible alternative host.

    ``free`` is the residual with all candidate VMs removed; ``uniforms`` has
    shape (S, N, 2).
    """
    s_count, n = uniforms.shape[0], current.shape[0]
    m = free.shape[0]
    out = np.empty((s_count, n), dtype=np.int64)
    options = np.empty(m, dtype=np.int64)
    for s in range(s_count):
        res = free.copy()
        for j in range(n):
            out[s, j] = current[j]
            for r in range(4):
                res[current[j], r] -= demand[j, r]
        if s == 0:
            continue
        for j in range(n):
            if uniforms[s, j, 0] >= p_perturb:
                continue
            src = out[s, j]
            for r in range(4):
                res[src, r] += demand[j, r]
            k = 0
            for i in range(m):
                if i != src and fits(res, i, demand[j]):
                    options[k] = i
                    k += 1
            dst = src
            if k > 0:
                dst = options[min(int(uniforms[s, j, 1] * k), k - 1)]
            out[s, j] = dst
            for r in range(4):
                res[dst, r] -= demand[j, r]
    return out


@njit(cache=True)
def decode(scores, previous, free, demand):
    """Feasible discretisation of real scores (S, M, N).

    Columns are processed in index order (callers sort them by decreasing
    CPU demand). Each VM goes to the feasible host with the highest score,
    lowest index on ties. If some VM finds no feasible host the particle keeps
    its ``previous`` assignment.
    """
    s_count, m, n = scores.shape
    out = np.empty((s_count, n), dtype=np.int64)
    for s in range(s_count):
        res = free.copy()
        ok = True
        for j in range(n):
            best = -1
            best_score = -np.inf
            for i in range(m):
                if scores[s, i, j] > best_score and fits(res, i, demand[j]):
                    best_score = scores[s, i, j]
                    best = i
            if best < 0:
                ok = False
                break
            out[s, j] = best
            for r in range(4):
                res[best, r] -= demand[j, r]
        if not ok:
            for j in range(n):
                out[s, j] = previous[s, j]
    return out
