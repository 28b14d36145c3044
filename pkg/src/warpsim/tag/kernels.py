"""Numba kernels for Tag.

Every kernel takes an array of environment ids and loops agents in ascending
order inside each environment.  State is float32 in the store; arithmetic is
done in float64 and rounded back at fixed points so the pure-Python reference
can reproduce it exactly.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..rng import philox_uniform

TWO_PI = 2.0 * math.pi


# -- movement ------------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def move_discrete(action, x, y, grid_size):
    dx = 0
    dy = 0
    if action == 1:
        dy = 1
    elif action == 2:
        dy = -1
    elif action == 3:
        dx = -1
    elif action == 4:
        dx = 1
    nx = min(max(x + dx, 0), grid_size - 1)
    ny = min(max(y + dy, 0), grid_size - 1)
    return nx, ny


@nb.njit(nogil=True, cache=True)
def wrap_angle(d):
    if d >= TWO_PI:
        d -= TWO_PI
    elif d < 0.0:
        d += TWO_PI
    d = np.float64(np.float32(d))
    if d >= TWO_PI or d < 0.0:
        d = 0.0
    return d


@nb.njit(nogil=True, cache=True)
def move_continuous(accel, turn, speed, direction, x, y, max_speed, accel_delta, turn_delta, world):
    d = wrap_angle(direction + (turn - 1) * turn_delta)
    s = speed + (accel - 1) * accel_delta
    s = min(max(s, 0.0), max_speed)
    s = np.float64(np.float32(s))
    nx = min(max(x + s * math.cos(d), 0.0), world)
    ny = min(max(y + s * math.sin(d), 0.0), world)
    return s, d, np.float64(np.float32(nx)), np.float64(np.float32(ny))


@nb.njit(nogil=True, cache=True)
def move_discrete_kernel(env_ids, done, active, actions, loc_x, loc_y, grid_size):
    n = loc_x.shape[1]
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        if done[e]:
            continue
        for a in range(n):
            if not active[e, a]:
                continue
            act = actions[e, a, 0]
            if act < 0 or act >= 5:
                return e * n + a
            nx, ny = move_discrete(act, int(loc_x[e, a]), int(loc_y[e, a]), grid_size)
            loc_x[e, a] = nx
            loc_y[e, a] = ny
    return -1


@nb.njit(nogil=True, cache=True)
def move_continuous_kernel(
    env_ids, done, active, is_tagger, actions, loc_x, loc_y, speed, direction,
    max_speed_tagger, max_speed_runner, accel_delta, turn_delta, world,
):
    n = loc_x.shape[1]
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        if done[e]:
            continue
        for a in range(n):
            if not active[e, a]:
                continue
            acc = actions[e, a, 0]
            turn = actions[e, a, 1]
            if acc < 0 or acc >= 3 or turn < 0 or turn >= 3:
                return e * n + a
            ms = max_speed_tagger if is_tagger[e, a] else max_speed_runner
            s, d, nx, ny = move_continuous(
                acc, turn, np.float64(speed[e, a]), np.float64(direction[e, a]),
                np.float64(loc_x[e, a]), np.float64(loc_y[e, a]), ms, accel_delta, turn_delta, world,
            )
            speed[e, a] = s
            direction[e, a] = d
            loc_x[e, a] = nx
            loc_y[e, a] = ny
    return -1


# -- spatial buckets -----------------------------------------------------


@nb.njit(nogil=True, cache=True)
def _bucket_of(x, inv_h, side):
    b = int(x * inv_h)
    if b >= side:
        b = side - 1
    if b < 0:
        b = 0
    return b


@nb.njit(nogil=True, cache=True)
def build_buckets(e, include, loc_x, loc_y, side, inv_h, starts, order):
    """Counting sort of the included agents of env ``e`` into side*side cells.

    Agents of cell c are ``order[starts[c]:starts[c + 1]]`` in ascending id.
    """
    n = loc_x.shape[1]
    nb_cells = side * side
    for c in range(nb_cells + 1):
        starts[c] = 0
    for a in range(n):
        if include[a]:
            c = _bucket_of(loc_y[e, a], inv_h, side) * side + _bucket_of(loc_x[e, a], inv_h, side)
            starts[c + 1] += 1
    for c in range(nb_cells):
        starts[c + 1] += starts[c]
    fill = starts[:nb_cells].copy()
    for a in range(n):
        if include[a]:
            c = _bucket_of(loc_y[e, a], inv_h, side) * side + _bucket_of(loc_x[e, a], inv_h, side)
            order[fill[c]] = a
            fill[c] += 1


# -- tag resolution --------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def resolve_tags_kernel(
    env_ids, done, stepped, active, is_tagger, loc_x, loc_y, step_count,
    tag_credits, tagged, episode_length, radius, side, inv_h,
):
    n = loc_x.shape[1]
    r2 = radius * radius
    reach = 0
    if radius > 0.0:
        reach = int(math.ceil(radius * inv_h)) + 1
    starts = np.empty(side * side + 1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    include = np.empty(n, dtype=np.bool_)
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        for a in range(n):
            tag_credits[e, a] = 0
            tagged[e, a] = False
        if done[e]:
            stepped[e] = False
            continue
        stepped[e] = True
        step_count[e] += 1
        for a in range(n):
            include[a] = is_tagger[e, a] and active[e, a]
        build_buckets(e, include, loc_x, loc_y, side, inv_h, starts, order)
        runners_left = 0
        for a in range(n):
            if is_tagger[e, a] or not active[e, a]:
                continue
            xr = np.float64(loc_x[e, a])
            yr = np.float64(loc_y[e, a])
            bx = _bucket_of(xr, inv_h, side)
            by = _bucket_of(yr, inv_h, side)
            best = -1
            best_d = 0.0
            for cy in range(max(by - reach, 0), min(by + reach, side - 1) + 1):
                for cx in range(max(bx - reach, 0), min(bx + reach, side - 1) + 1):
                    c = cy * side + cx
                    for p in range(starts[c], starts[c + 1]):
                        t = order[p]
                        dx = np.float64(loc_x[e, t]) - xr
                        dy = np.float64(loc_y[e, t]) - yr
                        d2 = dx * dx + dy * dy
                        if d2 <= r2 and (best < 0 or d2 < best_d or (d2 == best_d and t < best)):
                            best = t
                            best_d = d2
            if best >= 0:
                active[e, a] = False
                tagged[e, a] = True
                tag_credits[e, best] += 1
            else:
                runners_left += 1
        done[e] = step_count[e] >= episode_length or runners_left == 0
    return -1


# -- observations ----------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def _write_neighbor(o, p, e, j, xi, yi, loc_x, loc_y, is_tagger, active, speed, direction,
                    continuous, world, max_speed_tagger, max_speed_runner):
    o[p] = (np.float64(loc_x[e, j]) - xi) / world
    o[p + 1] = (np.float64(loc_y[e, j]) - yi) / world
    o[p + 2] = 1.0 if is_tagger[e, j] else 0.0
    o[p + 3] = 1.0 if active[e, j] else 0.0
    if continuous:
        ms = max_speed_tagger if is_tagger[e, j] else max_speed_runner
        d = np.float64(direction[e, j])
        o[p + 4] = np.float64(speed[e, j]) / ms
        o[p + 5] = math.sin(d)
        o[p + 6] = math.cos(d)
        return p + 7
    return p + 4


@nb.njit(nogil=True, cache=True)
def _insert_nearest(best_d, best_j, count, k, d2, j):
    if count == k and (d2 > best_d[k - 1] or (d2 == best_d[k - 1] and j > best_j[k - 1])):
        return count
    pos = count if count < k else k - 1
    while pos > 0 and (best_d[pos - 1] > d2 or (best_d[pos - 1] == d2 and best_j[pos - 1] > j)):
        best_d[pos] = best_d[pos - 1]
        best_j[pos] = best_j[pos - 1]
        pos -= 1
    best_d[pos] = d2
    best_j[pos] = j
    return count + 1 if count < k else k


@nb.njit(nogil=True, cache=True)
def k_nearest(e, a, k, loc_x, loc_y, side, inv_h, starts, order, best_d, best_j):
    """Fill best_j[:k] with the k nearest others of agent a (ties by id)."""
    xi = np.float64(loc_x[e, a])
    yi = np.float64(loc_y[e, a])
    bx = _bucket_of(xi, inv_h, side)
    by = _bucket_of(yi, inv_h, side)
    h = 1.0 / inv_h
    max_r = max(max(bx, side - 1 - bx), max(by, side - 1 - by))
    count = 0
    r = 0
    while True:
        for cy in range(by - r, by + r + 1):
            if cy < 0 or cy >= side:
                continue
            edge = cy == by - r or cy == by + r
            step = 1 if edge else 2 * r
            cx = bx - r
            while cx <= bx + r:
                if 0 <= cx < side:
                    c = cy * side + cx
                    for p in range(starts[c], starts[c + 1]):
                        j = order[p]
                        if j == a:
                            continue
                        dx = np.float64(loc_x[e, j]) - xi
                        dy = np.float64(loc_y[e, j]) - yi
                        count = _insert_nearest(best_d, best_j, count, k, dx * dx + dy * dy, j)
                if step == 0:
                    break
                cx += step
        if r >= max_r:
            break
        if count == k:
            bound = r * h
            if best_d[k - 1] < bound * bound * (1.0 - 1e-9):
                break
        r += 1
    return count


@nb.njit(nogil=True, cache=True)
def observe_env(
    e, obs, loc_x, loc_y, is_tagger, active, speed, direction, step_count,
    continuous, partial, k, world, episode_length, max_speed_tagger, max_speed_runner,
    side, inv_h, starts, order, include, best_d, best_j,
):
    n = loc_x.shape[1]
    if partial:
        # tagged agents stay observable (active flag 0) at the cell where they were caught
        for a in range(n):
            include[a] = True
        build_buckets(e, include, loc_x, loc_y, side, inv_h, starts, order)
    t_norm = np.float64(step_count[e]) / episode_length
    for a in range(n):
        o = obs[e, a]
        if not active[e, a]:
            o[:] = 0.0
            continue
        xi = np.float64(loc_x[e, a])
        yi = np.float64(loc_y[e, a])
        p = 0
        if partial:
            found = k_nearest(e, a, k, loc_x, loc_y, side, inv_h, starts, order, best_d, best_j)
            for q in range(found):
                p = _write_neighbor(o, p, e, best_j[q], xi, yi, loc_x, loc_y, is_tagger, active,
                                    speed, direction, continuous, world, max_speed_tagger,
                                    max_speed_runner)
        else:
            for j in range(n):
                if j == a:
                    continue
                p = _write_neighbor(o, p, e, j, xi, yi, loc_x, loc_y, is_tagger, active,
                                    speed, direction, continuous, world, max_speed_tagger,
                                    max_speed_runner)
        o[p] = xi / world
        o[p + 1] = yi / world
        p += 2
        if continuous:
            ms = max_speed_tagger if is_tagger[e, a] else max_speed_runner
            d = np.float64(direction[e, a])
            o[p] = np.float64(speed[e, a]) / ms
            o[p + 1] = math.sin(d)
            o[p + 2] = math.cos(d)
            p += 3
        o[p] = t_norm


@nb.njit(nogil=True, cache=True)
def observe_reward_kernel(
    env_ids, only_stepped, stepped, obs, rewards, loc_x, loc_y, is_tagger, active, speed,
    direction, step_count, tag_credits, tagged, continuous, partial, k, world, episode_length,
    max_speed_tagger, max_speed_runner, tag_reward, tagged_penalty, side, inv_h,
):
    n = loc_x.shape[1]
    starts = np.empty(side * side + 1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    include = np.empty(n, dtype=np.bool_)
    best_d = np.empty(max(k, 1), dtype=np.float64)
    best_j = np.empty(max(k, 1), dtype=np.int64)
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        if only_stepped and not stepped[e]:
            for a in range(n):
                rewards[e, a] = 0.0
            continue
        for a in range(n):
            if is_tagger[e, a]:
                rewards[e, a] = tag_credits[e, a] * tag_reward
            elif tagged[e, a]:
                rewards[e, a] = tagged_penalty
            else:
                rewards[e, a] = 0.0
        observe_env(e, obs, loc_x, loc_y, is_tagger, active, speed, direction, step_count,
                    continuous, partial, k, world, episode_length, max_speed_tagger,
                    max_speed_runner, side, inv_h, starts, order, include, best_d, best_j)
    return -1


# -- placement -------------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def place_kernel(env_ids, episode, seed, loc_x, loc_y, direction, continuous, grid_size, world):
    n = loc_x.shape[1]
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        ep = episode[e]
        for a in range(n):
            ux = philox_uniform(seed, ep, e, a, 0, 0)
            uy = philox_uniform(seed, ep, e, a, 0, 1)
            if continuous:
                loc_x[e, a] = ux * world
                loc_y[e, a] = uy * world
                direction[e, a] = wrap_angle(philox_uniform(seed, ep, e, a, 0, 2) * TWO_PI)
            else:
                loc_x[e, a] = min(int(ux * grid_size), grid_size - 1)
                loc_y[e, a] = min(int(uy * grid_size), grid_size - 1)
