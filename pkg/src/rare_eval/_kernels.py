"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Set ``RARE_EVAL_NUMBA=0`` to force the numpy path (useful when numba is
unavailable or for benchmarking; see ``python -m rare_eval.bench``).

Both backends consume identical pre-drawn uniform arrays and produce
bit-identical outputs, so the backend choice never affects results.
All randomness is drawn by callers; kernels are pure functions.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = HAVE_NUMBA and os.environ.get("RARE_EVAL_NUMBA", "1").strip().lower() not in {
    "0",
    "false",
    "no",
    "off",
}


# ---------------------------------------------------------------------------
# Bernoulli episode batch: failed[i] = uniforms[i] < fail_prob[state[i]]

def _bernoulli_episodes_loop(state_idx, uniforms, fail_prob, failed):
    for i in range(state_idx.shape[0]):
        failed[i] = 1 if uniforms[i] < fail_prob[state_idx[i]] else 0


_bernoulli_episodes_jit = njit(cache=True)(_bernoulli_episodes_loop)


def bernoulli_episodes_numpy(state_idx, uniforms, fail_prob):
    return (uniforms < fail_prob[state_idx]).astype(np.uint8)


def bernoulli_episodes(state_idx, uniforms, fail_prob):
    if USE_NUMBA:
        failed = np.empty(state_idx.shape[0], dtype=np.uint8)
        _bernoulli_episodes_jit(state_idx, uniforms, fail_prob, failed)
        return failed
    return bernoulli_episodes_numpy(state_idx, uniforms, fail_prob)


def bernoulli_episodes_loop_backend(state_idx, uniforms, fail_prob):
    failed = np.empty(state_idx.shape[0], dtype=np.uint8)
    (_bernoulli_episodes_jit if HAVE_NUMBA else _bernoulli_episodes_loop)(
        state_idx, uniforms, fail_prob, failed
    )
    return failed


# ---------------------------------------------------------------------------
# Downward random walk with a reflecting top and an absorbing floor at 0.
# down_prob is per-episode; uniforms has one row per episode and one column
# per step.  Entries after absorption are ignored (but were drawn, keeping
# stream consumption identical across backends).

def _walk_episodes_loop(start_pos, down_prob, horizon, top, uniforms, failed, steps):
    for i in range(start_pos.shape[0]):
        pos = start_pos[i]
        q = down_prob[i]
        failed[i] = 0
        steps[i] = horizon
        for h in range(horizon):
            if uniforms[i, h] < q:
                pos -= 1
            else:
                pos = pos + 1 if pos < top else top
            if pos == 0:
                failed[i] = 1
                steps[i] = h + 1
                break


_walk_episodes_jit = njit(cache=True)(_walk_episodes_loop)


def walk_episodes_numpy(start_pos, down_prob, horizon, top, uniforms):
    n = start_pos.shape[0]
    pos = start_pos.astype(np.int64).copy()
    failed = np.zeros(n, dtype=np.uint8)
    steps = np.full(n, horizon, dtype=np.int64)
    alive = pos > 0
    for h in range(horizon):
        if not alive.any():
            break
        down = uniforms[:, h] < down_prob
        nxt = np.where(down, pos - 1, np.minimum(pos + 1, top))
        pos = np.where(alive, nxt, pos)
        absorbed = alive & (pos == 0)
        failed[absorbed] = 1
        steps[absorbed] = h + 1
        alive = alive & (pos > 0)
    return failed, steps


def walk_episodes(start_pos, down_prob, horizon, top, uniforms):
    if USE_NUMBA:
        n = start_pos.shape[0]
        failed = np.empty(n, dtype=np.uint8)
        steps = np.empty(n, dtype=np.int64)
        _walk_episodes_jit(start_pos, down_prob, horizon, top, uniforms, failed, steps)
        return failed, steps
    return walk_episodes_numpy(start_pos, down_prob, horizon, top, uniforms)


def walk_episodes_loop_backend(start_pos, down_prob, horizon, top, uniforms):
    n = start_pos.shape[0]
    failed = np.empty(n, dtype=np.uint8)
    steps = np.empty(n, dtype=np.int64)
    (_walk_episodes_jit if HAVE_NUMBA else _walk_episodes_loop)(
        start_pos, down_prob, horizon, top, uniforms, failed, steps
    )
    return failed, steps


# ---------------------------------------------------------------------------
# Candidate selection: per row, argmax of scores over candidate states with
# ties broken by the row's uniform (uniform choice among tied candidates).

def _select_candidates_loop(cand, scores, tie_uniforms, selected):
    rows, n = cand.shape
    for i in range(rows):
        best = -np.inf
        ties = 0
        for j in range(n):
            v = scores[cand[i, j]]
            if v > best:
                best = v
                ties = 1
            elif v == best:
                ties += 1
        pick = int(tie_uniforms[i] * ties)
        if pick >= ties:  # guard u == 1.0 (cannot happen with [0,1) draws)
            pick = ties - 1
        seen = 0
        for j in range(n):
            if scores[cand[i, j]] == best:
                if seen == pick:
                    selected[i] = cand[i, j]
                    break
                seen += 1


_select_candidates_jit = njit(cache=True)(_select_candidates_loop)


def select_candidates_numpy(cand, scores, tie_uniforms):
    vals = scores[cand]
    best = vals.max(axis=1)
    tied = vals == best[:, None]
    counts = tied.sum(axis=1)
    pick = np.minimum((tie_uniforms * counts).astype(np.int64), counts - 1)
    order = tied.cumsum(axis=1)
    col = np.argmax(tied & (order == (pick + 1)[:, None]), axis=1)
    return cand[np.arange(cand.shape[0]), col]


def select_candidates(cand, scores, tie_uniforms):
    if USE_NUMBA:
        selected = np.empty(cand.shape[0], dtype=np.int64)
        _select_candidates_jit(cand, scores, tie_uniforms, selected)
        return selected
    return select_candidates_numpy(cand, scores, tie_uniforms)


def select_candidates_loop_backend(cand, scores, tie_uniforms):
    selected = np.empty(cand.shape[0], dtype=np.int64)
    (_select_candidates_jit if HAVE_NUMBA else _select_candidates_loop)(
        cand, scores, tie_uniforms, selected
    )
    return selected


# ---------------------------------------------------------------------------
# Rejection scan: accept proposal i when uniforms[i] < accept_prob[cand[i]];
# stop after `need` acceptances.  Returns (accepted states, count, scanned).

def _rejection_scan_loop(cand, uniforms, accept_prob, need, accepted):
    taken = 0
    scanned = 0
    for i in range(cand.shape[0]):
        scanned += 1
        if uniforms[i] < accept_prob[cand[i]]:
            accepted[taken] = cand[i]
            taken += 1
            if taken == need:
                break
    return taken, scanned


_rejection_scan_jit = njit(cache=True)(_rejection_scan_loop)


def rejection_scan_numpy(cand, uniforms, accept_prob, need):
    mask = uniforms < accept_prob[cand]
    hits = np.flatnonzero(mask)
    if hits.shape[0] >= need:
        scanned = int(hits[need - 1]) + 1
        return cand[hits[:need]].astype(np.int64), need, scanned
    return cand[hits].astype(np.int64), int(hits.shape[0]), int(cand.shape[0])


def rejection_scan(cand, uniforms, accept_prob, need):
    if USE_NUMBA:
        accepted = np.empty(need, dtype=np.int64)
        taken, scanned = _rejection_scan_jit(cand, uniforms, accept_prob, need, accepted)
        return accepted[:taken], int(taken), int(scanned)
    return rejection_scan_numpy(cand, uniforms, accept_prob, need)


def rejection_scan_loop_backend(cand, uniforms, accept_prob, need):
    accepted = np.empty(need, dtype=np.int64)
    taken, scanned = (_rejection_scan_jit if HAVE_NUMBA else _rejection_scan_loop)(
        cand, uniforms, accept_prob, need, accepted
    )
    return accepted[:taken], int(taken), int(scanned)


BACKEND = "numba" if USE_NUMBA else "numpy"
