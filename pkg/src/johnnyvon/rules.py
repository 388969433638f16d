"""Local state-transition rules and the per-step kernel.

Each step takes a snapshot of the integer state matrix; every rule reads the
snapshot (a machine sees its bonded neighbours as they were at the start of
the step) and writes the live matrix. Bond breaks are collected while the
rules run and committed together, then new bonds are formed, then forces are
accumulated and the poses integrated.

Signals travel one sideways hop per step. Every transition of interest is
appended to an event buffer as (step, kind, source, target).
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .model import (
    BEND_UP,
    GENE_UP,
    SPLIT_SHATTER,
    FOLD_ANGLE_RAD,
    FOLD_COUNTER,
    FOLD_NOW,
    FOLDED,
    IN_MESH,
    LEFT,
    N_COLUMNS,
    PHENE_UP,
    REPEL_COUNTER,
    REPLICATED,
    RESET_COUNTER,
    RIGHT,
    RIGHT_CLOSURE,
    RIGHT_STREAK,
    SEED_GENE,
    SEED_PHENE,
    SHATTER,
    SPLIT_NOW,
    SPLIT_STATE,
    STRAND_POSITION,
    STRESS_COUNTER,
    TYPE,
    UNFOLD,
    UP,
    UP_STREAK,
)
from .physics import (
    FOLD_SIGN,
    P_ANGLE_TOL,
    P_BREAK_STREAK,
    P_BROWN_F,
    P_BROWN_T,
    P_FIELD_R,
    P_FOLD_LIMIT,
    P_REPEL_STEPS,
    P_STRAND_WALK,
    P_STRESS_LIMIT,
    accumulate_forces,
    bond_geometry,
    build_grid,
    geometry_in_tolerance,
    grid_candidates,
    integrate,
    machine_tip,
    sideways_target,
    tips_overlap,
    wrap_angle,
)

# event kinds
EV_RESET_COUNTER = 0
EV_FOLD_NOW = 1
EV_UNFOLD = 2
EV_SHATTER = 3
EV_SPLIT_NOW = 4
EV_IN_MESH = 5
EV_SEED_PHENE = 6
EV_GENE_UP_BOND = 7
EV_CHILD_SIDEWAYS_BOND = 8
EV_PHENE_UP_BOND = 9
EV_CLOSURE_BOND = 10
EV_OVERLAP_BOND = 11
EV_SIDEWAYS_BROKEN = 12
EV_UP_BROKEN = 13
EV_BOND_SNAPPED = 14

EVENT_NAMES = (
    "ResetCounter",
    "FoldNow",
    "Unfold",
    "Shatter",
    "SplitNow",
    "InMesh",
    "SeedPhene",
    "GeneUpBond",
    "ChildSidewaysBond",
    "PheneUpBond",
    "ClosureBond",
    "OverlapBond",
    "SidewaysBroken",
    "UpBroken",
    "BondSnapped",
)
EVENT_CODES = {name: code for code, name in enumerate(EVENT_NAMES)}

# kernel status codes
OK = 0
BAD_POSE = 1
BAD_NEIGHBOURS = 2

BREAK_EXPECTED = 1
BREAK_UNEXPECTED = 2

ARM_L = 0
ARM_R = 1
ARM_U = 2
ARM_O = 4


def events_per_step_bound(n: int) -> int:
    return 24 * n + 64


@njit(cache=True)
def _emit(events, n_ev, step, kind, src, tgt):
    events[n_ev, 0] = step
    events[n_ev, 1] = kind
    events[n_ev, 2] = src
    events[n_ev, 3] = tgt
    return n_ev + 1


@njit(cache=True)
def is_free(S, i):
    return S[i, LEFT] < 0 and S[i, RIGHT] < 0 and S[i, UP] < 0


@njit(cache=True)
def derive(S, pose, params):
    """Per-bond and per-machine tolerance flags plus bend-location.

    tol_r[i] describes the bond on i's right arm, tol_u[i] i's up bond.
    A folded machine with a missing sideways neighbour (an open phene end)
    is never in tolerance.
    """
    n = S.shape[0]
    tol_r = np.ones(n, np.bool_)
    tol_u = np.ones(n, np.bool_)
    for i in range(n):
        r = S[i, RIGHT]
        if r >= 0:
            d, e = bond_geometry(pose, i, ARM_R, r, ARM_L, sideways_target(S, i, r), params)
            tol_r[i] = geometry_in_tolerance(d, e, params)
        u = S[i, UP]
        if u >= 0:
            d, e = bond_geometry(pose, i, ARM_U, u, ARM_U, np.pi, params)
            tol_u[i] = geometry_in_tolerance(d, e, params)
    mtol = np.ones(n, np.bool_)
    bend = np.zeros(n, np.int64)
    for i in range(n):
        l = S[i, LEFT]
        r = S[i, RIGHT]
        ok = True
        if r >= 0 and not tol_r[i]:
            ok = False
        if l >= 0 and not tol_r[l]:
            ok = False
        if S[i, UP] >= 0 and not tol_u[i]:
            ok = False
        if S[i, FOLDED] == 1 and (l < 0 or r < 0):
            ok = False
        mtol[i] = ok
        lb = l < 0 or S[l, TYPE] != 1
        rb = r < 0 or S[r, TYPE] != 1
        if lb and not rb:
            bend[i] = 1
        elif rb and not lb:
            bend[i] = 2
        elif lb and rb:
            bend[i] = 3
        else:
            bend[i] = 4
    return tol_r, tol_u, mtol, bend


@njit(cache=True)
def locally_complete(S, i):
    """Machine and its mirror partner agree with both sideways neighbours."""
    if S[i, FOLDED] == 1 or S[i, SHATTER] == 1 or S[i, UNFOLD] == 1:
        return False
    u = S[i, UP]
    if u < 0 or S[u, FOLDED] == 1 or S[u, SHATTER] == 1:
        return False
    l = S[i, LEFT]
    r = S[i, RIGHT]
    if l < 0 and r < 0:
        return False
    # mirror orientation: i.left's partner sits on the right of i's partner
    if l >= 0:
        ul = S[l, UP]
        if ul < 0 or S[u, RIGHT] != ul:
            return False
    elif S[u, RIGHT] >= 0:
        return False
    if r >= 0:
        ur = S[r, UP]
        if ur < 0 or S[u, LEFT] != ur:
            return False
    elif S[u, LEFT] >= 0:
        return False
    return True


@njit(cache=True)
def strand_walk(S, W, a, b, max_walk):
    """Bounded sideways walk from a: (b in same strand, any member unfolding)."""
    same = False
    unfolding = S[a, UNFOLD] == 1 or W[a, UNFOLD] == 1
    k = S[a, RIGHT]
    steps = 0
    closed = False
    while k >= 0 and steps < max_walk:
        if k == a:
            closed = True
            break
        if k == b:
            same = True
        if S[k, UNFOLD] == 1 or W[k, UNFOLD] == 1:
            unfolding = True
        k = S[k, RIGHT]
        steps += 1
    if not closed:
        k = S[a, LEFT]
        steps = 0
        while k >= 0 and steps < max_walk and k != a:
            if k == b:
                same = True
            if S[k, UNFOLD] == 1 or W[k, UNFOLD] == 1:
                unfolding = True
            k = S[k, LEFT]
            steps += 1
    return same, unfolding


@njit(cache=True)
def _fire(S, W, i, src, fired, brk_u, events, n_ev, step):
    """Split the up bond of i: both ends become replicated strands."""
    u = S[i, UP]
    lo = min(i, u)
    brk_u[lo] = max(brk_u[lo], BREAK_EXPECTED)
    for x in (i, u):
        W[x, REPLICATED] = 1
        W[x, REPEL_COUNTER] = 0
        W[x, FOLD_COUNTER] = 0
        W[x, SPLIT_STATE] = 1
        W[x, SPLIT_NOW] = 1
        W[x, RESET_COUNTER] = 0
        fired[x] = True
    n_ev = _emit(events, n_ev, step, EV_SPLIT_NOW, src, i)
    n_ev = _emit(events, n_ev, step, EV_SPLIT_NOW, i, u)
    if S[i, SEED_PHENE] == 1:
        W[i, SEED_PHENE] = 0
        W[u, FOLDED] = 1
        W[u, IN_MESH] = 1
        n_ev = _emit(events, n_ev, step, EV_SEED_PHENE, i, u)
    if S[u, SEED_PHENE] == 1:
        W[u, SEED_PHENE] = 0
        W[i, FOLDED] = 1
        W[i, IN_MESH] = 1
        n_ev = _emit(events, n_ev, step, EV_SEED_PHENE, u, i)
    return n_ev


@njit(cache=True)
def streak_update(S, W, tol_r, tol_u, brk_r, brk_u, params):
    """Count consecutive out-of-tolerance steps per bond; long streaks snap."""
    break_streak = int(params[P_BREAK_STREAK])
    for i in range(S.shape[0]):
        r = S[i, RIGHT]
        if r >= 0:
            if tol_r[i]:
                W[i, RIGHT_STREAK] = 0
            else:
                W[i, RIGHT_STREAK] = S[i, RIGHT_STREAK] + 1
                if W[i, RIGHT_STREAK] >= break_streak:
                    brk_r[i] = BREAK_UNEXPECTED
        u = S[i, UP]
        if u > i:
            if tol_u[i]:
                W[i, UP_STREAK] = 0
                W[u, UP_STREAK] = 0
            else:
                s = S[i, UP_STREAK] + 1
                W[i, UP_STREAK] = s
                W[u, UP_STREAK] = s
                if s >= break_streak:
                    brk_u[i] = BREAK_UNEXPECTED


@njit(cache=True)
def stress_update(S, W, mtol, params, step, events, n_ev):
    """Stress and repellor counters; a stressed machine unfolds or shatters."""
    repel_steps = int(params[P_REPEL_STEPS])
    stress_limit = int(params[P_STRESS_LIMIT])
    for i in range(S.shape[0]):
        if is_free(S, i) or mtol[i]:
            W[i, STRESS_COUNTER] = 0
        else:
            s = S[i, STRESS_COUNTER] + 1
            if s >= stress_limit and S[i, SHATTER] == 0:
                s = 0
                if S[i, FOLDED] == 1 and S[i, LEFT] >= 0 and S[i, RIGHT] >= 0:
                    if S[i, UNFOLD] == 0:
                        W[i, UNFOLD] = 1
                        n_ev = _emit(events, n_ev, step, EV_UNFOLD, i, i)
                else:
                    # unfolded strands and open-ended phene fragments
                    W[i, SHATTER] = 1
                    n_ev = _emit(events, n_ev, step, EV_SHATTER, i, i)
            W[i, STRESS_COUNTER] = s
        if S[i, REPEL_COUNTER] < repel_steps:
            W[i, REPEL_COUNTER] = S[i, REPEL_COUNTER] + 1
    return n_ev


@njit(cache=True)
def shatter_update(S, W, freed, brk_r, brk_u, step, events, n_ev):
    """Drop the bonds of shattering machines and pass the signal on.

    The signal crosses sideways bonds always, and an up bond only from a
    source that has replicated but not folded.
    """
    n = S.shape[0]
    for i in range(n):
        if S[i, SHATTER] == 1:
            freed[i] = True
            if S[i, RIGHT] >= 0:
                brk_r[i] = max(brk_r[i], BREAK_EXPECTED)
            l = S[i, LEFT]
            if l >= 0:
                brk_r[l] = max(brk_r[l], BREAK_EXPECTED)
            u = S[i, UP]
            if u >= 0:
                lo = min(i, u)
                brk_u[lo] = max(brk_u[lo], BREAK_EXPECTED)
    for i in range(n):
        if freed[i]:
            continue
        if S[i, SPLIT_STATE] == SPLIT_SHATTER:
            W[i, SPLIT_STATE] = 1
            if W[i, SHATTER] == 0:
                W[i, SHATTER] = 1
                n_ev = _emit(events, n_ev, step, EV_SHATTER, i, i)
        l = S[i, LEFT]
        r = S[i, RIGHT]
        u = S[i, UP]
        if W[i, SHATTER] == 0 and l >= 0 and S[l, SHATTER] == 1:
            W[i, SHATTER] = 1
            n_ev = _emit(events, n_ev, step, EV_SHATTER, l, i)
        if W[i, SHATTER] == 0 and r >= 0 and S[r, SHATTER] == 1:
            W[i, SHATTER] = 1
            n_ev = _emit(events, n_ev, step, EV_SHATTER, r, i)
        if (W[i, SHATTER] == 0 and u >= 0 and S[u, SHATTER] == 1
                and S[u, REPLICATED] == 1 and S[u, FOLDED] == 0):
            W[i, SHATTER] = 1
            n_ev = _emit(events, n_ev, step, EV_SHATTER, u, i)
    return n_ev


@njit(cache=True)
def unfold_update(S, W, freed, brk_r, brk_u, step, events, n_ev):
    """Unfolding turns a phene back into a gene that has left the mesh."""
    for i in range(S.shape[0]):
        if freed[i]:
            continue
        l = S[i, LEFT]
        r = S[i, RIGHT]
        if S[i, UNFOLD] == 1:
            W[i, UNFOLD] = 0
            W[i, FOLDED] = 0
            W[i, IN_MESH] = 0
            W[i, FOLD_COUNTER] = 0
            W[i, STRESS_COUNTER] = 0
            W[i, FOLD_NOW] = 0
            W[i, SPLIT_STATE] = 1
            u = S[i, UP]
            if u >= 0:
                lo = min(i, u)
                brk_u[lo] = max(brk_u[lo], BREAK_EXPECTED)
            # reopen the loop so the gene is a straight strand again
            if r >= 0 and S[i, RIGHT_CLOSURE] == 1:
                brk_r[i] = max(brk_r[i], BREAK_EXPECTED)
            if l >= 0 and S[l, RIGHT_CLOSURE] == 1:
                brk_r[l] = max(brk_r[l], BREAK_EXPECTED)
        elif S[i, FOLDED] == 1 and W[i, UNFOLD] == 0:
            src = -1
            if l >= 0 and S[l, UNFOLD] == 1 and not freed[l]:
                src = l
            elif r >= 0 and S[r, UNFOLD] == 1 and not freed[r]:
                src = r
            if src >= 0:
                W[i, UNFOLD] = 1
                n_ev = _emit(events, n_ev, step, EV_UNFOLD, src, i)
    return n_ev


@njit(cache=True)
def fold_signal_update(S, W, freed, params, step, events, n_ev):
    """Fold counter at the leftmost machine, reset-counter and fold-now waves."""
    n = S.shape[0]
    fold_limit = int(params[P_FOLD_LIMIT])
    for i in range(n):
        if S[i, RESET_COUNTER] == 1:
            W[i, RESET_COUNTER] = 0
        if S[i, FOLD_NOW] == 1:
            W[i, FOLD_NOW] = 0
    for i in range(n):
        if freed[i]:
            continue
        l = S[i, LEFT]
        r = S[i, RIGHT]
        if S[i, RESET_COUNTER] == 1 and l >= 0 and not freed[l]:
            W[l, RESET_COUNTER] = 1
            n_ev = _emit(events, n_ev, step, EV_RESET_COUNTER, i, l)
        if l < 0 and r >= 0 and S[i, FOLDED] == 0 and S[i, UNFOLD] == 0:
            if S[i, RESET_COUNTER] == 1:
                W[i, FOLD_COUNTER] = 0
            elif S[i, REPLICATED] == 1 or S[i, SEED_GENE] == 1:
                c = S[i, FOLD_COUNTER] + 1
                if c >= fold_limit and S[i, SEED_GENE] == 0 and W[i, SHATTER] == 0:
                    W[i, FOLDED] = 1
                    W[i, FOLD_NOW] = 1
                    W[i, FOLD_COUNTER] = 0
                    n_ev = _emit(events, n_ev, step, EV_FOLD_NOW, i, i)
                else:
                    W[i, FOLD_COUNTER] = min(c, fold_limit)
        if (S[i, FOLDED] == 0 and l >= 0 and S[l, FOLD_NOW] == 1 and not freed[l]
                and S[i, UNFOLD] == 0 and S[i, SEED_GENE] == 0):
            W[i, FOLDED] = 1
            W[i, FOLD_NOW] = 1
            n_ev = _emit(events, n_ev, step, EV_FOLD_NOW, l, i)
        # a partial child lets go once its template folds
        u = S[i, UP]
        if (u >= 0 and S[i, REPLICATED] == 0 and S[i, FOLDED] == 0 and S[u, FOLDED] == 1
                and W[i, SHATTER] == 0):
            W[i, SHATTER] = 1
            n_ev = _emit(events, n_ev, step, EV_SHATTER, i, i)
    return n_ev


@njit(cache=True)
def replication_split_update(S, W, freed, brk_u, step, events, n_ev):
    """Arm left to right through locally complete machines, then split.

    The rightmost armed machine fires first; every complete or armed machine
    next to one that fired this step fires on the next, so the split runs
    back along the strand one hop per step.
    """
    n = S.shape[0]
    fired = np.zeros(n, np.bool_)
    for i in range(n):
        if S[i, SPLIT_NOW] == 1:
            W[i, SPLIT_NOW] = 0
    for i in range(n):
        if freed[i] or fired[i] or S[i, SPLIT_STATE] == SPLIT_SHATTER:
            continue
        s = S[i, SPLIT_STATE]
        l = S[i, LEFT]
        r = S[i, RIGHT]
        u = S[i, UP]
        c = locally_complete(S, i)
        nb_fired = (l >= 0 and S[l, SPLIT_NOW] == 1) or (r >= 0 and S[r, SPLIT_NOW] == 1)
        pair_ok = (u >= 0 and not freed[u] and not fired[u] and S[i, FOLDED] == 0
                   and S[u, FOLDED] == 0 and W[i, SHATTER] == 0)
        if pair_ok and (s == 2 or s == 3) and nb_fired:
            src = l if (l >= 0 and S[l, SPLIT_NOW] == 1) else r
            n_ev = _fire(S, W, i, src, fired, brk_u, events, n_ev, step)
        elif s == 3:
            if c and r < 0 and pair_ok:
                n_ev = _fire(S, W, i, i, fired, brk_u, events, n_ev, step)
            elif not c:
                W[i, SPLIT_STATE] = SPLIT_SHATTER
        elif c:
            W[i, SPLIT_STATE] = 3 if (l < 0 or S[l, SPLIT_STATE] == 3) else 2
        else:
            W[i, SPLIT_STATE] = 1
    return n_ev


@njit(cache=True)
def mesh_membership_update(S, W, freed, tol_r, step, events, n_ev):
    """In-mesh spreads over phene up bonds and in-tolerance sideways bonds."""
    for i in range(S.shape[0]):
        if freed[i] or S[i, FOLDED] == 0 or S[i, IN_MESH] == 1:
            continue
        if S[i, UNFOLD] == 1 or W[i, UNFOLD] == 1 or W[i, SHATTER] == 1:
            continue
        u = S[i, UP]
        l = S[i, LEFT]
        r = S[i, RIGHT]
        src = -1
        if u >= 0 and _mesh_source(S, u):
            src = u
        elif l >= 0 and tol_r[l] and _mesh_source(S, l):
            src = l
        elif r >= 0 and tol_r[i] and _mesh_source(S, r):
            src = r
        if src >= 0:
            W[i, IN_MESH] = 1
            n_ev = _emit(events, n_ev, step, EV_IN_MESH, src, i)
    return n_ev


@njit(cache=True)
def _mesh_source(S, j):
    return S[j, FOLDED] == 1 and S[j, IN_MESH] == 1 and S[j, UNFOLD] == 0 and S[j, SHATTER] == 0


@njit(cache=True)
def _snap_both(W, freed, a, b, step, events, n_ev):
    for x in (a, b):
        if not freed[x] and W[x, SHATTER] == 0:
            W[x, SHATTER] = 1
            n_ev = _emit(events, n_ev, step, EV_SHATTER, x, x)
    return n_ev


@njit(cache=True)
def commit_breaks(S, W, freed, brk_r, brk_u, params, step, events, n_ev):
    """Apply collected bond breaks, then turn shattered machines free."""
    n = S.shape[0]
    for i in range(n):
        if brk_r[i] > 0:
            r = S[i, RIGHT]
            if r >= 0 and W[i, RIGHT] == r:
                W[i, RIGHT] = -1
                W[r, LEFT] = -1
                W[i, RIGHT_STREAK] = 0
                W[i, RIGHT_CLOSURE] = 0
                if brk_r[i] == BREAK_UNEXPECTED:
                    n_ev = _emit(events, n_ev, step, EV_BOND_SNAPPED, i, r)
                    n_ev = _snap_both(W, freed, i, r, step, events, n_ev)
                else:
                    n_ev = _emit(events, n_ev, step, EV_SIDEWAYS_BROKEN, i, r)
        if brk_u[i] > 0:
            u = S[i, UP]
            if u >= 0 and W[i, UP] == u:
                W[i, UP] = -1
                W[u, UP] = -1
                W[i, UP_STREAK] = 0
                W[u, UP_STREAK] = 0
                if brk_u[i] == BREAK_UNEXPECTED:
                    n_ev = _emit(events, n_ev, step, EV_BOND_SNAPPED, i, u)
                    n_ev = _snap_both(W, freed, i, u, step, events, n_ev)
                else:
                    n_ev = _emit(events, n_ev, step, EV_UP_BROKEN, i, u)
    repel_steps = int(params[P_REPEL_STEPS])
    for i in range(n):
        if freed[i]:
            for col in range(N_COLUMNS):
                if col != TYPE and col != LEFT and col != RIGHT and col != UP:
                    W[i, col] = 0
            W[i, REPEL_COUNTER] = repel_steps
            W[i, SPLIT_STATE] = 1
    return n_ev


@njit(cache=True)
def try_gene_up_bonds(S, W, pose, mtol, busy, start, items, params, step, events, n_ev):
    """A free machine joins an unfolded strand machine of the same type."""
    n = S.shape[0]
    reach2 = (2.0 * params[P_FIELD_R]) ** 2
    buf = np.empty(n, np.int64)
    for p in range(n):
        if busy[p] or S[p, FOLDED] == 1 or W[p, FOLDED] == 1 or S[p, UP] >= 0 or W[p, UP] >= 0:
            continue
        if (S[p, LEFT] < 0 and S[p, RIGHT] < 0) or (W[p, LEFT] < 0 and W[p, RIGHT] < 0):
            continue
        if not mtol[p]:
            continue
        px, py = machine_tip(pose, p, ARM_U, params)
        m = grid_candidates(pose[p, 0], pose[p, 1], start, items, params, buf)
        best = -1
        best_d2 = reach2
        for q in range(m):
            f = buf[q]
            if f == p or busy[f] or not is_free(S, f) or not is_free(W, f):
                continue
            if not GENE_UP[S[f, TYPE], S[p, TYPE]]:
                continue
            fx, fy = machine_tip(pose, f, ARM_U, params)
            d2 = (fx - px) ** 2 + (fy - py) ** 2
            if d2 < best_d2 or (d2 == best_d2 and best >= 0 and f < best):
                best = f
                best_d2 = d2
        if best >= 0:
            W[p, UP] = best
            W[best, UP] = p
            W[p, UP_STREAK] = 0
            W[best, UP_STREAK] = 0
            W[p, RESET_COUNTER] = 1
            n_ev = _emit(events, n_ev, step, EV_GENE_UP_BOND, p, best)
            n_ev = _emit(events, n_ev, step, EV_RESET_COUNTER, p, p)
    return n_ev


@njit(cache=True)
def try_child_sideways_bonds(S, W, pose, mtol, busy, params, step, events, n_ev):
    """Children of bonded parents bond in the mirror orientation.

    With parents P_A.right = P_B the children join as A.left = B, so the
    child reads as the reverse of the template.
    """
    for a in range(S.shape[0]):
        if busy[a]:
            continue
        pa = S[a, UP]
        if pa < 0 or W[a, UP] != pa or S[a, FOLDED] == 1 or S[pa, FOLDED] == 1:
            continue
        pb = S[pa, RIGHT]
        if pb < 0:
            continue
        b = S[pb, UP]
        if b < 0 or b == a or W[b, UP] != pb or busy[b] or S[b, FOLDED] == 1:
            continue
        if W[a, LEFT] >= 0 or W[b, RIGHT] >= 0 or S[a, LEFT] >= 0 or S[b, RIGHT] >= 0:
            continue
        if not (mtol[a] and mtol[b]):
            continue
        if not tips_overlap(pose, a, ARM_L, b, ARM_R, params):
            continue
        W[a, LEFT] = b
        W[b, RIGHT] = a
        W[b, RIGHT_STREAK] = 0
        W[b, RIGHT_CLOSURE] = 0
        n_ev = _emit(events, n_ev, step, EV_CHILD_SIDEWAYS_BOND, b, a)
    return n_ev


@njit(cache=True)
def try_phene_up_bonds(S, W, pose, mtol, bend, busy, start, items, params, step, events, n_ev):
    """Folded machines of two phenes bond up-to-up; one side must be in-mesh."""
    n = S.shape[0]
    reach2 = (2.0 * params[P_FIELD_R]) ** 2
    angle_tol = params[P_ANGLE_TOL]
    buf = np.empty(n, np.int64)
    for a in range(n):
        if busy[a] or S[a, FOLDED] == 0 or W[a, FOLDED] == 0 or S[a, UP] >= 0 or W[a, UP] >= 0:
            continue
        if not mtol[a]:
            continue
        ax, ay = machine_tip(pose, a, ARM_U, params)
        m = grid_candidates(pose[a, 0], pose[a, 1], start, items, params, buf)
        best = -1
        best_d2 = reach2
        for q in range(m):
            b = buf[q]
            if b == a or busy[b] or S[b, FOLDED] == 0 or W[b, FOLDED] == 0 or S[b, UP] >= 0 or W[b, UP] >= 0:
                continue
            if not mtol[b] or (S[a, IN_MESH] == 0 and S[b, IN_MESH] == 0):
                continue
            if not PHENE_UP[S[a, TYPE], S[b, TYPE]] or not BEND_UP[bend[a], bend[b]]:
                continue
            if abs(wrap_angle(pose[b, 2] - pose[a, 2] - np.pi)) > angle_tol:
                continue
            bx, by = machine_tip(pose, b, ARM_U, params)
            d2 = (bx - ax) ** 2 + (by - ay) ** 2
            if d2 < best_d2 or (d2 == best_d2 and best >= 0 and b < best):
                best = b
                best_d2 = d2
        if best >= 0:
            W[a, UP] = best
            W[best, UP] = a
            W[a, UP_STREAK] = 0
            W[best, UP_STREAK] = 0
            n_ev = _emit(events, n_ev, step, EV_PHENE_UP_BOND, a, best)
    return n_ev


@njit(cache=True)
def try_phene_closure_bonds(S, W, pose, busy, start, items, params, step, events, n_ev):
    """Join a folded machine's free right arm to a folded free left arm.

    The new bond is tagged as a closure so that unfolding reopens it.
    """
    n = S.shape[0]
    reach2 = (2.0 * params[P_FIELD_R]) ** 2
    angle_tol = params[P_ANGLE_TOL]
    buf = np.empty(n, np.int64)
    for b in range(n):
        if busy[b] or S[b, FOLDED] == 0 or W[b, FOLDED] == 0 or S[b, RIGHT] >= 0 or W[b, RIGHT] >= 0:
            continue
        if S[b, LEFT] < 0:
            continue
        bx, by = machine_tip(pose, b, ARM_R, params)
        m = grid_candidates(pose[b, 0], pose[b, 1], start, items, params, buf)
        best = -1
        best_d2 = reach2
        for q in range(m):
            a = buf[q]
            if a == b or a == S[b, LEFT] or busy[a] or S[a, FOLDED] == 0 or W[a, FOLDED] == 0:
                continue
            if S[a, LEFT] >= 0 or W[a, LEFT] >= 0 or S[a, RIGHT] < 0:
                continue
            target = FOLD_SIGN * FOLD_ANGLE_RAD[S[b, TYPE], S[a, TYPE]]
            if np.isnan(target) or abs(wrap_angle(pose[a, 2] - pose[b, 2] - target)) > angle_tol:
                continue
            ax, ay = machine_tip(pose, a, ARM_L, params)
            d2 = (ax - bx) ** 2 + (ay - by) ** 2
            if d2 < best_d2 or (d2 == best_d2 and best >= 0 and a < best):
                best = a
                best_d2 = d2
        if best >= 0:
            W[b, RIGHT] = best
            W[best, LEFT] = b
            W[b, RIGHT_STREAK] = 0
            W[b, RIGHT_CLOSURE] = 1
            n_ev = _emit(events, n_ev, step, EV_CLOSURE_BOND, b, best)
    return n_ev


@njit(cache=True)
def overlap_update(S, W, pose, busy, start, items, params, step, events, n_ev):
    """Aligned detectors of two in-mesh phenes: the lower id unfolds.

    The overlap bond is transient (formed and dropped in the same step), so
    only the event remains. A strand already unfolding is skipped, giving
    one cascade per collision.
    """
    n = S.shape[0]
    reach2 = (2.0 * params[P_FIELD_R]) ** 2
    angle_tol = params[P_ANGLE_TOL]
    max_walk = int(params[P_STRAND_WALK])
    buf = np.empty(n, np.int64)
    for a in range(n):
        if busy[a] or S[a, FOLDED] == 0 or S[a, IN_MESH] == 0:
            continue
        ax, ay = machine_tip(pose, a, ARM_O, params)
        m = grid_candidates(pose[a, 0], pose[a, 1], start, items, params, buf)
        best = -1
        for q in range(m):
            b = buf[q]
            if b == a or busy[b] or S[b, FOLDED] == 0 or S[b, IN_MESH] == 0:
                continue
            if best >= 0 and b > best:
                continue
            bx, by = machine_tip(pose, b, ARM_O, params)
            if (bx - ax) ** 2 + (by - ay) ** 2 >= reach2:
                continue
            if abs(wrap_angle(pose[b, 2] - pose[a, 2])) > angle_tol:
                continue
            same, a_unf = strand_walk(S, W, a, b, max_walk)
            if same or a_unf:
                continue
            _, b_unf = strand_walk(S, W, b, a, max_walk)
            if b_unf:
                continue
            best = b
        if best >= 0:
            root = min(a, best)
            n_ev = _emit(events, n_ev, step, EV_OVERLAP_BOND, a, best)
            W[root, UNFOLD] = 1
            n_ev = _emit(events, n_ev, step, EV_UNFOLD, root, root)
    return n_ev


@njit(cache=True)
def update_strand_positions(W):
    for i in range(W.shape[0]):
        l = W[i, LEFT]
        r = W[i, RIGHT]
        if l < 0 and r >= 0:
            W[i, STRAND_POSITION] = 1
        elif r < 0 and l >= 0:
            W[i, STRAND_POSITION] = 3
        else:
            W[i, STRAND_POSITION] = 2


@njit(cache=True)
def apply_rules(ist, pose, params, step, events, n_ev):
    """All discrete transitions of one step; returns the new event count."""
    n = ist.shape[0]
    S = ist.copy()
    W = ist
    tol_r, tol_u, mtol, bend = derive(S, pose, params)
    brk_r = np.zeros(n, np.int64)
    brk_u = np.zeros(n, np.int64)  # indexed by the lower id of the pair
    freed = np.zeros(n, np.bool_)

    streak_update(S, W, tol_r, tol_u, brk_r, brk_u, params)
    n_ev = stress_update(S, W, mtol, params, step, events, n_ev)
    n_ev = shatter_update(S, W, freed, brk_r, brk_u, step, events, n_ev)
    n_ev = unfold_update(S, W, freed, brk_r, brk_u, step, events, n_ev)
    n_ev = fold_signal_update(S, W, freed, params, step, events, n_ev)
    n_ev = replication_split_update(S, W, freed, brk_u, step, events, n_ev)
    n_ev = mesh_membership_update(S, W, freed, tol_r, step, events, n_ev)
    n_ev = commit_breaks(S, W, freed, brk_r, brk_u, params, step, events, n_ev)

    busy = np.zeros(n, np.bool_)
    for i in range(n):
        busy[i] = (freed[i] or S[i, SHATTER] == 1 or W[i, SHATTER] == 1
                   or S[i, UNFOLD] == 1 or W[i, UNFOLD] == 1)
    start, items = build_grid(pose, params)
    n_ev = try_gene_up_bonds(S, W, pose, mtol, busy, start, items, params, step, events, n_ev)
    n_ev = try_child_sideways_bonds(S, W, pose, mtol, busy, params, step, events, n_ev)
    n_ev = try_phene_up_bonds(S, W, pose, mtol, bend, busy, start, items, params, step, events, n_ev)
    n_ev = try_phene_closure_bonds(S, W, pose, busy, start, items, params, step, events, n_ev)
    n_ev = overlap_update(S, W, pose, busy, start, items, params, step, events, n_ev)
    update_strand_positions(W)
    return n_ev


@njit(cache=True)
def check_integrity(ist, pose):
    n = ist.shape[0]
    for i in range(n):
        if not (np.isfinite(pose[i, 0]) and np.isfinite(pose[i, 1]) and np.isfinite(pose[i, 2])):
            return BAD_POSE
        l = ist[i, LEFT]
        r = ist[i, RIGHT]
        u = ist[i, UP]
        if l >= n or r >= n or u >= n or l == i or r == i or u == i:
            return BAD_NEIGHBOURS
        if l >= 0 and ist[l, RIGHT] != i:
            return BAD_NEIGHBOURS
        if r >= 0 and ist[r, LEFT] != i:
            return BAD_NEIGHBOURS
        if u >= 0 and ist[u, UP] != i:
            return BAD_NEIGHBOURS
    return OK


@njit(cache=True)
def step_kernel(ist, pose, vel, params, step, seed, events, n_ev, force):
    """Advance the world from step to step + 1; returns (event count, status)."""
    n_ev = apply_rules(ist, pose, params, step, events, n_ev)
    start, items = build_grid(pose, params)
    noise = params[P_BROWN_F] > 0.0 or params[P_BROWN_T] > 0.0
    accumulate_forces(ist, pose, params, step, seed, start, items, force, noise)
    for i in range(force.shape[0]):
        for k in range(3):
            if not np.isfinite(force[i, k]):
                return n_ev, BAD_POSE
    if integrate(pose, vel, force, params) >= 0:
        return n_ev, BAD_POSE
    return n_ev, check_integrity(ist, pose)


@njit(cache=True)
def run_steps(ist, pose, vel, params, step0, nsteps, seed, events, n_ev, force, reserve):
    """Run up to nsteps steps, stopping early when the event buffer runs low."""
    done = 0
    status = OK
    while done < nsteps:
        if events.shape[0] - n_ev < reserve:
            break
        n_ev, status = step_kernel(ist, pose, vel, params, step0 + done, seed, events, n_ev, force)
        done += 1
        if status != OK:
            break
    return done, n_ev, status
