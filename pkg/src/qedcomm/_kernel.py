"""Compiled inner loops: gradient descent on the other-play loss and relaxed map fitting.

Each mirrors a numpy reference (``training._evaluate`` and ``symmetry._fit_numpy``);
the test-suite checks the two against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TRACE_FIELDS = ("iteration", "total", "cross_entropy", "entropy", "energy", "accuracy")


@njit(cache=True)
def _softmax(logits, out, log_out):
    n, k = logits.shape
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > mx:
                mx = logits[i, j]
        tot = 0.0
        for j in range(k):
            tot += math.exp(logits[i, j] - mx)
        lse = math.log(tot)
        for j in range(k):
            log_out[i, j] = logits[i, j] - mx - lse
            out[i, j] = math.exp(log_out[i, j])


@njit(cache=True)
def _map_averages(p, costs, obs, act):
    """Goal weights and goal-by-action costs averaged over the map set.

    The energy and sender-entropy terms are linear in these, so they need not
    be recomputed per map.
    """
    n_maps, n_goals = obs.shape
    n_actions = act.shape[1]
    p_bar = np.zeros(n_goals)
    c_bar = np.zeros((n_goals, n_actions))
    for m in range(n_maps):
        for g in range(n_goals):
            pg = p[obs[m, g]]
            p_bar[g] += pg / n_maps
            for a in range(n_actions):
                c_bar[g, a] += pg * costs[act[m, a]] / n_maps
    return p_bar, c_bar


@njit(cache=True)
def _step(ls, lr_, p, p_bar, c_bar, obs, act, w_h, w_e, floor, s, log_s, r, log_r, h_r, d_s, d_r, q, stats):
    """One loss/gradient evaluation. Fills ``d_s``/``d_r`` and ``stats``."""
    n_goals, n_actions = ls.shape
    n_maps = obs.shape[0]
    scale = 1.0 / n_maps
    _softmax(ls, s, log_s)
    _softmax(lr_, r, log_r)
    for a in range(n_actions):
        h = 0.0
        for g in range(n_goals):
            h -= r[a, g] * log_r[a, g]
        h_r[a] = h
    ce_tot = 0.0
    en = 0.0
    ent = 0.0
    for g in range(n_goals):
        for a in range(n_actions):
            sa = s[g, a]
            en += c_bar[g, a] * sa
            ent -= p_bar[g] * sa * log_s[g, a]
            d_s[g, a] = w_e * c_bar[g, a] + w_h * p_bar[g] * (log_s[g, a] + 1.0)
    d_r[:, :] = 0.0
    q[:] = 0.0
    clamped = 0
    for m in range(n_maps):
        for g in range(n_goals):
            gp = obs[m, g]
            pg = p[gp]
            d = 0.0
            for a in range(n_actions):
                d += s[g, a] * r[act[m, a], gp]
            inv = 0.0
            if d < floor:
                clamped = 1
                ce_tot -= pg * math.log(floor)
            else:
                ce_tot -= pg * math.log(d)
                inv = pg / d
            for a in range(n_actions):
                ap = act[m, a]
                sa = s[g, a]
                q[ap] += scale * pg * sa
                d_s[g, a] -= scale * (inv * r[ap, gp] + w_h * pg * h_r[ap])
                d_r[ap, gp] -= scale * inv * sa
    for a in range(n_actions):
        ent += q[a] * h_r[a]
        for g in range(n_goals):
            d_r[a, g] += w_h * q[a] * (log_r[a, g] + 1.0)
    ce = ce_tot * scale
    acc = 0.0
    for g in range(n_goals):
        for a in range(n_actions):
            acc += p[g] * s[g, a] * r[a, g]
    stats[0] = ce - w_h * ent + w_e * en
    stats[1] = ce
    stats[2] = ent
    stats[3] = en
    stats[4] = acc
    stats[5] = clamped


@njit(cache=True)
def _softmax_backward(probs, grad, out):
    n, k = probs.shape
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += grad[i, j] * probs[i, j]
        for j in range(k):
            out[i, j] = probs[i, j] * (grad[i, j] - dot)


@njit(cache=True)
def descend(ls, lr_, p, costs, obs, act, step_size, iterations, w_h, w_e, floor, stride):
    """Run ``iterations`` steps in place on ``ls``/``lr_``.

    Returns ``(trace, failed_at)``; ``failed_at`` is -1 unless a non-finite loss
    or gradient was hit, in which case it is the offending iteration.
    """
    n_goals, n_actions = ls.shape
    s = np.empty((n_goals, n_actions))
    log_s = np.empty((n_goals, n_actions))
    r = np.empty((n_actions, n_goals))
    log_r = np.empty((n_actions, n_goals))
    h_r = np.empty(n_actions)
    d_s = np.empty((n_goals, n_actions))
    d_r = np.empty((n_actions, n_goals))
    g_s = np.empty((n_goals, n_actions))
    g_r = np.empty((n_actions, n_goals))
    q = np.empty(n_actions)
    stats = np.empty(6)
    p_bar, c_bar = _map_averages(p, costs, obs, act)
    n_rows = iterations // stride + 2
    trace = np.empty((n_rows, 6))
    row = 0
    for it in range(iterations):
        _step(ls, lr_, p, p_bar, c_bar, obs, act, w_h, w_e, floor, s, log_s, r, log_r, h_r, d_s, d_r, q, stats)
        _softmax_backward(s, d_s, g_s)
        _softmax_backward(r, d_r, g_r)
        bad = not math.isfinite(stats[0])
        for i in range(n_goals):
            for j in range(n_actions):
                if not math.isfinite(g_s[i, j]) or not math.isfinite(g_r[j, i]):
                    bad = True
        if bad:
            return trace[:row], it
        if it % stride == 0:
            trace[row, 0] = it
            trace[row, 1:] = stats[:5]
            row += 1
        for i in range(n_goals):
            for j in range(n_actions):
                ls[i, j] -= step_size * g_s[i, j]
                lr_[j, i] -= step_size * g_r[j, i]
    _step(ls, lr_, p, p_bar, c_bar, obs, act, w_h, w_e, floor, s, log_s, r, log_r, h_r, d_s, d_r, q, stats)
    if not math.isfinite(stats[0]):
        return trace[:row], iterations
    trace[row, 0] = iterations
    trace[row, 1:] = stats[:5]
    row += 1
    return trace[:row], -1


@njit(cache=True)
def _row_softmax(theta):
    out = np.empty_like(theta)
    for i in range(theta.shape[0]):
        mx = theta[i].max()
        e = np.exp(theta[i] - mx)
        out[i] = e / e.sum()
    return out


@njit(cache=True)
def _row_softmax_backward(p, grad):
    out = np.empty_like(p)
    for i in range(p.shape[0]):
        out[i] = p[i] * (grad[i] - (grad[i] * p[i]).sum())
    return out


@njit(cache=True)
def fit_relaxed_map(theta_o, theta_a, s_i, r_i, s_j, r_j, probs, goal_weight, floor, lr, steps, adam):
    """Gradient descent on the relaxed mapping KL; updates ``theta_o``/``theta_a`` in place.

    Only gradients are needed here; the loss value is recomputed by the caller.
    """
    n_goals = probs.shape[0]
    q_i = probs @ s_i
    m_o = np.zeros_like(theta_o)
    v_o = np.zeros_like(theta_o)
    m_a = np.zeros_like(theta_a)
    v_a = np.zeros_like(theta_a)
    b1 = 0.9
    b2 = 0.999
    eps = 1e-8
    for step in range(1, steps + 1):
        p_o = _row_softmax(theta_o)
        p_a = _row_softmax(theta_a)
        sj_pa = s_j @ p_a.T
        t = p_o @ sj_pa
        rj_po = r_j @ p_o.T
        u = p_a @ rj_po
        d_t = np.empty_like(t)
        for g in range(t.shape[0]):
            z = t[g].sum()
            for a in range(t.shape[1]):
                inv = s_i[g, a] / t[g, a] if t[g, a] >= floor else 0.0
                d_t[g, a] = probs[g] * (1.0 / z - inv)
        d_u = np.empty_like(u)
        for a in range(u.shape[0]):
            z = u[a].sum()
            for h in range(u.shape[1]):
                inv = r_i[a, h] / u[a, h] if u[a, h] >= floor else 0.0
                d_u[a, h] = q_i[a] * (1.0 / z - inv)
        w = p_o @ probs
        z_w = w.sum()
        d_w = np.empty(n_goals)
        for g in range(n_goals):
            inv = probs[g] / w[g] if w[g] >= floor else 0.0
            d_w[g] = goal_weight * (1.0 / z_w - inv)
        d_po = d_t @ (p_a @ s_j.T) + d_u.T @ (p_a @ r_j) + np.outer(d_w, probs)
        d_pa = d_t.T @ (p_o @ s_j) + d_u @ (p_o @ r_j.T)
        g_o = _row_softmax_backward(p_o, d_po)
        g_a = _row_softmax_backward(p_a, d_pa)
        if adam:
            m_o = b1 * m_o + (1 - b1) * g_o
            v_o = b2 * v_o + (1 - b2) * g_o * g_o
            m_a = b1 * m_a + (1 - b1) * g_a
            v_a = b2 * v_a + (1 - b2) * g_a * g_a
            c1 = 1 - b1**step
            c2 = 1 - b2**step
            theta_o -= lr * (m_o / c1) / (np.sqrt(v_o / c2) + eps)
            theta_a -= lr * (m_a / c1) / (np.sqrt(v_a / c2) + eps)
        else:
            theta_o -= lr * g_o
            theta_a -= lr * g_a
