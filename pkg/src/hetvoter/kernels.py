"""Event loops for the exact simulators.

Each kernel consumes pre-drawn random buffers and stops when the buffer runs
out, the chain is absorbed (or leaves the exit disk) or the horizon is hit.
Drawing the randomness outside the kernel keeps the numba and plain-Python
paths on the same stream, so both backends produce the same paths.

Status codes returned by the kernels:
    0  buffer exhausted, call again
    1  absorbed
    2  horizon reached (censored)
    3  left the exit disk
"""
import numpy as np

from ._accel import HAS_NUMBA, jit

RUNNING, ABSORBED, HORIZON, EXITED = 0, 1, 2, 3


@jit
def ssa_chunk(state, t, N, n_plus, rho, horizon, exps, unis,
              cx, cy, radius2, record, ev_t, ev_kp, ev_km):
    """Gillespie steps of the (k_plus, k_minus) chain.

    ``state`` is updated in place. ``radius2 < 0`` disables the exit disk.
    Returns ``(t, n_events, status)``.
    """
    kp = state[0]
    km = state[1]
    n_minus = N - n_plus
    n = exps.shape[0]
    i = 0
    status = RUNNING
    while i < n:
        K = kp + km
        free = N - K
        r1 = ((n_plus - kp) * K) / N
        l1 = rho * ((kp * free) / N)
        r2 = rho * (((n_minus - km) * K) / N)
        l2 = (km * free) / N
        total = r1 + l1 + r2 + l2
        if total <= 0.0:
            status = ABSORBED
            break
        dt = exps[i] / total
        if t + dt > horizon:
            t = horizon
            status = HORIZON
            break
        t += dt
        u = unis[i] * total
        if u < r1:
            kp += 1
        elif u < r1 + l1:
            kp -= 1
        elif u < r1 + l1 + r2:
            km += 1
        elif l2 > 0.0:
            km -= 1
        # u rounded past the last non-zero rate
        elif r2 > 0.0:
            km += 1
        elif l1 > 0.0:
            kp -= 1
        else:
            kp += 1
        if record:
            ev_t[i] = t
            ev_kp[i] = kp
            ev_km[i] = km
        i += 1
        if radius2 >= 0.0:
            dx = kp / N - cx
            dy = km / N - cy
            if dx * dx + dy * dy >= radius2:
                status = EXITED
                break
        K = kp + km
        if K == 0 or K == N:
            status = ABSORBED
            break
    state[0] = kp
    state[1] = km
    return t, i, status


@jit
def full_spin_chunk(eta, h, state, t, rho, horizon, exps, sites, partners, accepts,
                    record, ev_t, ev_kp, ev_km):
    """Per-site dynamics: every site rings at rate 1, picks a partner
    uniformly (itself included) and copies it, always when the partner
    agrees with its own field and with probability ``rho`` otherwise.

    ``state`` holds (k_plus, k_minus) and is updated in place alongside
    ``eta``. Only actual flips are recorded. Returns
    ``(t, n_attempts, n_flips, status)``.
    """
    N = eta.shape[0]
    kp = state[0]
    km = state[1]
    n = exps.shape[0]
    i = 0
    nrec = 0
    status = RUNNING
    if kp + km == 0 or kp + km == N:
        return t, 0, 0, ABSORBED
    while i < n:
        dt = exps[i] / N
        if t + dt > horizon:
            t = horizon
            status = HORIZON
            break
        t += dt
        a = sites[i]
        b = partners[i]
        u = accepts[i]
        i += 1
        if eta[a] == eta[b]:
            continue
        if eta[b] == h[a] or u < rho:
            eta[a] = eta[b]
            step = 1 if eta[b] == 1 else -1
            if h[a] == 1:
                kp += step
            else:
                km += step
            if record:
                ev_t[nrec] = t
                ev_kp[nrec] = kp
                ev_km[nrec] = km
            nrec += 1
            if kp + km == 0 or kp + km == N:
                status = ABSORBED
                break
    state[0] = kp
    state[1] = km
    return t, i, nrec, status


S_MIN, S_MAX = -46.0, 46.0  # log-duration bracket


@jit
def _expm1mx(a):
    # e^a - 1 - a without cancellation near 0
    if abs(a) > 1e-2:
        return np.expm1(a) - a
    return a * a * (0.5 + a * (1.0 / 6.0 + a * (1.0 / 24.0 + a * (1.0 / 120.0
                    + a * (1.0 / 720.0 + a / 5040.0)))))


@jit
def _ham(l, r, beta, s):
    # H at the optimal momentum, s - r - l, factored so it keeps relative
    # precision when beta is close to the drift r - l
    return (beta - (r - l)) * (beta + (r - l)) / (s + r + l)


@jit
def _cost(l, r, beta, alpha):
    # beta*alpha - [r(e^a - 1) + l(e^-a - 1)] regrouped around the drift r - l;
    # each term is O(alpha^2) so the O(alpha^2) result keeps its precision;
    # the true value is >= 0, rounding can leave -1e-33 at the drift
    return max((beta - (r - l)) * alpha - r * _expm1mx(alpha) - l * _expm1mx(-alpha), 0.0)


@jit
def _momentum(l, r, beta):
    s = np.sqrt(beta * beta + 4.0 * r * l)
    if beta >= 0.0:
        up = (beta + s) / (2.0 * r)
        down = 2.0 * r / (beta + s)
        alpha = np.log(up)
    else:
        up = 2.0 * l / (s - beta)
        down = (s - beta) / (2.0 * l)
        alpha = -np.log(down)
    return alpha, up, down, s


@jit
def reduced_action_nb(P, rho, q, s_guess, grad, s_out):
    """Discrete action with every segment duration set to its optimum.

    For segment k with midpoint m and displacement d the cost
    ``tau * L(m, d / tau)`` is convex in tau; its minimiser solves
    ``H(m, alpha*(d / tau)) = 0`` and is found by safeguarded Newton in
    ``log tau`` starting from ``s_guess[k]``. Writes the vertex gradient
    into ``grad`` and the log-durations into ``s_out``; returns the action.
    """
    M = P.shape[0] - 1
    S = 0.0
    for k in range(M + 1):
        grad[k, 0] = 0.0
        grad[k, 1] = 0.0
    for k in range(M):
        dx = P[k + 1, 0] - P[k, 0]
        dy = P[k + 1, 1] - P[k, 1]
        if dx == 0.0 and dy == 0.0:
            s_out[k] = S_MIN
            continue
        x = 0.5 * (P[k + 1, 0] + P[k, 0])
        y = 0.5 * (P[k + 1, 1] + P[k, 1])
        m = x + y
        l1 = rho * x * (1.0 - m)
        r1 = (q - x) * m
        l2 = y * (1.0 - m)
        r2 = rho * (1.0 - q - y) * m
        lo = S_MIN
        hi = S_MAX
        s = min(max(s_guess[k], lo + 1.0), hi - 1.0)
        for _ in range(200):
            tau = np.exp(s)
            a1, e1, f1, q1 = _momentum(l1, r1, dx / tau)
            a2, e2, f2, q2 = _momentum(l2, r2, dy / tau)
            H = _ham(l1, r1, dx / tau, q1) + _ham(l2, r2, dy / tau, q2)
            if H > 0.0:
                lo = s
            else:
                hi = s
            b1 = dx / tau
            b2 = dy / tau
            slope = b1 * b1 / q1 + b2 * b2 / q2
            if slope > 0.0:
                sn = s + H / slope
            else:
                sn = 0.5 * (lo + hi)
            if not (lo < sn < hi):
                sn = 0.5 * (lo + hi)
            if abs(sn - s) < 1e-13:
                s = sn
                break
            s = sn
        s_out[k] = s
        tau = np.exp(s)
        b1 = dx / tau
        b2 = dy / tau
        a1, e1, f1, q1 = _momentum(l1, r1, b1)
        a2, e2, f2, q2 = _momentum(l2, r2, b2)
        L = _cost(l1, r1, b1, a1) + _cost(l2, r2, b2, a2)
        S += tau * L
        # d(cost)/d(rate) at the optimal momentum, times the rate gradients
        cl1 = 1.0 - f1
        cr1 = 1.0 - e1
        cl2 = 1.0 - f2
        cr2 = 1.0 - e2
        gx = (cl1 * (rho * (1.0 - m) - rho * x) + cr1 * ((q - x) - m)
              + cl2 * (-y) + cr2 * (rho * (1.0 - q - y)))
        gy = (cl1 * (-rho * x) + cr1 * (q - x)
              + cl2 * ((1.0 - m) - y) + cr2 * (rho * (1.0 - q - y) - rho * m))
        gx *= 0.5 * tau
        gy *= 0.5 * tau
        grad[k, 0] += gx - a1
        grad[k, 1] += gy - a2
        grad[k + 1, 0] += gx + a1
        grad[k + 1, 1] += gy + a2
    return S


def _momentum_np(l, r, beta):
    s = np.sqrt(beta * beta + 4.0 * r * l)
    pos = beta >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(pos, (beta + s) / (2.0 * r), 2.0 * l / (s - beta))
        down = np.where(pos, 2.0 * r / (beta + s), (s - beta) / (2.0 * l))
        alpha = np.where(pos, np.log(up), -np.log(down))
    return alpha, up, down, s


def _expm1mx_np(a):
    a = np.asarray(a, dtype=float)
    series = a * a * (0.5 + a * (1.0 / 6.0 + a * (1.0 / 24.0 + a * (1.0 / 120.0
                      + a * (1.0 / 720.0 + a / 5040.0)))))
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(np.abs(a) > 1e-2, np.expm1(a) - a, series)


def _cost_np(l, r, beta, alpha):
    return np.maximum((beta - (r - l)) * alpha - r * _expm1mx_np(alpha) - l * _expm1mx_np(-alpha), 0.0)


def reduced_action_np(P, rho, q, s_guess, grad, s_out):
    """Vectorised twin of :func:`reduced_action_nb` (all segments at once)."""
    d = P[1:] - P[:-1]
    x = 0.5 * (P[1:, 0] + P[:-1, 0])
    y = 0.5 * (P[1:, 1] + P[:-1, 1])
    m = x + y
    l1, r1 = rho * x * (1.0 - m), (q - x) * m
    l2, r2 = y * (1.0 - m), rho * (1.0 - q - y) * m
    moving = (d[:, 0] != 0.0) | (d[:, 1] != 0.0)
    lo = np.full(len(d), S_MIN)
    hi = np.full(len(d), S_MAX)
    s = np.clip(np.asarray(s_guess, dtype=float), lo + 1.0, hi - 1.0)
    active = moving.copy()
    for _ in range(200):
        if not active.any():
            break
        tau = np.exp(s)
        b1, b2 = d[:, 0] / tau, d[:, 1] / tau
        _, e1, f1, q1 = _momentum_np(l1, r1, b1)
        _, e2, f2, q2 = _momentum_np(l2, r2, b2)
        H = _ham(l1, r1, b1, q1) + _ham(l2, r2, b2, q2)
        lo = np.where(active & (H > 0.0), s, lo)
        hi = np.where(active & ~(H > 0.0), s, hi)
        slope = b1 * b1 / q1 + b2 * b2 / q2
        with np.errstate(divide="ignore", invalid="ignore"):
            sn = np.where(slope > 0.0, s + H / slope, 0.5 * (lo + hi))
        sn = np.where((lo < sn) & (sn < hi), sn, 0.5 * (lo + hi))
        done = np.abs(sn - s) < 1e-13
        s = np.where(active, sn, s)
        active &= ~done
    s = np.where(moving, s, S_MIN)
    s_out[:] = s
    tau = np.exp(s)
    b1, b2 = d[:, 0] / tau, d[:, 1] / tau
    a1, e1, f1, q1 = _momentum_np(l1, r1, b1)
    a2, e2, f2, q2 = _momentum_np(l2, r2, b2)
    L = _cost_np(l1, r1, b1, a1) + _cost_np(l2, r2, b2, a2)
    cl1, cr1, cl2, cr2 = 1.0 - f1, 1.0 - e1, 1.0 - f2, 1.0 - e2
    gx = (cl1 * (rho * (1.0 - m) - rho * x) + cr1 * ((q - x) - m)
          + cl2 * (-y) + cr2 * (rho * (1.0 - q - y))) * 0.5 * tau
    gy = (cl1 * (-rho * x) + cr1 * (q - x)
          + cl2 * ((1.0 - m) - y) + cr2 * (rho * (1.0 - q - y) - rho * m)) * 0.5 * tau
    gx, gy, a1, a2, L = (np.where(moving, v, 0.0) for v in (gx, gy, a1, a2, L))
    grad[:] = 0.0
    grad[:-1, 0] += gx - a1
    grad[:-1, 1] += gy - a2
    grad[1:, 0] += gx + a1
    grad[1:, 1] += gy + a2
    return float(np.sum(tau * L))


reduced_action = reduced_action_nb if HAS_NUMBA else reduced_action_np


@jit
def ou_euler(x, A, c, sigma, step, noise, out):
    """Euler-Maruyama for ``dX = (A X + c) dt + sigma dB`` in two dimensions.

    ``noise`` holds standard normals of shape (n, 2); writes the n states
    after ``x`` into ``out`` and returns the last one in ``x``.
    """
    sq = sigma * np.sqrt(step)
    x0 = x[0]
    x1 = x[1]
    for i in range(noise.shape[0]):
        d0 = A[0, 0] * x0 + A[0, 1] * x1 + c[0]
        d1 = A[1, 0] * x0 + A[1, 1] * x1 + c[1]
        x0 = x0 + step * d0 + sq * noise[i, 0]
        x1 = x1 + step * d1 + sq * noise[i, 1]
        out[i, 0] = x0
        out[i, 1] = x1
    x[0] = x0
    x[1] = x1
