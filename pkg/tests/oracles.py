"""Independent reference computations used by the tests."""
import numpy as np


def discrete_min_jerk_cost(p0, v0, a0, pf, vf, af, T, segments=200):
    """Minimum of the squared-jerk integral over piecewise-constant jerk inputs.

    Each axis is an equality-constrained least-norm problem; the returned
    cost is an upper bound on the continuous optimum that tightens as the
    segment count grows.
    """
    h = T / segments
    starts = np.arange(segments) * h
    rest = T - starts - h
    B = np.stack([h**3 / 6 + h**2 * rest / 2 + h * rest**2 / 2, h**2 / 2 + h * rest, np.full(segments, h)])
    total = 0.0
    for k in range(3):
        free = np.array([p0[k] + v0[k] * T + a0[k] * T**2 / 2, v0[k] + a0[k] * T, a0[k]])
        d = np.array([pf[k], vf[k], af[k]]) - free
        j = B.T @ np.linalg.solve(B @ B.T, d)
        total += h * float(j @ j)
    return total


def naive_conv1d(x, W, b, stride):
    """Direct loop over output positions of a valid 1-D convolution."""
    batch, c_in, length = x.shape
    c_out, _, k = W.shape
    n = (length - k) // stride + 1
    out = np.zeros((batch, c_out, n))
    for i in range(n):
        seg = x[:, :, i * stride : i * stride + k]
        for o in range(c_out):
            out[:, o, i] = np.sum(seg * W[o], axis=(1, 2)) + b[o]
    return out


def numeric_grad(f, params, h=1e-5):
    """Central differences of scalar ``f()`` with respect to each array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_error(a, b, floor=1e-6):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def grad_check(net, x, rng, h=1e-5):
    """Max relative error of analytic vs central-difference gradients for a random linear loss.

    Near a ReLU kink the step ``h`` must stay below the distance of every
    pre-activation from zero or the difference quotient straddles the kink.
    """
    w = rng.standard_normal(net.forward(x).shape)
    net.backward(np.zeros_like(w))  # clear cache
    loss = lambda: float(np.sum(w * net.forward(x)))  # noqa: E731

    net.zero_grad()
    net.forward(x)
    dx = net.backward(w)
    analytic = [g.copy() for g in net.grads] + [dx]
    numeric = numeric_grad(loss, list(net.params) + [x], h)
    return max(max_rel_error(a, n, floor=1e-4) for a, n in zip(analytic, numeric))
