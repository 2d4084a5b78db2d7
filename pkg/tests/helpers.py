"""Shared test oracles: central finite differences and small reference routines."""

from __future__ import annotations

import numpy as np

from capsgan.autodiff import Tensor, backward, ops

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def numerical_grad(f, arrays, index, step=FD_STEP):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``."""
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f(*base)
        flat[k] = orig - step
        down = f(*base)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * step)
    return grad


def max_rel_error(analytic, numeric, floor=ABS_FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(build, arrays, step=FD_STEP):
    """Compare reverse-mode and finite-difference gradients for every input.

    ``build(*tensors)`` must return a scalar Tensor.  Returns the worst
    elementwise relative error over all inputs.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    grads = backward(loss, tensors)

    def value(*arrs):
        return build(*(Tensor(a) for a in arrs)).item()

    worst = 0.0
    for i, t in enumerate(tensors):
        num = numerical_grad(value, [np.array(a, dtype=float) for a in arrays], i, step)
        worst = max(worst, max_rel_error(grads[t], num))
    return worst


def direct_conv2d(x, k, stride=1, pad=0):
    """Quadruple-loop cross-correlation, NCHW."""
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, ch, i * stride + di, j * stride + dj] * k[o, ch, di, dj]
                    out[b, o, i, j] = acc
    return out


def reference_squash(s, eps=1e-12):
    sq = float(np.dot(s, s))
    return s * (sq / (1.0 + sq)) / np.sqrt(sq + eps)


def reference_routing(u, W, iters, eps=1e-12, record=None):
    """Straight-line dynamic routing, one sample at a time, plain loops."""
    batch, n_in, d_in = u.shape
    _, n_out, d_out, _ = W.shape
    out = np.zeros((batch, n_out, d_out))
    for b in range(batch):
        u_hat = np.zeros((n_in, n_out, d_out))
        for i in range(n_in):
            for j in range(n_out):
                u_hat[i, j] = W[i, j] @ u[b, i]
        logits = np.zeros((n_in, n_out))
        v = np.zeros((n_out, d_out))
        for it in range(iters):
            c = np.zeros_like(logits)
            for i in range(n_in):
                e = np.exp(logits[i] - logits[i].max())
                c[i] = e / e.sum()
            if record is not None:
                record.append((b, it, c.copy()))
            for j in range(n_out):
                s = np.zeros(d_out)
                for i in range(n_in):
                    s += c[i, j] * u_hat[i, j]
                v[j] = reference_squash(s, eps)
            if it < iters - 1:
                for i in range(n_in):
                    for j in range(n_out):
                        logits[i, j] += float(np.dot(u_hat[i, j], v[j]))
        out[b] = v
    return out


def scalar_margin_loss(norm, target, m_plus=0.9, m_minus=0.1, lam=0.5):
    if target == 1:
        return max(0.0, m_plus - norm) ** 2
    return lam * max(0.0, norm - m_minus) ** 2


def _weighted(out):
    """Contract an op output with fixed pseudo-random weights into a scalar."""
    w = np.cos(np.arange(out.size) * 0.7 + 0.3).reshape(out.shape)
    return ops.reduce_sum(ops.mul(out, Tensor(w)))


def _away_from_zero(shape, rng):
    x = rng.uniform(0.2, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def op_cases():
    r = np.random.RandomState(7)
    return {
        "matmul": (lambda a, b: _weighted(ops.matmul(a, b)), [r.randn(3, 4), r.randn(4, 2)]),
        "einsum": (lambda a, b: _weighted(ops.einsum("bik,ijdk->bijd", a, b)),
                   [r.randn(2, 3, 2), r.randn(3, 2, 2, 2)]),
        "conv2d": (lambda x, k: _weighted(ops.conv2d(x, k, stride=2, pad=1)),
                   [r.randn(1, 2, 5, 5), r.randn(2, 2, 3, 3)]),
        "conv2d_transpose": (lambda y, k: _weighted(ops.conv2d_transpose(y, k, stride=2, pad=1)),
                             [r.randn(1, 2, 3, 3), r.randn(2, 2, 4, 4)]),
        "add": (lambda a, b: _weighted(ops.add(a, b)), [r.randn(3, 4), r.randn(3, 4)]),
        "sub": (lambda a, b: _weighted(ops.sub(a, b)), [r.randn(3, 4), r.randn(3, 4)]),
        "mul": (lambda a, b: _weighted(ops.mul(a, b)), [r.randn(3, 4), r.randn(3, 4)]),
        "div": (lambda a, b: _weighted(ops.div(a, b)), [r.randn(3, 4), _away_from_zero((3, 4), r)]),
        "neg": (lambda a: _weighted(ops.neg(a)), [r.randn(5)]),
        "scale": (lambda a: _weighted(ops.scale(a, -1.7)), [r.randn(5)]),
        "add_scalar": (lambda a: _weighted(ops.add_scalar(a, 0.4)), [r.randn(5)]),
        "bias_add": (lambda x, b: _weighted(ops.bias_add(x, b, axis=1)),
                     [r.randn(2, 3, 2, 2), r.randn(3)]),
        "square": (lambda a: _weighted(ops.square(a)), [r.randn(6)]),
        "sqrt": (lambda a: _weighted(ops.sqrt(a)), [r.uniform(0.5, 2.0, 6)]),
        "log": (lambda a: _weighted(ops.log(a)), [r.uniform(0.5, 2.0, 6)]),
        "relu": (lambda a: _weighted(ops.relu(a)), [_away_from_zero((8,), r)]),
        "leaky_relu": (lambda a: _weighted(ops.leaky_relu(a, 0.2)), [_away_from_zero((8,), r)]),
        "max_with_scalar": (lambda a: _weighted(ops.max_with_scalar(a, 0.1)),
                            [0.1 + _away_from_zero((8,), r)]),
        "sigmoid": (lambda a: _weighted(ops.sigmoid(a)), [3 * r.randn(8)]),
        "softplus": (lambda a: _weighted(ops.softplus(a)), [3 * r.randn(8)]),
        "tanh": (lambda a: _weighted(ops.tanh(a)), [r.randn(8)]),
        "softmax": (lambda a: _weighted(ops.softmax(a, axis=1)), [r.randn(3, 4)]),
        "reshape": (lambda a: _weighted(ops.reshape(a, (4, 3))), [r.randn(2, 6)]),
        "transpose": (lambda a: _weighted(ops.transpose(a, (2, 0, 1))), [r.randn(2, 3, 4)]),
        "concat": (lambda a, b: _weighted(ops.concat([a, b], axis=1)), [r.randn(2, 3), r.randn(2, 2)]),
        "broadcast_to": (lambda a: _weighted(ops.broadcast_to(a, (3, 4, 2))), [r.randn(3, 1, 2)]),
        "reduce_sum": (lambda a: _weighted(ops.reduce_sum(a, axis=1)), [r.randn(3, 4)]),
        "reduce_mean": (lambda a: _weighted(ops.reduce_mean(a, axis=(0, 2), keepdims=True)),
                        [r.randn(2, 3, 4)]),
        "vector_norm": (lambda a: _weighted(ops.vector_norm(a, axis=-1)), [r.randn(3, 4)]),
    }


def brute_mutual_knn(X, k):
    d = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    A = np.zeros_like(d)
    A[np.repeat(np.arange(len(X)), k), nn.ravel()] = 1.0
    return A * A.T


def two_blobs(n_per, seed=0, sep=6.0):
    r = np.random.RandomState(seed)
    X = np.concatenate([r.randn(n_per, 2), r.randn(n_per, 2) + sep])
    y = np.repeat([0, 1], n_per)
    return X, y
