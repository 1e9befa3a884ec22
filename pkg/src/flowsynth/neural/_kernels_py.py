"""Pure numpy versions of the compiled kernels (same signatures, same results)."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3x3(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    patches = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)


def col2im3x3(cols, n, c, h, w):
    d = cols.reshape(n, h, w, c, 3, 3)
    out = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for di in range(3):
        for dj in range(3):
            out[:, :, di:di + h, dj:dj + w] += d[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out[:, :, 1:-1, 1:-1])


def maxpool2_forward(x):
    n, c, h, w = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = np.full((n, c, 2 * ho, 2 * wo), -np.inf, dtype=x.dtype)
    xp[:, :, :h, :w] = x
    blocks = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    ii = 2 * np.arange(ho)[:, None] + arg // 2
    jj = 2 * np.arange(wo)[None, :] + arg % 2
    base = (np.arange(n)[:, None] * c + np.arange(c)[None, :]) * h
    idx = ((base[:, :, None, None] + ii) * w + jj).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dout, idx, shape):
    dx = np.zeros(int(np.prod(shape)), dtype=dout.dtype)
    np.add.at(dx, idx.ravel(), dout.ravel())
    return dx.reshape(shape)


def best_gini_split(xs, ys, n_classes):
    n = xs.shape[0]
    if n < 2:
        return 0, np.inf
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]          # counts in xs[:i], i = 1..n-1
    right = left[-1] + onehot[-1] - left
    i = np.arange(1, n, dtype=np.float64)
    gl = i - (left * left).sum(axis=1) / i
    gr = (n - i) - (right * right).sum(axis=1) / (n - i)
    score = (gl + gr) / n
    score[xs[1:] == xs[:-1]] = np.inf
    pos = int(np.argmin(score))
    if not np.isfinite(score[pos]):
        return 0, np.inf
    return pos + 1, float(score[pos])
