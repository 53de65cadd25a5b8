"""Shared numeric oracles for the test suite."""

import numpy as np
import torch


def fd_gradient(f, tensor, coords, eps=1e-6):
    """Central finite differences of scalar f at the given flat coordinates.

    tensor must be float64; f re-evaluates the full computation each call.
    """
    grads = []
    flat = tensor.detach().reshape(-1)
    with torch.no_grad():
        for c in coords:
            orig = flat[c].item()
            flat[c] = orig + eps
            hi = float(f())
            flat[c] = orig - eps
            lo = float(f())
            flat[c] = orig
            grads.append((hi - lo) / (2.0 * eps))
    return np.array(grads)


def autograd_at(scalar, tensor, coords):
    (grad,) = torch.autograd.grad(scalar, tensor)
    flat = grad.reshape(-1)
    return np.array([flat[c].item() for c in coords])


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def pick_coords(rng, numel, count=10):
    return rng.choice(numel, size=min(count, numel), replace=False)


def entropy_by_summation(p):
    """Per-pixel -sum p ln p with the 0 ln 0 = 0 convention, looped."""
    import math

    p = np.asarray(p, dtype=np.float64)
    n, h, w = p.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            s = 0.0
            for c in range(n):
                if p[c, y, x] > 0.0:
                    s -= p[c, y, x] * math.log(p[c, y, x])
            out[y, x] = s
    return out


def topk_by_sorting(scores, k):
    """Full sort with index tie-break, then prefix: the selection oracle."""
    flat = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    return order[:k]


def boundary_by_scan(mask, thickness):
    """Exhaustive nearest-transition scan.

    A transition pixel differs from one of its 4-neighbors; a pixel is in
    the band iff its chebyshev distance to the nearest transition pixel is
    strictly below ceil(thickness / 2). All pixel pairs are examined.
    """
    m = np.asarray(mask).astype(np.int64)
    h, w = m.shape
    trans = []
    for y in range(h):
        for x in range(w):
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and m[ny, nx] != m[y, x]:
                    trans.append((y, x))
                    break
    out = np.zeros((h, w), dtype=np.uint8)
    if not trans:
        return out
    ty = np.array([t[0] for t in trans])
    tx = np.array([t[1] for t in trans])
    radius = -(-thickness // 2)  # ceil
    for y in range(h):
        for x in range(w):
            d = np.maximum(np.abs(ty - y), np.abs(tx - x)).min()
            if d < radius:
                out[y, x] = 1
    return out


def flood_components(mask):
    """Count 4-connected non-background components without library help."""
    m = np.asarray(mask)
    h, w = m.shape
    seen = np.zeros((h, w), dtype=bool)
    count = 0
    for y in range(h):
        for x in range(w):
            if m[y, x] == 0 or seen[y, x]:
                continue
            count += 1
            stack = [(y, x)]
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] \
                            and m[ny, nx] != 0:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count
