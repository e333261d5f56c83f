"""Built-in invariant suites behind the `selfcheck` CLI subcommand:
finite-difference gradient checks, metric set oracles, and the toy-model
attack-vs-grid check.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from . import metrics
from .attack import AttackSpec, relevance_sets, run_attack
from .toy import LinearToyCbm, grid_best_objective, toy_instance


def fd_gradient(fn, x, step=1e-5):
    """Central finite differences of scalar fn at array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a, b, floor=1e-7):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)),
                                             floor))


def _check_op(rng, build_loss, shapes, tol=1e-4):
    """Returns the worst relative error across the op's inputs."""
    tensors = [ad.Tensor(rng.standard_normal(s), requires_grad=True)
               for s in shapes]
    loss = build_loss(*tensors)
    loss.backward()
    worst = 0.0
    for t in tensors:
        def f(arr, t=t):
            saved = t.data
            t.data = arr
            out = float(build_loss(*tensors).data)
            t.data = saved
            return out
        fd = fd_gradient(f, t.data.copy())
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, float(rel_err(analytic, fd)))
    return worst


def gradient_suite(n_shapes=20, seed=0, tol=1e-4):
    """Every operator against central finite differences on random shapes.

    Returns a list of (trial, op, rel_err) failures; empty means pass.
    """
    rng = np.random.default_rng(seed)
    failures = []
    for trial in range(n_shapes):
        b = int(rng.integers(1, 4))
        i = int(rng.integers(2, 6))
        o = int(rng.integers(2, 5))
        c = int(rng.integers(1, 3))
        f = int(rng.integers(1, 3))
        h = 2 * int(rng.integers(1, 3))
        w = 2 * int(rng.integers(1, 3))
        t = (rng.random((b, i)) > 0.5).astype(float)
        y = rng.integers(0, o, size=b)
        cases = [
            ("dense", lambda x, wt, bb: ad.tsum(ad.dense(x, wt, bb)),
             [(b, i), (i, o), (o,)]),
            ("conv2d", lambda x, k, bb: ad.tsum(ad.conv2d(x, k, bb)),
             [(b, c, h, w), (f, c, 3, 3), (f,)]),
            ("maxpool2", lambda x: ad.tsum(ad.maxpool2(ad.scale(x, 1.0))),
             [(b, c, h, w)]),
            ("relu", lambda x: ad.tsum(ad.relu(x)), [(b, i)]),
            ("sigmoid", lambda x: ad.tsum(ad.sigmoid(x)), [(b, i)]),
            ("bce_loss", lambda x: ad.bce_loss(x, t), [(b, i)]),
            ("mse_loss", lambda x: ad.mse_loss(x, t), [(b, i)]),
            ("softmax_ce_loss", lambda x: ad.softmax_ce_loss(x, y), [(b, o)]),
        ]
        for name, build, shapes in cases:
            err = _check_op(rng, build, shapes, tol=tol)
            if err > tol:
                failures.append((trial, name, err))
    return failures


def metric_suite(n_pairs=1000, seed=0):
    """Set metrics against brute-force enumeration on random set pairs.

    Returns a list of (metric, set_a, set_b) failures; empty means pass.
    """
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(n_pairs):
        t = int(rng.integers(1, 10))
        a = frozenset(int(j) for j in np.nonzero(rng.random(t) > 0.5)[0])
        b = frozenset(int(j) for j in np.nonzero(rng.random(t) > 0.5)[0])
        inter = sum(1 for j in range(t) if j in a and j in b)
        union = sum(1 for j in range(t) if j in a or j in b)
        jsi = 1.0 if union == 0 else inter / union
        if metrics.jaccard(a, b) != jsi:
            failures.append(("jaccard", a, b))
        if a:
            intro = sum(1 for j in range(t) if j in b and j not in a)
            if metrics.pct_introduced(a, b) != 100.0 * intro / len(a):
                failures.append(("pct_introduced", a, b))
            if metrics.pct_retained(a, b) != 100.0 * inter / len(a):
                failures.append(("pct_retained", a, b))
        va = rng.random(t)
        vb = rng.random(t)
        flips = sum(1 for j in range(t) if (va[j] >= 0.5) != (vb[j] >= 0.5))
        if metrics.pct_flipped(va, vb) != 100.0 * flips / t:
            failures.append(("pct_flipped", tuple(va), tuple(vb)))
    return failures


def attack_oracle_suite(n_instances=50, seed=0, tol=1e-6):
    """Sign-ascent attack vs exhaustive grid on the 4-input linear toy CBM.

    Returns a list of (seed, attack_objective, grid_best) failures.
    """
    failures = []
    for k in range(n_instances):
        model, x, spec = toy_instance(seed + k)
        out = run_attack(model, x, spec)
        final = model.objective_value(out.x_perturbed, spec, x_ref=x)
        best = grid_best_objective(model, x, spec)
        if final < best - tol:
            failures.append((seed + k, final, best))
    return failures


def run_all():
    return {
        "gradients": not gradient_suite(),
        "metric_oracles": not metric_suite(),
        "attack_grid_oracle": not attack_oracle_suite(),
    }
