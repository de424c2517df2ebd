"""Shared test utilities: finite-difference checks on the full training objective."""

import numpy as np

from rmsh.data import generate_synthetic
from rmsh.model import ModelDims, backward, binarize, forward_triplets, init_params
from rmsh.objective import LossWeights, objective, relaxed_distance, triplet_labels
from rmsh.data import order_triplet


def micro_batch(seed, n=12, K=8, C=4, hidden=16, dx=6, dy=5, delta=3):
    """Model, batch arrays and weights for a small gradient check."""
    rng = np.random.default_rng(seed)
    x, y, l = generate_synthetic(n=n, c=C, dim_image=dx, dim_text=dy, tag_probs=0.5, noise=0.5, seed=seed)
    model = init_params(ModelDims(dx, dy, hidden, K, C), seed)
    # larger weights so the hinge terms are active
    for k in model.params:
        model.params[k] *= 2.0
    idx = np.stack([rng.permutation(n)[:3] for _ in range(n)])
    unified = binarize(rng.standard_normal((n, K)))
    w = LossWeights(lambda1=0.5, lambda2=0.7, lambda3=0.3, lambda4=0.2, w_p=3.0, delta=delta)
    return model, x.rows[idx], y.rows[idx], l.entries[idx], unified[idx], w


def loss_value(model, xi, xt, lab, uni, w):
    fwd = forward_triplets(model, xi, xt)
    model._cache = None
    return objective(fwd.codes, fwd.probs, lab, uni, w, with_grad=False)[0].total


def analytic_grads(model, xi, xt, lab, uni, w):
    fwd = forward_triplets(model, xi, xt)
    _, dc, dp = objective(fwd.codes, fwd.probs, lab, uni, w)
    model.zero_grad()
    backward(model, dc, dp)
    return {k: g.copy() for k, g in model.grads.items()}


def hinge_margin(model, xi, xt, lab, w):
    """Smallest |hinge argument| over all triplet groups; near zero means a kink."""
    fwd = forward_triplets(model, xi, xt)
    model._cache = None
    codes = fwd.codes
    labels5 = triplet_labels(lab)
    from rmsh.objective import inter_groups, intra_groups

    groups = intra_groups(0) + intra_groups(1) + inter_groups(0) + inter_groups(1)
    rows = np.arange(codes.shape[0])
    best = np.inf
    for members in groups:
        mods = np.array([m for m, _ in members])
        slots = np.array([s for _, s in members])
        lb = labels5[:, slots].astype(np.int64)
        counts = lb.sum(2)
        inter = np.einsum("bic,bjc->bij", lb, lb)
        ref, pos, neg = order_triplet(counts, inter)
        Z = codes[:, mods, slots]
        d_rp = relaxed_distance(Z[rows, ref], Z[rows, pos])
        d_rn = relaxed_distance(Z[rows, ref], Z[rows, neg])
        alpha = w.delta * (inter[rows, ref, pos] - inter[rows, ref, neg]) / np.maximum(counts[rows, ref], 1)
        args = np.concatenate([d_rp - d_rn + alpha, w.delta - d_rp, w.delta - d_rn])
        best = min(best, float(np.abs(args).min()))
    return best


def max_relative_error(model, xi, xt, lab, uni, w, eps=1e-6):
    g = analytic_grads(model, xi, xt, lab, uni, w)
    worst = 0.0
    for k, p in model.params.items():
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            fp = loss_value(model, xi, xt, lab, uni, w)
            p[i] = old - eps
            fm = loss_value(model, xi, xt, lab, uni, w)
            p[i] = old
            num[i] = (fp - fm) / (2 * eps)
        scale = max(np.abs(num).max(), np.abs(g[k]).max(), 1e-8)
        worst = max(worst, float(np.abs(num - g[k]).max() / scale))
    return worst
