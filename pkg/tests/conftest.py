"""Shared test fixtures and independent oracles."""

import numpy as np

from depthalign.losses import loss_grad_wrt_probs, total_depth_loss
from depthalign.nn import GatedDepthFusion


def brute_force_knn(points, query, k):
    """Exhaustive nearest-neighbor oracle: sort by (squared distance,
    index), exclude points at the exact query location, take k."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = (pts[:, 0] - query[0]) ** 2 + (pts[:, 1] - query[1]) ** 2
    keep = ~((pts[:, 0] == query[0]) & (pts[:, 1] == query[1]))
    candidates = sorted((d2[i], i) for i in np.nonzero(keep)[0])
    return np.array([i for _, i in candidates[:k]], dtype=np.int64)


def fusion_fixture(seed, h=2, w=3, ci=4, hidden=6, kink_margin=2e-3):
    """Model + data whose ReLU pre-activations avoid the kink.

    Finite differences are undefined at the ReLU kink, so fixtures
    resample (deterministically) until every pre-activation clears it.
    """
    for attempt in range(60):
        s = int(seed) + 1000 * attempt
        rng = np.random.default_rng([s, 77])
        model = GatedDepthFusion(ci, hidden=hidden, seed=s)
        f_img = rng.normal(size=(h, w, ci))
        f_geo = rng.uniform(0.5, 3.0, size=(h, w, 2))
        target = rng.uniform(1.5, 59.0, size=(h, w))
        g = rng.uniform(0.0, 2.0, size=(h, w))
        valid = rng.random((h, w)) < 0.8
        if not valid.any():
            continue
        cam_pre = model.cam_bn.forward(model.cam_conv.forward(f_img), True)
        geo_pre = model.geo_bn.forward(model.geo_conv.forward(f_geo), True)
        if min(np.abs(cam_pre).min(), np.abs(geo_pre).min()) > kink_margin:
            return model, f_img, f_geo, target, g, valid
    raise RuntimeError("no kink-free fixture found")  # pragma: no cover


def fusion_loss_and_grads(model, f_img, f_geo, target, g, valid):
    model.zero_grads()
    probs = model.forward(f_img, f_geo, training=True)
    loss = total_depth_loss(probs, target, g, valid)
    model.backward(loss_grad_wrt_probs(probs, target, g, valid))
    return loss, [grad for _, _, grad in model.params()]
