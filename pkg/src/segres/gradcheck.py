"""Finite-difference verification of every backward pass.

Each check projects a kernel's output against a fixed random tensor to get
a scalar, computes the analytic gradient, and compares it coordinate by
coordinate with central differences. The reported error is the largest
absolute deviation normalized by the largest gradient magnitude on either
side, so an all-zero pair scores 0 and a sign flip scores ~1.
"""

import numpy as np

from . import layers
from .losses import LossConfig, balanced_ce_loss, ce_loss
from .network import ArchConfig, Network, build_improved
from .tensor import Rng, finite_diff_grad

DEFAULT_EPS = 1e-3
DEFAULT_TOL = 1e-4


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Largest deviation over the larger of the two gradient scales.

    ``floor`` handles targets whose true gradient is ~0 (e.g. a conv bias
    feeding training-mode batchnorm, where mean subtraction cancels the
    shift exactly): below it the comparison is effectively absolute, and
    central-difference noise on float64 sits orders of magnitude under
    floor * tolerance.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def _away_from_kinks(rng: Rng, shape, margin: float = 0.05) -> np.ndarray:
    """Random tensor whose entries keep a margin from 0, so ReLU/max ties cannot
    flip inside the finite-difference window."""
    x = rng.normal(shape)
    return x + np.sign(x) * margin


def _distinct_windows(rng: Rng, shape, eps: float) -> np.ndarray:
    """Random tensor where every 2x2 window has a clear argmax margin."""
    for _ in range(64):
        x = rng.normal(shape)
        b, c, h, w = x.shape
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
        part = np.sort(win, axis=1)
        if (part[:, 3] - part[:, 2]).min() > 4 * eps:
            return x
    raise RuntimeError("could not draw a tie-free pooling input")


def _project(y: np.ndarray, r: np.ndarray) -> float:
    return float((y * r).sum())


def check_conv2d(eps: float) -> dict:
    rng = Rng(101)
    x = rng.normal((1, 3, 6, 6))
    w = rng.normal((4, 3, 3, 3)) * 0.5
    b = rng.normal((4,))
    r = rng.normal((1, 4, 6, 6))
    dx, dw, db = layers.conv2d_backward(x, w, r)
    return {
        "conv2d.dx": max_rel_error(dx, finite_diff_grad(lambda v: _project(layers.conv2d(v, w, b), r), x, eps)),
        "conv2d.dw": max_rel_error(dw, finite_diff_grad(lambda v: _project(layers.conv2d(x, v, b), r), w, eps)),
        "conv2d.db": max_rel_error(db, finite_diff_grad(lambda v: _project(layers.conv2d(x, w, v), r), b, eps)),
    }


def check_deconv(eps: float) -> dict:
    rng = Rng(102)
    x = rng.normal((1, 3, 6, 6))
    w = rng.normal((3, 2, 3, 3)) * 0.5
    b = rng.normal((2,))
    r = rng.normal((1, 2, 6, 6))
    dx, dw, db = layers.deconv_backward(x, w, r)
    return {
        "deconv.dx": max_rel_error(dx, finite_diff_grad(lambda v: _project(layers.deconv(v, w, b), r), x, eps)),
        "deconv.dw": max_rel_error(dw, finite_diff_grad(lambda v: _project(layers.deconv(x, v, b), r), w, eps)),
        "deconv.db": max_rel_error(db, finite_diff_grad(lambda v: _project(layers.deconv(x, w, v), r), b, eps)),
    }


def check_batchnorm(eps: float) -> dict:
    rng = Rng(103)
    x = rng.normal((2, 3, 4, 4))
    gamma = rng.normal((3,)) * 0.3 + 1.0
    beta = rng.normal((3,)) * 0.3
    r = rng.normal((2, 3, 4, 4))

    def run(xv, gv, bv):
        state = layers.BatchNormState(
            gamma=gv, beta=bv, running_mean=np.zeros(3), running_var=np.ones(3)
        )
        y, _ = layers.batchnorm(xv, state, training=True)
        return _project(y, r)

    state = layers.BatchNormState(
        gamma=gamma.copy(), beta=beta.copy(), running_mean=np.zeros(3), running_var=np.ones(3)
    )
    _, cache = layers.batchnorm(x, state, training=True)
    dx, dgamma, dbeta = layers.batchnorm_backward(cache, r)
    return {
        "batchnorm.dx": max_rel_error(dx, finite_diff_grad(lambda v: run(v, gamma, beta), x, eps)),
        "batchnorm.dgamma": max_rel_error(dgamma, finite_diff_grad(lambda v: run(x, v, beta), gamma, eps)),
        "batchnorm.dbeta": max_rel_error(dbeta, finite_diff_grad(lambda v: run(x, gamma, v), beta, eps)),
    }


def check_relu(eps: float) -> dict:
    rng = Rng(104)
    x = _away_from_kinks(rng, (1, 3, 4, 4))
    r = rng.normal((1, 3, 4, 4))
    dx = layers.relu_backward(x, r)
    num = finite_diff_grad(lambda v: _project(layers.relu(v), r), x, eps)
    return {"relu.dx": max_rel_error(dx, num)}


def check_maxpool2(eps: float) -> dict:
    rng = Rng(105)
    x = _distinct_windows(rng, (1, 3, 8, 8), eps)
    r = rng.normal((1, 3, 4, 4))
    _, idx = layers.maxpool2(x)
    dx = layers.maxpool2_backward(idx, r)
    num = finite_diff_grad(lambda v: _project(layers.maxpool2(v)[0], r), x, eps)
    return {"maxpool2.dx": max_rel_error(dx, num)}


def check_maxunpool2(eps: float) -> dict:
    rng = Rng(106)
    src = _distinct_windows(rng, (1, 3, 8, 8), eps)
    y, idx = layers.maxpool2(src)
    r = rng.normal((1, 3, 8, 8))
    dy = layers.maxunpool2_backward(idx, r)
    num = finite_diff_grad(lambda v: _project(layers.maxunpool2(v, idx, 8, 8), r), y, eps)
    return {"maxunpool2.dy": max_rel_error(dy, num)}


def check_fuse_add(eps: float) -> dict:
    rng = Rng(107)
    a = rng.normal((1, 3, 4, 4))
    b = rng.normal((1, 3, 4, 4))
    r = rng.normal((1, 3, 4, 4))
    return {
        "fuse_add.da": max_rel_error(r, finite_diff_grad(lambda v: _project(layers.fuse_add(v, b), r), a, eps)),
        "fuse_add.db": max_rel_error(r, finite_diff_grad(lambda v: _project(layers.fuse_add(a, v), r), b, eps)),
    }


def check_concat_channels(eps: float) -> dict:
    rng = Rng(108)
    a = rng.normal((1, 2, 4, 4))
    b = rng.normal((1, 3, 4, 4))
    r = rng.normal((1, 5, 4, 4))
    da, db = layers.split_channels(r, 2)
    return {
        "concat.da": max_rel_error(
            da, finite_diff_grad(lambda v: _project(layers.concat_channels(v, b), r), a, eps)
        ),
        "concat.db": max_rel_error(
            db, finite_diff_grad(lambda v: _project(layers.concat_channels(a, v), r), b, eps)
        ),
    }


def check_softmax_pixels(eps: float) -> dict:
    rng = Rng(109)
    x = rng.normal((1, 3, 4, 4))
    r = rng.normal((1, 3, 4, 4))
    y = layers.softmax_pixels(x)
    dx = layers.softmax_pixels_backward(y, r)
    num = finite_diff_grad(lambda v: _project(layers.softmax_pixels(v), r), x, eps)
    return {"softmax_pixels.dx": max_rel_error(dx, num)}


def _loss_fixture(rng: Rng, with_ignore: bool = True):
    # Mild logits keep every p_true comfortably above 0.1: the -log third
    # derivative scales as 1/p^3, which dominates central differences at
    # eps=1e-3 for confident predictions.
    logits = rng.normal((1, 3, 4, 4)) * 0.4
    prob = layers.softmax_pixels(logits)
    labels = np.array([rng.below(3) for _ in range(16)], dtype=np.int64).reshape(1, 4, 4)
    if with_ignore:
        labels[0, 0, 0] = 255
    return prob, labels


def check_ce_loss(eps: float) -> dict:
    rng = Rng(110)
    prob, labels = _loss_fixture(rng)
    cfg = LossConfig()
    _, dprob = ce_loss(prob, labels, cfg)
    num = finite_diff_grad(lambda v: ce_loss(v, labels, cfg)[0], prob, eps)
    return {"ce_loss.dprob": max_rel_error(dprob, num)}


def check_balanced_ce_loss(eps: float) -> dict:
    rng = Rng(111)
    prob, labels = _loss_fixture(rng)
    cfg = LossConfig(beta=0.8)
    _, dprob = balanced_ce_loss(prob, labels, cfg)
    num = finite_diff_grad(lambda v: balanced_ce_loss(v, labels, cfg)[0], prob, eps)
    return {"balanced_ce_loss.dprob": max_rel_error(dprob, num)}


LAYER_CHECKS = {
    "conv2d": check_conv2d,
    "deconv": check_deconv,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "maxpool2": check_maxpool2,
    "maxunpool2": check_maxunpool2,
    "fuse_add": check_fuse_add,
    "concat_channels": check_concat_channels,
    "softmax_pixels": check_softmax_pixels,
    "ce_loss": check_ce_loss,
    "balanced_ce_loss": check_balanced_ce_loss,
}


def check_network_gradients(
    net: Network,
    x: np.ndarray,
    upstream: np.ndarray,
    eps: float = 1e-5,
    coords_per_tensor: int = 6,
    seed: int = 7,
) -> dict:
    """Spot-check the full-graph backward pass against central differences.

    The scalar under test is the projection of the output probabilities
    against a fixed ``upstream`` tensor, which is exactly the contract of
    ``backward``: push an arbitrary upstream gradient through the whole
    graph. Every parameter tensor (and the input) is probed at a
    deterministic random subset of coordinates in training mode; batchnorm
    running statistics are restored afterwards.
    """
    saved_stats = {
        name: (st.running_mean.copy(), st.running_var.copy()) for name, st in net.bn_states.items()
    }

    def loss_value() -> float:
        return float((net.forward(x, training=True) * upstream).sum())

    net.forward(x, training=True)
    grads = net.backward(upstream)
    rng = Rng(seed)
    targets = {name: (p.data, grads[name]) for name, p in net.params.items()}
    targets["input"] = (x, net.input_grad)
    errors = {}
    for name, (data, grad) in targets.items():
        flat = data.reshape(-1)
        n = flat.size
        picks = sorted({rng.below(n) for _ in range(min(coords_per_tensor, n))})
        analytic = np.array([grad.reshape(-1)[i] for i in picks])
        numeric = np.empty(len(picks))
        for k, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_value()
            flat[i] = orig - eps
            fm = loss_value()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * eps)
        errors[name] = max_rel_error(analytic, numeric)
    for name, (mean, var) in saved_stats.items():
        net.bn_states[name].running_mean[...] = mean
        net.bn_states[name].running_var[...] = var
    return errors


def full_graph_check(eps: float = DEFAULT_EPS, coords_per_tensor: int = 6) -> dict:
    """Gradient check of the desk-scale residual network on an 8x8 input.

    Probes at eps/100: a parameter nudge propagates through up to a dozen
    kernels, and the wider per-layer step would straddle ReLU kinks and
    pooling argmax switches. Float64 leaves ample headroom at 1e-5.
    """
    rng = Rng(112)
    net = build_improved(ArchConfig(class_count=2, desk_scale=True), Rng(41))
    x = rng.normal((1, 3, 8, 8)) * 0.5
    upstream = rng.normal((1, 2, 8, 8))
    errors = check_network_gradients(
        net, x, upstream, eps=eps * 0.01, coords_per_tensor=coords_per_tensor
    )
    return {f"network.{name}": err for name, err in errors.items()}


def run_checks(eps: float = DEFAULT_EPS, only: str | None = None) -> dict:
    """All per-layer checks plus the full-graph check; name -> max relative error."""
    results = {}
    for name, fn in LAYER_CHECKS.items():
        if only and only != name:
            continue
        results.update(fn(eps))
    if only is None or only == "network":
        results.update(full_graph_check(eps))
    return results
