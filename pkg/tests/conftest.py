import numpy as np
import pytest

from popll import _kernels_py, kernels

KERNEL_NAMES = ("restricted_argmax", "purify", "normalize_weights", "loss_grad")


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.BACKENDS[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_masks(rng, n, c, p=0.5):
    mask = rng.random((n, c)) < p
    mask[np.arange(n), rng.integers(0, c, n)] = True
    return mask


def random_confidence(rng, mask):
    return _kernels_py.normalize_weights(rng.random(mask.shape) + 0.05, mask)


def finite_difference_grads(model, loss_value, h=1e-5):
    """Central differences of ``loss_value()`` w.r.t. every model parameter."""
    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss_value()
            p[i] = old - h
            down = loss_value()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a, b, floor=1e-7):
    """Norm-wise relative error; absolute error when both norms are below ``floor``."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    return diff if scale < floor else diff / scale


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number, title, passed, detail=""):
        _ACCEPTANCE[number] = (title, passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")


def gradient_check_draw(kind, seed, beta=0.7, n=8, q=5, c=4, hidden=(7,)):
    """Largest relative error between analytic and finite-difference gradients
    for one random (model, batch) draw, redrawing away from kinks."""
    from popll.losses import LossKind, batch_loss
    from popll.nn import ScoringModel

    kind = LossKind(kind)
    rng = np.random.default_rng(seed)
    while True:
        model = ScoringModel.build(q, c, hidden, rng=rng)
        for layer in model.layers:
            layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
        X = rng.normal(size=(n, q))
        mask = random_masks(rng, n, c)
        weights = random_confidence(rng, mask)
        pre, acts = model._forward_cached(X)
        z = acts[-1]
        if any(np.abs(p).min() < 1e-3 for p in pre[:-1]):
            continue
        if kind is LossKind.CLPL:
            mean_in = np.where(mask, z, 0).sum(1) / mask.sum(1)
            if np.abs(1 - mean_in).min() < 1e-3 or np.abs(1 + z[~mask]).min(initial=1) < 1e-3:
                continue
        if kind is LossKind.CAVL:
            act = np.sort(np.where(mask, np.abs(softmax_rows(z) * z), -1.0), axis=1)
            if (act[:, -1] - act[:, -2]).min() < 1e-3:
                continue
        break
    loss = batch_loss(kind, mask, weights, beta)
    _, grads = model.loss_and_grad(X, loss)
    fd = finite_difference_grads(model, lambda: model.loss_and_grad(X, loss)[0])
    return max(relative_error(g, f) for g, f in zip(grads, fd))


def softmax_rows(z):
    from popll.nn import softmax

    return softmax(z)
