import numpy as np
import pytest

from adagat import autodiff as ad


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of scalar ``fn(arrays)`` w.r.t. every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            up = fn(arrays)
            arr[i] = old - h
            down = fn(arrays)
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-6):
    # the floor keeps vanishing gradients (e.g. saturated clamps) from turning
    # finite-difference round-off (~1e-11) into a large ratio
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / scale


def grad_check(build, arrays, h=1e-5):
    """Max relative error between tape gradients of ``build(tensors)`` and finite differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    ad.backward(build(leaves))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]
    numeric = numeric_grad(lambda arrs: build([ad.Tensor(a) for a in arrs]).item(), arrays, h)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    The yielded list collects detail lines printed under the verdict.
    """
    from contextlib import contextmanager

    lines = request.config.stash[_ACCEPTANCE]

    @contextmanager
    def check(number, title):
        notes = []
        try:
            yield notes
        except BaseException as exc:
            lines.append((number, f"FAIL  [{number}] {title}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}", notes))
            raise
        lines.append((number, f"PASS  [{number}] {title}", notes))

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, verdict, notes in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(verdict)
        for note in notes:
            terminalreporter.write_line(f"        {note}")
