import numpy as np
import pytest

from fedgan.tinygan import MLPParams, ModelPair, disc_forward, gen_forward, init_model


def softplus(x):
    return np.logaddexp(0.0, x)


def loss_d_of(model: ModelPair, real, z):
    fake = gen_forward(model.generator, z)
    return np.mean(softplus(-disc_forward(model.discriminator, real))) + np.mean(
        softplus(disc_forward(model.discriminator, fake)))


def loss_g_of(model: ModelPair, z):
    return np.mean(softplus(-disc_forward(model.discriminator, gen_forward(model.generator, z))))


def central_fd(f, tensors, index, eps=1e-5):
    """Central finite difference of f() w.r.t. one scalar entry; restores the entry."""
    k, pos = index
    t = tensors[k]
    old = t.flat[pos]
    t.flat[pos] = old + eps
    up = f()
    t.flat[pos] = old - eps
    down = f()
    t.flat[pos] = old
    return (up - down) / (2 * eps)


def grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    diff = abs(analytic - numeric)
    return diff <= atol or diff <= rtol * max(abs(analytic), abs(numeric))


@pytest.fixture
def small_model():
    return init_model([3, 16, 12, 2], [2, 16, 12, 1], seed=11)


def scalar_mlp(w, b, slope=0.2):
    return MLPParams([np.array([[float(w)]])], [np.array([float(b)])], slope)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
