import logging

import jax
import jax.numpy as jnp
import numpy as np
import optax
import pytest

import previewmpc as pm


@pytest.fixture(scope="session")
def example_system() -> pm.SystemConfig:
    return pm.example_system()


@pytest.fixture(scope="session")
def example_ingredients(example_system) -> pm.TerminalIngredients:
    return pm.synthesize(example_system)


@pytest.fixture(scope="session")
def example_spec(example_system, example_ingredients) -> pm.OcpSpec:
    return pm.OcpSpec.from_system(example_system, example_ingredients, N=5)


@jax.jit
def _projected_gradient(Hess, lin, lo, hi, u0):
    def loss(u):
        return 0.5 * u @ Hess @ u + lin @ u

    step = 1.0 / jnp.linalg.eigvalsh(Hess).max()
    optimizer = optax.sgd(step)

    def body(_, carry):
        u, state = carry
        updates, state = optimizer.update(jax.grad(loss)(u), state)
        return jnp.clip(optax.apply_updates(u, updates), lo, hi), state

    u, _ = jax.lax.fori_loop(0, 20_000, body, (u0, optimizer.init(u0)))
    return u


@pytest.fixture(scope="session")
def box_qp_oracle():
    """Long run projected gradient on `lo ≤ u ≤ hi`, returns the minimizer."""

    def oracle(Hess, lin, lo, hi):
        u = _projected_gradient(
            jnp.asarray(Hess),
            jnp.asarray(lin),
            jnp.asarray(lo),
            jnp.asarray(hi),
            jnp.zeros(len(lin)),
        )
        return np.asarray(u)

    return oracle


@pytest.fixture(autouse=True)
def reset_logging():
    """`configure_logging` detaches the package logger from the root logger,
    which hides records from `caplog`."""
    yield
    logger = logging.getLogger("previewmpc")
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
