"""Fixed-step explicit integrators."""
import numpy as np

from .errors import DivergenceError


def rk4_step(f, x, dt, *args):
    """One classical Runge-Kutta step of ``dx/dt = f(x, *args)``."""
    k1 = f(x, *args)
    k2 = f(x + 0.5 * dt * k1, *args)
    k3 = f(x + 0.5 * dt * k2, *args)
    k4 = f(x + dt * k3, *args)
    for i, k in enumerate((k1, k2, k3, k4)):
        if not np.all(np.isfinite(k)):
            raise DivergenceError(f"non-finite derivative at RK4 stage {i + 1}", stage=i + 1)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(f, x0, dt, n_steps, *args):
    """Integrate and return the trajectory of shape ``(n_steps + 1, ...)``."""
    out = np.empty((n_steps + 1,) + np.shape(x0))
    out[0] = x0
    x = np.asarray(x0, dtype=float)
    for i in range(n_steps):
        x = rk4_step(f, x, dt, *args)
        out[i + 1] = x
    return out
