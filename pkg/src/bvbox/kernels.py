"""
Smoothing and penalty kernels.

``psi`` smooths the Euclidean norm of a gradient,
``psi_eps(t) = sqrt(eps + |t|^2) + eps |t|^2``, and ``max_rho`` is a C1
smoothing of ``max(0, x)`` with a quadratic patch on ``|x| <= 1/(2 rho)``.
``M_rho`` is the antiderivative of ``max_rho``. All functions broadcast over
numpy arrays; vector arguments carry their components in the last axis.
"""

import numpy as np


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")


def _check_rho(rho):
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")


def psi(eps, t):
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    s = np.sum(t * t, axis=-1)
    return np.sqrt(eps + s) + eps * s


def psi_grad(eps, t):
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    s = np.sum(t * t, axis=-1)
    return t * (1.0 / np.sqrt(eps + s) + 2.0 * eps)[..., None]


def psi_hess(eps, t):
    """Hessian of ``psi``; symmetric with eigenvalues >= 2 eps."""
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    s = np.sum(t * t, axis=-1)
    r = np.sqrt(eps + s)
    n = t.shape[-1]
    eye = np.eye(n)
    diag = (1.0 / r + 2.0 * eps)[..., None, None] * eye
    return diag - t[..., :, None] * t[..., None, :] / (r ** 3)[..., None, None]


def psi_plain(eps, t):
    """``sqrt(eps + |t|^2)`` without the H1 term, for comparison only."""
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    return np.sqrt(eps + np.sum(t * t, axis=-1))


def max_rho(rho, x):
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    c = 0.5 / rho
    # quadratic branch includes the break points
    return np.where(np.abs(x) <= c, 0.5 * rho * (x + c) ** 2, np.maximum(x, 0.0))


def max_rho_prime(rho, x):
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    c = 0.5 / rho
    return np.where(np.abs(x) <= c, rho * (x + c), np.where(x > 0, 1.0, 0.0))


def M_rho(rho, x):
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    c = 0.5 / rho
    with np.errstate(over="ignore", invalid="ignore"):
        quad = 0.5 * x * x + 1.0 / (24.0 * rho * rho)
        cubic = rho / 6.0 * (x + c) ** 3
    return np.where(x > c, quad, np.where(x >= -c, cubic, 0.0))


def lambda_a(rho, u, u_a):
    """Multiplier of the lower bound, ``max_rho(rho (u_a - u))``."""
    return max_rho(rho, rho * (np.asarray(u_a, dtype=float) - np.asarray(u, dtype=float)))


def lambda_b(rho, u, u_b):
    """Multiplier of the upper bound, ``max_rho(rho (u - u_b))``."""
    return max_rho(rho, rho * (np.asarray(u, dtype=float) - np.asarray(u_b, dtype=float)))


def Lambda_a(rho, u, u_a):
    """``-max_rho'(rho (u_a - u))``, with values in [-1, 0]."""
    return -max_rho_prime(rho, rho * (np.asarray(u_a, dtype=float) - np.asarray(u, dtype=float)))


def Lambda_b(rho, u, u_b):
    """``max_rho'(rho (u - u_b))``, with values in [0, 1]."""
    return max_rho_prime(rho, rho * (np.asarray(u, dtype=float) - np.asarray(u_b, dtype=float)))


def penalty_density(rho, u, u_a, u_b):
    """Pointwise ``(M_rho(rho (u_a - u)) + M_rho(rho (u - u_b))) / rho``."""
    u = np.asarray(u, dtype=float)
    return (M_rho(rho, rho * (np.asarray(u_a) - u)) + M_rho(rho, rho * (u - np.asarray(u_b)))) / rho
