"""Linear-quadratic oracle for the degenerate diagonal configuration.

With the convective term off, the control weights flat (gamma = 0, B = I),
a saturation radius too large to ever bind, and quadratic costs

    Phi(x) = sum_k M_k x_k^2,    phi(x) = sum_k N_k x_k^2,

the value function stays exactly quadratic, u(t, x) = sum_k P_k(t) x_k^2
+ rho(t) in time-to-go, with per-mode Riccati dynamics

    P_k' = -2 lambda_k P_k - 2 P_k^2 + M_k,   P_k(0) = N_k,
    rho' = sum_k q_k P_k,                      rho(0) = 0,

and optimal feedback z*(t, x) = -2 P(T - t) x.  The ODE is integrated to
tight tolerance and doubles as an independent accuracy oracle for the PDE
solvers; for M = 0 the Bernoulli closed form below pins the integrator
itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "LQProblem",
    "LQSolution",
    "solve_riccati",
    "closed_form_p",
]


@dataclass(frozen=True)
class LQProblem:
    lambdas: np.ndarray
    q_spectrum: np.ndarray
    running_weights: np.ndarray    # M_k
    terminal_weights: np.ndarray   # N_k
    horizon: float

    def __post_init__(self):
        for name in ("lambdas", "q_spectrum", "running_weights",
                     "terminal_weights"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        m = len(self.lambdas)
        if any(len(getattr(self, n)) != m for n in
               ("q_spectrum", "running_weights", "terminal_weights")):
            raise ValueError("all LQ coefficient arrays must have length m")
        if np.any(self.lambdas <= 0.0) or np.any(self.q_spectrum < 0.0):
            raise ValueError("need lambda > 0 and q >= 0")
        if np.any(self.running_weights < 0.0) or \
           np.any(self.terminal_weights < 0.0):
            raise ValueError("quadratic cost weights must be nonnegative")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    @property
    def m(self) -> int:
        return len(self.lambdas)


@dataclass
class LQSolution:
    problem: LQProblem
    _dense: object

    def p(self, t: float) -> np.ndarray:
        """Riccati coefficients P_k at time-to-go t."""
        return np.atleast_1d(self._dense(t))[: self.problem.m]

    def rho(self, t: float) -> float:
        return float(self._dense(t)[self.problem.m])

    def value(self, t: float, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(self.p(t) * x * x, axis=-1) + self.rho(t))

    def gradient(self, t: float, x) -> np.ndarray:
        return 2.0 * self.p(t) * np.asarray(x, dtype=float)

    def policy(self):
        """Optimal feedback in wall-clock time for the known horizon."""
        T = self.problem.horizon

        def policy(t, X):
            tau = min(max(T - float(t), 0.0), T)
            return -2.0 * self.p(tau) * np.asarray(X, dtype=float)
        return policy


def solve_riccati(prob: LQProblem, rtol: float = 1e-10,
                  atol: float = 1e-12) -> LQSolution:
    """Integrate the per-mode Riccati system with dense output."""
    m = prob.m
    lam, M, q = prob.lambdas, prob.running_weights, prob.q_spectrum

    def rhs(t, y):
        P = y[:m]
        dP = -2.0 * lam * P - 2.0 * P * P + M
        drho = np.sum(q * P)
        return np.concatenate([dP, [drho]])

    y0 = np.concatenate([prob.terminal_weights, [0.0]])
    sol = solve_ivp(rhs, (0.0, prob.horizon), y0, method="RK45",
                    dense_output=True, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    return LQSolution(problem=prob, _dense=sol.sol)


def closed_form_p(lam: float, n0: float, t) -> np.ndarray:
    """Bernoulli solution of P' = -2 lam P - 2 P^2, P(0) = n0 > 0.

    1/P satisfies a linear equation, giving
    P(t) = 1 / ((1/n0 + 1/lam) exp(2 lam t) - 1/lam).
    """
    if n0 <= 0.0:
        raise ValueError("closed form assumes a positive terminal weight")
    t = np.asarray(t, dtype=float)
    return 1.0 / ((1.0 / n0 + 1.0 / lam) * np.exp(2.0 * lam * t) - 1.0 / lam)
