"""Shared oracles for the test suite: random LD compositions and small DAEs."""

from __future__ import annotations

import math

import numpy as np

from ldwind import ldcore as ld
from ldwind.daesim import SemiExplicitDae
from ldwind.ocp import OcpProblem, TerminalConstraint

UNARY = ("sin", "exp", "abs", "tie_abs")
BINARY = ("add", "mul", "min", "max", "tie_min", "tie_max")


def evaluate_tree(node, z):
    """Evaluate an expression tree on floats or LDScalars."""
    op = node[0]
    if op == "var":
        return z[node[1]]
    if op == "const":
        return node[1]
    if op == "sin":
        return ld.sin(evaluate_tree(node[1], z))
    if op == "exp":
        # scaled so nested exponentials stay moderate
        return ld.exp(0.5 * evaluate_tree(node[1], z))
    if op == "abs":
        return ld.ld_abs(evaluate_tree(node[1], z))
    if op == "tie_abs":
        # shifted to vanish exactly at the base point
        return ld.ld_abs(evaluate_tree(node[1], z) - node[2])
    a = evaluate_tree(node[1], z)
    b = evaluate_tree(node[2], z)
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "min":
        return ld.ld_min(a, b)
    if op == "max":
        return ld.ld_max(a, b)
    # tie_min / tie_max: second argument shifted to equal the first at the base point
    b = (b - node[4]) + node[3]
    return ld.ld_min(a, b) if op == "tie_min" else ld.ld_max(a, b)


def random_tree(rng: np.random.Generator, z0, depth: int = 3, tie_prob: float = 0.3):
    """Random composition of the elementals; tie nodes are anchored at ``z0``."""
    n = len(z0)
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.8:
            return ("var", int(rng.integers(n)))
        return ("const", float(np.round(rng.uniform(-1, 1), 3)))
    if rng.random() < 0.4:
        op = UNARY[int(rng.integers(len(UNARY)))]
        if op.startswith("tie") and rng.random() > tie_prob * 2:
            op = "abs"
        child = random_tree(rng, z0, depth - 1, tie_prob)
        if op == "tie_abs":
            return (op, child, evaluate_tree(child, z0))
        return (op, child)
    op = BINARY[int(rng.integers(len(BINARY)))]
    if op.startswith("tie") and rng.random() > tie_prob * 2:
        op = op[4:]
    a = random_tree(rng, z0, depth - 1, tie_prob)
    b = random_tree(rng, z0, depth - 1, tie_prob)
    if op.startswith("tie"):
        return (op, a, b, evaluate_tree(a, z0), evaluate_tree(b, z0))
    return (op, a, b)


def random_case(seed: int, n: int = 3, k: int = 3, depth: int = 4, bound: float = 50.0):
    """Point, direction matrix and composition with moderate function values."""
    rng = np.random.default_rng(seed)
    while True:
        z0 = rng.uniform(-1.0, 1.0, n)
        M = rng.normal(size=(n, k))
        tree = random_tree(rng, z0, depth)
        val = evaluate_tree(tree, list(z0))
        if abs(val) < bound:
            return z0, M, tree


def ld_directional(tree, z0, M) -> np.ndarray:
    """LD-derivative row of a scalar composition along the columns of ``M``."""
    k = M.shape[1]
    z = [ld.LDScalar(v, M[i]) for i, v in enumerate(z0)]
    out = evaluate_tree(tree, z)
    if not isinstance(out, ld.LDScalar):
        return np.zeros(k)
    return out.der


def one_sided_fd(tree, z0, m, eps: float) -> float:
    f0 = evaluate_tree(tree, list(z0))
    f1 = evaluate_tree(tree, list(np.asarray(z0) + eps * np.asarray(m)))
    return (f1 - f0) / eps


# ------------------------------------------------------------------- test DAEs


def linear_dae() -> SemiExplicitDae:
    """``x' = -x``, ``0 = y - x``."""
    return SemiExplicitDae(1, 1, lambda t, u, x, y: [-x[0]], lambda t, x, y: [y[0] - x[0]], n_u=1)


def forced_dae() -> SemiExplicitDae:
    """``x' = u``, no algebraic part."""
    return SemiExplicitDae(1, 0, lambda t, u, x, y: [u[0]], lambda t, x, y: [], n_u=1)


def lq_problem(n_s: int = 4, step_count: int = 50) -> OcpProblem:
    """Smooth test problem: ``x' = -x + u + 0.5 y``, ``0 = y - sin(x)``, cost ``x^2 + u^2``."""
    from ldwind.daesim import IntegratorConfig

    def h(t, u, x, y):
        return [-x[0] + u[0] + 0.5 * y[0], x[0] * x[0] + u[0] * u[0]]

    def g(t, x, y):
        return [y[0] - ld.sin(x[0])]

    dae = SemiExplicitDae(2, 1, h, g, n_u=1)
    return OcpProblem(dae=dae, x0=[1.0, 0.0], y_guess=[0.0], t0=0.0, tf=1.0, n_s=n_s,
                      integrator=IntegratorConfig(step_count=step_count))


def lq_classical_sensitivities(problem: OcpProblem, p) -> np.ndarray:
    """Hand-coded forward sensitivity equations for :func:`lq_problem`.

    Integrated with the same trapezoidal stencil as the library so the two
    agree to round-off.
    """
    p = np.asarray(p, dtype=float)
    n_s, m = problem.n_s, problem.integrator.step_count
    dt = (problem.tf - problem.t0) / (n_s * m)
    x, q = 1.0, 0.0
    X = np.zeros(n_s)
    Q = np.zeros(n_s)

    def f(x, u):
        return -x + u + 0.5 * math.sin(x)

    for i in range(n_s):
        u = p[i]
        e = np.zeros(n_s)
        e[i] = 1.0
        for _ in range(m):
            # Newton on the trapezoidal state equation
            x1 = x
            for _ in range(50):
                r = x1 - x - 0.5 * dt * (f(x, u) + f(x1, u))
                d = 1 - 0.5 * dt * (-1 + 0.5 * math.cos(x1))
                x1 -= r / d
                if abs(r) < 1e-15:
                    break
            a0 = -1 + 0.5 * math.cos(x)
            a1 = -1 + 0.5 * math.cos(x1)
            X1 = (X + 0.5 * dt * (a0 * X + e + e)) / (1 - 0.5 * dt * a1)
            q_new = q + 0.5 * dt * (x * x + u * u + x1 * x1 + u * u)
            Q = Q + 0.5 * dt * (2 * x * X + 2 * u * e + 2 * x1 * X1 + 2 * u * e)
            x, X, q = x1, X1, q_new
    return Q


def block_square_problem(n_s: int = 10) -> OcpProblem:
    """Block move with the absolute value in the work integrand squared."""
    from ldwind.daesim import IntegratorConfig

    def h(t, u, x, y):
        return [x[1], u[0], (u[0] * x[1]) * (u[0] * x[1])]

    dae = SemiExplicitDae(3, 0, h, lambda t, x, y: [], n_u=1)
    return OcpProblem(dae=dae, x0=np.zeros(3), y_guess=np.zeros(0), t0=0.0, tf=1.0, n_s=n_s,
                      terminal_constraints=(TerminalConstraint(0, 1.0), TerminalConstraint(1, 0.0)),
                      integrator=IntegratorConfig(step_count=4))
