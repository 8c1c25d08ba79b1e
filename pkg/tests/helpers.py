"""Shared oracles for the test suite."""

import numpy as np

from gazegan.numerics import GradTape, Tensor
from gazegan.synthetic import write_personality, write_recording


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` with respect to each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(*arrays)
            a[i] = old - h
            fm = f(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    """Run ``build(*tensors)`` under a tape and return the gradients."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = build(*tensors)
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(build, arrays, h=1e-5):
    """Largest relative error between tape gradients and central differences."""

    def f(*arrs):
        return build(*[Tensor(x) for x in arrs]).item()

    analytic = analytic_grad(build, arrays)
    numeric = numeric_grad(f, [a.copy() for a in arrays], h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def brute_force_inception(probs):
    """exp(mean_i sum_k p_ik log(p_ik / pbar_k)) with explicit loops."""
    n, k = probs.shape
    marginal = [sum(probs[i][j] for i in range(n)) / n for j in range(k)]
    total = 0.0
    for i in range(n):
        kl = 0.0
        for j in range(k):
            p = probs[i][j]
            if p > 0:
                kl += p * np.log(p / marginal[j])
        total += kl
    return float(np.exp(total / n))


def valid_window(n=300, seed=0):
    rng = np.random.default_rng(seed)
    w = np.empty((n, 4))
    w[:, 0:2] = rng.uniform(0.05, 0.95, size=(n, 2))
    w[:, 2] = rng.uniform(2.0, 5.0, size=n)
    w[:, 3] = rng.integers(0, 2, size=n)
    return w


def make_fixture_corpus(root):
    """Three participants, 60 s each except p2 (20 s), with planted defects.

    Returns the analytic (total, rejected) window counts at stride 60.
    """
    rec = root / "recordings"
    rec.mkdir()
    plan = {"p0": 3600, "p1": 3600, "p2": 1200}
    bad_rows = {"p0": [10], "p1": [1000, 3599], "p2": []}
    for i, (pid, n) in enumerate(plan.items()):
        w = valid_window(n, seed=i)
        for r in bad_rows[pid]:
            w[r, 2] = 0.0
        write_recording(rec / f"{pid}.csv", w)
    write_personality(root / "personality.csv",
                      {"p0": (0, 1, 2, 0, 1), "p1": (2, 2, 2, 2, 2), "p2": (0, 0, 0, 0, 0)})
    # windows at stride 60: floor((n - 300) / 60) + 1
    totals = {pid: (n - 300) // 60 + 1 for pid, n in plan.items()}

    # a defect at row r spoils every window starting in [r - 299, r]
    def spoiled(pid):
        starts = range(0, 60 * totals[pid], 60)
        return sum(any(s <= r < s + 300 for r in bad_rows[pid]) for s in starts)
    return totals, {pid: spoiled(pid) for pid in plan}
