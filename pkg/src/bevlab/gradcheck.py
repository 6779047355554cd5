"""Central finite-difference verification of analytic gradients.

Every backward pass in this package is validated against
(f(x + h) - f(x - h)) / 2h.  The comparison is element-wise with a
relative error that ignores differences below an absolute floor
(``atol``), since near-zero derivative pairs otherwise produce
meaningless relative blowups.  All checks are meant to run in float64;
at h = 1e-5 the truncation+roundoff error of the central difference is
comfortably below the 1e-4 acceptance threshold for the smooth
functions used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GradCheckReport", "check_gradients", "check_array_gradient"]

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
DEFAULT_ATOL = 1e-8


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep."""

    max_rel_err: float
    worst_name: str
    n_elements: int
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] max rel err {self.max_rel_err:.3e} "
                f"(worst: {self.worst_name}, {self.n_elements} elements, tol {self.tol:.1e})")


def _rel_err(analytic: float, numeric: float, atol: float) -> float:
    diff = abs(analytic - numeric)
    if diff <= atol:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def _pick_indices(n: int, max_samples: int, rng: np.random.Generator) -> np.ndarray:
    if n <= max_samples:
        return np.arange(n)
    return np.sort(rng.choice(n, size=max_samples, replace=False))


def _fd_sweep(flat_value: np.ndarray, flat_analytic: np.ndarray, eval_loss,
              indices: np.ndarray, h: float, atol: float) -> float:
    worst = 0.0
    for idx in indices:
        saved = flat_value[idx]
        flat_value[idx] = saved + h
        up = eval_loss()
        flat_value[idx] = saved - h
        down = eval_loss()
        flat_value[idx] = saved
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"non-finite loss while perturbing element {idx}")
        numeric = (up - down) / (2.0 * h)
        worst = max(worst, _rel_err(float(flat_analytic[idx]), numeric, atol))
    return worst


def check_gradients(named_params, loss_fn, *, h: float = DEFAULT_H,
                    tol: float = DEFAULT_TOL, atol: float = DEFAULT_ATOL,
                    max_samples: int = 64, seed: int = 0) -> GradCheckReport:
    """Verify parameter gradients of a scalar loss.

    ``named_params`` is an iterable of (name, Parameter).  ``loss_fn`` is
    called as ``loss_fn(compute_grad)``: with True it must run a full
    forward+backward pass (accumulating into ``.grad``) and return the
    scalar loss; with False only the loss value is needed.  Gradients are
    zeroed here before the analytic pass.  Each parameter is probed at up
    to ``max_samples`` seeded element positions (all elements when the
    parameter is small enough).
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.zero_grad()
    loss0 = float(loss_fn(True))
    if not np.isfinite(loss0):
        raise ValueError(f"non-finite loss {loss0!r}; cannot verify gradients")
    analytic = {name: p.grad.copy() for name, p in named_params}

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    worst_name = "<none>"
    worst = -1.0
    n_total = 0

    def eval_loss() -> float:
        return float(loss_fn(False))

    for name, p in named_params:
        flat_v = p.value.reshape(-1)
        flat_a = analytic[name].reshape(-1)
        indices = _pick_indices(flat_v.size, max_samples, rng)
        err = _fd_sweep(flat_v, flat_a, eval_loss, indices, h, atol)
        per_param[name] = err
        n_total += indices.size
        if err > worst:
            worst, worst_name = err, name
    return GradCheckReport(max(worst, 0.0), worst_name, n_total, tol, per_param)


def check_array_gradient(x: np.ndarray, analytic: np.ndarray, eval_loss, *,
                         h: float = DEFAULT_H, tol: float = DEFAULT_TOL,
                         atol: float = DEFAULT_ATOL, max_samples: int = 64,
                         seed: int = 0, name: str = "input") -> GradCheckReport:
    """Same sweep, but for the gradient with respect to an input array.

    ``x`` is perturbed in place (and restored); ``eval_loss()`` must
    recompute the scalar loss from the current contents of ``x``.
    """
    if analytic.shape != x.shape:
        raise ValueError(f"analytic gradient shape {analytic.shape} != input shape {x.shape}")
    base = float(eval_loss())
    if not np.isfinite(base):
        raise ValueError(f"non-finite loss {base!r}; cannot verify gradients")
    rng = np.random.default_rng(seed)
    flat_v = x.reshape(-1)
    indices = _pick_indices(flat_v.size, max_samples, rng)
    err = _fd_sweep(flat_v, analytic.reshape(-1), lambda: float(eval_loss()), indices, h, atol)
    return GradCheckReport(err, name, int(indices.size), tol, {name: err})
