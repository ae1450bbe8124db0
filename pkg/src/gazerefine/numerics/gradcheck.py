"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gazerefine.numerics.autodiff import record_kinks


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    n_skipped: int = 0

    def passed(self, tol):
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor=1e-8):
    """``|a - n| / max(|a|, |n|, floor)``, elementwise."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _evaluate(f, track):
    if not track:
        return float(f().value), None
    with record_kinks() as log:
        value = float(f().value)
    return value, b"".join(log)


def grad_check(f, params, step=1e-3, max_coords=None, rng=None, floor=1e-8, skip_kinks=False):
    """Compare autodiff gradients of scalar ``f()`` against central differences.

    ``params`` maps names to :class:`Var` leaves that ``f`` reads.  With
    ``max_coords`` set, that many coordinates per parameter are sampled with
    ``rng`` instead of checking all of them.  With ``skip_kinks`` a
    coordinate whose +step or -step evaluation switches the branch of any
    relu/abs/clip/maximum is skipped (and counted), since a central
    difference across a kink does not estimate the derivative.
    Returns the worst checked coordinate.
    """
    params = dict(params)
    for p in params.values():
        p.grad = None
    with record_kinks() as log:
        out = f()
    base_pattern = b"".join(log)
    out.backward()
    analytic = {k: (np.zeros_like(p.value) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    worst = GradCheckResult(0.0, "", (), 0.0, 0.0, 0)
    count = skipped = 0
    for name, p in params.items():
        flat_size = p.value.size
        if max_coords is not None and flat_size > max_coords:
            coords = rng.choice(flat_size, max_coords)
        else:
            coords = range(flat_size)
        for flat in coords:
            idx = tuple(int(i) for i in np.unravel_index(int(flat), p.value.shape))
            orig = p.value[idx]
            p.value[idx] = orig + step
            fp, pat_p = _evaluate(f, skip_kinks)
            p.value[idx] = orig - step
            fm, pat_m = _evaluate(f, skip_kinks)
            p.value[idx] = orig
            if skip_kinks and (pat_p != base_pattern or pat_m != base_pattern):
                skipped += 1
                continue
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic[name][idx])
            err = float(relative_error(a, numeric, floor))
            count += 1
            if err > worst.max_rel_error or not worst.worst_param:
                worst = GradCheckResult(err, name, idx, a, numeric, 0)
    worst.n_checked = count
    worst.n_skipped = skipped
    return worst
