"""Finite-difference gradient checking for float32 parameter blocks.

Perturbations are applied in the block's own dtype, so the realized step is
measured after rounding rather than assumed. Sample points where the forward
and backward one-sided differences disagree are treated as ReLU kink
crossings and resampled; the resample count is capped so a systematically
wrong gradient cannot hide behind the kink filter.
"""

import numpy as np


def central_diff(block, idx, loss_fn, h):
    """Central difference of loss_fn with respect to block.flat[idx].

    Returns (fd, lp, lm, h_eff) where fd may be a vector if loss_fn returns
    one. h_eff is the realized two-sided step after dtype rounding.
    """
    orig = block.flat[idx]
    step = block.dtype.type
    hi = step(orig + h)
    lo = step(orig - h)
    h_eff = float(hi) - float(lo)
    if h_eff == 0.0:
        raise ValueError("perturbation vanished after rounding")
    block.flat[idx] = hi
    lp = np.atleast_1d(np.asarray(loss_fn(), dtype=np.float64))
    block.flat[idx] = lo
    lm = np.atleast_1d(np.asarray(loss_fn(), dtype=np.float64))
    block.flat[idx] = orig
    return (lp - lm) / h_eff, lp, lm, h_eff


def check_gradients(blocks, loss_fn, analytic, n_checks, rng, h=2e-5,
                    rtol=1e-4, floor=1e-7, kink_frac=0.05):
    """Compare analytic gradients against central differences.

    blocks: list of (name, parameter array) to sample from, weighted by size.
    loss_fn: () -> scalar or (k,) vector of loss terms.
    analytic: (name, flat_index) -> gradient of each loss term, shape (k,).
    Returns a dict with n_checked, n_kinks, max_rel and the failure list;
    callers assert failures == [].
    """
    l0 = np.atleast_1d(np.asarray(loss_fn(), dtype=np.float64))
    sizes = np.array([b.size for _, b in blocks], dtype=np.float64)
    probs = sizes / sizes.sum()
    failures = []
    n_checked = 0
    n_kinks = 0
    max_rel = 0.0
    attempts = 0
    max_attempts = int(np.ceil(n_checks * (1.0 + kink_frac))) + 10
    while n_checked < n_checks:
        attempts += 1
        if attempts > max_attempts:
            raise AssertionError(
                f"too many kink resamples: {n_kinks} kinks in {attempts} draws")
        bi = rng.choice(len(blocks), p=probs)
        name, block = blocks[bi]
        idx = int(rng.integers(block.size))
        fd, lp, lm, h_eff = central_diff(block, idx, loss_fn, h)
        an = np.atleast_1d(np.asarray(analytic(name, idx), dtype=np.float64))
        rel = np.abs(fd - an) / np.maximum.reduce(
            [np.abs(fd), np.abs(an), np.full_like(fd, floor)])
        bad = rel >= rtol
        if np.any(bad):
            # one-sided differences bracket the center; a genuine kink inside
            # the interval makes them disagree, a wrong gradient does not
            fwd = (lp - l0) / (h_eff / 2.0)
            bwd = (l0 - lm) / (h_eff / 2.0)
            split = np.abs(fwd - bwd) > 0.25 * (np.abs(fd) + floor)
            if np.all(split[bad]):
                n_kinks += 1
                continue
            for j in np.nonzero(bad)[0]:
                failures.append((name, idx, int(j), float(fd[j]),
                                 float(an[j]), float(rel[j])))
        n_checked += 1
        max_rel = max(max_rel, float(np.max(rel)))
    return {"n_checked": n_checked, "n_kinks": n_kinks,
            "max_rel": max_rel, "failures": failures}
