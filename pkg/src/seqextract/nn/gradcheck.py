"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import default_dtype


class NonDeterministicClosure(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def worst(self):
        if not self.errors:
            return None, 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def failing(self):
        return [n for n, e in self.errors.items() if e > self.tolerance]

    def __str__(self):
        name, err = self.worst
        status = "PASS" if self.passed else "FAIL"
        return f"{status} worst={name} rel_err={err:.3e} tol={self.tolerance:g}"


def finite_difference_check(closure, store, tolerance=1e-3, step=1e-3, names=None, analytic=None, max_entries=None,
                            seed=0):
    """Compare analytic gradients of ``closure()`` against central differences.

    The check runs in float64; parameters are cast back afterwards. Error per
    parameter is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6)``.
    ``analytic`` may supply precomputed gradients (fault injection in tests).
    ``max_entries`` subsamples entries of large parameters.
    """
    orig = {n: p.data.dtype for n, p in store}
    store.astype(np.float64)
    was_training = store.training
    store.eval()
    rng = np.random.default_rng(seed)
    try:
        with default_dtype(np.float64):
            store.zero_grad()
            loss = closure()
            again = closure()
            if float(loss.data) != float(again.data):
                raise NonDeterministicClosure("closure returned different values on identical parameters")
            if analytic is None:
                loss.backward()
                analytic = store.grads()
                store.zero_grad()
            report = GradCheckReport(tolerance)
            for n in names or store.names():
                p = store[n]
                a = np.asarray(analytic[n], dtype=np.float64)
                flat = p.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
                num = np.zeros(idx.size)
                for j, i in enumerate(idx):
                    old = flat[i]
                    flat[i] = old + step
                    up = float(closure().data)
                    flat[i] = old - step
                    down = float(closure().data)
                    flat[i] = old
                    num[j] = (up - down) / (2 * step)
                a_sel = a.reshape(-1)[idx]
                scale = max(np.abs(a_sel).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-6)
                report.errors[n] = float(np.abs(a_sel - num).max(initial=0.0) / scale)
    finally:
        for n, p in store:
            p.data = p.data.astype(orig[n])
        store.train(was_training)
    return report
