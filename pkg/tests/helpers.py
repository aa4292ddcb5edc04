import numpy as np

from wqte import Dataset, Nuisances
from wqte.models import DOUBLE_SAMPLING, OBSERVANCE, KnownModel


def random_dataset(rng, n, p=2, missing=0.3, ds=0.4, ties=False):
    """Valid dataset with both arms observed; outcomes missing at random-ish rates."""
    while True:
        x = rng.normal(size=(n, p))
        z = rng.integers(0, 2, n)
        y = x.sum(axis=1) + z + rng.standard_t(4, n)
        if ties:
            y = np.round(y, 0)
        r = (rng.random(n) > missing).astype(int)
        s = ((r == 0) & (rng.random(n) < ds)).astype(int)
        present = (r + s) == 1
        if all(np.any(present & (z == a)) for a in (0, 1)):
            return Dataset(np.ma.MaskedArray(y, mask=~present), z, x, r, s)


def known_nuisances(rng, d):
    """Randomly drawn known propensity, double-sampling and observance probabilities."""
    e = rng.uniform(0.1, 0.9, d.n)
    eta = rng.uniform(0.1, 1.0, d.n)
    pi = rng.uniform(0.2, 0.95, d.n)
    return Nuisances(
        e=KnownModel(lambda _d, e=e: e),
        eta=KnownModel(lambda _d, eta=eta: np.minimum(eta, 0.999), target=DOUBLE_SAMPLING),
        pi=KnownModel(lambda _d, pi=pi: pi, target=OBSERVANCE),
    )
