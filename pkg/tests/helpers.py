import numpy as np

from slopehom import PanelData


def random_panel(seed, n=4, t=30, k=2, intercepts=False, noise=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, t, k))
    beta = 1.0 + rng.standard_normal((n, k))
    y = np.einsum("ntk,nk->nt", x, beta) + noise * rng.standard_normal((n, t))
    if intercepts:
        y = y + rng.standard_normal((n, 1)) * 3.0
    return PanelData(y=y, x=x, has_intercepts=intercepts)


def with_y(panel, y):
    return PanelData(y=y, x=panel.x, has_intercepts=panel.has_intercepts)
