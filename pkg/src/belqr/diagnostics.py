"""Chain diagnostics."""
import numpy as np


def _levinson(acov, order_max):
    """Yule-Walker fits of every order up to ``order_max``.

    Returns the innovation variances (index = order) and the AR
    coefficients of each order.
    """
    var = np.empty(order_max + 1)
    var[0] = acov[0]
    coefs = [np.zeros(0)]
    phi = np.zeros(0)
    for m in range(1, order_max + 1):
        k = (acov[m] - phi @ acov[m - 1:0:-1]) / var[m - 1]
        phi = np.concatenate([phi - k * phi[::-1], [k]])
        var[m] = var[m - 1] * (1.0 - k * k)
        coefs.append(phi)
    return var, coefs


def spectrum0_ar(x) -> float:
    """Spectral density at frequency zero from an AIC-selected AR fit."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    order_max = int(min(n - 1, np.floor(10 * np.log10(n))))
    fft = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(fft * np.conj(fft))[: order_max + 1] / n
    var, coefs = _levinson(acov, order_max)
    with np.errstate(divide="ignore"):
        aic = n * np.log(np.maximum(var, np.finfo(float).tiny)) + 2 * np.arange(order_max + 1)
    order = int(np.argmin(aic))
    var_pred = var[order] * n / (n - (order + 1))
    return var_pred / (1.0 - coefs[order].sum()) ** 2


def ess(series) -> float:
    """Effective sample size of a scalar chain, clipped to ``(0, len]``."""
    x = np.asarray(series, dtype=float).reshape(-1)
    n = x.size
    if n < 10:
        raise ValueError(f"effective sample size needs at least 10 draws, got {n}")
    v = x.var(ddof=1)
    if v == 0.0:
        return float(n)
    spec = spectrum0_ar(x)
    if not np.isfinite(spec) or spec <= 0:
        return float(n)
    return float(np.clip(n * v / spec, np.finfo(float).tiny, n))


def ess_matrix(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    return np.array([ess(samples[:, j]) for j in range(samples.shape[1])])
