import numpy as np

BOOTSTRAP_RESAMPLES = 200
BOOTSTRAP_SEED = 20150706


def binomial_stderr(p, n):
    """Standard error of a fraction p estimated from n Bernoulli draws"""
    p = np.asarray(p, dtype=float)
    if n <= 0:
        return np.full_like(p, np.nan)
    return np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / n)


def bootstrap_rng(offset: int = 0) -> np.random.Generator:
    """Fixed sub-seeded generator so error bars are reproducible"""
    return np.random.default_rng([BOOTSTRAP_SEED, offset])


def channel_index(values, bin_width: float) -> np.ndarray:
    """Index of the bin of width bin_width centred on each multiple of bin_width"""
    return np.floor(np.asarray(values, dtype=float) / bin_width + 0.5).astype(np.int64)
