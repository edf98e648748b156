import numpy as np


def stable_sigmoid(x):
    """logistic function without overflow: exp is only taken of -|x|"""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def inverted_dropout(x, keep_prob, rng):
    """
    Zero each coordinate with probability 1 - keep_prob and scale the kept ones by 1/keep_prob,
    so the expectation of every coordinate is unchanged and eval mode needs no rescaling.

    Returns the dropped input and the scaled mask (x_dropped == x * mask).
    """
    if keep_prob >= 1.0:
        mask = np.ones_like(x)
    else:
        mask = (rng.random(np.shape(x)) < keep_prob).astype(x.dtype) / keep_prob
    return x * mask, mask


def mse_loss(y, gold):
    """
    squared distance summed over the batch and its derivative for every prediction:
    L = sum_i (y_i - gold_i)^2, dL/dy_i = 2 (y_i - gold_i)
    """
    diff = np.asarray(y, dtype=np.float64) - np.asarray(gold, dtype=np.float64)
    return float(np.sum(diff ** 2)), 2.0 * diff


def hinge_loss(y, gold, max_score, margin):
    """
    L = sum_i max((y_i - gold_i)^2 - (S/2 - R)^2, 0) with gold in {0, S}.
    Predictions already within S/2 - R of their target (on the correct side of the
    decision boundary, with margin) give zero loss and zero gradient.
    """
    diff = np.asarray(y, dtype=np.float64) - np.asarray(gold, dtype=np.float64)
    slack = diff ** 2 - (max_score / 2.0 - margin) ** 2
    active = slack > 0
    return float(np.sum(np.where(active, slack, 0.0))), np.where(active, 2.0 * diff, 0.0)
