"""Multi-column variance loss, Euclidean density loss and their combination."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

EPSILON = 1e-6

# weight of the variance loss per benchmark
LAMBDA_BY_DATASET = {
    "shanghaitech_a": 1.0,
    "shanghaitech_b": 0.01,
    "ucf_cc_50": 0.001,
    "ucf_qnrf": 1.5,
    "mall": 0.001,
}


def attention_vector(branch_output):
    """Channel mean of a C' x H x W branch output, flattened row-major."""
    return T.flatten(T.channel_mean(branch_output))


def attention_sum(vectors):
    vectors = list(vectors)
    n = vectors[0].shape
    for v in vectors:
        if v.shape != n:
            raise ShapeError(f"attention vectors differ in length: {[u.shape for u in vectors]}")
    total = vectors[0]
    for v in vectors[1:]:
        total = T.add(total, v)
    return total


def _group_terms(vectors, epsilon):
    s = len(vectors)
    if s < 2:
        raise ValueError("variance loss needs at least two branches")
    total = attention_sum(vectors)
    terms = []
    for v in vectors:
        others = T.mul(T.sub(total, v), 1.0 / (s - 1))
        denom = T.maximum(T.mul(T.norm(v), T.norm(others)), epsilon)
        terms.append(T.div(T.dot(v, others), denom))
    return terms


def variance_loss(records, epsilon=EPSILON):
    """Mean leave-one-out cosine similarity between branch attention vectors.

    ``records`` is indexed ``[image][psm][branch]`` and holds attention
    vectors (1-D tensors). Branch outputs can be passed instead; anything with
    more than one dimension is reduced with :func:`attention_vector` first.
    """
    terms = []
    for per_image in records:
        for group in per_image:
            vecs = [attention_vector(v) if v.data.ndim > 1 else v for v in group]
            terms.extend(_group_terms(vecs, epsilon))
    if not terms:
        raise ValueError("no attention vectors given")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / len(terms))


def euclidean_loss(preds, gts):
    """Sum of squared per-pixel differences, averaged over the images."""
    if isinstance(preds, Tensor):
        preds, gts = [preds], [gts]
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions for {len(gts)} ground truths")
    total = None
    for p, g in zip(preds, gts):
        if not isinstance(g, Tensor):
            g = Tensor(np.asarray(g, dtype=p.dtype))
        if p.shape != g.shape:
            raise ShapeError(f"prediction {p.shape} vs ground truth {g.shape}")
        term = T.sum(T.square(T.sub(p, g)))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(preds))


def total_loss(l_e, l_m, lam):
    return T.add(l_e, T.mul(l_m, float(lam)))


def cosine_similarity(a, b, epsilon=EPSILON):
    """Plain numpy cosine used by the similarity diagnostics."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), epsilon))
