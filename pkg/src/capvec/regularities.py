"""Vector arithmetic in the multimodal space, and small-scale PCA.

With a linear sentence encoder the space supports word-level arithmetic:
subtracting a word vector from an image embedding and adding another moves
toward images matching the edited description. Queries are answered by
cosine against a unit-normalized index. A mean-resort pass over the top
retrievals demotes outliers. PCA (power iteration with deflation) provides
the 2-D projections used for figures.
"""

import numpy as np

from .numcore import NORM_EPS, make_rng, unit_normalize


class EmbeddingIndex:
    """Unit-normalized vectors with ids and a kind tag per item."""

    def __init__(self, ids, vectors, kinds=None):
        ids = [str(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise ValueError("index ids must be unique")
        if len(ids) == 0:
            raise ValueError("cannot build an empty index")
        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise ValueError(f"vector matrix shape {mat.shape} does not match {len(ids)} ids")
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms < NORM_EPS):
            bad = ids[int(np.argmin(norms))]
            raise ValueError(f"item {bad!r} has a zero vector")
        self.ids = ids
        self.vectors = mat / norms
        self.kinds = list(kinds) if kinds is not None else ["item"] * len(ids)
        if len(self.kinds) != len(ids):
            raise ValueError("kinds must match ids")

    def __len__(self):
        return len(self.ids)

    def get(self, item_id):
        return self.vectors[self.ids.index(item_id)]

    def nearest(self, query, top_n, exclude_ids=()):
        """Top cosine matches to `query`, ties broken by id."""
        q = unit_normalize(np.asarray(query, dtype=np.float64))
        scores = self.vectors @ q
        order = sorted(
            (j for j in range(len(self.ids)) if self.ids[j] not in exclude_ids),
            key=lambda j: (-scores[j], self.ids[j]),
        )
        return [(self.ids[j], float(scores[j])) for j in order[:top_n]]


def analogy_query(q, w_neg, w_pos, index, top_n=4, exclude_id=None):
    """Rank index items by cosine with (q - w_neg + w_pos).

    All three query vectors should be unit norm. The query image itself is
    excluded via `exclude_id`. A combined vector with near-zero norm (for
    instance q - w + w yielding numerically nothing after cancellation of
    everything) is rejected as degenerate.
    """
    combined = (
        np.asarray(q, dtype=np.float64)
        - np.asarray(w_neg, dtype=np.float64)
        + np.asarray(w_pos, dtype=np.float64)
    )
    if np.linalg.norm(combined) < NORM_EPS:
        raise ValueError("degenerate analogy query: combined vector has near-zero norm")
    exclude = {exclude_id} if exclude_id is not None else set()
    return index.nearest(combined, top_n, exclude_ids=exclude)


def resort_by_mean(items):
    """Reorder (id, vector) pairs by distance to their mean, ascending.

    Stable: exact distance ties keep their original relative order, so the
    incoming rank acts as the tie-break.
    """
    items = list(items)
    if not items:
        raise ValueError("cannot resort an empty result list")
    mat = np.asarray([v for _, v in items], dtype=np.float64)
    center = mat.mean(axis=0)
    dists = np.linalg.norm(mat - center, axis=1)
    order = sorted(range(len(items)), key=lambda j: dists[j])
    return [items[j][0] for j in order]


def _power_iteration(mat, rng, tol, max_iter):
    v = rng.normal(size=mat.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0, v
        v_new = w / norm
        lam = float(v_new @ (mat @ v_new))
        if np.linalg.norm(mat @ v_new - lam * v_new) <= tol * max(abs(lam), 1.0):
            return lam, v_new
        v = v_new
    return lam, v


def pca_project(vectors, components=2, tol=1e-10, max_iter=10000):
    """Project onto the top principal components of the covariance.

    Returns (coords n x components, explained variance ratios). Components
    come from power iteration with deflation; each component's sign is
    fixed by making its largest-magnitude coordinate positive, which makes
    the output deterministic. Data whose covariance rank is below
    `components` is rejected, reporting the attained rank.
    """
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 3:
        raise ValueError("need at least 3 vectors to project")
    if mat.shape[1] < components:
        raise ValueError(f"vectors of dim {mat.shape[1]} cannot yield {components} components")
    centered = mat - mat.mean(axis=0)
    cov = centered.T @ centered / mat.shape[0]
    total = float(np.trace(cov))
    rng = make_rng(0)

    comps, lams = [], []
    deflated = cov.copy()
    for i in range(components):
        lam, v = _power_iteration(deflated, rng, tol, max_iter)
        if total <= 0 or lam <= 1e-12 * max(total, 1.0):
            raise ValueError(
                f"covariance rank {i} is below the requested {components} components"
            )
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        comps.append(v)
        lams.append(lam)
        deflated = deflated - lam * np.outer(v, v)

    basis = np.stack(comps)
    coords = centered @ basis.T
    ratios = [lam / total for lam in lams]
    return coords, ratios
