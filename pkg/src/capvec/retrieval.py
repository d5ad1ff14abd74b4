"""Bidirectional ranking protocol: Recall@K and median rank.

Two directions are scored from one cosine matrix: annotation ranks every
caption for each image query, search ranks every image for each caption
query. A query's rank is the 1-based position of its best ground-truth
item after sorting candidates by descending cosine, with exact score ties
broken by candidate id so results are deterministic.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class RankResult:
    direction: str  # "annotation" or "search"
    ranks: list


def _unit_rows(pairs, what):
    ids = [str(i) for i, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate {what} ids")
    mat = np.asarray([v for _, v in pairs], dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = ids[int(np.argmin(norms))]
        raise ValueError(f"{what} {bad!r} has a zero embedding")
    return ids, mat / norms


def _rank_of_best(scores, ids_arr, positions, gt_ids):
    """Rank of the best-scoring ground-truth candidate under (score desc, id asc)."""
    best_j = None
    for g in gt_ids:
        j = positions.get(g)
        if j is None:
            raise ValueError(f"ground-truth item {g!r} not among candidates")
        if best_j is None or (-scores[j], ids_arr[j]) < (-scores[best_j], ids_arr[best_j]):
            best_j = j
    s = scores[best_j]
    ahead = int((scores > s).sum() + ((scores == s) & (ids_arr < ids_arr[best_j])).sum())
    return ahead + 1


def rank_all(images, captions, ground_truth):
    """Rank both directions; returns (annotation RankResult, search RankResult).

    `images` and `captions` are lists of (id, vector); `ground_truth` maps
    image_id -> list of caption ids. Every image query must have at least
    one ground-truth caption.
    """
    img_ids, img_mat = _unit_rows(images, "image")
    cap_ids, cap_mat = _unit_rows(captions, "caption")
    sims = img_mat @ cap_mat.T

    img_arr = np.asarray(img_ids)
    cap_arr = np.asarray(cap_ids)
    img_pos = {c: j for j, c in enumerate(img_ids)}
    cap_pos = {c: j for j, c in enumerate(cap_ids)}

    ann_ranks = []
    for i, image_id in enumerate(img_ids):
        gt = ground_truth.get(image_id, [])
        if not gt:
            raise ValueError(f"image {image_id!r} has no ground-truth captions")
        ann_ranks.append(_rank_of_best(sims[i], cap_arr, cap_pos, gt))

    cap_to_images = {}
    for image_id, caps in ground_truth.items():
        for c in caps:
            cap_to_images.setdefault(c, []).append(image_id)
    search_ranks = []
    for j, caption_id in enumerate(cap_ids):
        gt = cap_to_images.get(caption_id)
        if not gt:
            raise ValueError(f"caption {caption_id!r} has no ground-truth image")
        search_ranks.append(_rank_of_best(sims[:, j], img_arr, img_pos, gt))

    return (
        RankResult("annotation", ann_ranks),
        RankResult("search", search_ranks),
    )


def recall_at_k(result, k):
    """Percentage of queries whose rank is within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(result.ranks)
    return float(100.0 * (ranks <= k).mean())


def median_rank(result):
    if not result.ranks:
        raise ValueError("no ranks to take a median of")
    return float(np.median(result.ranks))


def metrics_row(result, ks=(1, 5, 10)):
    """One table row: R@K for each k plus the median rank."""
    return [recall_at_k(result, k) for k in ks] + [median_rank(result)]
