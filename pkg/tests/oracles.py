"""Independent brute-force reimplementations used as test oracles.

Deliberately written from the formulas, in plain Python, sharing no code
with the package: these are the reference the fast paths must match.
"""

import math

EARTH_RADIUS_KM = 6371.0088


def oracle_haversine_km(lat1, lon1, lat2, lon2):
    """Haversine via the atan2 form (different code path from the package)."""
    p1 = lat1 * math.pi / 180.0
    p2 = lat2 * math.pi / 180.0
    dp = p2 - p1
    dl = (lon2 - lon1) * math.pi / 180.0
    h = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))


def oracle_law_of_cosines_km(lat1, lon1, lat2, lon2):
    """Spherical law of cosines: an algebraically different distance formula."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(
        math.radians(lon2 - lon1)
    )
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, c)))


def oracle_great_loc(d_km):
    return max(0.0, 1.0 - d_km / 1000.0)


def oracle_great_date(gt, pred, thresholds, weights):
    """gt/pred are (year, month-or-None, day-or-None) tuples."""
    gt_year, gt_month, gt_day = gt
    pred_year, pred_month, pred_day = pred
    units = ["century", "decade", "year"]
    if gt_month is not None:
        units.append("month")
    if gt_day is not None:
        units.append("day")
    total = 0.0
    weight_sum = 0.0
    for unit in units:
        w = weights[unit]
        weight_sum += w
        if unit == "century":
            s = 1.0 if gt_year // 100 == pred_year // 100 else 0.0
        elif unit == "decade":
            s = max(0.0, 1.0 - abs(gt_year // 10 - pred_year // 10) / thresholds["decade"])
        elif unit == "year":
            s = max(0.0, 1.0 - abs(gt_year - pred_year) / thresholds["year"])
        elif unit == "month":
            if pred_month is None:
                s = 0.0
            else:
                s = max(0.0, 1.0 - abs(gt_month - pred_month) / thresholds["month"])
        else:
            if pred_day is None:
                s = 0.0
            else:
                s = max(0.0, 1.0 - abs(gt_day - pred_day) / thresholds["day"])
        total += w * s
    return total / weight_sum


def oracle_chains(components):
    """Suffix chains of a normalized component list."""
    normed = [" ".join(c.strip().casefold().split()) for c in components]
    return {tuple(normed[i:]) for i in range(len(normed))}


def oracle_ef1(pred_components, gt_components):
    p = oracle_chains(pred_components)
    g = oracle_chains(gt_components)
    if not p and not g:
        return 1.0
    return 2.0 * len(p & g) / (len(p) + len(g))


def oracle_delta(pred_year, gt_year):
    return 1.0 / (1.0 + abs(pred_year - gt_year))


def oracle_co_delta(d_km):
    return 1.0 / (1.0 + d_km / 1000.0)


def _norm(text):
    return " ".join(text.strip().split()).casefold()


def oracle_em_date(predictions, gt, k):
    """gt/predictions are iso-ish strings; truncate prediction to gt parts."""
    gt_parts = gt.strip().split("-")
    for text in predictions[:k]:
        parts = text.strip().split("-")
        if len(parts) < len(gt_parts):
            continue
        if [int(x) for x in parts[: len(gt_parts)]] == [int(x) for x in gt_parts]:
            return 1
    return 0


def oracle_em_location(predictions, gt, k):
    gt_set = {_norm(c) for c in gt.split(",") if _norm(c)}
    if not gt_set:
        return 0
    seen = []
    for text in predictions:
        comp = frozenset(_norm(c) for c in text.split(",") if _norm(c))
        if comp and comp not in seen:
            seen.append(comp)
    return int(any(comp >= gt_set for comp in seen[:k]))


def enumerate_valid_clusters(articles, n_window, n_min_size):
    """All article subsets satisfying the three clustering rules.

    articles: list of (id, keyword-set, date).  Exponential: callers keep
    inputs at <= 12 articles.
    """
    n = len(articles)
    valid = []
    for mask in range(1, 1 << n):
        members = [articles[i] for i in range(n) if mask & (1 << i)]
        if len(members) < n_min_size:
            continue
        shared = set(members[0][1])
        for m in members[1:]:
            shared &= set(m[1])
        if not shared:
            continue
        dates = [m[2] for m in members]
        if (max(dates) - min(dates)).days > 2 * n_window:
            continue
        valid.append(frozenset(m[0] for m in members))
    return valid
