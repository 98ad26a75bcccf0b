# Evaluation metrics, one worked example each.
#
# Rankings become predictions (article metadata), predictions become
# scores: exact match at K, hierarchical example-F1, inverse-distance
# scores, and the granularity-decomposed date / distance-based location
# pair whose weighted mean is the headline number.

from newsrecon import (
    Gazetteer,
    GeoPoint,
    HierLocation,
    PartialDate,
    co_delta,
    delta_year,
    em_at_k,
    example_f1,
    geocode,
    great_date,
    great_loc,
    haversine_km,
)
from newsrecon.metrics import hier_location

gazetteer = Gazetteer(
    [
        {"place": "Paris", "parent": "France", "continent": "Europe", "lat": 48.8566, "lon": 2.3522},
        {"place": "London", "parent": "United Kingdom", "continent": "Europe", "lat": 51.5074, "lon": -0.1278},
        {"place": "France", "parent": "", "continent": "Europe", "lat": 46.6034, "lon": 1.8883},
        {"place": "United Kingdom", "parent": "", "continent": "Europe", "lat": 55.3781, "lon": -3.4360},
        {"place": "Europe", "parent": "", "continent": "", "lat": None, "lon": None},
    ]
)

paris = geocode("Paris, France", gazetteer)
london = geocode("London", gazetteer)
d = haversine_km(paris, london)
print(f"Paris-London: {d:.1f} km")
print(f"  location score (1 - d/1000, floored at 0): {great_loc(paris, london):.4f}")
print(f"  inverse-distance score 1/(1+d/1000):       {co_delta(paris, london):.4f}")

# The date score evaluates one term per granularity present in the ground
# truth; a prediction more specific than the ground truth is never
# penalized for its extra precision.
gt = PartialDate.parse("2015-06-22")
pred = PartialDate.parse("2015-06-12")
print(f"date score, 10 days off (T_day=15): {great_date(pred, gt):.4f}")
gt_year_only = PartialDate.parse("2015")
print(f"same prediction vs year-only truth: {great_date(pred, gt_year_only):.4f}")
print(f"year distance score 1/(1+dy):       {delta_year(pred, gt):.4f}")

# Locations compare as sets of child-to-parent chains; the gazetteer
# supplies the continent expansion.
full = hier_location("Paris, France", gazetteer)
country = hier_location("France", gazetteer)
print(f"chains for 'Paris, France': {sorted(full.chain_set())}")
print(f"example-F1 vs 'France' alone: {example_f1(country, full):.4f}")

# Exact match truncates the prediction to the ground truth's granularity
# (dates) or component set (locations).
ranked_dates = ["2015-06-12", "2015-07-01", "2015-06"]
print("EM@1 on month-level truth:", em_at_k(ranked_dates, "2015-06", 1, "date"))
ranked_locations = ["Paris, France", "Berlin, Germany"]
print("EM@1, prediction finer than truth:", em_at_k(ranked_locations, "France", 1, "location"))
