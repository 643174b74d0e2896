"""Pooled jumpiness of fitted income curves: two sample sizes and per-cell bias."""

from _common import dump, parser, timed

from mrp.replication.studies import smoothness_study

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--bias-scale", type=float, default=0.3)
    a = p.parse_args()
    doc = timed(smoothness_study, seeds=range(a.seeds or 50), bias_scale=a.bias_scale, workers=a.workers)
    for r in doc["seeds"]:
        print(r["seed"], f"{r['small']:.3e} {r['large']:.3e} {r['small_bias']:.3e}")
    print(f"large <= small in {doc['large_le_small']}/{doc['total']}; medians small {doc['median_small']:.3e}, "
          f"large {doc['median_large']:.3e}, small+bias {doc['median_small_bias']:.3e}")
    dump(doc, a.out, "smoothness.json")
