"""Zero-variance age batch: MMLE boundary estimate vs full-Bayes posterior mean."""

from _common import dump, parser, timed

from mrp.inference.results import SamplerConfig
from mrp.replication.studies import PEW_N, boundary_study

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--n", type=int, default=PEW_N)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--samples", type=int, default=300)
    a = p.parse_args()
    doc = timed(boundary_study, seeds=range(a.seeds or 20), n=a.n, workers=a.workers,
                sampler=SamplerConfig(chains=4, warmup=a.warmup, samples=a.samples))
    for r in doc["seeds"]:
        print(r["seed"], r["mmle_sigma"], round(r["hmc_sigma_mean"], 4), r["success"])
    print(f"MMLE zero {doc['mmle_zero']}/{doc['total']}, HMC in (0, 0.2) {doc['hmc_small']}/{doc['total']}, "
          f"both {doc['successes']}/{doc['total']}")
    dump(doc, a.out, f"boundary_n{a.n}.json")
