"""Coverage of 95% intervals for the all-population estimate over many seeds."""

from _common import dump, parser, timed

from mrp.inference.results import SamplerConfig
from mrp.replication.studies import calibration_study

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--samples", type=int, default=250)
    a = p.parse_args()
    doc = timed(calibration_study, seeds=range(a.seeds or 200), n=a.n, workers=a.workers,
                sampler=SamplerConfig(chains=4, warmup=a.warmup, samples=a.samples))
    print(f"coverage {doc['covered']}/{doc['total']} = {doc['coverage']:.3f}; unconverged {doc['unconverged']}")
    dump(doc, a.out, "calibration.json")
