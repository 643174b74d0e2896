"""MMLE vs full Bayes on one Pew-scale simulated survey."""

from _common import dump, parser, timed

from mrp.inference.results import SamplerConfig
from mrp.replication.studies import duplication_study

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    a = p.parse_args()
    doc = timed(duplication_study, seed=a.seed,
                sampler=SamplerConfig(chains=4, warmup=a.warmup, samples=a.samples, seed=a.seed))
    print(f"mean |diff| {doc['mean_abs_diff']:.4f}  max |diff| {doc['max_abs_diff']:.4f}")
    dump(doc, a.out, "duplication.json")
