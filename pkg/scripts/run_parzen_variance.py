"""Bootstrap variance of the Parzen Bayes-error estimate on original vs anatomized data."""

import argparse
import json

from anatknn.experiments import run_parzen_variance

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--resamples", type=int, default=30)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    a = p.parse_args()
    check = run_parzen_variance(a.trials, a.resamples, a.n, l=a.l, seed=a.seed, jobs=a.jobs)
    for i, t in enumerate(check.trials):
        print(f"trial {i:2d}: var(original)={t.var_original:.3e} var(anatomized)={t.var_anatomized:.3e}")
    print(json.dumps({"fraction_anatomized_not_larger": check.fraction}))
