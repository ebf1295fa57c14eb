"""Pilot run behind the frozen exit-fraction threshold of the acceptance suite.

The exponential-diffusion case (A = e^{|x|^2} id, G = e^{|x|^2} c) is run
from x = 2 e1 up to t = 1 with a seed distinct from the acceptance seed.
The threshold is the pilot exit fraction at R_kill = 10 minus five of its
standard errors, rounded down.

    python3 demos/pilot_exit_threshold.py
"""
import math
import time

from invlab.gallery import instantiate
from invlab.sde import SimConfig, survival_probability

PILOT_SEED = 101


def main(paths: int = 100_000) -> float:
    case = instantiate("exp-quadratic-two-finite", d=2)
    cfg = SimConfig(x=(2.0, 0.0), t=1.0, h=1e-3, scheme="tamed", R_kill=10.0, paths=paths, seed=PILOT_SEED)
    t0 = time.perf_counter()
    res = survival_probability(case.cf, cfg)
    for row in res.sensitivity:
        frac = row["exited"] / paths
        print(f"R_kill = {row['R_kill']:>4g}: exit fraction {frac:.5f} (SE {row['se']:.1e}), "
              f"stalled {row['stalled']}")
    frac = res.sensitivity[0]["exited"] / paths
    theta = math.floor((frac - 5.0 * res.sensitivity[0]["se"]) * 1e4) / 1e4
    print(f"threshold {theta:.4f}  ({time.perf_counter() - t0:.1f} s)")
    return theta


if __name__ == "__main__":
    main()
