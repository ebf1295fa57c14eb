"""Occupation time of a fixed window for planar and spatial Brownian motion.

Heuristic evidence only: planar paths keep returning, so the time spent in
[-2, 2]^d keeps growing; in three dimensions it levels off.

    python3 demos/occupation_trend.py
"""
from invlab.gallery import instantiate
from invlab.sde import SimConfig, occupation_histogram


def main(paths: int = 2000):
    for d in (2, 3):
        cf = instantiate("brownian", d=d).cf
        row = []
        for t in (5.0, 20.0, 80.0):
            cfg = SimConfig(x=(0.0,) * d, t=t, h=2e-2, scheme="euler-maruyama", R_kill=1e6, paths=paths, seed=1)
            hist = occupation_histogram(cf, cfg, [-2.0] * d, [2.0] * d, 1)
            row.append(f"T={t:g}: {hist.occupation_time:6.2f}")
        print(f"d = {d}: " + "  ".join(row))


if __name__ == "__main__":
    main()
