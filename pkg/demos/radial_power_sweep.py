"""Recurrence of the radial-power family across the m + d = 2 boundary.

For each (d, m) the classifier is run with the gallery's criteria, and the
volume growth mu(B_r) is tabulated from the closed form.

    python3 demos/radial_power_sweep.py
"""
from invlab.criteria import classify, volume_function
from invlab.gallery import instantiate


def main():
    print(f"{'d':>2} {'m':>5} {'m+d':>5}  {'mu(B_10)':>12}  verdict      rules")
    for d in (2, 3):
        for s in (0.0, 1.0, 2.0, 2.5, 3.0):
            case = instantiate("radial-power", d=d, m=s - d)
            v = classify(case.cf, case.rho, case.options)
            vol = volume_function(case.rho, d, [10.0]).values[0]
            rules = ", ".join(sorted({i["rule"] for i in v.implications}))
            print(f"{d:>2} {s - d:>5g} {s:>5g}  {vol:>12.5g}  {v.recurrence:<11}  {rules}")


if __name__ == "__main__":
    main()
