"""Regenerates the synthetic fixtures in this directory (stdlib only).

    python3 fixtures/generate.py

The files mimic the column layout of the three application datasets. The
values are simulated and carry no information about the real data.
"""

import math
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))


def fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write(name, header, rows):
    with open(os.path.join(HERE, name), "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def uncensored(name, n, beta, sigma, seed):
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        xs = [round(rng.gauss(0.0, 1.0), 6) for _ in beta[1:]]
        mu = beta[0] + sum(b * x for b, x in zip(beta[1:], xs))
        y = round(mu + rng.gauss(0.0, sigma), 6)
        rows.append([y] + xs)
    write(name, ["y"] + [f"x{j}" for j in range(1, len(beta))], rows)


def lalonde(seed=11):
    rng = random.Random(seed)
    rows = []
    for _ in range(2675):
        treat = 1 if rng.random() < 0.07 else 0
        age = rng.randint(17, 55)
        educ = max(3, min(17, int(round(rng.gauss(11.5, 2.5)))))
        black = 1 if rng.random() < 0.3 else 0
        hisp = 1 if rng.random() < 0.05 else 0
        nodegree = 1 if educ < 12 else 0
        re74 = max(0.0, round(rng.gauss(15.0, 9.0), 3))
        re75 = max(0.0, round(0.7 * re74 + rng.gauss(4.0, 5.0), 3))
        low = rng.random() < 0.35
        if low:
            mu = -2.0 + 0.8 * treat + 0.05 * age + 0.2 * educ + 0.05 * re75
            sd = 4.0
        else:
            mu = 4.0 + 1.0 * treat + 0.1 * age - 0.001 * age * age + 0.4 * educ + 0.5 * re75 + 0.2 * re74 - 1.5 * black
            sd = 8.0
        re78 = max(0.0, round(rng.gauss(mu, sd), 3))
        rows.append([re78, treat, age, age * age, educ, nodegree, black, hisp, re74, re75])
    write("lalonde_synthetic.csv",
          ["re78", "treat", "age", "age2", "educ", "nodegree", "black", "hisp", "re74", "re75"], rows)


def psid(seed=12):
    rng = random.Random(seed)
    rows = []
    for i in range(4856):
        age = rng.randint(18, 64)
        educ = max(0, min(17, int(round(rng.gauss(12.5, 2.5)))))
        kids = min(6, int(abs(rng.gauss(0.0, 1.6))))
        married = 1 if rng.random() < 0.6 else 0
        if rng.random() < 0.3:
            mu = 2300.0 - 8.0 * age + 20.0 * educ - 120.0 * kids - 250.0 * married
            sd = 400.0
        else:
            mu = 500.0 + 10.0 * age + 60.0 * educ - 250.0 * kids - 600.0 * married
            sd = 900.0
        hours = max(0.0, round(rng.gauss(mu, sd), 1))
        rows.append([hours, age, "NA" if i == 1234 else educ, kids, married])
    write("psid_synthetic.csv", ["hours", "age", "educ", "kids", "married"], rows)


def docvisits(seed=13):
    rng = random.Random(seed)
    rows = []
    for _ in range(4406):
        exclhlth = 1 if rng.random() < 0.08 else 0
        poorhlth = 0 if exclhlth else (1 if rng.random() < 0.13 else 0)
        adldiff = 1 if rng.random() < 0.2 else 0
        region = rng.random()
        noreast, midwest, west = int(region < 0.19), int(0.19 <= region < 0.45), int(0.45 <= region < 0.63)
        black = 1 if rng.random() < 0.12 else 0
        male = 1 if rng.random() < 0.4 else 0
        married = 1 if rng.random() < 0.55 else 0
        employed = 1 if rng.random() < 0.1 else 0
        medicaid = 1 if rng.random() < 0.09 else 0
        privins = 1 if rng.random() < 0.78 else 0
        numchron = min(8, int(abs(rng.gauss(1.2, 1.5))))
        age = round(rng.uniform(6.6, 10.9), 1)
        faminc = round(max(0.0, rng.gauss(2.5, 2.9)), 4)
        school = rng.randint(0, 18)
        mu = (1.0 - 1.5 * exclhlth + 2.0 * poorhlth + 0.8 * adldiff + 0.3 * noreast - 0.2 * west
              - 0.6 * black - 0.6 * male + 0.1 * married + 0.3 * medicaid + 1.5 * privins
              + 1.4 * numchron + 0.1 * age + 0.05 * faminc + 0.1 * school)
        lam = max(0.05, mu + rng.gauss(0.0, 2.0))
        # Poisson draw by inversion so the outcome is a count.
        k, p, u = 0, math.exp(-lam), rng.random()
        c = p
        while u > c and k < 89:
            k += 1
            p *= lam / k
            c += p
        rows.append([k, exclhlth, poorhlth, adldiff, noreast, midwest, west, black, male, married,
                     employed, medicaid, privins, numchron, age, faminc, school])
    write("docvisits_synthetic.csv",
          ["ofp", "exclhlth", "poorhlth", "adldiff", "noreast", "midwest", "west", "black", "male",
           "married", "employed", "medicaid", "privins", "numchron", "age", "faminc", "school"], rows)


if __name__ == "__main__":
    uncensored("uncensored50.csv", 50, [1.0, 0.5], 1.0, 1)
    uncensored("uncensored500.csv", 500, [1.0, -0.7, 0.4], 1.5, 2)
    lalonde()
    psid()
    docvisits()
