"""Regenerates the 5-city planar fixture.

Log-populations follow u <- u + v with v an AR(1) process whose innovations
are correlated across cities as 1 / (1 + (r / r0)^2).
"""
import numpy as np

R0 = 60.0
RHO = 0.8
YEARS = range(1991, 2021)

rng = np.random.default_rng(20240611)
cities = [
    ("m1", "Alta", 0.0, 0.0, 4.0e5),
    ("m2", "Brena", 12.0, 5.0, 2.5e5),
    ("m3", "Cala", 40.0, -18.0, 1.5e5),
    ("m4", "Duna", -95.0, 60.0, 9.0e4),
    ("m5", "Erla", 210.0, 140.0, 5.0e4),
]
xy = np.array([[c[2], c[3]] for c in cities])
r = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=2)
q = 1.0 / (1.0 + (r / R0) ** 2)
chol = np.linalg.cholesky(q)

u = np.log([c[4] for c in cities])
v = np.zeros(len(cities))
rows = []
for year in YEARS:
    for (cid, *_), val in zip(cities, np.exp(u)):
        rows.append((cid, year, round(val)))
    v = RHO * v + 0.02 * chol @ rng.standard_normal(len(cities))
    u = u + v

with open("municipalities.csv", "w") as f:
    f.write("id,name,x_km,y_km\n")
    for cid, name, x, y, _ in cities:
        f.write(f"{cid},{name},{x},{y}\n")
with open("populations.csv", "w") as f:
    f.write("id,year,population\n")
    for cid, year, pop in rows:
        f.write(f"{cid},{year},{pop}\n")
