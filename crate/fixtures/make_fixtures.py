"""Regenerates the CSV fixtures under fixtures/data. Deterministic."""
import math
import random
from pathlib import Path

OUT = Path(__file__).parent / "data"

FUNCTIONS = {
    "sigmoid_2d": (lambda x: 1 / (1 + math.exp(-x)), (-6.0, 6.0)),
    "frac_power": (lambda x: 3 * x ** (5 / 3) - 15 * x ** (2 / 3), (0.0, 8.0)),
    "cubic": (lambda x: x**3 - 3 * x**2 + 1, (-1.5, 3.5)),
    "cubic_rising": (lambda x: 2 * x**3 - 15 * x**2 + 36 * x, (0.0, 5.0)),
    "x_plus_2sin": (lambda x: x + 2 * math.sin(x), (-6.0, 6.0)),
    "quartic": (lambda x: 3 * x**4 + 4 * x**3 - 12 * x**2 + 2, (-4.0, 4.0)),
}


def g(v):
    s = "%.6g" % v
    return "0" if s in ("-0", "0") else s


def write(name, header, rows):
    lines = [",".join(header)] + [",".join(r) for r in rows]
    (OUT / f"{name}.csv").write_text("\n".join(lines) + "\n")


def symbolic(rng):
    for name, (f, (lo, hi)) in FUNCTIONS.items():
        rows = []
        for _ in range(300):
            x = round(rng.uniform(lo, hi), 4)
            rows.append((g(x), g(f(x))))
        write(name, ["x", "y"], rows)
    rows = []
    for _ in range(300):
        x1 = round(rng.uniform(-2, 2), 4)
        x2 = round(rng.uniform(-2, 2), 4)
        y = x1**2 + 2 * x2**2 - 0.3 * math.cos(3 * math.pi * x1) - 0.4 * math.cos(4 * math.pi * x2) + 0.7
        rows.append((g(x1), g(x2), g(y)))
    write("bohachevsky_3d", ["x1", "x2", "y"], rows)


def dino(rng):
    """A dinosaur-like outline (140 points) with the extremes of the real
    Datasaurus `dino` columns pinned exactly."""
    pts = []
    # head and neck
    for i in range(30):
        t = i / 29
        pts.append((45 + 8 * math.cos(2 * math.pi * t), 88 + 6 * math.sin(2 * math.pi * t)))
    for i in range(20):
        t = i / 19
        pts.append((42 + 10 * t, 82 - 30 * t + rng.gauss(0, 1)))
    # body
    for i in range(50):
        t = i / 49
        pts.append((62 + 16 * math.cos(2 * math.pi * t), 45 + 14 * math.sin(2 * math.pi * t)))
    # legs and tail
    for i in range(18):
        t = i / 17
        pts.append((55 + rng.gauss(0, 1), 31 - 22 * t))
        pts.append((70 + rng.gauss(0, 1), 31 - 22 * t))
    pts = [(round(x, 5), round(y, 5)) for x, y in pts[:138]]
    pts += [(31.10686656, 71.2), (85.4461864, 40.1), (57.3, 4.57766135), (44.8, 97.83761472)]
    rows = [(repr(x) if isinstance(x, float) else str(x), repr(y)) for x, y in pts]
    write("dino_slice", ["x", "y"], rows)


def o2_like(rng):
    rows = []
    for i in range(200):
        temp = round(rng.uniform(7.6, 9.7), 2)
        sal = round(rng.uniform(35.2, 35.4), 3)
        press = round(rng.uniform(0.19, 269.9), 2)
        o2 = 256.0 + 0.25 * press - 3.5 * (temp - 7.6) - 20 * (sal - 35.2) + rng.gauss(0, 1.5)
        rows.append([temp, sal, press, round(min(max(o2, 250.3), 326.5), 1)])
    rows[0] = [7.6, 35.2, 269.9, 326.5]
    rows[1] = [9.7, 35.4, 0.19, 250.3]
    write("o2_like", ["temp", "sal", "press", "O2cal"], [[g(v) for v in r] for r in rows])


def flows(rng):
    rows = []
    for _ in range(60):
        proto = rng.choice(["TCP", "UDP", "ICMP"])
        duration = round(rng.uniform(0.01, 30), 3)
        size = round(rng.lognormvariate(7, 1.2))
        rows.append((proto, g(duration), str(size)))
    write("flows", ["protocol", "duration", "bytes"], rows)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240611)
    symbolic(rng)
    dino(rng)
    o2_like(rng)
    flows(rng)
