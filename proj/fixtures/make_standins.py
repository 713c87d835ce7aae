import random

def make(n, edges, seed, path):
    rng = random.Random(seed)
    links = {i: set() for i in range(n)}
    for i in range(n):  # every row gets one link
        j = rng.choice([k for k in range(n) if k != i])
        links[i].add(j)
    total = n
    while total < edges:
        i, j = rng.randrange(n), rng.randrange(n)
        if i != j and j not in links[i]:
            links[i].add(j)
            total += 1
    rows = []
    for i in range(n):
        js = sorted(links[i])
        if len(js) == 1:
            w = {js[0]: 1.0}
        else:
            strong = rng.choice(js)
            w = {j: (0.7 if j == strong else 0.3 / (len(js) - 1)) for j in js}
        for j in js:
            rows.append((j, i, w[j]))
    rows.sort()
    with open(path, "w") as f:
        f.write("from,to,weight\n")
        for j, i, v in rows:
            f.write(f"{j},{i},{v!r}\n")

make(70, 366, 20241, "coleman_like_70.csv")
make(65, 211, 20242, "banerjee_like_65.csv")
