"""Peak scalar counts for a width-256, 8-layer MLP on 2-D inputs, 2 classes,
batch 128, traced layer by layer from the counting rules:

  persistent  velocity of every trained tensor (+ EMA copies for man)
  per block   batch * (live activations) + gradients of the update set
  peak        persistent + max over blocks
"""

IN, WIDTH, DEPTH, CLASSES, BATCH, BUDGET = 2, 256, 8, 2, 128, 0.05

linears = [(IN if i == 0 else WIDTH, WIDTH) for i in range(DEPTH)]
lin_params = [i * o + o for i, o in linears]
classifier = WIDTH * CLASSES + CLASSES
main = sum(lin_params) + classifier


def head_width(k):
    heads = k - 1
    h = 0
    while heads * (WIDTH * (h + 1) + (h + 1) + (h + 1) * CLASSES + CLASSES) <= BUDGET * main:
        h += 1
    return h


def report(mode, k):
    if mode == "e2e":
        k = 1
    per = len(linears) // k
    groups = [list(range(j * per, (j + 1) * per)) for j in range(k)]
    h = head_width(k) if k > 1 else 0
    head = WIDTH * h + h + h * CLASSES + CLASSES
    persistent = main + (k - 1) * head
    blocks = []
    for j, g in enumerate(groups):
        acts = linears[g[0]][0] + 2 * WIDTH * len(g)  # input, then linear and relu outputs
        grads = sum(lin_params[i] for i in g)
        if j == k - 1:
            acts += CLASSES
            grads += classifier
        else:
            acts += 2 * h + CLASSES  # head hidden pre/post relu, logits
            grads += head
            if mode == "man":
                nxt = lin_params[groups[j + 1][0]]
                acts += 3 * WIDTH  # eta' output, eta'' output, biased sum
                grads += nxt + WIDTH
                persistent += 2 * nxt + WIDTH
        blocks.append(acts * BATCH + grads)
    return persistent, blocks, persistent + max(blocks)


for mode, k in [("e2e", 4), ("local", 1), ("local", 4), ("man", 4)]:
    p, b, peak = report(mode, k)
    print(mode, k, "persistent", p, "per_block", b, "peak", peak)
e2e, local, man = report("e2e", 4)[2], report("local", 4)[2], report("man", 4)[2]
print("local/e2e", local / e2e, "man/local - 1", man / local - 1)
