"""Loop-based reference for the toy attention blocks.

Written separately from ``nlmcflow.toynet`` in plain Python (scalar loops,
``math`` only) so the golden vectors do not share code with the code under
test. Tensors are nested lists; ``C x H x W`` maps index as ``m[c][y][x]``.
Weight sets are plain dicts of nested lists.
"""

import math

LN_EPS = 1e-5


def tolist(a):
    return a.tolist() if hasattr(a, "tolist") else a


def matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def transpose(a):
    return [list(col) for col in zip(*a)]


def to_tokens(fmap):
    c, h, w = len(fmap), len(fmap[0]), len(fmap[0][0])
    return [[fmap[ch][y][x] for ch in range(c)] for y in range(h) for x in range(w)]


def from_tokens(tokens, h, w):
    c = len(tokens[0])
    return [[[tokens[y * w + x][ch] for x in range(w)] for y in range(h)] for ch in range(c)]


def layer_norm(tokens, gamma, beta):
    out = []
    for row in tokens:
        n = len(row)
        mu = sum(row) / n
        var = sum((v - mu) ** 2 for v in row) / n
        s = math.sqrt(var + LN_EPS)
        out.append([(row[i] - mu) / s * gamma[i] + beta[i] for i in range(n)])
    return out


def softmax_list(vals):
    m = max(vals)
    e = [math.exp(v - m) for v in vals]
    z = sum(e)
    return [v / z for v in e]


def attend(q, k, v):
    d = len(q[0])
    out, rows = [], []
    for qi in q:
        logits = [sum(qi[t] * kj[t] for t in range(d)) / math.sqrt(d) for kj in k]
        p = softmax_list(logits)
        rows.append(p)
        out.append([sum(p[j] * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return out, rows


def cross_attention(query, context, wt):
    qn = layer_norm(query, wt["ln_q_gamma"], wt["ln_q_beta"])
    kn = layer_norm(context, wt["ln_kv_gamma"], wt["ln_kv_beta"])
    out, _ = attend(matmul(qn, wt["wq"]), matmul(kn, wt["wk"]), matmul(kn, wt["wv"]))
    return matmul(out, wt["wo"])


def bilinear(fmap, h_out, w_out):
    c, h, w = len(fmap), len(fmap[0]), len(fmap[0][0])

    def src(i, n_out, n_in):
        s = (i + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1)
        i0 = int(math.floor(s))
        return i0, min(i0 + 1, n_in - 1), s - i0

    out = [[[0.0] * w_out for _ in range(h_out)] for _ in range(c)]
    for y in range(h_out):
        y0, y1, fy = src(y, h_out, h)
        for x in range(w_out):
            x0, x1, fx = src(x, w_out, w)
            for ch in range(c):
                m = fmap[ch]
                out[ch][y][x] = ((1 - fy) * ((1 - fx) * m[y0][x0] + fx * m[y0][x1])
                                 + fy * ((1 - fx) * m[y1][x0] + fx * m[y1][x1]))
    return out


def mean_pool(fmap, size):
    c, h, w = len(fmap), len(fmap[0]), len(fmap[0][0])
    r = size // 2
    out = [[[0.0] * w for _ in range(h)] for _ in range(c)]
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                cells = [fmap[ch][yy][xx] for yy in range(y - r, y + r + 1) for xx in range(x - r, x + r + 1)
                         if 0 <= yy < h and 0 <= xx < w]
                out[ch][y][x] = sum(cells) / len(cells)
    return out


def conv_same(fmap, w, b):
    c_in, h, wd = len(fmap), len(fmap[0]), len(fmap[0][0])
    c_out, k = len(w), len(w[0][0])
    r = k // 2
    out = [[[b[o]] * wd for _ in range(h)] for o in range(c_out)]
    for o in range(c_out):
        for y in range(h):
            for x in range(wd):
                acc = b[o]
                for ci in range(c_in):
                    for dy in range(k):
                        for dx in range(k):
                            yy, xx = y + dy - r, x + dx - r
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[o][ci][dy][dx] * fmap[ci][yy][xx]
                out[o][y][x] = acc
    return out


def aggregate(curr, prev_native, wt):
    """Full aggregation from native-resolution previous levels (upsampling included)."""
    h, w = len(curr[0]), len(curr[0][0])
    prev = [bilinear(p, h, w) for p in prev_native]
    stacked_prev = [ch for p in prev for ch in p]
    pooled = mean_pool(stacked_prev, wt["pool"])
    f = to_tokens(curr)
    c_hat = cross_attention(f, to_tokens(pooled), wt["ca_prev"])
    c_tilde = cross_attention(f, to_tokens(prev[0]), wt["ca_first"])
    c_hat = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(c_hat, f)]
    c_tilde = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(c_tilde, f)]
    both = from_tokens(c_hat, h, w) + from_tokens(c_tilde, h, w)
    return conv_same(both, wt["conv_w"], wt["conv_b"])


def select(a, wt):
    scores = []
    for row in a:
        feats = [sum(r * c for r, c in zip(row, wt["conv_w"])) + wt["conv_b"], max(row), sum(row) / len(row)]
        hidden = [max(0.0, sum(feats[i] * wt["w1"][i][j] for i in range(3)) + wt["b1"][j])
                  for j in range(len(wt["b1"]))]
        scores.append(sum(hv * w2 for hv, w2 in zip(hidden, wt["w2"])) + wt["b2"])
    gate = softmax_list(scores)
    return [[g * v + v for v in row] for g, row in zip(gate, a)]


def enhance(r, wt):
    h, w = len(r[0]), len(r[0][0])
    x = to_tokens(r)
    xn = layer_norm(x, wt["ln_gamma"], wt["ln_beta"])

    def proj(m, b):
        return [[v + bb for v, bb in zip(row, b)] for row in matmul(xn, m)]

    q = select(proj(wt["wq"], wt["bq"]), wt["select_q"])
    k = select(proj(wt["wk"], wt["bk"]), wt["select_k"])
    v = select(proj(wt["wv"], wt["bv"]), wt["select_v"])
    out, _ = attend(q, k, v)
    res = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(matmul(out, wt["wo"]), x)]
    return from_tokens(res, h, w)
