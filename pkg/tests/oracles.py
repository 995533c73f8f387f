"""Independent reference implementations shared by the unit and acceptance tests.

Everything here is written with plain loops or brute force so it shares no
code path with the package under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
from scipy import stats

from graph2seq.graph import LabeledGraph, prepare
from graph2seq.vocab import BOS_ID, EOS_ID, Vocabulary

# --- dense algebra on python lists -------------------------------------------


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def vecmat(v, M):
    return [sum(v[i] * M[i][j] for i in range(len(v))) for j in range(len(M[0]))]


def scalar_ggnn_layer(h, edges, params):
    """One propagation step over python floats; ``params`` maps names to arrays."""
    n, d = len(h), len(h[0])
    indeg = [0] * n
    for _, dst, _ in edges:
        indeg[dst] += 1

    def aggregate(vecs, gate, bias):
        out = [[0.0] * d for _ in range(n)]
        for s, v, tag in edges:
            W = params[f"enc.{tag.value}.{gate}"].data
            b = params[f"enc.{tag.value}.{bias}"].data
            for j in range(d):
                acc = float(b[j])
                for i in range(d):
                    acc += vecs[s][i] * float(W[i, j])
                out[v][j] += acc
        return [[x / indeg[v] for x in row] for v, row in enumerate(out)]

    r = [[sig(x) for x in row] for row in aggregate(h, "W_r", "b_r")]
    z = [[sig(x) for x in row] for row in aggregate(h, "W_z", "b_z")]
    gated = [[r[u][i] * h[u][i] for i in range(d)] for u in range(n)]
    cand = [[math.tanh(x) for x in row] for row in aggregate(gated, "W", "b")]
    return [[(1 - z[v][i]) * h[v][i] + z[v][i] * cand[v][i] for i in range(d)] for v in range(n)]


def scalar_attention(h_dec, W_a, nodes):
    """score_j = h_dec^T W_a h_j, softmax, weighted sum of node vectors."""
    proj = vecmat(h_dec, W_a)
    scores = [sum(p * x for p, x in zip(proj, node)) for node in nodes]
    top = max(scores)
    ex = [math.exp(s - top) for s in scores]
    z = sum(ex)
    weights = [e / z for e in ex]
    ctx = [sum(w * node[k] for w, node in zip(weights, nodes)) for k in range(len(nodes[0]))]
    return ctx, weights


def scalar_lstm(x, h, c, W_x, W_h, b):
    H = len(h)
    pre = [a + bb + cc for a, bb, cc in zip(vecmat(x, W_x), vecmat(h, W_h), b)]
    i = [sig(v) for v in pre[:H]]
    f = [sig(v) for v in pre[H : 2 * H]]
    o = [sig(v) for v in pre[2 * H : 3 * H]]
    g = [math.tanh(v) for v in pre[3 * H :]]
    c_new = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
    return [o[k] * math.tanh(c_new[k]) for k in range(H)], c_new


def scalar_decode_step(P, layers, token, h0, c0, node_states):
    """One decoder step; ``P`` maps parameter names to nested lists."""
    x = P["dec.embed"][token]
    hs, cs = [], []
    for layer in range(layers):
        h, c = scalar_lstm(x, h0[layer], c0[layer], P[f"dec.lstm{layer}.W_x"], P[f"dec.lstm{layer}.W_h"], P[f"dec.lstm{layer}.b"])
        hs.append(h)
        cs.append(c)
        x = h
    ctx, w = scalar_attention(x, P["dec.att.W_a"], node_states)
    comb = [math.tanh(v) for v in vecmat(x + ctx, P["dec.out.W_o"])]
    logits = [a + b for a, b in zip(vecmat(comb, P["dec.out.W_v"]), P["dec.out.b_v"])]
    return logits, hs, cs, ctx, w


# --- scripted decoding --------------------------------------------------------

AB = Vocabulary(["<pad>", "<unk>", "<s>", "</s>", "a", "b"])
A, B = 4, 5
ONE_NODE = prepare(LabeledGraph(("x",), (), 0))


class TableModel:
    """Step model whose next-token distribution is a function of the prefix."""

    tgt_vocab = AB

    def __init__(self, fn, nodes=1):
        self.fn = fn
        self.nodes = nodes

    def start(self, graph):
        return None, [()]

    def step(self, memory, state, prev):
        prefixes = [() if int(p) == BOS_ID else s + (int(p),) for s, p in zip(state, prev)]
        with np.errstate(divide="ignore"):
            lp = np.log(np.array([self.fn(p) for p in prefixes]))
        att = np.zeros((len(prefixes), self.nodes))
        for k, p in enumerate(prefixes):
            att[k, len(p) % self.nodes] = 1.0
        return lp, prefixes, att

    def reorder(self, memory, state, rows):
        return memory, [state[r] for r in rows]


def table_row(eos, a, b):
    out = np.zeros(len(AB))
    out[[EOS_ID, A, B]] = eos, a, b
    return out


def forced_table(probs_a: dict, length=3):
    """Vocabulary {a, b}; the end token is only allowed (and then certain) after ``length`` tokens."""

    def fn(prefix):
        if len(prefix) == length:
            return table_row(1.0, 0.0, 0.0)
        p = probs_a.get(prefix, 0.5)
        return table_row(0.0, p, 1.0 - p)

    return fn


def random_forced(rng, length=3):
    table = {p: float(rng.uniform(0.05, 0.95)) for n in range(length) for p in itertools.product((A, B), repeat=n)}
    return forced_table(table, length)


def exhaustive_best(fn, length=3):
    """Score every one of the 2**length sequences and return the best (score, tokens)."""
    scored = []
    for seq in itertools.product((A, B), repeat=length):
        lp = sum(math.log(fn(seq[:i])[seq[i]]) for i in range(length)) + math.log(fn(seq)[EOS_ID])
        scored.append((lp / (length + 1), list(seq)))
    return min(scored, key=lambda x: (-x[0], x[1]))


# greedy commits to "a" at the first step; "b a a" is the best sequence
TRAP = forced_table({(): 0.55, (A,): 0.5, (B,): 0.95, (B, A): 0.95, (A, A): 0.5, (A, B): 0.5})

HAND_SET_TABLES = [
    TRAP,
    forced_table({(): 0.9, (A,): 0.9, (A, A): 0.9}),
    forced_table({(): 0.5, (A,): 0.5, (B,): 0.5}),  # every sequence ties; lowest tokens win
    forced_table({(): 0.3, (B,): 0.2, (B, B): 0.6, (A,): 0.7, (A, A): 0.1}),
    forced_table({(): 0.6, (A,): 0.2, (B,): 0.7, (A, B): 0.9, (B, A): 0.4}),
]


# --- metrics ------------------------------------------------------------------


def oracle_chrf(hyp, ref, char_order=6, word_order=2, beta=2.0):
    """Averaged precision and recall over all orders, then F-beta; lower-cased."""

    def grams(seq, n):
        return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))

    hyp, ref = hyp.lower(), ref.lower()
    hc, rc = list(hyp.replace(" ", "")), list(ref.replace(" ", ""))
    hw, rw = hyp.split(" "), ref.split(" ")
    P, R = [], []
    for seq_h, seq_r, top in ((hc, rc, char_order), (hw, rw, word_order)):
        for n in range(1, top + 1):
            a, b = grams(seq_h, n), grams(seq_r, n)
            m = sum(min(a[g], b[g]) for g in a)
            P.append(m / max(sum(a.values()), 1))
            R.append(m / max(sum(b.values()), 1))
    p, r = sum(P) / len(P), sum(R) / len(R)
    return 100 * (1 + beta**2) * p * r / (beta**2 * p + r)


def sentence_stats(h, r):
    h, r = h.split(), r.split()
    row = [len(h), len(r)]
    for n in range(1, 5):
        hg = Counter(tuple(h[i : i + n]) for i in range(len(h) - n + 1))
        rg = Counter(tuple(r[i : i + n]) for i in range(len(r) - n + 1))
        row += [sum(min(c, rg[g]) for g, c in hg.items()), max(len(h) - n + 1, 0)]
    return row


def bleu_from(row):
    c, r = row[0], row[1]
    precs = [row[2 + 2 * k] / row[3 + 2 * k] if row[3 + 2 * k] else 0.0 for k in range(4)]
    if min(precs) == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100 * bp * math.exp(sum(map(math.log, precs)) / 4)


def monte_carlo_p(a, b, refs, samples, seed):
    """Fraction of resampled corpora on which BLEU(a) <= BLEU(b)."""
    sa = np.array([sentence_stats(h, r) for h, r in zip(a, refs)])
    sb = np.array([sentence_stats(h, r) for h, r in zip(b, refs)])
    rng = np.random.Generator(np.random.PCG64DXSM(seed))
    n = len(refs)
    worse = 0
    for _ in range(samples):
        idx = rng.choice(n, size=n, replace=True)
        worse += bleu_from(sa[idx].sum(axis=0)) <= bleu_from(sb[idx].sum(axis=0))
    return worse / samples


def exact_wilcoxon(d):
    """Enumerate all 2**n sign assignments of the ranked magnitudes."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    total = ranks.sum()
    obs = min(w_obs, total - w_obs)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = float(np.dot(signs, ranks))
        if min(w, total - w) <= obs + 1e-9:
            hits += 1
    return obs, hits / 2 ** len(d)


WILCOXON_A = [71, 52, 64, 80, 45, 66, 59, 73]
WILCOXON_B = [62, 55, 50, 61, 47, 52, 60, 51]

BOOT_REFS = [
    "the boy wants the girl to believe him",
    "a dog sees a cat in the city",
    "the teacher gives the book to the boy",
    "the girl reads a book by the river",
    "the cat likes the dog",
    "a boy finds a book in the city",
    "the teacher knows the girl",
    "the dog wants the cat to see it",
    "a river runs through the city",
    "the boy believes the teacher",
]
BOOT_A = [
    "the boy wants the girl to believe him",
    "a dog sees a cat in city",
    "the teacher gives the book to boy",
    "the girl reads a book by the river",
    "the cat likes a dog",
    "a boy finds a book in the city",
    "the teacher knows girl",
    "the dog wants the cat to see",
    "a river runs through the city",
    "the boy believes a teacher",
]
BOOT_B = [
    "the boy wants girl believe him",
    "a dog sees the cat in the city",
    "teacher gives book to the boy",
    "the girl reads the book by a river",
    "the cat likes the dog",
    "boy finds a book in city",
    "the teacher knows the girl",
    "dog wants cat to see it",
    "a river runs through a city",
    "the boy believes the teacher",
]
