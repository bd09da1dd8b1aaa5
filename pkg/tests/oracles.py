"""Independent reference implementations used by the metric tests."""
import math


def oracle_bleu(cand, ref):
    # written independently: explicit n-gram lists, product of precisions, min-form brevity penalty
    if len(cand) == 0:
        return 0.0
    precisions = []
    for n in range(1, 5):
        c_grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
        r_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        hit = 0
        for g in set(c_grams):
            hit += min(c_grams.count(g), r_grams.count(g))
        if n == 1:
            if hit == 0:
                return 0.0
            precisions.append(hit / len(c_grams))
        else:
            precisions.append((hit + 1) / (len(c_grams) + 1))
    bp = min(1.0, math.exp(1 - len(ref) / len(cand)))
    return 100 * bp * math.prod(precisions) ** 0.25
