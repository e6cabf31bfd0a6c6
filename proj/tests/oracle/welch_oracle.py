"""Reference values for the weighted Welch test (Kish effective sizes, reliability-weight variances)."""
import json

import numpy as np
from scipy import stats

g1 = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4]
g2 = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 30.5, 24.4]


def weighted(y, w):
    y, w = np.asarray(y, float), np.asarray(w, float)
    v1, v2 = w.sum(), (w * w).sum()
    m = (w * y).sum() / v1
    s2 = (w * (y - m) ** 2).sum() / (v1 - v2 / v1)
    return m, s2, v1 * v1 / v2


def welch(y1, w1, y2, w2):
    m1, s1, n1 = weighted(y1, w1)
    m2, s2, n2 = weighted(y2, w2)
    a, b = s1 / n1, s2 / n2
    t = (m1 - m2) / np.sqrt(a + b)
    df = (a + b) ** 2 / (a * a / (n1 - 1) + b * b / (n2 - 1))
    return float(t), float(df), float(2 * stats.t.sf(abs(t), df))


unweighted = stats.ttest_ind(g1, g2, equal_var=False)
w1 = [0.5 + 0.1 * i for i in range(15)]
w2 = [2.0 - 0.1 * i for i in range(15)]
t, df, p = welch(g1, w1, g2, w2)
print(json.dumps({
    "unweighted": {"t": float(unweighted.statistic), "p": float(unweighted.pvalue), "df": welch(g1, [1] * 15, g2, [1] * 15)[1]},
    "weighted": {"w1": w1, "w2": w2, "t": t, "df": df, "p": p},
}, indent=1))
