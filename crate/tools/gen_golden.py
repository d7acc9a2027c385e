"""Writes crates/core/fixtures/v1/golden.json.

Every expected value here is recomputed in plain Python, written out
step by step, so it stays independent of the Rust code it checks.
"""

import json
import math
from pathlib import Path

from scipy import integrate

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures" / "v1" / "golden.json"


def softplus(x):
    return math.log1p(math.exp(x)) if x < 30 else x


def dense(x, w, b, fan_in, fan_out, relu):
    out = []
    for j in range(fan_out):
        z = b[j]
        for i in range(fan_in):
            z += x[i] * w[i * fan_out + j]
        out.append(max(z, 0.0) if relu else z)
    return out


def sample(mu, rho, eps):
    return [m + softplus(r) * e for m, r, e in zip(mu, rho, eps)]


def forward(net, noise, x):
    h = x
    for k, layer in enumerate(net):
        w = sample(layer["weights_mu"], layer["weights_rho"], noise[k]["weights"])
        b = sample(layer["bias_mu"], layer["bias_rho"], noise[k]["biases"])
        h = dense(h, w, b, layer["fan_in"], layer["fan_out"], k + 1 < len(net))
    return h


def log_softmax_at(z, y):
    m = max(z)
    return z[y] - m - math.log(sum(math.exp(v - m) for v in z))


def kl_1d(mq, sq, mp, sp):
    return math.log(sp / sq) + (sq * sq + (mq - mp) ** 2) / (2 * sp * sp) - 0.5


def jsg_1d(mq, sq, mp, sp, a):
    vq, vp = sq * sq, sp * sp
    v = vq * vp / ((1 - a) * vq + a * vp)
    m = v * (a * mq / vq + (1 - a) * mp / vp)
    s = math.sqrt(v)
    return (1 - a) * kl_1d(mq, sq, m, s) + a * kl_1d(mp, sp, m, s)


def normal_pdf(x, m, var):
    return math.exp(-((x - m) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def jsa_quad(mq, vq, mp, vp, a):
    def part(m_own, v_own):
        def f(x):
            own = normal_pdf(x, m_own, v_own)
            if own == 0.0:
                return 0.0
            mix = a * normal_pdf(x, mq, vq) + (1 - a) * normal_pdf(x, mp, vp)
            return own * math.log(own / mix)

        lo = min(mq - 12 * math.sqrt(vq), mp - 12 * math.sqrt(vp))
        hi = max(mq + 12 * math.sqrt(vq), mp + 12 * math.sqrt(vp))
        return integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=500, points=[mq, mp])[0]

    return (1 - a) * part(mq, vq) + a * part(mp, vp)


NET = [
    {
        "fan_in": 2,
        "fan_out": 3,
        "weights_mu": [0.5, -0.3, 0.8, 0.1, 0.4, -0.6],
        "weights_rho": [-2.0, -1.5, -3.0, -2.5, -1.0, -2.2],
        "bias_mu": [0.05, -0.1, 0.2],
        "bias_rho": [-3.0, -2.0, -2.5],
    },
    {
        "fan_in": 3,
        "fan_out": 2,
        "weights_mu": [0.7, -0.2, -0.4, 0.9, 0.3, 0.6],
        "weights_rho": [-1.8, -2.6, -2.1, -1.2, -3.3, -2.8],
        "bias_mu": [0.0, 0.1],
        "bias_rho": [-2.0, -2.4],
    },
]
NOISE_A = [
    {"weights": [0.3, -1.2, 0.5, 2.0, -0.7, 0.1], "biases": [0.9, -0.4, 1.1]},
    {"weights": [-0.5, 0.8, 1.5, -1.0, 0.2, -0.3], "biases": [0.6, -1.4]},
]
NOISE_B = [
    {"weights": [-1.1, 0.4, -0.2, 0.7, 1.3, -0.9], "biases": [-0.6, 0.2, 0.0]},
    {"weights": [0.9, -0.1, -0.8, 0.4, 1.0, 0.5], "biases": [-0.3, 0.7]},
]
PRIOR = {"mu": 0.0, "sigma": math.sqrt(0.1)}
INPUT = [0.6, -0.4]
BATCH_X = [[0.6, -0.4], [-0.2, 0.9], [1.0, 0.3]]
BATCH_Y = [0, 1, 1]


def divergence(fn):
    total = 0.0
    for layer in NET:
        for mk, rk in (("weights_mu", "weights_rho"), ("bias_mu", "bias_rho")):
            for m, r in zip(layer[mk], layer[rk]):
                total += fn(m, softplus(r), PRIOR["mu"], PRIOR["sigma"])
    return total


def nll(draws):
    total = 0.0
    for noise in draws:
        for x, y in zip(BATCH_X, BATCH_Y):
            total -= log_softmax_at(forward(NET, noise, x), y)
    return total / len(draws)


def auc_fixture():
    scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]
    positive = [True, True, False, True, False, False]
    wins = pairs = 0.0
    for i, si in enumerate(scores):
        for j, sj in enumerate(scores):
            if positive[i] and not positive[j]:
                pairs += 1
                wins += 1.0 if si > sj else 0.5 if si == sj else 0.0
    return {"scores": scores, "positive": positive}, wins / pairs


def confusion_fixture():
    probs = [
        [0.9, 0.1], [0.4, 0.6], [0.2, 0.8], [0.7, 0.3], [0.5, 0.5],
        [0.35, 0.65], [0.55, 0.45], [0.1, 0.9], [0.6, 0.4], [0.3, 0.7],
    ]
    labels = [0, 0, 1, 1, 0, 1, 1, 1, 0, 0]
    counts = [[0, 0], [0, 0]]
    for p, y in zip(probs, labels):
        pred = 0 if p[0] >= p[1] else 1
        counts[y][pred] += 1
    return {"probs": probs, "labels": labels}, counts


def main():
    network = {"layers": NET, "prior": PRIOR}
    auc_inputs, auc = auc_fixture()
    cm_inputs, counts = confusion_fixture()
    cases = [
        {
            "id": "forward_2_3_2",
            "inputs": {**network, "input": INPUT, "noise": NOISE_A},
            "expected": {"logits": forward(NET, NOISE_A, INPUT)},
            "provenance": "derived",
            "oracle": "straight-line forward pass in tools/gen_golden.py",
        },
        {
            "id": "nll_two_draws",
            "inputs": {**network, "batch_x": BATCH_X, "batch_y": BATCH_Y, "noise": [NOISE_A, NOISE_B]},
            "expected": {"nll": nll([NOISE_A, NOISE_B])},
            "provenance": "derived",
            "oracle": "straight-line log-softmax sum in tools/gen_golden.py",
        },
        {
            "id": "divergence_terms",
            "inputs": {**network, "alpha": 0.3},
            "expected": {
                "kl": divergence(kl_1d),
                "jsg_closed": divergence(lambda m, s, pm, ps: jsg_1d(m, s, pm, ps, 0.3)),
            },
            "provenance": "derived",
            "oracle": "per-parameter univariate closed forms summed in tools/gen_golden.py",
        },
        {
            "id": "jsa_quadrature",
            "inputs": {"q": [5.0, 1.0], "p": [0.0, 1.0], "alpha": 0.5},
            "expected": {"jsa": jsa_quad(5.0, 1.0, 0.0, 1.0, 0.5)},
            "provenance": "derived",
            "oracle": "scipy.integrate.quad of both mixture KL integrands",
        },
        {
            "id": "auc_six",
            "inputs": auc_inputs,
            "expected": {"auc": auc},
            "provenance": "derived",
            "oracle": "pairwise concordance count",
        },
        {
            "id": "confusion_ten",
            "inputs": cm_inputs,
            "expected": {"counts": counts, "accuracy": (counts[0][0] + counts[1][1]) / 10},
            "provenance": "derived",
            "oracle": "argmax with ties to the lower class, counted by hand in tools/gen_golden.py",
        },
    ]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"version": 1, "cases": cases}, indent=2) + "\n")


if __name__ == "__main__":
    main()
