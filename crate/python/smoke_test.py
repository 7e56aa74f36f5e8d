"""Smoke test for the eet Python bindings.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import random

import eet


def main():
    cfg = eet.ViTConfig("tiny-32")
    sched = eet.PruneSchedule()
    trace = sched.layer_token_counts(196, 12)
    assert trace == [197] * 4 + [99] * 4 + [50] * 2 + [13] * 2, trace
    assert eet.keep_count(49, 0.25) == 12

    full = eet.cost(eet.ViTConfig("small-224"), eet.PruneSchedule("none"))
    pruned = eet.cost(eet.ViTConfig("small-224"), sched)
    print(f"small-224 GMACs {full['gmacs']:.3f} -> {pruned['gmacs']:.3f}")
    assert pruned["macs"] < full["macs"]

    model = eet.Model(cfg, seed=1)
    rng = random.Random(0)
    pixels = [rng.uniform(-1, 1) for _ in range(cfg.image_size ** 2 * cfg.channels)]
    out = model.encode(pixels, sched)
    assert len(out["hash"]) == cfg.hash_bits
    assert out["layer_tokens"] == [17] * 4 + [9] * 4 + [5] * 2 + [2] * 2, out["layer_tokens"]

    labels = [i % 4 for i in range(20)]
    codes, obj = eet.optimize_codes(labels, 4, 16, seed=3)
    assert all(b <= a + 1e-9 * (1 + a) for a, b in zip(obj, obj[1:]))
    packed = [eet.binarize(c) for c in codes]
    for i in range(20):
        for j in range(20):
            d = eet.hamming(packed[i], packed[j], 16)
            assert (d == 0) == (labels[i] == labels[j]), (i, j, d)

    m, pr = eet.evaluate(codes, labels, codes, labels)
    assert abs(m - 1.0) < 1e-12 and len(pr) == 11

    a = [1.0, -1.0, 1.0, 1.0]
    assert eet.cosine(a, a) == 1.0
    assert eet.dkt_loss(a, a) == 0.0
    assert eet.parse_config("model.profile = small-224\nseed = 7\n") == ("small-224", 7)
    try:
        eet.parse_config("no.such.key = 1")
    except ValueError:
        pass
    else:
        raise AssertionError("bad key accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
