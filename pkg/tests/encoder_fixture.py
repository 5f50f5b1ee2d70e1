"""Deterministic time-encoder setup shared by the golden-file test and its generator."""

import numpy as np

from mmtsad.time_branch import PatchSet, TimeEncoder

N, P, D_MODEL = 4, 6, 8


def golden_encoder() -> TimeEncoder:
    enc = TimeEncoder(P, N, D_MODEL, layers=2, heads=2, ff=16, rng=np.random.default_rng(0))
    enc.pos.data[:] = 0.0
    enc.embed.weight.data[:] = np.eye(P, D_MODEL)
    for layer in enc.layers:
        for lin in (layer.attn.q, layer.attn.k, layer.attn.v, layer.attn.o):
            lin.weight.data[:] = np.eye(D_MODEL)
    return enc


def golden_input() -> PatchSet:
    flags = np.array([True, False, True, False])
    return PatchSet(np.zeros((N, P)), P, 1, flags)


if __name__ == "__main__":
    import json
    import sys

    out = golden_encoder()(golden_input()).data
    json.dump({"shape": list(out.shape), "values": [float(v) for v in out.ravel()]}, sys.stdout)
    sys.stdout.write("\n")
