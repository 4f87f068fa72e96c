"""Writes toy3.txemb: three prompts embedded with an independent hashed bag-of-words."""
import math
import struct

M64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & M64
    return h


def splitmix(state: int):
    while True:
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        yield z ^ (z >> 31)


def embed(prompt: str, dim: int = 512, seed: int = 0):
    acc = [0.0] * dim
    for tok in prompt.split():
        gen = splitmix(fnv1a64(tok.lower().encode()) ^ seed)
        for i in range(dim):
            acc[i] += 2.0 * ((next(gen) >> 11) * 2.0**-53) - 1.0
    norm = math.sqrt(sum(a * a for a in acc))
    return [struct.unpack("f", struct.pack("f", a / norm))[0] for a in acc]


PROMPTS = [
    "A photo of a sky target in the sky and ground background",
    "A photo of a ground target in the sky and ground background",
    "A photo of a target in the background",
]

if __name__ == "__main__":
    with open("toy3.txemb", "w") as f:
        f.write("TXEMB 1 512\n")
        for p in PROMPTS:
            f.write(p + "\n")
            f.write(" ".join(repr(v) for v in embed(p)) + "\n")
    print("sky", embed("sky")[:4])
