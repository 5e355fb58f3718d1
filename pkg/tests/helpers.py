import numpy as np

from dmiforge.corpus import CLEAN, ParallelPair, tokenize
from dmiforge.kernel import Tape, no_grad, weighted_sum
from dmiforge.mr import parse_mr


def make_pair(mr: str, text: str, pid: int = 0, provenance: str = CLEAN) -> ParallelPair:
    return ParallelPair(parse_mr(mr), tokenize(text), provenance, pid)


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, inputs, rng, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps the input tensors to any tensor; it is reduced to a scalar with
    a fixed random projection so every output element is exercised.
    """
    with Tape():
        probe = fn(*inputs)
    proj = rng.standard_normal(probe.shape)

    def scalar():
        with no_grad():
            return float((fn(*inputs).data * proj).sum())

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = weighted_sum(fn(*inputs), proj)
    tape.backward(loss)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = scalar()
            flat[i] = old - eps
            down = scalar()
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * eps)
        ana = np.zeros_like(t.data) if t.grad is None else t.grad
        worst = max(worst, rel_error(ana, num))
    return worst


def tiny_config(out, **changes) -> dict:
    """A pipeline config that runs every stage in a few seconds."""
    cfg = {
        "synth": {"n_slots": 3, "values_per_slot": 3, "n_clean": 40, "n_unlabeled_mrs": 20, "seed": 0},
        "k": 4,
        "dev_size": 6,
        "test_size": 6,
        "model": {"embed_dim": 6, "hidden_dim": 8, "latent_dim": 6, "encoder_layers": 1, "max_decode_len": 12},
        "train": {"batch": 4, "eval_every": 2, "patience": 2},
        "steps": {"teacher": 4, "student": 4, "finetune": 4, "decoupled": 4, "joint+aug": 4},
        "out": str(out),
    }
    cfg.update(changes)
    return cfg
